"""Exception types shared across the package."""


class ContribGraphError(Exception):
    """Base class for all package errors."""


class MissingFileError(ContribGraphError):
    """A mandatory input file is absent."""


class FormatError(ContribGraphError):
    """An input file is malformed or internally inconsistent."""


class AmbiguityError(ContribGraphError):
    """A sentence matches the source text of two different information units."""

    def __init__(self, sentence_idx, units):
        self.sentence_idx = sentence_idx
        self.units = tuple(units)
        super().__init__(
            "sentence %d matches multiple units: %s"
            % (sentence_idx, ", ".join(self.units))
        )


class NoHeadersError(ContribGraphError):
    """No header candidates were available to vote on a case format."""


class DegenerateDataError(ContribGraphError):
    """A training set is empty or contains a single label."""


class EnsembleError(ContribGraphError):
    """Ensemble members do not share an identical label set."""


class TagSchemeError(ContribGraphError):
    """A gold tag sequence violates the active tag scheme."""


class SpanError(ContribGraphError):
    """A token span is out of range or overlaps another span."""


class ConfigError(ContribGraphError):
    """A run cannot proceed: missing artifact, fingerprint clash, bad option."""


class AlignmentError(ContribGraphError):
    """Prediction and gold document sets do not line up."""
