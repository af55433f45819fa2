"""Contribution-sentence classification and information-unit assignment.

The sentence stage is a binary decision per sentence over the fused
sentence/title/position features. Unit labels are predicted over a
merged label set (Model+Approach and ExperimentalSetup+Hyperparameters
collapse to one label each, Code is left out entirely), then split back
per document with lexical rules, and any sentence containing a URL is
forced to Code. After splitting, no document can carry both members of
a merged pair.
"""

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .corpus import Document
from .docstruct import HeaderSet, SentenceContext, strip_numbering
from .scorer import featurize

INFO_UNITS = (
    "ResearchProblem", "Approach", "Model", "Code", "Dataset",
    "ExperimentalSetup", "Hyperparameters", "Baselines", "Results",
    "Tasks", "Experiments", "AblationAnalysis",
)

_MERGE = {
    "Model": "ModelOrApproach",
    "Approach": "ModelOrApproach",
    "ExperimentalSetup": "SetupOrHyper",
    "Hyperparameters": "SetupOrHyper",
}

MERGED_UNITS = (
    "ResearchProblem", "ModelOrApproach", "Dataset", "SetupOrHyper",
    "Baselines", "Results", "Tasks", "Experiments", "AblationAnalysis",
)

EXCLUSIVE_PAIRS = (("Model", "Approach"), ("ExperimentalSetup", "Hyperparameters"))

_DISPLAY = {
    "ResearchProblem": "Research problem",
    "ExperimentalSetup": "Experimental setup",
    "AblationAnalysis": "Ablation analysis",
}

CONTRIB_POS = "pos"
CONTRIB_NEG = "neg"

URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)


def display_name(unit: str) -> str:
    """Surface form used in triple slots ('Experimental setup', ...)."""
    return _DISPLAY.get(unit, unit)


def merge_unit(unit: str) -> str | None:
    """Map a gold unit onto the classifier label set; Code maps to None
    because URL-bearing sentences never enter the unit classifier."""
    if unit == "Code":
        return None
    return _MERGE.get(unit, unit)


@dataclass(frozen=True)
class SplitCues:
    model_words: tuple[str, ...] = ("model", "models")
    approach_words: tuple[str, ...] = ("approach", "approaches", "method", "methods")
    hardware_words: tuple[str, ...] = (
        "gpu", "cpu", "tpu", "v100", "titan", "pytorch", "tensorflow",
        "keras", "theano", "mxnet",
    )


DEFAULT_SPLIT_CUES = SplitCues()


def load_split_cues(path) -> SplitCues:
    """Read split-rule lexicons from a JSON file with keys
    model/approach/hardware (missing keys keep the defaults)."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    base = DEFAULT_SPLIT_CUES
    return SplitCues(
        model_words=tuple(data.get("model", base.model_words)),
        approach_words=tuple(data.get("approach", base.approach_words)),
        hardware_words=tuple(data.get("hardware", base.hardware_words)),
    )


def classify_contribution(
    model,
    doc: Document,
    contexts: list[SentenceContext],
    threshold: float = 0.5,
) -> set[int]:
    """Sentence indices whose contribution probability is strictly above
    ``threshold``."""
    pos = model.labels.index(CONTRIB_POS)
    out = set()
    for s, ctx in zip(doc.sentences, contexts):
        fv = featurize(s.text, ctx.title, ctx.position, model.hash_dim, model.hash_seed)
        if model.predict_proba(fv)[pos] > threshold:
            out.add(s.idx)
    return out


def classify_units(
    model,
    doc: Document,
    contexts: list[SentenceContext],
    sentence_idxs,
) -> dict[int, str]:
    """Merged unit label per contribution sentence (argmax)."""
    out = {}
    for idx in sorted(sentence_idxs):
        s, ctx = doc.sentences[idx], contexts[idx]
        fv = featurize(s.text, ctx.title, ctx.position, model.hash_dim, model.hash_seed)
        out[idx] = model.predict(fv)
    return out


def detect_code_sentences(doc: Document) -> set[int]:
    """Sentences containing a URL; independent of any classifier."""
    return {s.idx for s in doc.sentences if URL_RE.search(s.text)}


def extract_urls(text: str) -> list[str]:
    return [u.rstrip(".,;:)]\"'") for u in URL_RE.findall(text)]


def _block_sentence_ranges(doc: Document) -> list[tuple[int, int]]:
    n = len(doc.sentences)
    starts = sorted(set(doc.block_starts)) or [0]
    bounds = starts + [n]
    return [(bounds[i], bounds[i + 1]) for i in range(len(starts))]


def abstract_text(doc: Document, headers: HeaderSet) -> str:
    """Text of the abstract: sentences between the first header cued
    'abstract' and the next header; falls back to the first non-title
    block when no such header exists."""
    def cued(text):
        return any(
            t.lower().strip(".,;:()[]").startswith("abstract")
            for t in strip_numbering(text.split())
        )

    n = len(doc.sentences)
    for k, h in enumerate(headers.h2_headers):
        if cued(h.text):
            end = (
                headers.h2_headers[k + 1].sentence_idx
                if k + 1 < len(headers.h2_headers) else n
            )
            return " ".join(
                s.text for s in doc.sentences[h.sentence_idx + 1:end]
            )
    ranges = _block_sentence_ranges(doc)
    for bi, text in headers.h1_headers:
        if cued(text) and bi < len(ranges):
            lo, hi = ranges[bi]
            return " ".join(s.text for s in doc.sentences[lo:hi])
    pick = ranges[1] if len(ranges) > 1 else ranges[0]
    return " ".join(s.text for s in doc.sentences[pick[0]:pick[1]])


def split_model_approach(
    doc: Document, headers: HeaderSet, cues: SplitCues = DEFAULT_SPLIT_CUES
) -> str:
    """Document-level Model-vs-Approach decision: count cue words in the
    abstract and the detected headers; ties go to Model."""
    header_texts = {h.text for h in headers.h2_headers}
    header_texts.update(t for _, t in headers.h1_headers)
    hay = abstract_text(doc, headers) + " " + " ".join(sorted(header_texts))
    words = re.findall(r"[a-z0-9]+", hay.lower())
    m = sum(w in cues.model_words for w in words)
    a = sum(w in cues.approach_words for w in words)
    return "Model" if m >= a else "Approach"


def split_setup_hyper(
    doc: Document, sentence_idxs, cues: SplitCues = DEFAULT_SPLIT_CUES
) -> str:
    """ExperimentalSetup iff any of the given sentences names hardware or
    a framework; Hyperparameters otherwise. Cues outside the given
    sentences never count."""
    for idx in sorted(sentence_idxs):
        for tok in doc.sentences[idx].tokens:
            low = tok.lower()
            if any(low.startswith(c) for c in cues.hardware_words):
                return "ExperimentalSetup"
    return "Hyperparameters"


def assign_units(
    doc: Document,
    headers: HeaderSet,
    merged_map: dict[int, str],
    code_idxs=(),
    cues: SplitCues = DEFAULT_SPLIT_CUES,
) -> dict[int, str]:
    """Unmerge predictions into final per-sentence units.

    The split decisions are document-level, so the pair-exclusion
    invariant holds by construction; URL sentences end up as Code no
    matter what the classifier said.
    """
    moa = [i for i, u in merged_map.items() if u == "ModelOrApproach"]
    soh = [i for i, u in merged_map.items() if u == "SetupOrHyper"]
    moa_label = split_model_approach(doc, headers, cues) if moa else None
    soh_label = split_setup_hyper(doc, soh, cues) if soh else None
    out = {}
    for i, u in merged_map.items():
        if u == "ModelOrApproach":
            out[i] = moa_label
        elif u == "SetupOrHyper":
            out[i] = soh_label
        else:
            out[i] = u
    for i in code_idxs:
        out[i] = "Code"
    return out
