"""Run configuration: one flat record drives every command.

A config can come from a JSON file, and any field can be overridden on
the command line with ``--<field> <value>``. Every run writes the
resolved copy next to its outputs so results stay reproducible; the
config hash ends up in model artifacts and reports.
"""

import dataclasses
import hashlib
import json
import types
import zlib
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

TRAIN_STAGES = ("sent", "unit", "phrase", "phrase_type", "a", "pair", "b", "c", "d")


@dataclass
class RunConfig:
    corpus_dir: str = "corpus"
    store_dir: str = "store"
    models_dir: str = "models"
    pred_dir: str = "pred"
    report_dir: str = "reports"
    seed: int = 13
    workers: int = 1
    threshold: float = 0.5
    tag_scheme: str = "specific"         # specific | simple
    vote_min: int = 48
    phrase_bootstrap: int = 0            # >0 trains the CRF vote ensemble
    snapshot_first: int = 3
    snapshot_last: int = 10
    sent_bagging: int = 0                # >0 bags the sent/unit classifiers
    coordination: bool = False
    strict_match: bool = False
    scorer_epochs: int = 30
    scorer_lr: float = 0.4
    scorer_batch: int = 16
    hash_dim: int = 2 ** 20
    hash_seed: int = 17
    crf_epochs: int = 12
    crf_lr: float = 0.2
    imbalance_a: str = "none"            # none | downsample | class_weight
    imbalance_pair: str = "class_weight"
    pos_class_weight: float = 5.0
    cue_lexicon_file: str | None = None
    header_stopwords_file: str | None = None
    split_cues_file: str | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        ).hexdigest()[:16]

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")


def _coerce(name: str, raw, target_type):
    if raw is None:
        return None
    if target_type is bool:
        if isinstance(raw, bool):
            return raw
        low = str(raw).lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return target_type(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: cannot interpret {raw!r}") from exc


_FIELD_TYPES = {
    "str": str, "int": int, "float": float, "bool": bool,
    "str | None": str,
}


def _field_type(f: dataclasses.Field):
    t = f.type
    if isinstance(t, str):
        return _FIELD_TYPES.get(t, str)
    if isinstance(t, types.UnionType):
        args = [a for a in t.__args__ if a is not type(None)]
        return args[0] if args else str
    return t if isinstance(t, type) else str


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus overrides.

    Unknown keys raise ConfigError rather than being silently dropped.
    """
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {path}") from exc
    data.update(overrides or {})
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    kwargs = {}
    for name, value in data.items():
        if name not in fields:
            raise ConfigError(f"unknown config field {name!r}")
        kwargs[name] = _coerce(name, value, _field_type(fields[name]))
    return RunConfig(**kwargs)


def stage_seed(base_seed: int, stage: str) -> int:
    """Deterministic per-stage seed derived from the single run seed."""
    return (base_seed * 1000003 + zlib.crc32(stage.encode("utf-8"))) % (2 ** 31)
