"""Preprocessed-store and model-artifact I/O.

The store is one JSON file per paper holding the loaded document, its
header structure, contexts, and every derived training label; its
content hash is the data fingerprint stamped into each trained model.
Prediction refuses to mix artifacts whose fingerprints disagree.
"""

import hashlib
import json
from pathlib import Path

from . import corpus as corpus_mod, docstruct, pipeline
from .config import RunConfig
from .errors import ConfigError
from .phrases import CrfModel
from .scorer import EnsembleModel, ScorerModel

STAGE_FILES = {
    "sent": "sent.json",
    "unit": "unit.json",
    "phrase": "phrase.json",
    "phrase_type": "phrase_type.json",
    "a": "a.json",
    "pair": "pair.json",
    "b": "b.json",
    "c": "c.json",
    "d": "d.json",
}

_MODE_STAGES = {
    "phase1": ("sent", "unit", "phrase", "phrase_type", "a", "b", "c", "d"),
    "phase2-part1": ("unit", "phrase", "phrase_type", "a", "b", "c", "d"),
    "phase2-part2": ("unit", "phrase_type", "a", "b", "c", "d"),
}


def prepare_document(
    doc,
    cue_lexicon=docstruct.DEFAULT_CUE_LEXICON,
    stopwords=docstruct.HEADER_STOP_LASTWORDS,
) -> dict:
    """Everything later stages need from one paper, JSON-ready."""
    headers, contexts = docstruct.build_contexts(doc, cue_lexicon, stopwords)
    out = {
        "paper_id": doc.paper_id,
        "raw_blocks": doc.raw_blocks,
        "block_starts": doc.block_starts,
        "sentences": [{"text": s.text, "tokens": s.tokens} for s in doc.sentences],
        "headers": {
            "h1": [[i, t] for i, t in headers.h1_headers],
            "h2": [[h.sentence_idx, h.text, h.is_topmost] for h in headers.h2_headers],
            "case_format": headers.case_format,
        },
        "contexts": [
            {
                "topmost": c.topmost, "innermost": c.innermost, "title": c.title,
                "position": c.position,
                "topmost_idx": c.topmost_idx, "innermost_idx": c.innermost_idx,
            }
            for c in contexts
        ],
        "gold": None,
    }
    if doc.gold is not None:
        unit_map = corpus_mod.label_sentences_by_unit(doc)
        roles = corpus_mod.derive_phrase_roles(doc, unit_map)
        typed = corpus_mod.typed_gold_triples(doc, unit_map)
        out["gold"] = {
            "contribution": sorted(doc.gold.contribution_sentences),
            "unit_map": {str(i): u for i, u in sorted(unit_map.items())},
            "phrases": [
                [p.sentence_idx, p.tok_start, p.tok_end, p.text, p.role]
                for p in roles
            ],
            "typed_triples": [
                [unit, list(t), ttype] for unit, t, ttype in typed
            ],
        }
    return out


def save_store(store_dir, prepared_docs: list[dict], config: RunConfig) -> str:
    """Write per-paper JSONs plus a manifest; returns the fingerprint."""
    root = Path(store_dir)
    root.mkdir(parents=True, exist_ok=True)
    names = []
    for d in prepared_docs:
        name = f"{d['paper_id']}.json"
        (root / name).write_text(
            json.dumps(d, ensure_ascii=False, sort_keys=True), encoding="utf-8"
        )
        names.append(name)
    fp = fingerprint_store(store_dir)
    manifest = {
        "papers": sorted(d["paper_id"] for d in prepared_docs),
        "fingerprint": fp,
        "config_hash": config.hash(),
    }
    (root / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return fp


def fingerprint_store(store_dir) -> str:
    """Content hash over the per-paper store files (manifest excluded)."""
    root = Path(store_dir)
    h = hashlib.sha256()
    for path in sorted(root.glob("*.json")):
        if path.name in ("manifest.json", "config.json") or path.name.endswith(".error.json"):
            continue
        h.update(path.name.encode("utf-8"))
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def load_store(store_dir) -> list[dict]:
    root = Path(store_dir)
    if not root.is_dir():
        raise ConfigError(f"store directory not found: {store_dir}")
    docs = []
    for path in sorted(root.glob("*.json")):
        if path.name in ("manifest.json", "config.json") or \
                path.name.endswith(".error.json"):
            continue
        docs.append(json.loads(path.read_text(encoding="utf-8")))
    if not docs:
        raise ConfigError(f"store is empty: {store_dir}")
    return docs


def save_model(path, model, stage: str, fingerprint: str, config_hash: str):
    payload = model.to_dict()
    payload.update({"stage": stage, "fingerprint": fingerprint,
                    "config_hash": config_hash})
    Path(path).write_text(
        json.dumps(payload, sort_keys=True), encoding="utf-8"
    )


def save_crf_ensemble(path, submodels, stage, fingerprint, config_hash):
    payload = {
        "kind": "crf_ensemble",
        "stage": stage,
        "fingerprint": fingerprint,
        "config_hash": config_hash,
        "members": [m.to_dict() for m in submodels],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_model(path):
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    kind = data.get("kind")
    if kind == "scorer":
        model = ScorerModel.from_dict(data)
    elif kind == "scorer_ensemble":
        model = EnsembleModel.from_dict(data)
    elif kind == "crf":
        model = CrfModel.from_dict(data)
    elif kind == "crf_ensemble":
        return [CrfModel.from_dict(m) for m in data["members"]], data
    else:
        raise ConfigError(f"{path}: unknown artifact kind {kind!r}")
    return model, data


def load_stage_models(models_dir, mode: str = "phase1"):
    """Load the artifacts a phase mode needs; ConfigError on a missing
    stage or when fingerprints disagree across artifacts."""
    from .evalkit import StageModels

    root = Path(models_dir)
    stages = _MODE_STAGES.get(mode)
    if stages is None:
        raise ConfigError(f"unknown phase mode {mode!r}")
    models = StageModels()
    fingerprints = {}
    for stage in stages:
        path = root / STAGE_FILES[stage]
        if not path.is_file():
            raise ConfigError(f"missing model artifact for stage {stage!r}: {path}")
        model, payload = load_model(path)
        setattr(models, stage, model)
        fingerprints[stage] = payload.get("fingerprint")
    distinct = {fp for fp in fingerprints.values() if fp}
    if len(distinct) > 1:
        raise ConfigError(
            "artifacts were trained on different data: "
            + ", ".join(f"{s}={fp}" for s, fp in sorted(fingerprints.items()))
        )
    return models


def phase_options(config: RunConfig):
    from .evalkit import PhaseOptions

    cue = (
        docstruct.load_lexicon(config.cue_lexicon_file)
        if config.cue_lexicon_file else docstruct.DEFAULT_CUE_LEXICON
    )
    stops = (
        docstruct.load_lexicon(config.header_stopwords_file)
        if config.header_stopwords_file else docstruct.HEADER_STOP_LASTWORDS
    )
    cues = (
        pipeline.load_split_cues(config.split_cues_file)
        if config.split_cues_file else pipeline.DEFAULT_SPLIT_CUES
    )
    return PhaseOptions(
        threshold=config.threshold,
        tag_scheme=config.tag_scheme,
        vote_min=config.vote_min,
        coordination=config.coordination,
        strict_match=config.strict_match,
        split_cues=cues,
        cue_lexicon=cue,
        header_stopwords=stops,
    )
