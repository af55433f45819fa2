"""Scoring, phase harnesses, the feature ablation, and confusion matrices.

All scores are exact-match precision/recall/F1 pooled across documents;
triples additionally pool true/false positives and negatives across
information units (micro-average) and report a per-unit breakdown. The
phase harness runs the full cascade from raw text (phase1), from gold
contribution sentences (phase2-part1), or from gold sentences and gold
phrase spans (phase2-part2); downstream stages always consume upstream
outputs verbatim.
"""

from collections import defaultdict
from dataclasses import dataclass, field, replace

import numpy as np

from . import docstruct, phrases as phrases_mod, pipeline, triples as triples_mod
from .corpus import Document
from .errors import AlignmentError, ConfigError
from .scorer import TrainConfig, featurize, train

PHASE1 = "phase1"
PHASE2_PART1 = "phase2-part1"
PHASE2_PART2 = "phase2-part2"
PHASES = (PHASE1, PHASE2_PART1, PHASE2_PART2)


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int


def prf_from_counts(tp: int, fp: int, fn: int) -> PRF:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return PRF(p, r, f1, tp, fp, fn)


def _pool(pred: dict, gold: dict) -> PRF:
    tp = fp = fn = 0
    for doc_id in sorted(set(pred) | set(gold)):
        p = set(pred.get(doc_id, ()))
        g = set(gold.get(doc_id, ()))
        tp += len(p & g)
        fp += len(p - g)
        fn += len(g - p)
    return prf_from_counts(tp, fp, fn)


def score_sentences(pred: dict, gold: dict) -> PRF:
    """Exact sentence-index match, set semantics, pooled across docs."""
    return _pool(pred, gold)


def score_phrases(pred: dict, gold: dict) -> PRF:
    """Exact (sentence_idx, tok_start, tok_end) span match; roles are
    ignored and duplicates count once."""
    return _pool(pred, gold)


def score_units(pred: dict, gold: dict) -> PRF:
    """Exact unit-name match per document, micro-pooled."""
    return _pool(pred, gold)


def score_triples(
    pred: dict, gold: dict, strict: bool = False
) -> tuple[dict[str, PRF], PRF]:
    """Per-unit and micro-averaged triple scores.

    ``pred``/``gold`` map doc id -> unit name -> iterable of
    (subject, predicate, object). A prediction matches iff document,
    unit, and all three normalized slots agree.
    """
    def key(t):
        return tuple(triples_mod.normalize_slot(x, strict) for x in t)

    counts: dict[str, list[int]] = defaultdict(lambda: [0, 0, 0])
    for doc_id in sorted(set(pred) | set(gold)):
        p_units = pred.get(doc_id, {})
        g_units = gold.get(doc_id, {})
        for unit in sorted(set(p_units) | set(g_units)):
            p = {key(t) for t in p_units.get(unit, ())}
            g = {key(t) for t in g_units.get(unit, ())}
            c = counts[unit]
            c[0] += len(p & g)
            c[1] += len(p - g)
            c[2] += len(g - p)
    per_unit = {u: prf_from_counts(*counts[u]) for u in sorted(counts)}
    tp = sum(c[0] for c in counts.values())
    fp = sum(c[1] for c in counts.values())
    fn = sum(c[2] for c in counts.values())
    return per_unit, prf_from_counts(tp, fp, fn)


def confusion_matrix(
    pred: dict, gold: dict, labels: tuple[str, ...] = pipeline.INFO_UNITS
) -> tuple[tuple[str, ...], np.ndarray]:
    """Per-sentence unit confusion counts (rows gold, columns predicted)
    over sentences labeled on both sides; ``pred``/``gold`` map doc id ->
    {sentence_idx: unit}."""
    index = {l: i for i, l in enumerate(labels)}
    matrix = np.zeros((len(labels), len(labels)), dtype=int)
    for doc_id, gold_map in gold.items():
        pred_map = pred.get(doc_id, {})
        for idx, g in gold_map.items():
            p = pred_map.get(idx)
            if p is None or g not in index or p not in index:
                continue
            matrix[index[g], index[p]] += 1
    return labels, matrix


@dataclass
class StageModels:
    sent: object = None
    unit: object = None
    phrase: object = None        # CrfModel or list[CrfModel] (vote ensemble)
    phrase_type: object = None
    a: object = None
    b: object = None
    c: object = None
    d: object = None


@dataclass
class PhaseOptions:
    threshold: float = 0.5
    tag_scheme: str = "specific"
    vote_min: int = 48
    coordination: bool = False
    strict_match: bool = False
    np_checker: object = None
    split_cues: pipeline.SplitCues = pipeline.DEFAULT_SPLIT_CUES
    cue_lexicon: frozenset = docstruct.DEFAULT_CUE_LEXICON
    header_stopwords: frozenset = docstruct.HEADER_STOP_LASTWORDS


@dataclass
class DocPredictions:
    paper_id: str
    contribution: set[int]
    merged_units: dict[int, str]
    unit_by_sentence: dict[int, str]
    phrases: list
    triples: list
    triples_by_unit: dict[str, list[tuple[str, str, str]]]


def _require(models: StageModels, names) -> None:
    for name in names:
        if getattr(models, name) is None:
            raise ConfigError(f"missing model artifact for stage {name!r}")


def _predict_phrases(doc, models, options, contrib):
    scheme = phrases_mod.scheme(options.tag_scheme)
    by_sentence: dict[int, list] = {}
    submodels = models.phrase if isinstance(models.phrase, list) else None
    for idx in sorted(contrib):
        tokens = doc.sentences[idx].tokens
        if submodels:
            found = phrases_mod.phrase_vote_ensemble(
                submodels, tokens, options.vote_min, sentence_idx=idx
            )
        else:
            tags = phrases_mod.viterbi_decode(models.phrase, tokens)
            found = phrases_mod.decode_spans(tags, scheme, tokens, sentence_idx=idx)
        by_sentence[idx] = found
    return by_sentence


def _assign_roles(doc, models, by_sentence):
    """Fill missing roles with the marked-span classifier."""
    out = {}
    for idx, found in by_sentence.items():
        tokens = doc.sentences[idx].tokens
        fixed = []
        for ph in found:
            if ph.role is None:
                role = phrases_mod.classify_phrase_type(
                    models.phrase_type, tokens, ph.span
                )
                ph = replace(ph, role=role)
            fixed.append(ph)
        out[idx] = fixed
    return out


def predict_document(
    doc: Document, models: StageModels, mode: str, options: PhaseOptions
) -> DocPredictions:
    """Run the cascade on one document under the given phase mode."""
    if mode not in PHASES:
        raise ConfigError(f"unknown phase mode {mode!r}")
    headers, contexts = docstruct.build_contexts(
        doc, options.cue_lexicon, options.header_stopwords)

    if mode == PHASE1:
        _require(models, ("sent",))
        contrib = pipeline.classify_contribution(
            models.sent, doc, contexts, options.threshold
        )
    else:
        if doc.gold is None:
            raise ConfigError(f"{doc.paper_id}: gold sentences required for {mode}")
        contrib = set(doc.gold.contribution_sentences)

    _require(models, ("unit",))
    merged = pipeline.classify_units(models.unit, doc, contexts, contrib)
    code_idxs = pipeline.detect_code_sentences(doc) & contrib
    units = pipeline.assign_units(doc, headers, merged, code_idxs, options.split_cues)

    if mode == PHASE2_PART2:
        if doc.gold is None:
            raise ConfigError(f"{doc.paper_id}: gold phrases required for {mode}")
        by_sentence = defaultdict(list)
        for ph in doc.gold.phrases:
            if ph.sentence_idx in contrib:
                # injected spans come without roles, like the gold files
                by_sentence[ph.sentence_idx].append(replace(ph, role=None))
        by_sentence = dict(by_sentence)
        for idx in contrib:
            by_sentence.setdefault(idx, [])
    else:
        _require(models, ("phrase",))
        by_sentence = _predict_phrases(doc, models, options, contrib)

    needs_types = any(ph.role is None for found in by_sentence.values() for ph in found)
    if needs_types:
        _require(models, ("phrase_type",))
        by_sentence = _assign_roles(doc, models, by_sentence)

    _require(models, ("a", "b", "c", "d"))
    found_triples: list = []
    for idx in sorted(contrib):
        unit = units.get(idx)
        if unit is None or unit == "Code":
            continue
        tokens = doc.sentences[idx].tokens
        sent_phrases = by_sentence.get(idx, [])
        a_triples = triples_mod.extract_type_a(
            models.a, tokens, sent_phrases, unit, idx
        )
        found_triples.extend(a_triples)
        found_triples.extend(triples_mod.extract_type_b(
            models.b, tokens, sent_phrases, a_triples, unit, idx
        ))
        c = triples_mod.extract_type_c(models.c, tokens, sent_phrases, unit, idx)
        if c:
            found_triples.append(c)
        d = triples_mod.extract_type_d(models.d, tokens, sent_phrases, unit, idx)
        if d:
            found_triples.append(d)

    texts = {s.idx: s.text for s in doc.sentences}
    found_triples.extend(triples_mod.extract_type_e(units, by_sentence, texts))
    found_triples.extend(triples_mod.extract_type_f(
        {i: doc.sentences[i].tokens for i in by_sentence},
        by_sentence, units, options.np_checker,
    ))
    if options.coordination:
        found_triples = triples_mod.expand_coordination(
            found_triples, {s.idx: s.tokens for s in doc.sentences}
        )
    found_triples = list(dict.fromkeys(found_triples))

    by_unit: dict[str, list[tuple[str, str, str]]] = defaultdict(list)
    for t in found_triples:
        if t.unit:
            by_unit[t.unit].append(t.slots)

    all_phrases = [ph for idx in sorted(by_sentence) for ph in by_sentence[idx]]
    return DocPredictions(
        paper_id=doc.paper_id,
        contribution=contrib,
        merged_units=merged,
        unit_by_sentence=units,
        phrases=all_phrases,
        triples=found_triples,
        triples_by_unit={u: list(dict.fromkeys(v)) for u, v in sorted(by_unit.items())},
    )


@dataclass
class ScoreReport:
    mode: str
    sentences: PRF | None
    phrases: PRF | None
    units: PRF
    triples: PRF
    per_unit_triples: dict[str, PRF]
    average_f1: float
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def prf(x):
            return None if x is None else {
                "precision": x.precision, "recall": x.recall, "f1": x.f1,
                "tp": x.tp, "fp": x.fp, "fn": x.fn,
            }

        return {
            "mode": self.mode,
            "sentences": prf(self.sentences),
            "phrases": prf(self.phrases),
            "units": prf(self.units),
            "triples": prf(self.triples),
            "per_unit_triples": {u: prf(v) for u, v in self.per_unit_triples.items()},
            "average_f1": self.average_f1,
            "meta": self.meta,
        }


def evaluate_predictions(
    preds: dict[str, DocPredictions], docs: list[Document], mode: str = PHASE1,
    strict: bool = False, meta: dict | None = None,
) -> ScoreReport:
    """Score a prediction set against gold annotations."""
    gold_docs = {d.paper_id: d for d in docs if d.gold is not None}
    if not set(preds) & set(gold_docs):
        raise AlignmentError("prediction and gold document sets are disjoint")

    gold_sent = {pid: d.gold.contribution_sentences for pid, d in gold_docs.items()}
    gold_phr = {
        pid: {(p.sentence_idx, p.tok_start, p.tok_end) for p in d.gold.phrases}
        for pid, d in gold_docs.items()
    }
    gold_units = {pid: set(d.gold.units) for pid, d in gold_docs.items()}
    gold_trip = {
        pid: {u: rec.triples for u, rec in d.gold.units.items()}
        for pid, d in gold_docs.items()
    }

    pred_sent = {pid: p.contribution for pid, p in preds.items()}
    pred_phr = {
        pid: {(ph.sentence_idx, ph.tok_start, ph.tok_end) for ph in p.phrases}
        for pid, p in preds.items()
    }
    pred_units = {pid: set(p.unit_by_sentence.values()) for pid, p in preds.items()}
    pred_trip = {pid: p.triples_by_unit for pid, p in preds.items()}

    sentences = score_sentences(pred_sent, gold_sent) if mode == PHASE1 else None
    phr = score_phrases(pred_phr, gold_phr) if mode != PHASE2_PART2 else None
    units = score_units(pred_units, gold_units)
    per_unit, micro = score_triples(pred_trip, gold_trip, strict)

    f1s = [x.f1 for x in (sentences, phr, units, micro) if x is not None]
    return ScoreReport(
        mode=mode,
        sentences=sentences,
        phrases=phr,
        units=units,
        triples=micro,
        per_unit_triples=per_unit,
        average_f1=sum(f1s) / len(f1s),
        meta=dict(meta or {}),
    )


def run_cascade(
    mode: str, docs: list[Document], models: StageModels,
    options: PhaseOptions | None = None, meta: dict | None = None,
) -> tuple[ScoreReport, dict[str, DocPredictions]]:
    """Predict every document and score against gold."""
    options = options or PhaseOptions()
    preds = {d.paper_id: predict_document(d, models, mode, options) for d in docs}
    base_meta = {"normalization": "strict" if options.strict_match else "lax"}
    base_meta.update(meta or {})
    report = evaluate_predictions(preds, docs, mode, options.strict_match, base_meta)
    return report, preds


def run_phase(config, mode: str) -> ScoreReport:
    """Configuration-level entry point: load corpus and artifacts named
    by ``config`` (a RunConfig) and run one evaluation phase."""
    from . import artifacts
    from .corpus import load_corpus

    docs = load_corpus(config.corpus_dir)
    models = artifacts.load_stage_models(config.models_dir, mode=mode)
    options = artifacts.phase_options(config)
    report, _ = run_cascade(
        mode, docs, models, options, meta={"config_hash": config.hash()}
    )
    return report


ABLATION_SETTINGS = (
    "sentence+title+position",
    "sentence+title",
    "sentence+position",
    "sentence",
)


@dataclass(frozen=True)
class AblationRow:
    setting: str
    prf: PRF


def _sentence_examples(doc, contexts, use_title: bool, use_position: bool):
    zeros = [0.0] * 6
    rows = []
    for s, ctx in zip(doc.sentences, contexts):
        fv = featurize(
            s.text,
            ctx.title if use_title else "",
            ctx.position if use_position else zeros,
        )
        label = (
            pipeline.CONTRIB_POS
            if s.idx in doc.gold.contribution_sentences
            else pipeline.CONTRIB_NEG
        )
        rows.append((s.idx, fv, label))
    return rows


def ablate_sentence_features(
    docs: list[Document], seed: int = 0, train_config: TrainConfig | None = None,
    threshold: float = 0.5,
) -> list[AblationRow]:
    """Train and score the contribution classifier under the four feature
    settings on a document-stratified 10% validation split."""
    cfg = train_config or TrainConfig()
    labeled = [d for d in docs if d.gold is not None]
    ids = sorted(d.paper_id for d in labeled)
    rng = np.random.default_rng(seed)
    rng.shuffle(ids)
    n_val = max(1, round(0.1 * len(ids)))
    val_ids = set(ids[:n_val])
    ctx_by_doc = {d.paper_id: docstruct.build_contexts(d)[1] for d in labeled}

    rows = []
    for setting in ABLATION_SETTINGS:
        use_title = "title" in setting
        use_position = "position" in setting
        train_ex, val = [], []
        for d in labeled:
            ex = _sentence_examples(d, ctx_by_doc[d.paper_id], use_title, use_position)
            if d.paper_id in val_ids:
                val.append((d, ex))
            else:
                train_ex.extend((fv, y) for _, fv, y in ex)
        model = train(train_ex, cfg)
        pos = model.labels.index(pipeline.CONTRIB_POS)
        pred, gold = {}, {}
        for d, ex in val:
            pred[d.paper_id] = {
                idx for idx, fv, _ in ex if model.predict_proba(fv)[pos] > threshold
            }
            gold[d.paper_id] = d.gold.contribution_sentences
        rows.append(AblationRow(setting, score_sentences(pred, gold)))
    return rows


def _fmt_prf(x: PRF | None) -> str:
    if x is None:
        return "    -      -      -  "
    return f"{100 * x.f1:6.2f} {100 * x.precision:6.2f} {100 * x.recall:6.2f}"


def format_report(report: ScoreReport) -> str:
    """Aligned plain-text rendering of a score report."""
    lines = [
        f"mode: {report.mode}    normalization: "
        f"{report.meta.get('normalization', 'lax')}",
        "",
        "          Avg F1 | Units:  F1      P      R | Sentences: F1      P      R"
        " | Phrases: F1      P      R | Triples: F1      P      R",
        f"run       {100 * report.average_f1:6.2f} |       {_fmt_prf(report.units)}"
        f" |        {_fmt_prf(report.sentences)} |      {_fmt_prf(report.phrases)}"
        f" |      {_fmt_prf(report.triples)}",
        "",
        "per-unit triples (F1 / P / R / tp / fp / fn):",
    ]
    for unit, prf in report.per_unit_triples.items():
        lines.append(
            f"  {unit:<20} {100 * prf.f1:6.2f} {100 * prf.precision:6.2f} "
            f"{100 * prf.recall:6.2f}   {prf.tp:4d} {prf.fp:4d} {prf.fn:4d}"
        )
    return "\n".join(lines) + "\n"


def format_ablation(rows: list[AblationRow]) -> str:
    lines = ["setting                      F1      P      R"]
    for row in rows:
        lines.append(
            f"{row.setting:<26} {100 * row.prf.f1:6.2f} "
            f"{100 * row.prf.precision:6.2f} {100 * row.prf.recall:6.2f}"
        )
    return "\n".join(lines) + "\n"
