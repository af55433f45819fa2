"""Training-set builders: store records -> (feature vector, label) pairs.

Each classification stage trains on examples rendered exactly the way
inference will render them, so builders and extractors share the same
encoders. All builders walk papers and sentences in sorted order, which
keeps training deterministic for a fixed seed.
"""

import logging
from collections import defaultdict

from . import phrases as phrases_mod, triples as triples_mod
from .config import RunConfig, stage_seed
from .corpus import Phrase, normalize
from .errors import DegenerateDataError
from .pipeline import CONTRIB_NEG, CONTRIB_POS, display_name, merge_unit
from .scorer import TrainConfig, featurize

log = logging.getLogger(__name__)

_ZEROS = [0.0] * 6


def train_config_for(stage: str, cfg: RunConfig) -> TrainConfig:
    tc = TrainConfig(
        epochs=cfg.scorer_epochs,
        learning_rate=cfg.scorer_lr,
        batch_size=cfg.scorer_batch,
        seed=stage_seed(cfg.seed, stage),
        hash_dim=cfg.hash_dim,
        hash_seed=cfg.hash_seed,
    )
    imbalance = {"a": cfg.imbalance_a, "pair": cfg.imbalance_pair}.get(stage, "none")
    if imbalance == "class_weight":
        tc.class_weights = {triples_mod.POSITIVE: cfg.pos_class_weight}
    elif imbalance == "downsample":
        tc.downsample = 1.0
    return tc


def _gold_docs(store: list[dict]):
    return [d for d in store if d.get("gold")]


def _fv(cfg: RunConfig, text: str, title: str = "", position=None):
    return featurize(text, title, position or _ZEROS, cfg.hash_dim, cfg.hash_seed)


def build_sentence_examples(store: list[dict], cfg: RunConfig):
    out = []
    for d in _gold_docs(store):
        contrib = set(d["gold"]["contribution"])
        for i, (s, ctx) in enumerate(zip(d["sentences"], d["contexts"])):
            label = CONTRIB_POS if i in contrib else CONTRIB_NEG
            out.append((_fv(cfg, s["text"], ctx["title"], ctx["position"]), label))
    return out


def build_unit_examples(store: list[dict], cfg: RunConfig):
    """Merged-label unit examples; Code sentences are left out because
    the URL rule replaces the classifier for them."""
    out = []
    for d in _gold_docs(store):
        unit_map = {int(k): v for k, v in d["gold"]["unit_map"].items()}
        for i in sorted(unit_map):
            merged = merge_unit(unit_map[i])
            if merged is None:
                continue
            s, ctx = d["sentences"][i], d["contexts"][i]
            out.append((_fv(cfg, s["text"], ctx["title"], ctx["position"]), merged))
    return out


def _role_phrases(d: dict) -> dict[int, list[Phrase]]:
    by_sentence: dict[int, list[Phrase]] = defaultdict(list)
    for sent, start, end, text, role in d["gold"]["phrases"]:
        by_sentence[sent].append(Phrase(sent, start, end, text, role))
    return dict(by_sentence)


def build_crf_sentences(store: list[dict], cfg: RunConfig):
    """(tokens, tags) pairs over contribution sentences; overlapping or
    role-less gold phrases that cannot be encoded are logged."""
    scheme = phrases_mod.scheme(cfg.tag_scheme)
    out = []
    n_skipped = 0
    for d in _gold_docs(store):
        by_sentence = _role_phrases(d)
        for idx in sorted(d["gold"]["contribution"]):
            tokens = d["sentences"][idx]["tokens"]
            tags, skipped = phrases_mod.encode_tags(
                by_sentence.get(idx, []), len(tokens), scheme
            )
            n_skipped += len(skipped)
            out.append((tokens, tags))
    if n_skipped:
        log.warning("%d gold phrase(s) could not be encoded to BIO", n_skipped)
    if not out:
        raise DegenerateDataError("no contribution sentences in store")
    return out


def build_phrase_type_examples(store: list[dict], cfg: RunConfig):
    out = []
    for d in _gold_docs(store):
        for sent, start, end, _text, role in d["gold"]["phrases"]:
            if role is None:
                continue
            tokens = d["sentences"][sent]["tokens"]
            marked = triples_mod.render_with_markers(
                tokens, [((start, end), "[[", "]]")]
            )
            out.append((_fv(cfg, marked), role))
    return out


def _typed_by_unit(d: dict) -> dict[str, list[tuple[tuple[str, str, str], str]]]:
    grouped: dict[str, list] = defaultdict(list)
    for unit, t, ttype in d["gold"]["typed_triples"]:
        grouped[unit].append((tuple(t), ttype))
    return dict(grouped)


def _gold_sentence_rows(store: list[dict]):
    """Per contribution sentence: (tokens, role phrases, unit, unit's
    typed gold triples)."""
    for d in _gold_docs(store):
        by_sentence = _role_phrases(d)
        unit_map = {int(k): v for k, v in d["gold"]["unit_map"].items()}
        typed = _typed_by_unit(d)
        for idx in sorted(d["gold"]["contribution"]):
            unit = unit_map.get(idx)
            if unit is None:
                continue
            yield (
                d["sentences"][idx]["tokens"],
                by_sentence.get(idx, []),
                unit,
                typed.get(unit, []),
            )


def _label(flag: bool) -> str:
    return triples_mod.POSITIVE if flag else triples_mod.NEGATIVE


def build_type_a_examples(store: list[dict], cfg: RunConfig):
    out = []
    n_pos = 0
    for tokens, plist, _unit, unit_triples in _gold_sentence_rows(store):
        gold_a = {
            (normalize(p), frozenset((normalize(s), normalize(o))))
            for (s, p, o), ttype in unit_triples if ttype == "A"
        }
        for pred, t1, t2 in triples_mod.gen_type_a_candidates(plist):
            key = (
                normalize(pred.text),
                frozenset((normalize(t1.text), normalize(t2.text))),
            )
            positive = key in gold_a
            n_pos += positive
            out.append((
                _fv(cfg, triples_mod.encode_type_a(tokens, pred, t1, t2)),
                _label(positive),
            ))
    if out:
        log.info("type-a candidates: %d, positive rate %.3f", len(out), n_pos / len(out))
    return out


def build_pair_examples(store: list[dict], cfg: RunConfig):
    out = []
    for tokens, plist, _unit, unit_triples in _gold_sentence_rows(store):
        gold_pairs = set()
        for (s, p, o), ttype in unit_triples:
            if ttype == "A":
                gold_pairs.add((normalize(p), normalize(s)))
                gold_pairs.add((normalize(p), normalize(o)))
        preds = sorted((x for x in plist if x.role == "Predicate"), key=lambda x: x.span)
        terms = sorted((x for x in plist if x.role == "Term"), key=lambda x: x.span)
        for pred in preds:
            for term in terms:
                positive = (normalize(pred.text), normalize(term.text)) in gold_pairs
                out.append((
                    _fv(cfg, triples_mod.encode_pair(tokens, pred, term)),
                    _label(positive),
                ))
    return out


def build_type_b_examples(store: list[dict], cfg: RunConfig):
    from itertools import combinations

    out = []
    for tokens, plist, _unit, unit_triples in _gold_sentence_rows(store):
        gold_a_pairs = {
            frozenset((normalize(s), normalize(o)))
            for (s, _p, o), ttype in unit_triples if ttype == "A"
        }
        gold_b = {
            (normalize(s), normalize(o)): p
            for (s, p, o), ttype in unit_triples if ttype == "B"
        }
        terms = sorted((x for x in plist if x.role == "Term"), key=lambda x: x.span)
        for t1, t2 in combinations(terms, 2):
            if frozenset((normalize(t1.text), normalize(t2.text))) in gold_a_pairs:
                continue
            label = gold_b.get((normalize(t1.text), normalize(t2.text)), "None")
            out.append((
                _fv(cfg, triples_mod.encode_term_pair(tokens, t1, t2)), label
            ))
    return out


def build_type_c_examples(store: list[dict], cfg: RunConfig):
    out = []
    for tokens, plist, unit, unit_triples in _gold_sentence_rows(store):
        if not triples_mod.type_c_applicable(plist):
            continue
        preds = sorted((x for x in plist if x.role == "Predicate"), key=lambda x: x.span)
        terms = sorted((x for x in plist if x.role == "Term"), key=lambda x: x.span)
        gold_c = {
            (normalize(p), normalize(o))
            for (_s, p, o), ttype in unit_triples if ttype == "C"
        }
        positive = (normalize(preds[0].text), normalize(terms[0].text)) in gold_c
        text = triples_mod.encode_unit_prefixed(
            tokens, display_name(unit), terms[0], preds[0]
        )
        out.append((_fv(cfg, text), _label(positive)))
    return out


def build_type_d_examples(store: list[dict], cfg: RunConfig):
    out = []
    for tokens, plist, unit, unit_triples in _gold_sentence_rows(store):
        if not triples_mod.type_d_applicable(plist):
            continue
        terms = sorted((x for x in plist if x.role == "Term"), key=lambda x: x.span)
        gold_d = {
            normalize(o)
            for (_s, p, o), ttype in unit_triples
            if ttype == "D" and normalize(p) == "has"
        }
        positive = normalize(terms[0].text) in gold_d
        text = triples_mod.encode_unit_prefixed(tokens, display_name(unit), terms[0])
        out.append((_fv(cfg, text), _label(positive)))
    return out


SCORER_BUILDERS = {
    "sent": build_sentence_examples,
    "unit": build_unit_examples,
    "phrase_type": build_phrase_type_examples,
    "a": build_type_a_examples,
    "pair": build_pair_examples,
    "b": build_type_b_examples,
    "c": build_type_c_examples,
    "d": build_type_d_examples,
}
