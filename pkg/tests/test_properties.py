"""Property suites over generated inputs (1000 cases each).

These five invariants are the load-bearing ones: header attachment
monotonicity, positional-feature bounds, BIO encode/decode round-trip,
softmax argmax scale-invariance, and unit mutual exclusion after the
document-level split rules.
"""

import numpy as np
from hypothesis import given, settings, strategies as st

from contribgraph.corpus import Document, SentenceRecord
from contribgraph.docstruct import build_contexts, build_headers
from contribgraph.phrases import (
    SIMPLE_BIO, SPECIFIC_BIO, decode_spans, encode_tags,
)
from contribgraph.corpus import Phrase
from contribgraph.pipeline import EXCLUSIVE_PAIRS, INFO_UNITS, MERGED_UNITS, assign_units
from contribgraph.scorer import ScorerModel, FeatureVector

SETTINGS = settings(max_examples=1000, deadline=None)

_WORDS = ["we", "model", "results", "the", "propose", "gated", "units",
          "Abstract", "Introduction", "Methods", "RESULTS", "1", "2.1",
          "data", "?", ",", ".", "by", "and", "V100"]


@st.composite
def documents(draw):
    n = draw(st.integers(min_value=1, max_value=30))
    sentences = []
    for i in range(n):
        toks = draw(st.lists(st.sampled_from(_WORDS), min_size=1, max_size=9))
        sentences.append(SentenceRecord(i, " ".join(toks), toks))
    cuts = draw(st.sets(st.integers(min_value=1, max_value=max(n - 1, 1)),
                        max_size=6))
    starts = sorted({0} | {c for c in cuts if c < n})
    bounds = starts + [n]
    blocks = [
        "\n".join(s.text for s in sentences[bounds[k]:bounds[k + 1]])
        for k in range(len(starts))
    ]
    return Document("prop", blocks, sentences, starts)


@SETTINGS
@given(documents())
def test_header_monotonicity(doc):
    _, contexts = build_contexts(doc)
    for i, ctx in enumerate(contexts):
        if ctx.innermost_idx is not None:
            assert ctx.innermost_idx <= i
        if ctx.topmost_idx is not None:
            assert ctx.topmost_idx <= i
        if ctx.topmost_idx is not None and ctx.innermost_idx is not None:
            assert ctx.topmost_idx <= ctx.innermost_idx


@SETTINGS
@given(documents())
def test_positional_feature_bounds(doc):
    _, contexts = build_contexts(doc)
    for ctx in contexts:
        vec = ctx.position
        assert len(vec) == 6
        for k in (0, 1, 2):
            assert vec[k] >= 0 and float(vec[k]).is_integer()
        for k in (3, 4, 5):
            # offset < stretch length, so proportions stay below 1
            assert 0.0 <= vec[k] < 1.0


@st.composite
def phrase_layouts(draw):
    n_tokens = draw(st.integers(min_value=1, max_value=15))
    tokens = [f"t{k}" for k in range(n_tokens)]
    n_cuts = draw(st.integers(min_value=0, max_value=min(6, n_tokens)))
    cuts = draw(st.sets(st.integers(min_value=0, max_value=n_tokens),
                        min_size=0, max_size=2 * n_cuts))
    edges = sorted(cuts | {0, n_tokens})
    spans = [(a, b) for a, b in zip(edges, edges[1:])]
    keep = draw(st.sets(st.integers(min_value=0, max_value=max(len(spans) - 1, 0)),
                        max_size=len(spans)))
    phrases = []
    for k in sorted(keep):
        if k >= len(spans):
            continue
        s, e = spans[k]
        if draw(st.booleans()):
            continue
        role = draw(st.sampled_from(["Term", "Predicate"]))
        phrases.append(Phrase(0, s, e, " ".join(tokens[s:e]), role))
    return tokens, phrases


@SETTINGS
@given(phrase_layouts(), st.sampled_from([SPECIFIC_BIO, SIMPLE_BIO]))
def test_bio_roundtrip(layout, scheme):
    tokens, phrases = layout
    tags, skipped = encode_tags(phrases, len(tokens), scheme)
    assert not skipped  # layouts never overlap
    scheme.validate(tags)
    back = decode_spans(tags, scheme, tokens)
    assert [(p.tok_start, p.tok_end) for p in back] == \
        [(p.tok_start, p.tok_end) for p in sorted(phrases, key=lambda p: p.span)]
    if scheme is SPECIFIC_BIO:
        assert [p.role for p in back] == \
            [p.role for p in sorted(phrases, key=lambda p: p.span)]


@SETTINGS
@given(st.integers(min_value=0, max_value=10 ** 6),
       st.floats(min_value=0.01, max_value=50.0))
def test_softmax_argmax_scale_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    n_labels = int(rng.integers(2, 6))
    model = ScorerModel(
        [f"l{k}" for k in range(n_labels)],
        {i: rng.normal(size=n_labels) for i in range(12)},
        rng.normal(size=(n_labels, 6)), rng.normal(size=n_labels),
        12, 17,
    )
    fv = FeatureVector(
        {int(i): float(rng.normal()) for i in rng.integers(0, 12, size=4)},
        rng.normal(size=6),
    )
    scaled = ScorerModel(
        model.labels, {k: v * scale for k, v in model.sparse.items()},
        model.dense * scale, model.bias * scale, 12, 17,
    )
    probs = model.predict_proba(fv)
    scaled_probs = scaled.predict_proba(fv)
    assert int(np.argmax(probs)) == int(np.argmax(scaled_probs))
    assert abs(probs.sum() - 1) < 1e-9
    assert abs(scaled_probs.sum() - 1) < 1e-9


@st.composite
def unit_predictions(draw):
    n = draw(st.integers(min_value=1, max_value=20))
    sentences = []
    for i in range(n):
        toks = draw(st.lists(st.sampled_from(
            ["we", "use", "a", "V100", "GPU", "model", "approach", "rate",
             "https://x.y/z", "Results", "."]), min_size=1, max_size=8))
        sentences.append(SentenceRecord(i, " ".join(toks), toks))
    doc = Document("prop", [" \n".join(s.text for s in sentences)], sentences, [0])
    merged = {}
    for i in range(n):
        if draw(st.booleans()):
            merged[i] = draw(st.sampled_from(MERGED_UNITS))
    code = draw(st.sets(st.integers(min_value=0, max_value=n - 1), max_size=3))
    return doc, merged, code


@SETTINGS
@given(unit_predictions())
def test_unit_exclusion_after_split(case):
    doc, merged, code = case
    headers = build_headers(doc)
    out = assign_units(doc, headers, merged, code_idxs=code)
    assert set(out) == set(merged) | set(code)
    assert all(u in INFO_UNITS for u in out.values())
    values = set(out.values())
    for a, b in EXCLUSIVE_PAIRS:
        assert not ({a, b} <= values)
