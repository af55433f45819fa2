import math

import numpy as np
import pytest

from contribgraph.corpus import Phrase
from contribgraph.errors import SpanError, TagSchemeError
from contribgraph.phrases import (
    SIMPLE_BIO, SPECIFIC_BIO, CrfConfig, classify_phrase_type,
    crf_train, decode_spans, encode_tags, log_partition, phrase_vote_ensemble,
    scheme, sequence_nll_and_grad, sequence_score, token_features,
    train_phrase_submodels, viterbi_decode,
)
from contribgraph.scorer import TrainConfig, featurize, train

import oracles


class TestTagScheme:
    def test_masks(self):
        assert SPECIFIC_BIO.allowed("B-Term", "I-Term")
        assert not SPECIFIC_BIO.allowed("B-Term", "I-Predicate")
        assert not SPECIFIC_BIO.allowed("O", "I-Term")
        assert SIMPLE_BIO.allowed("I", "I")
        assert not SIMPLE_BIO.allowed_start("I")

    def test_validate(self):
        SPECIFIC_BIO.validate(["O", "B-Term", "I-Term", "O"])
        with pytest.raises(TagSchemeError):
            SPECIFIC_BIO.validate(["I-Term"])
        with pytest.raises(TagSchemeError):
            SPECIFIC_BIO.validate(["B-Term", "I-Predicate"])
        with pytest.raises(TagSchemeError):
            SIMPLE_BIO.validate(["B-Term"])

    def test_lookup(self):
        assert scheme("simple") is SIMPLE_BIO
        with pytest.raises(TagSchemeError):
            scheme("fancy")


class TestTokenFeatures:
    def test_shape_feature(self):
        feats = token_features(["BLEU"], 0)
        assert "shape=XXXX" in feats

    def test_sentence_boundary_markers(self):
        feats = token_features(["We", "propose", "X"], 0)
        assert "bos" in feats and "prev=<s>" in feats
        last = token_features(["We", "propose", "X"], 2)
        assert "eos" in last and "next=</s>" in last

    def test_deterministic(self):
        toks = "We apply dropout to layers .".split()
        for i in range(len(toks)):
            assert token_features(toks, i) == token_features(toks, i)


def tiny_training_set():
    """'use'/'apply' always predicates, noun-ish tokens always terms."""
    rows = [
        ("We use dropout .".split(), ["O", "B-Predicate", "B-Term", "O"]),
        ("We use masking .".split(), ["O", "B-Predicate", "B-Term", "O"]),
        ("They apply dropout .".split(), ["O", "B-Predicate", "B-Term", "O"]),
        ("Models use wide layers .".split(),
         ["B-Term", "B-Predicate", "B-Term", "I-Term", "O"]),
        ("We see nothing .".split(), ["O", "O", "O", "O"]),
    ]
    return rows * 4


class TestCrfTrain:
    def test_memorizes_constant_tag(self):
        model = crf_train(tiny_training_set(), SPECIFIC_BIO,
                          CrfConfig(epochs=8, learning_rate=0.3, seed=0))
        tags = viterbi_decode(model, "You use padding .".split())
        assert tags[1] == "B-Predicate"

    def test_invalid_gold_rejected(self):
        with pytest.raises(TagSchemeError):
            crf_train([(["a"], ["I-Term"])], SPECIFIC_BIO)

    def test_length_mismatch_rejected(self):
        with pytest.raises(TagSchemeError):
            crf_train([(["a", "b"], ["O"])], SPECIFIC_BIO)

    def test_loss_decreases(self):
        model = crf_train(tiny_training_set(), SPECIFIC_BIO,
                          CrfConfig(epochs=10, learning_rate=0.3, seed=1))
        assert model.train_log[-1] < model.train_log[0]

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        tokens = "alpha beta gamma".split()
        tags = ["B-Term", "I-Term", "O"]
        model = oracles.random_crf_model(rng, SPECIFIC_BIO, [tokens], scale=0.4)
        nll, g_em, g_trans, g_start, g_end = sequence_nll_and_grad(model, tokens, tags)
        eps = 1e-6
        checks = []

        def nll_at():
            return sequence_nll_and_grad(model, tokens, tags)[0]

        for fid in list(g_em)[:6]:
            for ti in range(len(SPECIFIC_BIO.tags)):
                model.emissions[fid, ti] += eps
                up = nll_at()
                model.emissions[fid, ti] -= 2 * eps
                down = nll_at()
                model.emissions[fid, ti] += eps
                checks.append((g_em[fid][ti], (up - down) / (2 * eps)))
        mask = SPECIFIC_BIO.trans_mask()
        for i in range(mask.shape[0]):
            for j in range(mask.shape[1]):
                if not mask[i, j]:
                    continue
                model.trans[i, j] += eps
                up = nll_at()
                model.trans[i, j] -= 2 * eps
                down = nll_at()
                model.trans[i, j] += eps
                checks.append((g_trans[i, j], (up - down) / (2 * eps)))
        for i in range(len(SPECIFIC_BIO.tags)):
            if SPECIFIC_BIO.allowed_start(SPECIFIC_BIO.tags[i]):
                model.start[i] += eps
                up = nll_at()
                model.start[i] -= 2 * eps
                down = nll_at()
                model.start[i] += eps
                checks.append((g_start[i], (up - down) / (2 * eps)))
            model.end[i] += eps
            up = nll_at()
            model.end[i] -= 2 * eps
            down = nll_at()
            model.end[i] += eps
            checks.append((g_end[i], (up - down) / (2 * eps)))
        analytic = np.array([a for a, _ in checks])
        numeric = np.array([b for _, b in checks])
        denom = max(float(np.linalg.norm(numeric)), 1e-9)
        assert np.linalg.norm(analytic - numeric) / denom < 1e-4

    def test_probabilities_sum_to_one_over_all_taggings(self):
        rng = np.random.default_rng(9)
        tokens = "alpha beta gamma".split()
        model = oracles.random_crf_model(rng, SIMPLE_BIO, [tokens])
        log_z = log_partition(model, tokens)
        total = sum(
            math.exp(sequence_score(model, tokens, seq) - log_z)
            for seq in oracles.valid_sequences(SIMPLE_BIO, 3)
        )
        assert abs(total - 1.0) < 1e-9


class TestViterbi:
    def test_empty_sentence(self):
        rng = np.random.default_rng(0)
        model = oracles.random_crf_model(rng, SIMPLE_BIO, [["x"]])
        assert viterbi_decode(model, []) == []

    @pytest.mark.parametrize("scheme_obj", [SIMPLE_BIO, SPECIFIC_BIO])
    @pytest.mark.parametrize("length", [1, 2, 3, 4])
    def test_matches_brute_force(self, scheme_obj, length):
        rng = np.random.default_rng(100 * length + len(scheme_obj.tags))
        for trial in range(10):
            tokens = [f"w{rng.integers(5)}" for _ in range(length)]
            model = oracles.random_crf_model(rng, scheme_obj, [tokens])
            got = viterbi_decode(model, tokens)
            best_seq, best_score = oracles.brute_force_viterbi(model, tokens)
            assert sequence_score(model, tokens, got) == pytest.approx(best_score)
            assert got == best_seq

    def test_partition_matches_brute_force(self):
        rng = np.random.default_rng(77)
        for length in (1, 2, 3, 4):
            tokens = [f"t{k}" for k in range(length)]
            for scheme_obj in (SIMPLE_BIO, SPECIFIC_BIO):
                model = oracles.random_crf_model(rng, scheme_obj, [tokens])
                got = log_partition(model, tokens)
                want = oracles.brute_force_log_partition(model, tokens)
                assert abs(got - want) / max(abs(want), 1.0) < 1e-6

    def test_zero_model_output_is_mask_valid(self):
        model = oracles.random_crf_model(
            np.random.default_rng(0), SPECIFIC_BIO, [["a", "b", "c"]], scale=0.0
        )
        tags = viterbi_decode(model, ["a", "b", "c"])
        SPECIFIC_BIO.validate(tags)

    def test_beats_random_sequences(self):
        rng = np.random.default_rng(3)
        tokens = [f"w{k}" for k in range(7)]
        model = oracles.random_crf_model(rng, SPECIFIC_BIO, [tokens])
        best = sequence_score(model, tokens, viterbi_decode(model, tokens))
        seqs = oracles.valid_sequences(SPECIFIC_BIO, 7)
        picks = rng.integers(0, len(seqs), size=1000)
        for k in picks:
            assert best >= sequence_score(model, tokens, seqs[k]) - 1e-9


class TestSpans:
    def test_decode_basic(self):
        tags = ["B-Term", "I-Term", "O"]
        got = decode_spans(tags, SPECIFIC_BIO, ["deep", "nets", "."])
        assert got == [Phrase(0, 0, 2, "deep nets", "Term")]

    def test_all_outside(self):
        assert decode_spans(["O", "O"], SIMPLE_BIO, ["a", "b"]) == []

    def test_adjacent_b_starts_new_span(self):
        got = decode_spans(["B", "I", "B"], SIMPLE_BIO, ["a", "b", "c"])
        assert [(p.tok_start, p.tok_end) for p in got] == [(0, 2), (2, 3)]
        assert all(p.role is None for p in got)

    def test_encode_decode_roundtrip(self):
        phrases = [
            Phrase(4, 0, 2, "deep nets", "Term"),
            Phrase(4, 3, 4, "use", "Predicate"),
            Phrase(4, 4, 6, "many layers", "Term"),
        ]
        tokens = "deep nets also use many layers .".split()
        for sch in (SPECIFIC_BIO, SIMPLE_BIO):
            tags, skipped = encode_tags(phrases, len(tokens), sch)
            assert not skipped
            sch.validate(tags)
            back = decode_spans(tags, sch, tokens, sentence_idx=4)
            assert [(p.tok_start, p.tok_end) for p in back] == \
                [(0, 2), (3, 4), (4, 6)]
            if sch is SPECIFIC_BIO:
                assert [p.role for p in back] == ["Term", "Predicate", "Term"]

    def test_encode_overlap_longest_first(self):
        phrases = [
            Phrase(0, 0, 2, "a b", "Term"),
            Phrase(0, 1, 4, "b c d", "Term"),
        ]
        tags, skipped = encode_tags(phrases, 5, SIMPLE_BIO)
        assert tags == ["O", "B", "I", "I", "O"]
        assert skipped == [phrases[0]]

    def test_encode_out_of_range(self):
        with pytest.raises(SpanError):
            encode_tags([Phrase(0, 2, 9, "x", "Term")], 4, SIMPLE_BIO)

    def test_specific_requires_role(self):
        phrases = [Phrase(0, 0, 1, "a", None)]
        tags, skipped = encode_tags(phrases, 2, SPECIFIC_BIO)
        assert tags == ["O", "O"] and skipped == phrases


class TestPhraseType:
    def _model(self):
        rows = []
        verbs = ["use", "apply", "introduce", "propose", "train", "extend"]
        nouns = ["dropout", "attention", "layers", "corpus", "encoder", "grid"]
        for v in verbs:
            rows.append((featurize(f"we [[ {v} ]] the {nouns[0]} .", "", [0.0] * 6),
                         "Predicate"))
        for n in nouns:
            rows.append((featurize(f"we use [[ {n} ]] here .", "", [0.0] * 6),
                         "Term"))
        return train(rows * 3, TrainConfig(epochs=40, learning_rate=0.4, seed=0))

    def test_verb_predicate(self):
        model = self._model()
        got = classify_phrase_type(model, "we introduce a model .".split(), (1, 2))
        assert got == "Predicate"

    def test_whole_sentence_span(self):
        model = self._model()
        got = classify_phrase_type(model, "dropout".split(), (0, 1))
        assert got in ("Term", "Predicate")

    def test_bad_span(self):
        with pytest.raises(SpanError):
            classify_phrase_type(self._model(), ["a"], (0, 2))

    def test_fixture_dev_f1(self):
        """Marked-span typing on held-out vocabulary stays above 0.9 F1."""
        rng = np.random.default_rng(2)
        verbs = ["use", "apply", "propose", "employ", "train", "adopt",
                 "leverage", "extend"]
        nouns = ["dropout", "attention", "layers", "corpus", "encoder",
                 "benchmark", "recall", "grid"]
        temps = ["we {m} for tasks .", "they {m} in practice .",
                 "models {m} each epoch ."]

        def render(word, rng):
            t = temps[int(rng.integers(len(temps)))]
            return t.format(m=f"[[ {word} ]]")

        train_rows = []
        for w in verbs[:6]:
            train_rows += [(featurize(render(w, rng), "", [0.0] * 6), "Predicate")
                           for _ in range(6)]
        for w in nouns[:6]:
            train_rows += [(featurize(render(w, rng), "", [0.0] * 6), "Term")
                           for _ in range(6)]
        model = train(train_rows, TrainConfig(epochs=40, learning_rate=0.4, seed=3))
        dev = [(render(w, rng), "Predicate") for w in verbs[:6] for _ in range(3)]
        dev += [(render(w, rng), "Term") for w in nouns[:6] for _ in range(3)]
        tp = fp = fn = 0
        for text, y in dev:
            got = model.predict(featurize(text, "", [0.0] * 6))
            if got == "Predicate" and y == "Predicate":
                tp += 1
            elif got == "Predicate":
                fp += 1
            elif y == "Predicate":
                fn += 1
        p = tp / (tp + fp) if tp + fp else 0
        r = tp / (tp + fn) if tp + fn else 0
        f1 = 2 * p * r / (p + r) if p + r else 0
        assert f1 >= 0.9


def _span_only_model(spans, tokens, scheme_obj=SIMPLE_BIO):
    """Train a one-sentence CRF that reproduces exactly these spans."""
    phrases = [Phrase(0, s, e, " ".join(tokens[s:e]),
                      None if scheme_obj is SIMPLE_BIO else "Term")
               for s, e in spans]
    tags, _ = encode_tags(phrases, len(tokens), scheme_obj)
    return crf_train([(tokens, tags)] * 3, scheme_obj,
                     CrfConfig(epochs=25, learning_rate=0.5, seed=0))


class TestVoteEnsemble:
    TOKENS = "alpha beta gamma delta .".split()

    def test_vote_threshold(self):
        m_ab = _span_only_model([(0, 1), (1, 2)], self.TOKENS)
        m_a = _span_only_model([(0, 1)], self.TOKENS)
        m_ac = _span_only_model([(0, 1), (2, 3)], self.TOKENS)
        for m, want in ((m_ab, {(0, 1), (1, 2)}), (m_a, {(0, 1)}),
                        (m_ac, {(0, 1), (2, 3)})):
            got = {p.span for p in decode_spans(
                viterbi_decode(m, self.TOKENS), SIMPLE_BIO, self.TOKENS)}
            assert got == want
        voted = phrase_vote_ensemble([m_ab, m_a, m_ac], self.TOKENS, n_min=1)
        assert [p.span for p in voted] == [(0, 1)]

    def test_single_model_nmin_zero_identity(self):
        m = _span_only_model([(1, 3)], self.TOKENS)
        direct = decode_spans(viterbi_decode(m, self.TOKENS), SIMPLE_BIO, self.TOKENS)
        assert phrase_vote_ensemble([m], self.TOKENS, n_min=0) == direct

    def test_unanimity_threshold(self):
        m_ab = _span_only_model([(0, 1), (1, 2)], self.TOKENS)
        m_a = _span_only_model([(0, 1)], self.TOKENS)
        voted = phrase_vote_ensemble([m_ab, m_a], self.TOKENS, n_min=1)
        assert [p.span for p in voted] == [(0, 1)]

    def test_ninety_six_submodels(self):
        sents = tiny_training_set()
        simple = [(toks, ["O" if t == "O" else t[0] for t in tags])
                  for toks, tags in sents]
        subs = train_phrase_submodels(
            simple, SIMPLE_BIO, CrfConfig(epochs=10, learning_rate=0.3),
            n_bootstrap=12, snapshot_epochs=tuple(range(3, 11)), seed=0,
        )
        assert len(subs) == 96
        voted = phrase_vote_ensemble(subs, "We use dropout .".split(), n_min=48)
        assert (2, 3) in {p.span for p in voted}
