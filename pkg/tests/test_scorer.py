import numpy as np
import pytest

from contribgraph.errors import DegenerateDataError, EnsembleError
from contribgraph.scorer import (
    EnsembleModel, FeatureVector, ScorerModel, TrainConfig, bootstrap_samples,
    ensemble_average, featurize, loss_and_grad, softmax, train,
)


def toy_fv(rng, n_feats=6, dim=64):
    terms = {int(i): float(rng.normal()) for i in rng.integers(0, dim, size=n_feats)}
    return FeatureVector(terms, rng.normal(size=6))


def separable_examples(n=20, seed=0):
    """Two classes split by one indicator feature."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        label = "pos" if i % 2 == 0 else "neg"
        text = "alpha marker" if label == "pos" else "beta marker"
        out.append((featurize(text, "", rng.normal(size=6) * 0.1), label))
    return out


class TestFeaturize:
    def test_empty_inputs(self):
        fv = featurize("", "", [0.0] * 6)
        assert fv.terms == {}
        assert np.array_equal(fv.dense, np.zeros(6))

    def test_namespaces_disjoint(self):
        a = featurize("we propose things", "", [0.0] * 6)
        b = featurize("", "we propose things", [0.0] * 6)
        assert set(a.terms)
        assert set(a.terms).isdisjoint(b.terms)

    def test_deterministic(self):
        v = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
        assert featurize("we propose X", "Introduction", v) == \
            featurize("we propose X", "Introduction", v)

    def test_seed_changes_hash(self):
        a = featurize("we propose X", "", [0.0] * 6, hash_seed=17)
        b = featurize("we propose X", "", [0.0] * 6, hash_seed=18)
        assert a.terms != b.terms

    def test_bad_position_length(self):
        with pytest.raises(ValueError):
            featurize("x", "", [0.0] * 5)


class TestTrain:
    def test_separable_reaches_full_accuracy(self):
        data = separable_examples()
        model = train(data, TrainConfig(epochs=200, learning_rate=0.5, seed=0))
        assert all(model.predict(fv) == y for fv, y in data)

    def test_single_label_raises(self):
        data = [(featurize("x", "", [0.0] * 6), "only")] * 4
        with pytest.raises(DegenerateDataError):
            train(data)

    def test_class_weight_raises_recall(self):
        # 9.7% positives, every feature ambiguous: the unweighted optimum
        # predicts neg everywhere, a 10x positive weight flips it
        data = []
        for word in ("night", "delta"):
            for i in range(300):
                label = "pos" if i < 29 else "neg"
                data.append((featurize(word, "", [0.0] * 6), label))
        base = TrainConfig(epochs=60, learning_rate=0.5, seed=1)
        weighted = TrainConfig(epochs=60, learning_rate=0.5, seed=1,
                               class_weights={"pos": 10.0, "neg": 1.0})
        m0, m1 = train(data, base), train(data, weighted)

        def recall(m):
            tp = sum(1 for fv, y in data if y == "pos" and m.predict(fv) == "pos")
            return tp / sum(1 for _, y in data if y == "pos")

        assert recall(m1) > recall(m0)

    def test_downsample_equalizes_counts(self):
        rng = np.random.default_rng(3)
        data = [(toy_fv(rng), "neg") for _ in range(90)]
        data += [(toy_fv(rng), "pos") for _ in range(10)]
        from contribgraph.scorer import _downsample
        balanced = _downsample(data, ["neg", "pos"], 1.0, np.random.default_rng(0))
        counts = {}
        for _, y in balanced:
            counts[y] = counts.get(y, 0) + 1
        assert counts == {"neg": 10, "pos": 10}

    def test_loss_nonincreasing_smoothed(self, fixture_docs):
        data = separable_examples(n=60, seed=5)
        model = train(data, TrainConfig(epochs=30, learning_rate=0.2, seed=2))
        log = model.train_log
        smooth = [np.mean(log[max(0, i - 4):i + 1]) for i in range(len(log))]
        assert all(b <= a + 1e-9 for a, b in zip(smooth, smooth[1:]))


class TestPredictProba:
    def test_uniform_for_zero_weights(self):
        model = ScorerModel(["a", "b", "c"], {}, np.zeros((3, 6)), np.zeros(3),
                            2 ** 10, 17)
        p = model.predict_proba(featurize("whatever", "", [0.0] * 6))
        assert np.allclose(p, 1 / 3)

    def test_sums_to_one(self):
        rng = np.random.default_rng(0)
        model = ScorerModel(
            ["a", "b"], {i: rng.normal(size=2) for i in range(64)},
            rng.normal(size=(2, 6)), rng.normal(size=2), 64, 17,
        )
        for _ in range(50):
            p = model.predict_proba(toy_fv(rng, dim=64))
            assert abs(p.sum() - 1.0) < 1e-9

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        labels = ["a", "b", "c"]
        model = ScorerModel(
            labels, {i: rng.normal(size=3) * 0.3 for i in range(16)},
            rng.normal(size=(3, 6)) * 0.3, rng.normal(size=3) * 0.3, 16, 17,
        )
        batch = [(toy_fv(rng, n_feats=4, dim=16), labels[int(rng.integers(3))])
                 for _ in range(8)]
        weights = {"a": 2.0, "b": 1.0, "c": 0.5}
        _, g_bias, g_dense, g_sparse = loss_and_grad(model, batch, weights)
        eps = 1e-6

        def loss_at():
            return loss_and_grad(model, batch, weights)[0]

        checks = []
        for li in range(3):
            model.bias[li] += eps
            up = loss_at()
            model.bias[li] -= 2 * eps
            down = loss_at()
            model.bias[li] += eps
            checks.append((g_bias[li], (up - down) / (2 * eps)))
        for li in range(3):
            for di in range(6):
                model.dense[li, di] += eps
                up = loss_at()
                model.dense[li, di] -= 2 * eps
                down = loss_at()
                model.dense[li, di] += eps
                checks.append((g_dense[li, di], (up - down) / (2 * eps)))
        for fid in list(g_sparse)[:5]:
            for li in range(3):
                model.sparse[fid][li] += eps
                up = loss_at()
                model.sparse[fid][li] -= 2 * eps
                down = loss_at()
                model.sparse[fid][li] += eps
                checks.append((g_sparse[fid][li], (up - down) / (2 * eps)))
        analytic = np.array([a for a, _ in checks])
        numeric = np.array([b for _, b in checks])
        denom = max(float(np.linalg.norm(numeric)), 1e-9)
        assert np.linalg.norm(analytic - numeric) / denom < 1e-4


class TestScaleInvariance:
    def test_argmax_stable_under_positive_scaling(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            model = ScorerModel(
                ["a", "b", "c"], {i: rng.normal(size=3) for i in range(32)},
                rng.normal(size=(3, 6)), rng.normal(size=3), 32, 17,
            )
            fv = toy_fv(rng, dim=32)
            before = model.predict(fv)
            c = float(rng.uniform(0.1, 7.0))
            scaled = ScorerModel(
                model.labels, {k: v * c for k, v in model.sparse.items()},
                model.dense * c, model.bias * c, 32, 17,
            )
            assert scaled.predict(fv) == before


class TestEnsemble:
    def _const_model(self, probs, labels=("a", "b")):
        bias = np.log(np.asarray(probs))
        return ScorerModel(list(labels), {}, np.zeros((len(probs), 6)), bias,
                           16, 17)

    def test_single_member_identity(self):
        m = self._const_model([0.3, 0.7])
        fv = featurize("", "", [0.0] * 6)
        assert np.allclose(ensemble_average([m], fv), m.predict_proba(fv))

    def test_two_member_average(self):
        a = self._const_model([0.2, 0.8])
        b = self._const_model([0.6, 0.4])
        fv = featurize("", "", [0.0] * 6)
        assert np.allclose(ensemble_average([a, b], fv), [0.4, 0.6])

    def test_mismatched_labels_rejected(self):
        a = self._const_model([0.5, 0.5], labels=("a", "b"))
        b = self._const_model([0.5, 0.5], labels=("a", "c"))
        with pytest.raises(EnsembleError):
            ensemble_average([a, b], featurize("", "", [0.0] * 6))
        with pytest.raises(EnsembleError):
            EnsembleModel([a, b])

    def test_bagged_ensemble_tracks_best_member(self):
        rng = np.random.default_rng(23)
        vocab = {"a": ["alpha kernel", "alpha widget", "misc alpha"],
                 "b": ["beta kernel", "beta widget", "misc beta"],
                 "c": ["gamma kernel", "gamma widget", "misc gamma"]}
        def sample(n, seed):
            r = np.random.default_rng(seed)
            rows = []
            for _ in range(n):
                y = ["a", "b", "c"][int(r.integers(3))]
                text = vocab[y][int(r.integers(3))]
                if r.random() < 0.15:
                    text = vocab[["a", "b", "c"][int(r.integers(3))]][0]
                rows.append((featurize(text, "", [0.0] * 6), y))
            return rows

        train_set = sample(120, 1)
        dev = sample(120, 2)
        members = [
            train(s, TrainConfig(epochs=10, learning_rate=0.3, seed=i))
            for i, s in enumerate(bootstrap_samples(train_set, 45, seed=9))
        ]

        def macro_f1(predict):
            scores = []
            for lab in ("a", "b", "c"):
                tp = sum(1 for fv, y in dev if y == lab and predict(fv) == lab)
                fp = sum(1 for fv, y in dev if y != lab and predict(fv) == lab)
                fn = sum(1 for fv, y in dev if y == lab and predict(fv) != lab)
                p = tp / (tp + fp) if tp + fp else 0
                r = tp / (tp + fn) if tp + fn else 0
                scores.append(2 * p * r / (p + r) if p + r else 0)
            return float(np.mean(scores))

        labels = members[0].labels
        ens = macro_f1(lambda fv: labels[int(np.argmax(ensemble_average(members, fv)))])
        best = max(macro_f1(m.predict) for m in members)
        assert ens >= best - 0.02


class TestBootstrap:
    def test_reproducible(self):
        data = list(range(50))
        assert bootstrap_samples(data, 3, seed=4) == bootstrap_samples(data, 3, seed=4)

    def test_twelve_samples_of_original_size(self):
        data = list(range(200))
        samples = bootstrap_samples(data, 12, seed=0)
        assert len(samples) == 12
        assert all(len(s) == 200 for s in samples)

    def test_distinct_fraction_near_one_minus_inv_e(self):
        data = list(range(1000))
        samples = bootstrap_samples(data, 20, seed=1)
        fracs = [len(set(s)) / 1000 for s in samples]
        assert abs(float(np.mean(fracs)) - (1 - 1 / np.e)) < 0.05

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            bootstrap_samples([1, 2], 0)


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        model = train(separable_examples(), TrainConfig(epochs=5, seed=0))
        path = tmp_path / "m.json"
        model.save(path)
        again = ScorerModel.load(path)
        assert again.labels == model.labels
        fv = featurize("alpha marker", "", [0.0] * 6)
        assert np.allclose(again.predict_proba(fv), model.predict_proba(fv))
        assert again.config == model.config

    def test_softmax_normalized(self):
        z = softmax(np.array([1000.0, 1000.0, -1000.0]))
        assert abs(z.sum() - 1) < 1e-12
