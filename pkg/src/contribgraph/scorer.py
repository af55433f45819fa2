"""Sparse linear classification backend shared by every decision stage.

Text goes through a seeded feature hasher (lowercased unigrams and
bigrams, with the sentence and its title hashed into disjoint id ranges),
positional values ride along as a dense tail, and a multinomial logistic
model trained by mini-batch gradient descent maps the result to a
probability vector. Stages differ only in how they render text before
calling :func:`featurize`; the model itself is stage-agnostic and can be
swapped for any backend exposing ``labels`` / ``predict_proba``.
"""

import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateDataError, EnsembleError

DEFAULT_HASH_DIM = 2 ** 20
DEFAULT_HASH_SEED = 17
N_DENSE = 6

MODEL_VERSION = "1"


def _stable_hash(text: str, seed: int) -> int:
    return zlib.crc32(text.encode("utf-8"), seed)


@dataclass
class FeatureVector:
    """Sparse hashed text features plus a fixed-width dense tail."""

    terms: dict[int, float]
    dense: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, FeatureVector)
            and self.terms == other.terms
            and np.array_equal(self.dense, other.dense)
        )


def _add_bag(text: str, out: dict[int, float], dim: int, seed: int, offset: int):
    toks = text.lower().split()
    for t in toks:
        fid = offset + _stable_hash("u=" + t, seed) % dim
        out[fid] = out.get(fid, 0.0) + 1.0
    for a, b in zip(toks, toks[1:]):
        fid = offset + _stable_hash(f"b={a} {b}", seed) % dim
        out[fid] = out.get(fid, 0.0) + 1.0


def featurize(
    sentence_text: str,
    title_text: str,
    position,
    hash_dim: int = DEFAULT_HASH_DIM,
    hash_seed: int = DEFAULT_HASH_SEED,
) -> FeatureVector:
    """Hash sentence and title into disjoint namespaces; the position
    vector (length 6, zeros allowed) becomes the dense tail."""
    dense = np.asarray(position, dtype=float)
    if dense.shape != (N_DENSE,):
        raise ValueError(f"position must have length {N_DENSE}")
    terms: dict[int, float] = {}
    _add_bag(sentence_text, terms, hash_dim, hash_seed, 0)
    _add_bag(title_text, terms, hash_dim, hash_seed, hash_dim)
    return FeatureVector(terms, dense)


@dataclass
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 0.4
    batch_size: int = 16
    seed: int = 0
    class_weights: dict | None = None
    downsample: float | None = None
    hash_dim: int = DEFAULT_HASH_DIM
    hash_seed: int = DEFAULT_HASH_SEED

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "class_weights": self.class_weights,
            "downsample": self.downsample,
            "hash_dim": self.hash_dim,
            "hash_seed": self.hash_seed,
        }


@dataclass
class ScorerModel:
    labels: list[str]
    sparse: dict[int, np.ndarray]
    dense: np.ndarray          # (n_labels, N_DENSE)
    bias: np.ndarray           # (n_labels,)
    hash_dim: int
    hash_seed: int
    config: dict = field(default_factory=dict)
    train_log: list[float] = field(default_factory=list)
    version: str = MODEL_VERSION
    # dense-tail standardization fitted on the training set; raw offsets
    # span orders of magnitude and would otherwise dominate the updates
    dense_mean: np.ndarray = field(default_factory=lambda: np.zeros(N_DENSE))
    dense_scale: np.ndarray = field(default_factory=lambda: np.ones(N_DENSE))

    def dense_input(self, fv: FeatureVector) -> np.ndarray:
        return (fv.dense - self.dense_mean) / self.dense_scale

    def scores(self, fv: FeatureVector) -> np.ndarray:
        s = self.bias + self.dense @ self.dense_input(fv)
        for fid, v in fv.terms.items():
            w = self.sparse.get(fid)
            if w is not None:
                s = s + w * v
        return s

    def predict_proba(self, fv: FeatureVector) -> np.ndarray:
        return softmax(self.scores(fv))

    def predict(self, fv: FeatureVector) -> str:
        return self.labels[int(np.argmax(self.scores(fv)))]

    def to_dict(self) -> dict:
        return {
            "kind": "scorer",
            "version": self.version,
            "labels": self.labels,
            "hash_dim": self.hash_dim,
            "hash_seed": self.hash_seed,
            "bias": self.bias.tolist(),
            "dense": self.dense.tolist(),
            "dense_mean": self.dense_mean.tolist(),
            "dense_scale": self.dense_scale.tolist(),
            "sparse": {str(k): v.tolist() for k, v in self.sparse.items()},
            "config": self.config,
            "train_log": self.train_log,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScorerModel":
        return cls(
            labels=list(d["labels"]),
            sparse={int(k): np.asarray(v, dtype=float) for k, v in d["sparse"].items()},
            dense=np.asarray(d["dense"], dtype=float),
            bias=np.asarray(d["bias"], dtype=float),
            hash_dim=int(d["hash_dim"]),
            hash_seed=int(d["hash_seed"]),
            config=dict(d.get("config", {})),
            train_log=list(d.get("train_log", [])),
            version=str(d.get("version", MODEL_VERSION)),
            dense_mean=np.asarray(d.get("dense_mean", np.zeros(N_DENSE)), dtype=float),
            dense_scale=np.asarray(d.get("dense_scale", np.ones(N_DENSE)), dtype=float),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ScorerModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - np.max(scores)
    e = np.exp(z)
    return e / e.sum()


def loss_and_grad(model: ScorerModel, batch, class_weights: dict | None = None):
    """Mean weighted cross-entropy over ``batch`` and its gradient.

    Returns (loss, grad_bias, grad_dense, grad_sparse) where grad_sparse
    maps feature id -> per-label gradient vector. Exposed separately from
    the training loop so the gradient can be checked against finite
    differences.
    """
    lab_index = {l: i for i, l in enumerate(model.labels)}
    n_labels = len(model.labels)
    g_bias = np.zeros(n_labels)
    g_dense = np.zeros((n_labels, N_DENSE))
    g_sparse: dict[int, np.ndarray] = {}
    total = 0.0
    for fv, y in batch:
        p = model.predict_proba(fv)
        yi = lab_index[y]
        w = 1.0 if not class_weights else float(class_weights.get(y, 1.0))
        total += -w * math.log(max(p[yi], 1e-300))
        g = p.copy()
        g[yi] -= 1.0
        g *= w
        g_bias += g
        g_dense += np.outer(g, model.dense_input(fv))
        for fid, v in fv.terms.items():
            acc = g_sparse.get(fid)
            if acc is None:
                g_sparse[fid] = g * v
            else:
                acc += g * v
    inv = 1.0 / len(batch)
    return (
        total * inv,
        g_bias * inv,
        g_dense * inv,
        {k: v * inv for k, v in g_sparse.items()},
    )


def _downsample(data, labels, ratio: float, rng) -> list:
    by_label: dict[str, list[int]] = {l: [] for l in labels}
    for i, (_, y) in enumerate(data):
        by_label[y].append(i)
    floor = min(len(v) for v in by_label.values())
    cap = max(1, round(ratio * floor))
    keep: list[int] = []
    for l in labels:
        idxs = by_label[l]
        if len(idxs) > cap:
            chosen = rng.choice(len(idxs), size=cap, replace=False)
            keep.extend(idxs[j] for j in sorted(chosen))
        else:
            keep.extend(idxs)
    keep.sort()
    return [data[i] for i in keep]


def train(examples, config: TrainConfig | None = None) -> ScorerModel:
    """Train a multinomial logistic model with mini-batch gradient descent.

    ``class_weights`` multiplies each example's loss by its label weight;
    ``downsample`` caps every class at ratio * (smallest class size)
    before training. Raises DegenerateDataError when fewer than two
    labels are present.
    """
    cfg = config or TrainConfig()
    data = list(examples)
    labels = sorted({y for _, y in data})
    if len(labels) < 2:
        raise DegenerateDataError(
            f"need at least 2 labels, got {len(labels)} over {len(data)} examples"
        )
    rng = np.random.default_rng(cfg.seed)
    if cfg.downsample is not None:
        data = _downsample(data, labels, cfg.downsample, rng)
    dense_rows = np.array([fv.dense for fv, _ in data])
    dense_mean = dense_rows.mean(axis=0)
    dense_scale = dense_rows.std(axis=0)
    dense_scale[dense_scale == 0.0] = 1.0
    model = ScorerModel(
        labels=labels,
        sparse={},
        dense=np.zeros((len(labels), N_DENSE)),
        bias=np.zeros(len(labels)),
        hash_dim=cfg.hash_dim,
        hash_seed=cfg.hash_seed,
        config=cfg.to_dict(),
        dense_mean=dense_mean,
        dense_scale=dense_scale,
    )
    order = np.arange(len(data))
    lr = cfg.learning_rate
    for _ in range(cfg.epochs):
        rng.shuffle(order)
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, len(order), cfg.batch_size):
            batch = [data[i] for i in order[lo:lo + cfg.batch_size]]
            loss, g_bias, g_dense, g_sparse = loss_and_grad(
                model, batch, cfg.class_weights
            )
            model.bias -= lr * g_bias
            model.dense -= lr * g_dense
            for fid, g in g_sparse.items():
                w = model.sparse.get(fid)
                if w is None:
                    model.sparse[fid] = -lr * g
                else:
                    w -= lr * g
            epoch_loss += loss
            n_batches += 1
        model.train_log.append(epoch_loss / max(n_batches, 1))
    return model


@dataclass
class EnsembleModel:
    """Bagged scorer: drop-in for a single model at inference."""

    members: list

    def __post_init__(self):
        if not self.members:
            raise EnsembleError("empty ensemble")
        first = self.members[0].labels
        for m in self.members[1:]:
            if m.labels != first:
                raise EnsembleError(f"label sets differ: {first} vs {m.labels}")

    @property
    def labels(self) -> list[str]:
        return self.members[0].labels

    @property
    def hash_dim(self) -> int:
        return self.members[0].hash_dim

    @property
    def hash_seed(self) -> int:
        return self.members[0].hash_seed

    def predict_proba(self, fv: FeatureVector) -> np.ndarray:
        return ensemble_average(self.members, fv)

    def predict(self, fv: FeatureVector) -> str:
        return self.labels[int(np.argmax(self.predict_proba(fv)))]

    def to_dict(self) -> dict:
        return {"kind": "scorer_ensemble",
                "members": [m.to_dict() for m in self.members]}

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleModel":
        return cls([ScorerModel.from_dict(m) for m in d["members"]])


def train_bagged(examples, k: int, config: TrainConfig | None = None) -> EnsembleModel:
    """k members trained on bootstrap resamples with derived seeds."""
    cfg = config or TrainConfig()
    members = []
    for j, sample in enumerate(bootstrap_samples(list(examples), k, cfg.seed)):
        member_cfg = TrainConfig(**{**cfg.to_dict(), "seed": cfg.seed + 7919 * (j + 1)})
        members.append(train(sample, member_cfg))
    return EnsembleModel(members)


def ensemble_average(models, fv: FeatureVector) -> np.ndarray:
    """Arithmetic mean of member probability vectors."""
    members = models.members if isinstance(models, EnsembleModel) else list(models)
    if not members:
        raise EnsembleError("empty ensemble")
    first = members[0].labels
    for m in members[1:]:
        if m.labels != first:
            raise EnsembleError(f"label sets differ: {first} vs {m.labels}")
    acc = np.zeros(len(first))
    for m in members:
        acc += m.predict_proba(fv)
    return acc / len(members)


def bootstrap_samples(examples, k: int, seed: int = 0) -> list[list]:
    """k resamples with replacement, each of the original size."""
    if k < 1:
        raise ValueError("k must be >= 1")
    data = list(examples)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(k):
        idx = rng.integers(0, len(data), size=len(data))
        out.append([data[i] for i in idx])
    return out
