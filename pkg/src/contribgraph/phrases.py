"""Phrase-span recognition with a linear-chain CRF over token features.

Tags follow one of two schemes:

* ``specific``: O / B-Term / I-Term / B-Predicate / I-Predicate; span
  and role are decoded together.
* ``simple``: O / B / I; spans only, with roles from a separate
  marked-span classifier (:func:`classify_phrase_type`).

Both schemes share a hard transition mask (I-x may only continue B-x or
I-x, and no sequence starts with I) enforced with -inf weights, so
neither training nor decoding can ever produce an inconsistent sequence.
Inference is exact: forward-backward in log space for the gradient,
Viterbi for decoding. Submodels trained on bootstrap resamples, with
per-epoch snapshots, can be aggregated by span vote.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Phrase, TERM
from .errors import SpanError, TagSchemeError
from .scorer import bootstrap_samples

NEG_INF = float("-inf")


@dataclass(frozen=True)
class TagScheme:
    variant: str
    tags: tuple[str, ...]

    def allowed_start(self, tag: str) -> bool:
        return not tag.startswith("I")

    def allowed(self, prev: str, cur: str) -> bool:
        if not cur.startswith("I"):
            return True
        return prev == cur or prev == "B" + cur[1:]

    def start_mask(self) -> np.ndarray:
        return np.array([self.allowed_start(t) for t in self.tags])

    def trans_mask(self) -> np.ndarray:
        n = len(self.tags)
        m = np.zeros((n, n), dtype=bool)
        for i, a in enumerate(self.tags):
            for j, b in enumerate(self.tags):
                m[i, j] = self.allowed(a, b)
        return m

    def role_of(self, tag: str) -> str | None:
        if "-" in tag:
            return tag.split("-", 1)[1]
        return None

    def validate(self, tags: list[str]):
        index = set(self.tags)
        prev = None
        for t in tags:
            if t not in index:
                raise TagSchemeError(f"unknown tag {t!r} for scheme {self.variant}")
            if prev is None:
                if not self.allowed_start(t):
                    raise TagSchemeError(f"sequence may not start with {t!r}")
            elif not self.allowed(prev, t):
                raise TagSchemeError(f"forbidden transition {prev!r} -> {t!r}")
            prev = t


SPECIFIC_BIO = TagScheme("specific", ("O", "B-Term", "I-Term", "B-Predicate", "I-Predicate"))
SIMPLE_BIO = TagScheme("simple", ("O", "B", "I"))
_SCHEMES = {s.variant: s for s in (SPECIFIC_BIO, SIMPLE_BIO)}


def scheme(name: str) -> TagScheme:
    try:
        return _SCHEMES[name]
    except KeyError:
        raise TagSchemeError(f"unknown tag scheme {name!r}") from None


def _shape(tok: str) -> str:
    return "".join(
        "X" if c.isupper() else "x" if c.islower() else "d" if c.isdigit() else c
        for c in tok
    )


def token_features(tokens: list[str], i: int) -> list[str]:
    """Deterministic sparse feature set for one token position."""
    tok = tokens[i]
    low = tok.lower()
    feats = [
        "bias",
        f"w={tok}",
        f"lw={low}",
        f"shape={_shape(tok)}",
        f"pre3={low[:3]}",
        f"suf3={low[-3:]}",
        "prev=<s>" if i == 0 else f"prev={tokens[i - 1].lower()}",
        "next=</s>" if i == len(tokens) - 1 else f"next={tokens[i + 1].lower()}",
    ]
    if i == 0:
        feats.append("bos")
    if i == len(tokens) - 1:
        feats.append("eos")
    return feats


@dataclass
class CrfConfig:
    epochs: int = 12
    learning_rate: float = 0.2
    seed: int = 0
    l2: float = 0.0

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "l2": self.l2,
        }


@dataclass
class CrfModel:
    tag_scheme: TagScheme
    feat_index: dict[str, int]
    emissions: np.ndarray      # (n_features, n_tags)
    trans: np.ndarray          # (n_tags, n_tags); forbidden entries are -inf
    start: np.ndarray          # (n_tags,); -inf on I tags
    end: np.ndarray            # (n_tags,)
    config: dict = field(default_factory=dict)
    train_log: list[float] = field(default_factory=list)

    def token_scores(self, tokens: list[str]) -> np.ndarray:
        n, t = len(tokens), len(self.tag_scheme.tags)
        scores = np.zeros((n, t))
        for i in range(n):
            for f in token_features(tokens, i):
                fid = self.feat_index.get(f)
                if fid is not None:
                    scores[i] += self.emissions[fid]
        return scores

    def copy(self) -> "CrfModel":
        return CrfModel(
            self.tag_scheme,
            dict(self.feat_index),
            self.emissions.copy(),
            self.trans.copy(),
            self.start.copy(),
            self.end.copy(),
            dict(self.config),
            list(self.train_log),
        )

    def to_dict(self) -> dict:
        mask = self.tag_scheme.trans_mask()
        return {
            "kind": "crf",
            "scheme": self.tag_scheme.variant,
            "feat_index": self.feat_index,
            "emissions": self.emissions.tolist(),
            "trans": [
                [self.trans[i, j] if mask[i, j] else None for j in range(mask.shape[1])]
                for i in range(mask.shape[0])
            ],
            "start": [v if math.isfinite(v) else None for v in self.start.tolist()],
            "end": self.end.tolist(),
            "config": self.config,
            "train_log": self.train_log,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CrfModel":
        sch = scheme(d["scheme"])
        trans = np.array(
            [[NEG_INF if v is None else v for v in row] for row in d["trans"]]
        )
        start = np.array([NEG_INF if v is None else v for v in d["start"]])
        return cls(
            tag_scheme=sch,
            feat_index={k: int(v) for k, v in d["feat_index"].items()},
            emissions=np.asarray(d["emissions"], dtype=float),
            trans=trans,
            start=start,
            end=np.asarray(d["end"], dtype=float),
            config=dict(d.get("config", {})),
            train_log=list(d.get("train_log", [])),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CrfModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _logsumexp(a: np.ndarray, axis=None) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(np.sum(np.exp(a - m_safe), axis=axis)) + np.squeeze(m_safe, axis=axis)
    # columns that are entirely -inf stay -inf
    all_inf = ~np.isfinite(np.squeeze(m, axis=axis))
    if np.ndim(out) == 0:
        return NEG_INF if all_inf else float(out)
    out = np.asarray(out)
    out[all_inf] = NEG_INF
    return out


def sequence_score(model: CrfModel, tokens: list[str], tags: list[str]) -> float:
    """Unnormalized log score of one tagging (start + emissions +
    transitions + end)."""
    if not tokens:
        return 0.0
    idx = [model.tag_scheme.tags.index(t) for t in tags]
    scores = model.token_scores(tokens)
    total = model.start[idx[0]] + scores[0, idx[0]]
    for i in range(1, len(idx)):
        total += model.trans[idx[i - 1], idx[i]] + scores[i, idx[i]]
    total += model.end[idx[-1]]
    return float(total)


def log_partition(model: CrfModel, tokens: list[str]) -> float:
    """log sum over all taggings of exp(score), by forward recursion."""
    if not tokens:
        return 0.0
    scores = model.token_scores(tokens)
    alpha = model.start + scores[0]
    for i in range(1, len(tokens)):
        alpha = _logsumexp(alpha[:, None] + model.trans, axis=0) + scores[i]
    return float(_logsumexp(alpha + model.end, axis=0))


def sequence_nll_and_grad(model: CrfModel, tokens: list[str], tags: list[str]):
    """Negative conditional log-likelihood of ``tags`` and its gradient.

    Returns (nll, grad_emissions_by_fid, grad_trans, grad_start, grad_end)
    where grad_emissions_by_fid maps feature id -> per-tag vector. The
    expected counts come from forward-backward in log space.
    """
    n_tags = len(model.tag_scheme.tags)
    g_trans = np.zeros((n_tags, n_tags))
    g_start = np.zeros(n_tags)
    g_end = np.zeros(n_tags)
    g_em: dict[int, np.ndarray] = {}
    if not tokens:
        return 0.0, g_em, g_trans, g_start, g_end

    tag_ids = [model.tag_scheme.tags.index(t) for t in tags]
    scores = model.token_scores(tokens)
    n = len(tokens)

    alpha = np.empty((n, n_tags))
    alpha[0] = model.start + scores[0]
    for i in range(1, n):
        alpha[i] = _logsumexp(alpha[i - 1][:, None] + model.trans, axis=0) + scores[i]
    log_z = float(_logsumexp(alpha[-1] + model.end, axis=0))

    beta = np.empty((n, n_tags))
    beta[-1] = model.end
    for i in range(n - 2, -1, -1):
        beta[i] = _logsumexp(model.trans + (scores[i + 1] + beta[i + 1])[None, :], axis=1)

    with np.errstate(invalid="ignore"):
        unary = np.exp(alpha + beta - log_z)
    unary = np.nan_to_num(unary, nan=0.0)

    # emission gradient: expected - observed, scattered over active features
    feats_cache = [token_features(tokens, i) for i in range(n)]
    for i in range(n):
        g = unary[i].copy()
        g[tag_ids[i]] -= 1.0
        for f in feats_cache[i]:
            fid = model.feat_index.get(f)
            if fid is None:
                continue
            acc = g_em.get(fid)
            if acc is None:
                g_em[fid] = g.copy()
            else:
                acc += g

    # transition gradient from pairwise posteriors
    for i in range(n - 1):
        with np.errstate(invalid="ignore"):
            pair = np.exp(
                alpha[i][:, None] + model.trans
                + (scores[i + 1] + beta[i + 1])[None, :] - log_z
            )
        pair = np.nan_to_num(pair, nan=0.0)
        g_trans += pair
        g_trans[tag_ids[i], tag_ids[i + 1]] -= 1.0

    g_start += unary[0]
    g_start[tag_ids[0]] -= 1.0
    g_end += unary[-1]
    g_end[tag_ids[-1]] -= 1.0

    gold = sequence_score(model, tokens, tags)
    nll = log_z - gold

    mask = model.tag_scheme.trans_mask()
    g_trans[~mask] = 0.0
    g_start[~model.tag_scheme.start_mask()] = 0.0
    return nll, g_em, g_trans, g_start, g_end


def _new_model(sentences, tag_scheme: TagScheme, config: CrfConfig) -> CrfModel:
    feats = set()
    for tokens, _ in sentences:
        for i in range(len(tokens)):
            feats.update(token_features(tokens, i))
    feat_index = {f: i for i, f in enumerate(sorted(feats))}
    n_tags = len(tag_scheme.tags)
    trans = np.zeros((n_tags, n_tags))
    trans[~tag_scheme.trans_mask()] = NEG_INF
    start = np.zeros(n_tags)
    start[~tag_scheme.start_mask()] = NEG_INF
    return CrfModel(
        tag_scheme=tag_scheme,
        feat_index=feat_index,
        emissions=np.zeros((len(feat_index), n_tags)),
        trans=trans,
        start=start,
        end=np.zeros(n_tags),
        config=config.to_dict(),
    )


def crf_train(
    sentences,
    tag_scheme: TagScheme = SPECIFIC_BIO,
    config: CrfConfig | None = None,
    on_epoch=None,
) -> CrfModel:
    """Maximize conditional log-likelihood with per-sentence SGD.

    ``sentences`` is a list of (tokens, tags) pairs; every tag sequence
    must be valid under ``tag_scheme`` (TagSchemeError otherwise).
    ``on_epoch(epoch, model)`` is invoked after each epoch (1-based) and
    is how snapshot ensembles collect their members.
    """
    cfg = config or CrfConfig()
    data = [(list(toks), list(tags)) for toks, tags in sentences]
    for toks, tags in data:
        if len(toks) != len(tags):
            raise TagSchemeError("token/tag length mismatch")
        tag_scheme.validate(tags)
    model = _new_model(data, tag_scheme, cfg)
    rng = np.random.default_rng(cfg.seed)
    order = np.arange(len(data))
    lr = cfg.learning_rate
    mask = tag_scheme.trans_mask()
    start_mask = tag_scheme.start_mask()
    for epoch in range(1, cfg.epochs + 1):
        rng.shuffle(order)
        total = 0.0
        for i in order:
            tokens, tags = data[i]
            nll, g_em, g_trans, g_start, g_end = sequence_nll_and_grad(model, tokens, tags)
            for fid, g in g_em.items():
                model.emissions[fid] -= lr * g
            if cfg.l2:
                model.emissions *= 1.0 - lr * cfg.l2
            model.trans[mask] -= lr * g_trans[mask]
            model.start[start_mask] -= lr * g_start[start_mask]
            model.end -= lr * g_end
            total += nll
        model.train_log.append(total / max(len(data), 1))
        if on_epoch is not None:
            on_epoch(epoch, model)
    return model


def viterbi_decode(model: CrfModel, tokens: list[str]) -> list[str]:
    """Highest-scoring valid tag sequence; never violates the mask."""
    if not tokens:
        return []
    scores = model.token_scores(tokens)
    n, n_tags = scores.shape
    delta = model.start + scores[0]
    back = np.zeros((n, n_tags), dtype=int)
    for i in range(1, n):
        cand = delta[:, None] + model.trans
        back[i] = np.argmax(cand, axis=0)
        delta = cand[back[i], np.arange(n_tags)] + scores[i]
    delta = delta + model.end
    best = int(np.argmax(delta))
    path = [best]
    for i in range(n - 1, 0, -1):
        best = int(back[i][best])
        path.append(best)
    path.reverse()
    return [model.tag_scheme.tags[i] for i in path]


def decode_spans(
    tags: list[str], tag_scheme: TagScheme, tokens: list[str], sentence_idx: int = 0
) -> list[Phrase]:
    """Turn maximal B..I runs into phrases; the specific scheme fills the
    role from the tag suffix, the simple scheme leaves it unset."""
    phrases = []
    start = None
    role = None

    def close(end):
        nonlocal start, role
        if start is not None:
            phrases.append(Phrase(
                sentence_idx, start, end, " ".join(tokens[start:end]), role
            ))
        start, role = None, None

    for i, tag in enumerate(tags):
        if tag == "O":
            close(i)
        elif tag.startswith("B"):
            close(i)
            start, role = i, tag_scheme.role_of(tag)
        else:  # I tag; ignore orphans that continue nothing
            if start is None or tag_scheme.role_of(tag) != role:
                close(i)
    close(len(tags))
    return phrases


def encode_tags(
    phrases: list[Phrase], n_tokens: int, tag_scheme: TagScheme
) -> tuple[list[str], list[Phrase]]:
    """Inverse of decode_spans for building training data.

    Overlaps are resolved longest-first; losers are returned as skipped.
    Under the specific scheme a phrase without a role is skipped too
    (its type cannot be expressed).
    """
    tags = ["O"] * n_tokens
    skipped: list[Phrase] = []
    order = sorted(phrases, key=lambda p: (-(p.tok_end - p.tok_start), p.tok_start))
    for p in order:
        if not 0 <= p.tok_start < p.tok_end <= n_tokens:
            raise SpanError(f"span {p.span} outside {n_tokens}-token sentence")
        if any(tags[i] != "O" for i in range(p.tok_start, p.tok_end)):
            skipped.append(p)
            continue
        if tag_scheme.variant == "specific":
            if p.role is None:
                skipped.append(p)
                continue
            b, i_ = f"B-{p.role}", f"I-{p.role}"
        else:
            b, i_ = "B", "I"
        tags[p.tok_start] = b
        for i in range(p.tok_start + 1, p.tok_end):
            tags[i] = i_
    return tags, skipped


def classify_phrase_type(model, tokens: list[str], span: tuple[int, int]) -> str:
    """Wrap ``span`` in [[ ]] markers and classify the rendering as
    Term vs Predicate (used with the simple scheme)."""
    from .scorer import featurize
    from .triples import render_with_markers

    start, end = span
    if not 0 <= start < end <= len(tokens):
        raise SpanError(f"span {span} outside {len(tokens)}-token sentence")
    text = render_with_markers(tokens, [((start, end), "[[", "]]")])
    fv = featurize(text, "", [0.0] * 6, model.hash_dim, model.hash_seed)
    return model.predict(fv)


def phrase_vote_ensemble(
    submodels: list[CrfModel], tokens: list[str], n_min: int, sentence_idx: int = 0
) -> list[Phrase]:
    """Keep a span iff strictly more than ``n_min`` submodels predict the
    identical (tok_start, tok_end); output sorted by start. When
    submodels carry roles the majority role is attached (ties -> Term).
    """
    if not submodels:
        raise ValueError("submodels must be nonempty")
    counts: dict[tuple[int, int], int] = {}
    roles: dict[tuple[int, int], list[str]] = {}
    for m in submodels:
        tags = viterbi_decode(m, tokens)
        for ph in decode_spans(tags, m.tag_scheme, tokens, sentence_idx):
            counts[ph.span] = counts.get(ph.span, 0) + 1
            if ph.role is not None:
                roles.setdefault(ph.span, []).append(ph.role)
    out = []
    for span in sorted(k for k, c in counts.items() if c > n_min):
        votes = roles.get(span, [])
        role = None
        if votes:
            role = max(sorted(set(votes)), key=lambda r: (votes.count(r), r == TERM))
        start, end = span
        out.append(Phrase(sentence_idx, start, end, " ".join(tokens[start:end]), role))
    return out


def train_phrase_submodels(
    sentences,
    tag_scheme: TagScheme,
    config: CrfConfig | None = None,
    n_bootstrap: int = 12,
    snapshot_epochs: tuple[int, ...] = tuple(range(3, 11)),
    seed: int = 0,
) -> list[CrfModel]:
    """Bootstrap resamples x per-epoch snapshots -> submodel pool
    (12 x epochs 3..10 = 96 with the defaults)."""
    cfg = config or CrfConfig()
    wanted = sorted(set(snapshot_epochs))
    samples = bootstrap_samples(list(sentences), n_bootstrap, seed)
    subs: list[CrfModel] = []
    for j, sample in enumerate(samples):
        snaps: list[CrfModel] = []

        def grab(epoch, model, _snaps=snaps):
            if epoch in wanted:
                _snaps.append(model.copy())

        run_cfg = CrfConfig(
            epochs=max(wanted) if wanted else cfg.epochs,
            learning_rate=cfg.learning_rate,
            seed=cfg.seed + j,
            l2=cfg.l2,
        )
        crf_train(sample, tag_scheme, run_cfg, on_epoch=grab)
        subs.extend(snaps)
    return subs
