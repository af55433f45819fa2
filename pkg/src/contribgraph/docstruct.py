"""Section-header recovery and positional features.

Two detectors run over a loaded document:

* Heuristic1 takes the first line of every blank-line-delimited block as
  a header, document start included.
* Heuristic2 keeps short capitalized sentences that survive stopword and
  punctuation tests, votes on the majority case format, and keeps the
  conforming ones; those shorter than five words that carry a section cue
  ("method", "result", ...) are the topmost level.

Every sentence is then given its nearest preceding topmost and innermost
headers, a combined "title" string, and six positional features: offset
in the paper, offset in its topmost section, offset in its Heuristic1
block, and the same three divided by the length of the corresponding
stretch of sentences.
"""

import re
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path

from .corpus import Document
from .errors import NoHeadersError

CASE_ALL_UPPER = "AllUpper"
CASE_TITLE = "TitleCase"
CASE_SENTENCE = "SentenceCase"
_CASE_PRIORITY = (CASE_ALL_UPPER, CASE_TITLE, CASE_SENTENCE)

DEFAULT_CUE_LEXICON = frozenset({
    "abstract", "introduction", "background", "related", "method", "approach",
    "model", "experiment", "evaluation", "result", "discussion", "conclusion",
    "analysis", "setup", "acknowledg", "reference", "appendix",
})

HEADER_STOP_LASTWORDS = frozenset({"by", "as", "in", "that", "and"})
_BAD_FINAL_CHARS = (",", ":", ".")
_FUNCTION_WORDS = frozenset({
    "a", "an", "the", "of", "in", "on", "for", "and", "or", "to", "with",
    "by", "at", "as", "from", "via", "vs",
})
_NUMBERING_RE = re.compile(r"^(?:\d+(?:\.\d+)*\.?|[IVXLCDM]+\.?)$")


def load_lexicon(path) -> frozenset[str]:
    """Read a cue/stopword lexicon: one entry per line, '#' comments."""
    entries = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip().lower()
        if line and not line.startswith("#"):
            entries.add(line)
    return frozenset(entries)


@dataclass(frozen=True)
class H2Header:
    sentence_idx: int
    text: str
    is_topmost: bool


@dataclass
class HeaderSet:
    h1_headers: list[tuple[int, str]]
    h2_headers: list[H2Header]
    case_format: str | None


@dataclass
class SentenceContext:
    topmost: str | None
    innermost: str | None
    title: str
    position: list[float] | None = None
    topmost_idx: int | None = None
    innermost_idx: int | None = None


def strip_numbering(tokens: list[str]) -> list[str]:
    """Drop leading section numbering ("3", "3.1", "IV.") tokens."""
    i = 0
    while i < len(tokens) and _NUMBERING_RE.match(tokens[i]):
        i += 1
    return tokens[i:]


def _first_alpha(text: str) -> str | None:
    return next((c for c in text if c.isalpha()), None)


def heuristic1_headers(doc: Document) -> list[tuple[int, str]]:
    """First line of every block, in document order."""
    return [(i, block.split("\n", 1)[0].strip()) for i, block in enumerate(doc.raw_blocks)]


def heuristic2_candidates(
    doc: Document, stopwords: frozenset[str] = HEADER_STOP_LASTWORDS
) -> list[tuple[int, str]]:
    """Sentences that pass all lexical header tests: under 10 words, first
    letter capitalized, no stopword last word, no mid-sentence question
    mark, no trailing comma/colon/period."""
    out = []
    for s in doc.sentences:
        text = s.text.strip()
        if not text:
            continue
        words = text.split()
        if len(words) >= 10:
            continue
        first = _first_alpha(text)
        if first is None or not first.isupper():
            continue
        if words[-1].lower() in stopwords:
            continue
        if "?" in text[1:]:
            continue
        if text[-1] in _BAD_FINAL_CHARS:
            continue
        out.append((s.idx, text))
    return out


def case_of(text: str) -> str:
    tokens = strip_numbering(text.split())
    alpha = [c for t in tokens for c in t if c.isalpha()]
    if alpha and all(c.isupper() for c in alpha):
        return CASE_ALL_UPPER
    content = [
        t for t in tokens
        if any(c.isalpha() for c in t) and t.lower() not in _FUNCTION_WORDS
    ]
    if content and all((_first_alpha(t) or "").isupper() for t in content):
        return CASE_TITLE
    return CASE_SENTENCE


def detect_case_format(candidates: list[str]) -> str:
    """Majority case format over candidates; ties break AllUpper >
    TitleCase > SentenceCase."""
    if not candidates:
        raise NoHeadersError("no header candidates to vote on")
    counts = {fmt: 0 for fmt in _CASE_PRIORITY}
    for text in candidates:
        counts[case_of(text)] += 1
    best = max(counts.values())
    for fmt in _CASE_PRIORITY:
        if counts[fmt] == best:
            return fmt
    raise AssertionError("unreachable")


def classify_topmost(
    headers: list[str], cue_lexicon: frozenset[str] = DEFAULT_CUE_LEXICON
) -> list[bool]:
    """A header is topmost iff it has fewer than 5 words (numbering
    stripped) and some token starts with a cue-lexicon entry."""
    flags = []
    for h in headers:
        tokens = strip_numbering(h.split())
        cued = any(
            t.lower().strip(".,;:()[]").startswith(cue)
            for t in tokens
            for cue in cue_lexicon
        )
        flags.append(len(tokens) < 5 and cued)
    return flags


def build_headers(
    doc: Document,
    cue_lexicon: frozenset[str] = DEFAULT_CUE_LEXICON,
    stopwords: frozenset[str] = HEADER_STOP_LASTWORDS,
) -> HeaderSet:
    h1 = heuristic1_headers(doc)
    cands = heuristic2_candidates(doc, stopwords)
    if not cands:
        return HeaderSet(h1, [], None)
    fmt = detect_case_format([t for _, t in cands])
    conforming = [(i, t) for i, t in cands if case_of(t) == fmt]
    flags = classify_topmost([t for _, t in conforming], cue_lexicon)
    h2 = [H2Header(i, t, flag) for (i, t), flag in zip(conforming, flags)]
    return HeaderSet(h1, h2, fmt)


def attach_headers(doc: Document, headers: HeaderSet) -> list[SentenceContext]:
    """Give each sentence its nearest preceding topmost/innermost header
    and title. The title joins both with " : " except for sentences that
    sit directly under a topmost header or are headers themselves, which
    keep the topmost text alone; sentences before any header get "".
    A header governs itself (offset 0 of its own section)."""
    h2 = headers.h2_headers
    header_idxs = {h.sentence_idx for h in h2}
    tops = [h for h in h2 if h.is_topmost]
    contexts = []
    ti = -1  # index into tops of nearest preceding topmost
    hi = -1  # index into h2 of nearest preceding header
    for s in doc.sentences:
        while ti + 1 < len(tops) and tops[ti + 1].sentence_idx <= s.idx:
            ti += 1
        while hi + 1 < len(h2) and h2[hi + 1].sentence_idx <= s.idx:
            hi += 1
        top = tops[ti] if ti >= 0 else None
        inner = h2[hi] if hi >= 0 else None
        if top is None and inner is None:
            title = ""
        elif top is None:
            title = inner.text
        elif (
            s.idx in header_idxs
            or inner is None
            or inner.sentence_idx == top.sentence_idx
        ):
            title = top.text
        else:
            title = f"{top.text} : {inner.text}"
        contexts.append(SentenceContext(
            topmost=top.text if top else None,
            innermost=inner.text if inner else None,
            title=title,
            topmost_idx=top.sentence_idx if top else None,
            innermost_idx=inner.sentence_idx if inner else None,
        ))
    return contexts


def positional_features(
    doc: Document, contexts: list[SentenceContext], headers: HeaderSet
) -> list[list[float]]:
    """Six reals per sentence: [o_paper, o_top, o_h1, o_paper/N_paper,
    o_top/N_top, o_h1/N_h1]. Sentences governed by no topmost header fall
    back to whole-paper offsets so the vector stays total."""
    n = len(doc.sentences)
    if n == 0:
        return []
    top_starts = [h.sentence_idx for h in headers.h2_headers if h.is_topmost]
    block_starts = sorted(set(doc.block_starts)) or [0]
    block_bounds = block_starts + [n]
    out = []
    for s, ctx in zip(doc.sentences, contexts):
        i = s.idx
        o_paper, n_paper = i, n
        if ctx.topmost_idx is not None:
            start = ctx.topmost_idx
            nxt = bisect_right(top_starts, i)
            end = top_starts[nxt] if nxt < len(top_starts) else n
            o_top, n_top = i - start, max(end - start, 1)
        else:
            o_top, n_top = i, n
        bi = max(bisect_right(block_starts, i) - 1, 0)
        o_h1 = i - block_starts[bi]
        n_h1 = max(block_bounds[bi + 1] - block_starts[bi], 1)
        out.append([
            float(o_paper), float(o_top), float(o_h1),
            o_paper / n_paper, o_top / n_top, o_h1 / n_h1,
        ])
    return out


def build_contexts(
    doc: Document,
    cue_lexicon: frozenset[str] = DEFAULT_CUE_LEXICON,
    stopwords: frozenset[str] = HEADER_STOP_LASTWORDS,
) -> tuple[HeaderSet, list[SentenceContext]]:
    """Run the full header pipeline and return contexts with positions."""
    headers = build_headers(doc, cue_lexicon, stopwords)
    contexts = attach_headers(doc, headers)
    for ctx, vec in zip(contexts, positional_features(doc, contexts, headers)):
        ctx.position = vec
    return headers, contexts
