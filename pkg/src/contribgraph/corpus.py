"""Per-paper corpus loading, gold-annotation parsing, and label derivation.

Input layout, one directory per paper (UTF-8, LF line endings, 0-based
indices everywhere):

    text.txt             plain text; blocks separated by blank lines
    sentences.txt        one sentence per line, tokens space-separated
    gold/sentences.txt   contribution sentence indices, one per line
    gold/phrases.tsv     sentence_idx <TAB> tok_start <TAB> tok_end <TAB> text
    gold/units/<U>.json  {"unit": U, "sources": [...], "triples": [[s,p,o], ...]}

``gold/`` is optional; a paper without it is prediction-only input.
Loaded documents are immutable: derived labels (unit assignments, phrase
roles) are returned by functions here, never written back in place.
"""

import json
import logging
import re
from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import AmbiguityError, FormatError, MissingFileError

log = logging.getLogger(__name__)

TERM = "Term"
PREDICATE = "Predicate"

_WS_RE = re.compile(r"\s+")


def normalize(text: str) -> str:
    """Lowercase and collapse whitespace runs; the comparison key used
    whenever sentence or slot text is matched across files."""
    return _WS_RE.sub(" ", text.strip()).lower()


def squash(text: str) -> str:
    """Drop all whitespace; tokenization-insensitive comparison key."""
    return _WS_RE.sub("", text)


@dataclass(frozen=True)
class Phrase:
    """A token span inside one sentence. ``text`` always equals the
    space-join of the covered tokens; ``role`` is Term/Predicate or None
    when not (yet) derived."""

    sentence_idx: int
    tok_start: int
    tok_end: int
    text: str
    role: str | None = None

    @property
    def span(self) -> tuple[int, int]:
        return (self.tok_start, self.tok_end)


@dataclass
class UnitRecord:
    unit_name: str
    source_sentences: list[str]
    triples: list[tuple[str, str, str]]


@dataclass
class GoldAnnotations:
    contribution_sentences: set[int]
    phrases: list[Phrase]
    units: dict[str, UnitRecord]


@dataclass
class SentenceRecord:
    idx: int
    text: str
    tokens: list[str]


@dataclass
class Document:
    paper_id: str
    raw_blocks: list[str]
    sentences: list[SentenceRecord]
    block_starts: list[int]
    gold: GoldAnnotations | None = None


def _split_blocks(text: str) -> list[str]:
    blocks, current = [], []
    for line in text.split("\n"):
        if line.strip():
            current.append(line)
        elif current:
            blocks.append("\n".join(current))
            current = []
    if current:
        blocks.append("\n".join(current))
    return blocks


def _read_lines(path: Path) -> list[str]:
    lines = path.read_text(encoding="utf-8").split("\n")
    while lines and lines[-1] == "":
        lines.pop()
    return lines


def _align_blocks(raw_blocks: list[str], sentences: list[SentenceRecord]) -> list[int]:
    """Map each text block to the index of its first sentence.

    Walks the sentence stream consuming each block's whitespace-squashed
    text; exact when text.txt and sentences.txt carry the same character
    stream (tokenization only moves whitespace around). On mismatch the
    current position is kept and a warning is logged.
    """
    starts = []
    s, n = 0, len(sentences)
    for bi, block in enumerate(raw_blocks):
        starts.append(min(s, n))
        remaining = squash(block)
        while remaining and s < n:
            t = squash(sentences[s].text)
            if t and remaining.startswith(t):
                remaining = remaining[len(t):]
                s += 1
            else:
                break
        if remaining:
            log.warning("block %d does not align with the sentence stream", bi)
    return starts


def load_document(dir_path) -> Document:
    """Load one paper directory; gold annotations are attached iff present."""
    root = Path(dir_path)
    text_path = root / "text.txt"
    sent_path = root / "sentences.txt"
    for p in (text_path, sent_path):
        if not p.is_file():
            raise MissingFileError(f"required file missing: {p}")
    raw_blocks = _split_blocks(text_path.read_text(encoding="utf-8"))
    sentences = [
        SentenceRecord(i, line, line.split())
        for i, line in enumerate(_read_lines(sent_path))
    ]
    block_starts = _align_blocks(raw_blocks, sentences)
    gold = _load_gold(root, sentences) if (root / "gold").is_dir() else None
    return Document(root.name, raw_blocks, sentences, block_starts, gold)


def _load_gold(root: Path, sentences: list[SentenceRecord]) -> GoldAnnotations:
    from .pipeline import INFO_UNITS  # deferred: pipeline imports corpus types

    gdir = root / "gold"
    contrib: set[int] = set()
    sfile = gdir / "sentences.txt"
    if sfile.is_file():
        for ln in _read_lines(sfile):
            if not ln.strip():
                continue
            try:
                idx = int(ln)
            except ValueError as exc:
                raise FormatError(f"{sfile}: bad sentence index {ln!r}") from exc
            if not 0 <= idx < len(sentences):
                raise FormatError(f"{sfile}: sentence index {idx} out of range")
            contrib.add(idx)

    phrases: list[Phrase] = []
    pfile = gdir / "phrases.tsv"
    if pfile.is_file():
        for lineno, ln in enumerate(_read_lines(pfile)):
            if not ln.strip():
                continue
            parts = ln.split("\t")
            if len(parts) != 4:
                raise FormatError(f"{pfile}:{lineno}: expected 4 tab-separated fields")
            try:
                idx, start, end = int(parts[0]), int(parts[1]), int(parts[2])
            except ValueError as exc:
                raise FormatError(f"{pfile}:{lineno}: non-integer span field") from exc
            if not 0 <= idx < len(sentences):
                raise FormatError(f"{pfile}:{lineno}: sentence index out of range")
            tokens = sentences[idx].tokens
            if not 0 <= start < end <= len(tokens):
                raise FormatError(
                    f"{pfile}:{lineno}: span ({start}, {end}) outside the "
                    f"{len(tokens)}-token sentence {idx}"
                )
            joined = " ".join(tokens[start:end])
            if parts[3] != joined:
                raise FormatError(
                    f"{pfile}:{lineno}: text column {parts[3]!r} does not match "
                    f"covered tokens {joined!r}"
                )
            if idx not in contrib:
                raise FormatError(
                    f"{pfile}:{lineno}: phrase sentence {idx} is not a "
                    "contribution sentence"
                )
            phrases.append(Phrase(idx, start, end, joined))

    units: dict[str, UnitRecord] = {}
    udir = gdir / "units"
    if udir.is_dir():
        for path in sorted(udir.glob("*.json")):
            data = json.loads(path.read_text(encoding="utf-8"))
            try:
                name = data["unit"]
                sources = list(data["sources"])
                raw_triples = list(data["triples"])
            except (KeyError, TypeError) as exc:
                raise FormatError(f"{path}: malformed unit record") from exc
            if name not in INFO_UNITS:
                raise FormatError(f"{path}: unknown information unit {name!r}")
            triples = []
            for t in raw_triples:
                if len(t) != 3 or not all(str(x).strip() for x in t):
                    raise FormatError(f"{path}: triple slots must be nonempty: {t!r}")
                triples.append((str(t[0]), str(t[1]), str(t[2])))
            units[name] = UnitRecord(name, sources, triples)

    return GoldAnnotations(contrib, phrases, units)


def save_document(doc: Document, dir_path) -> Path:
    """Write ``doc`` back out in the canonical layout (inverse of load)."""
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    (root / "text.txt").write_text("\n\n".join(doc.raw_blocks) + "\n", encoding="utf-8")
    (root / "sentences.txt").write_text(
        "".join(s.text + "\n" for s in doc.sentences), encoding="utf-8"
    )
    if doc.gold is not None:
        gdir = root / "gold"
        gdir.mkdir(exist_ok=True)
        (gdir / "sentences.txt").write_text(
            "".join(f"{i}\n" for i in sorted(doc.gold.contribution_sentences)),
            encoding="utf-8",
        )
        (gdir / "phrases.tsv").write_text(
            "".join(
                f"{p.sentence_idx}\t{p.tok_start}\t{p.tok_end}\t{p.text}\n"
                for p in doc.gold.phrases
            ),
            encoding="utf-8",
        )
        udir = gdir / "units"
        udir.mkdir(exist_ok=True)
        for name in sorted(doc.gold.units):
            rec = doc.gold.units[name]
            payload = {
                "unit": rec.unit_name,
                "sources": rec.source_sentences,
                "triples": [list(t) for t in rec.triples],
            }
            (udir / f"{name}.json").write_text(
                json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
                encoding="utf-8",
            )
    return root


def load_corpus(corpus_dir) -> list[Document]:
    """Load every paper directory under ``corpus_dir`` (sorted by name)."""
    root = Path(corpus_dir)
    docs = []
    for child in sorted(p for p in root.iterdir() if p.is_dir()):
        if (child / "sentences.txt").is_file():
            docs.append(load_document(child))
    return docs


def label_sentences_by_unit(doc: Document) -> dict[int, str]:
    """Map sentence indices to information units by exact normalized-text
    match against each unit's source sentences.

    A sentence matching two different units raises AmbiguityError.
    Contribution sentences that match no unit are logged, not dropped.
    """
    if doc.gold is None:
        raise ValueError("gold annotations required")
    norm_sources = {
        name: {normalize(s) for s in rec.source_sentences}
        for name, rec in doc.gold.units.items()
    }
    out: dict[int, str] = {}
    for s in doc.sentences:
        key = normalize(s.text)
        hits = sorted(u for u, srcs in norm_sources.items() if key in srcs)
        if len(hits) > 1:
            raise AmbiguityError(s.idx, hits)
        if hits:
            out[s.idx] = hits[0]
    unmatched = sorted(i for i in doc.gold.contribution_sentences if i not in out)
    if unmatched:
        log.warning(
            "%s: %d contribution sentence(s) matched no unit source: %s",
            doc.paper_id, len(unmatched), unmatched,
        )
    return out


def derive_phrase_roles(
    doc: Document, unit_map: dict[int, str] | None = None
) -> list[Phrase]:
    """Assign Term/Predicate roles to gold phrases from triple slots.

    A phrase is a Predicate if its text fills the predicate slot of any
    triple in its sentence's unit, a Term if it fills a subject/object
    slot; Predicate wins when both apply. Phrases matching no slot keep
    role None and are counted in the log.
    """
    if doc.gold is None:
        raise ValueError("gold annotations required")
    if unit_map is None:
        unit_map = label_sentences_by_unit(doc)
    out: list[Phrase] = []
    unmatched = 0
    for p in doc.gold.phrases:
        unit = unit_map.get(p.sentence_idx)
        role = None
        if unit and unit in doc.gold.units:
            key = normalize(p.text)
            triples = doc.gold.units[unit].triples
            if any(normalize(t[1]) == key for t in triples):
                role = PREDICATE
            elif any(normalize(t[0]) == key or normalize(t[2]) == key for t in triples):
                role = TERM
        if role is None:
            unmatched += 1
        out.append(replace(p, role=role))
    if unmatched:
        log.warning("%s: %d phrase(s) matched no triple slot", doc.paper_id, unmatched)
    return out


def typed_gold_triples(
    doc: Document, unit_map: dict[int, str] | None = None
) -> list[tuple[str, tuple[str, str, str], str]]:
    """Classify every gold triple; yields (unit, triple, type) rows."""
    from .triples import classify_gold_triple  # deferred: triples imports corpus

    if doc.gold is None:
        raise ValueError("gold annotations required")
    if unit_map is None:
        unit_map = label_sentences_by_unit(doc)
    phrases_by_sentence: dict[int, set[str]] = defaultdict(set)
    for p in doc.gold.phrases:
        phrases_by_sentence[p.sentence_idx].add(normalize(p.text))
    out = []
    for name in sorted(doc.gold.units):
        rec = doc.gold.units[name]
        sent_phrases = {
            i: phrases_by_sentence.get(i, set())
            for i, u in unit_map.items()
            if u == name
        }
        for t in rec.triples:
            out.append((name, t, classify_gold_triple(t, name, sent_phrases)))
    return out


@dataclass(frozen=True)
class TypeCensus:
    count: int
    fraction: float


def census_triples(docs: list[Document]) -> dict[str, TypeCensus]:
    """Count gold triples per structural type across a corpus."""
    from .triples import TRIPLE_TYPES

    counts = {t: 0 for t in TRIPLE_TYPES}
    total = 0
    for doc in docs:
        for _, _, ttype in typed_gold_triples(doc):
            counts[ttype] += 1
            total += 1
    return {
        t: TypeCensus(c, c / total if total else 0.0) for t, c in counts.items()
    }
