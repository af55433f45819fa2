"""Typed triple extraction.

Triples are grouped by how their slots relate to the text:

    A   three phrases of one sentence
    B   two same-sentence terms plus an added predicate (has / name)
    C   unit name as subject, first predicate + first term of a sentence
    D   unit name as subject, predicate has, first term as object
    E   subject Contribution, linking the paper to its units
    F   slots spread over two consecutive sentences

A-D are decided by classifiers over marker-annotated renderings of the
sentence (``<< >>`` around predicates, ``[[ ]]`` around terms, optional
unit-name prefix); E and F are pure rules. Every extractor accepts either
a trained scorer model or a plain ``callable(str) -> label`` so the rule
layer can be exercised with oracle classifiers.
"""

import logging
from dataclasses import dataclass, replace
from itertools import combinations
from typing import Mapping

from .corpus import PREDICATE, TERM, Phrase, normalize
from .errors import SpanError
from .pipeline import display_name, extract_urls

log = logging.getLogger(__name__)

TRIPLE_TYPES = ("A", "B", "C", "D", "E", "F", "Other")

POSITIVE = "pos"
NEGATIVE = "neg"
B_RELATIONS = ("None", "has", "name")

PRED_OPEN, PRED_CLOSE = "<<", ">>"
TERM_OPEN, TERM_CLOSE = "[[", "]]"


@dataclass(frozen=True)
class Triple:
    subject: str
    predicate: str
    object: str
    ttype: str
    unit: str | None = None
    sentence_idx: int | None = None

    def __post_init__(self):
        if not (self.subject.strip() and self.predicate.strip() and self.object.strip()):
            raise ValueError("triple slots must be nonempty")

    @property
    def slots(self) -> tuple[str, str, str]:
        return (self.subject, self.predicate, self.object)


def normalize_slot(text: str, strict: bool = False) -> str:
    return text if strict else normalize(text)


def _unit_key(name: str) -> str:
    return "".join(c for c in name.lower() if c.isalnum())


def _subject_is_unit(subject: str, unit_name: str) -> bool:
    return _unit_key(subject) in {_unit_key(unit_name), _unit_key(display_name(unit_name))}


def classify_gold_triple(
    triple, unit_name: str, phrases_by_sentence: Mapping[int, set[str]]
) -> str:
    """Structural type of one gold triple.

    ``phrases_by_sentence`` maps the unit's sentence indices to the
    normalized phrase texts found there. Checks run in the order
    A, B, C, D, E, F; anything left is Other.
    """
    s, p, o = (normalize(x) for x in triple)

    def in_one_sentence(slots) -> bool:
        return any(all(x in ph for x in slots) for ph in phrases_by_sentence.values())

    if in_one_sentence((s, p, o)):
        return "A"
    if p in ("has", "name") and in_one_sentence((s, o)):
        return "B"
    if _subject_is_unit(triple[0], unit_name) and in_one_sentence((p, o)):
        return "C"
    if _subject_is_unit(triple[0], unit_name) and p == "has" and in_one_sentence((o,)):
        return "D"
    if s == "contribution":
        return "E"
    for i in sorted(phrases_by_sentence):
        if i + 1 in phrases_by_sentence:
            both = phrases_by_sentence[i] | phrases_by_sentence[i + 1]
            # the predicate of a cross-sentence triple is either a phrase
            # itself or an added has/name (acronym-style links)
            if s in both and o in both and (p in both or p in ("has", "name")):
                return "F"
    return "Other"


def render_with_markers(tokens: list[str], marked) -> str:
    """Insert marker token pairs around spans; single-space joined.

    ``marked`` is a list of ((start, end), open, close). Spans must be in
    range and non-overlapping (SpanError otherwise), which also keeps
    marker pairs balanced and un-nested.
    """
    n = len(tokens)
    spans = sorted(marked, key=lambda m: m[0])
    prev_end = 0
    for (start, end), _, _ in spans:
        if not 0 <= start < end <= n:
            raise SpanError(f"span ({start}, {end}) outside {n}-token sentence")
        if start < prev_end:
            raise SpanError(f"overlapping marker spans at token {start}")
        prev_end = end
    opens = {m[0][0]: m[1] for m in spans}
    closes = {m[0][1]: m[2] for m in spans}
    out = []
    for i in range(n + 1):
        if i in closes:
            out.append(closes[i])
        if i in opens:
            out.append(opens[i])
        if i < n:
            out.append(tokens[i])
    return " ".join(out)


def encode_type_a(tokens: list[str], predicate: Phrase, t1: Phrase, t2: Phrase) -> str:
    return render_with_markers(tokens, [
        (predicate.span, PRED_OPEN, PRED_CLOSE),
        (t1.span, TERM_OPEN, TERM_CLOSE),
        (t2.span, TERM_OPEN, TERM_CLOSE),
    ])


def encode_pair(tokens: list[str], predicate: Phrase, term: Phrase) -> str:
    return render_with_markers(tokens, [
        (predicate.span, PRED_OPEN, PRED_CLOSE),
        (term.span, TERM_OPEN, TERM_CLOSE),
    ])


def encode_term_pair(tokens: list[str], t1: Phrase, t2: Phrase) -> str:
    return render_with_markers(tokens, [
        (t1.span, TERM_OPEN, TERM_CLOSE),
        (t2.span, TERM_OPEN, TERM_CLOSE),
    ])


def encode_unit_prefixed(
    tokens: list[str], unit_display: str, term: Phrase, predicate: Phrase | None = None
) -> str:
    marked = [(term.span, TERM_OPEN, TERM_CLOSE)]
    if predicate is not None:
        marked.append((predicate.span, PRED_OPEN, PRED_CLOSE))
    return f"{TERM_OPEN} {unit_display} {TERM_CLOSE} : " + render_with_markers(tokens, marked)


def _text_classifier(model):
    """Adapt a scorer model (or pass through a callable) to str -> label."""
    if callable(model):
        return model

    from .scorer import featurize

    def classify(text: str) -> str:
        fv = featurize(text, "", [0.0] * 6, model.hash_dim, model.hash_seed)
        return model.predict(fv)

    return classify


def _split_roles(phrases) -> tuple[list[Phrase], list[Phrase]]:
    preds = sorted((p for p in phrases if p.role == PREDICATE), key=lambda p: p.span)
    terms = sorted((p for p in phrases if p.role == TERM), key=lambda p: p.span)
    return preds, terms


def _disjoint(*phrases: Phrase) -> bool:
    spans = sorted(p.span for p in phrases)
    return all(a[1] <= b[0] for a, b in zip(spans, spans[1:]))


def gen_type_a_candidates(phrases) -> list[tuple[Phrase, Phrase, Phrase]]:
    """Every (predicate, unordered term pair) combination; the pair is
    returned position-sorted so the earlier term becomes the subject.
    Combinations with overlapping spans (possible when phrases come from
    a vote union) cannot be rendered and are skipped."""
    preds, terms = _split_roles(phrases)
    return [
        (p, t1, t2)
        for p in preds
        for t1, t2 in combinations(terms, 2)
        if _disjoint(p, t1, t2)
    ]


def extract_type_a(
    model, tokens: list[str], phrases, unit: str | None = None,
    sentence_idx: int | None = None,
) -> list[Triple]:
    clf = _text_classifier(model)
    out = []
    for pred, t1, t2 in gen_type_a_candidates(phrases):
        if clf(encode_type_a(tokens, pred, t1, t2)) == POSITIVE:
            out.append(Triple(t1.text, pred.text, t2.text, "A", unit, sentence_idx))
    return out


def extract_pairwise(
    model, tokens: list[str], phrases, unit: str | None = None,
    sentence_idx: int | None = None,
) -> list[Triple]:
    """Type-A extraction through (predicate, term) pair decisions.

    A predicate with exactly two positive terms yields one triple in
    sentence order (subject first). With more than two, only pairs whose
    predicate sits between the two terms survive. Fewer than two yields
    nothing.
    """
    clf = _text_classifier(model)
    preds, terms = _split_roles(phrases)
    out = []
    for pred in preds:
        linked = [
            t for t in terms
            if _disjoint(pred, t) and clf(encode_pair(tokens, pred, t)) == POSITIVE
        ]
        if len(linked) == 2:
            t1, t2 = linked
            out.append(Triple(t1.text, pred.text, t2.text, "A", unit, sentence_idx))
        elif len(linked) > 2:
            for t1, t2 in combinations(linked, 2):
                if t1.tok_end <= pred.tok_start and pred.tok_end <= t2.tok_start:
                    out.append(Triple(t1.text, pred.text, t2.text, "A", unit, sentence_idx))
    return out


def extract_type_b(
    model, tokens: list[str], phrases, type_a_triples, unit: str | None = None,
    sentence_idx: int | None = None,
) -> list[Triple]:
    """Relation (has / name / None) between term pairs not already
    related by a type-A triple; sentence order is preserved."""
    clf = _text_classifier(model)
    taken = {
        frozenset((normalize(t.subject), normalize(t.object)))
        for t in type_a_triples
    }
    _, terms = _split_roles(phrases)
    out = []
    for t1, t2 in combinations(terms, 2):
        if not _disjoint(t1, t2):
            continue
        if frozenset((normalize(t1.text), normalize(t2.text))) in taken:
            continue
        rel = clf(encode_term_pair(tokens, t1, t2))
        if rel != "None":
            out.append(Triple(t1.text, rel, t2.text, "B", unit, sentence_idx))
    return out


def type_c_applicable(phrases) -> bool:
    preds, terms = _split_roles(phrases)
    return bool(preds and terms) and preds[0].tok_start < terms[0].tok_start


def type_d_applicable(phrases) -> bool:
    preds, terms = _split_roles(phrases)
    if not terms:
        return False
    return not preds or terms[0].tok_start < preds[0].tok_start


def extract_type_c(
    model, tokens: list[str], phrases, unit: str,
    sentence_idx: int | None = None,
) -> Triple | None:
    """(unit, first predicate, first term) when the sentence's first
    predicate precedes its first term and the classifier fires."""
    if not type_c_applicable(phrases):
        return None
    preds, terms = _split_roles(phrases)
    if not _disjoint(preds[0], terms[0]):
        return None
    name = display_name(unit)
    text = encode_unit_prefixed(tokens, name, terms[0], preds[0])
    if _text_classifier(model)(text) == POSITIVE:
        return Triple(name, preds[0].text, terms[0].text, "C", unit, sentence_idx)
    return None


def extract_type_d(
    model, tokens: list[str], phrases, unit: str,
    sentence_idx: int | None = None,
) -> Triple | None:
    """(unit, has, first term) when the first term precedes every
    predicate (or there is none) and the classifier fires."""
    if not type_d_applicable(phrases):
        return None
    _, terms = _split_roles(phrases)
    name = display_name(unit)
    text = encode_unit_prefixed(tokens, name, terms[0], None)
    if _text_classifier(model)(text) == POSITIVE:
        return Triple(name, "has", terms[0].text, "D", unit, sentence_idx)
    return None


def extract_type_e(
    units: Mapping[int, str],
    phrases: Mapping[int, list[Phrase]],
    texts: Mapping[int, str],
) -> list[Triple]:
    """Contribution-to-unit links.

    Plain units yield (Contribution, has, <display name>) once each.
    Every term of a ResearchProblem sentence becomes the object of a
    (Contribution, has research problem, term); Code sentences yield
    (Contribution, Code, <url>) per URL.
    """
    out = []
    for u in sorted(set(units.values())):
        if u not in ("Code", "ResearchProblem"):
            out.append(Triple("Contribution", "has", display_name(u), "E", u))
    for idx in sorted(units):
        u = units[idx]
        if u == "ResearchProblem":
            terms = [ph for ph in phrases.get(idx, []) if ph.role == TERM]
            if len(terms) > 1:
                # every term becomes an object; flagged because the choice
                # between all-terms and first-term is a judgment call
                log.info("sentence %d: %d research-problem terms, emitting all",
                         idx, len(terms))
            for ph in terms:
                out.append(Triple(
                    "Contribution", "has research problem", ph.text, "E", u, idx
                ))
        elif u == "Code":
            for url in extract_urls(texts[idx]):
                out.append(Triple("Contribution", "Code", url, "E", u, idx))
    return list(dict.fromkeys(out))


_NP_VERB_BLACKLIST = frozenset({
    "is", "are", "was", "were", "be", "been", "being", "has", "have", "had",
    "do", "does", "did", "use", "uses", "used", "show", "shows", "showed",
    "shown", "propose", "proposes", "proposed", "introduce", "introduces",
    "introduced", "inject", "injects", "injected", "obtain", "obtains",
    "obtained", "train", "trains", "trained", "apply", "applies", "applied",
    "improve", "improves", "improved", "outperform", "outperforms", "achieve",
    "achieves", "achieved", "consists", "consist", "contains", "contain",
})


def default_np_checker(phrase: Phrase) -> bool:
    """Noun-phrase gate for the cross-sentence rule: the phrase must be
    typed Term and its last word must not look verbal or adverbial."""
    if phrase.role != TERM:
        return False
    words = [w for w in phrase.text.split() if any(c.isalpha() for c in w)]
    last = (words[-1] if words else phrase.text).lower()
    return not last.endswith("ly") and last not in _NP_VERB_BLACKLIST


def acronym(term_tokens: list[str]) -> str:
    """Initials of each token, uppercased; tokens without any
    alphanumeric character (hyphens etc.) are skipped."""
    return "".join(
        t[0] for t in term_tokens if any(c.isalnum() for c in t)
    ).upper()


def extract_type_f(
    sentence_tokens: Mapping[int, list[str]],
    phrases: Mapping[int, list[Phrase]],
    units: Mapping[int, str],
    np_checker=None,
) -> list[Triple]:
    """Cross-sentence rules over consecutive sentence pairs.

    Rule 1: one phrase in the first sentence, two or more in the second
    -> (s1.phrase, s2.phrase1, s2.phrase2) when both subject and
    predicate pass the noun-phrase gate, plus a companion
    (unit, has, subject). Rule 2: single terms on both sides where the
    first is a substring or the acronym of the second -> (t1, name, t2).
    """
    np_ok = np_checker or default_np_checker
    out = []
    for i in sorted(phrases):
        j = i + 1
        if j not in phrases:
            continue
        ph1 = sorted(phrases[i], key=lambda p: p.span)
        ph2 = sorted(phrases[j], key=lambda p: p.span)
        unit = units.get(i) or units.get(j)
        if len(ph1) == 1 and len(ph2) >= 2:
            subj, pred, obj = ph1[0], ph2[0], ph2[1]
            if np_ok(subj) and np_ok(pred):
                out.append(Triple(subj.text, pred.text, obj.text, "F", unit, i))
                if unit:
                    out.append(Triple(display_name(unit), "has", subj.text, "F", unit, i))
        terms1 = [p for p in ph1 if p.role == TERM]
        terms2 = [p for p in ph2 if p.role == TERM]
        if len(terms1) == 1 and len(terms2) == 1:
            a, b = terms1[0], terms2[0]
            if (
                a.text.lower() in b.text.lower()
                or acronym(b.text.split()).lower() == a.text.lower()
            ):
                out.append(Triple(a.text, "name", b.text, "F", unit, i))
    return list(dict.fromkeys(out))


_COORD_STOP = frozenset({
    ",", "and", "which", "that", "who", "where", "when", "while",
    ".", ";", ":", "!", "?", "(", ")",
})
_DETERMINERS = frozenset({"a", "an", "the"})


def _strip_determiners(run: list[str]) -> list[str]:
    while run and run[0].lower() in _DETERMINERS:
        run = run[1:]
    return run


def conjunct_siblings(tokens: list[str], span: tuple[int, int]) -> list[str]:
    """Baseline coordination detector: comma/and-separated runs adjacent
    to the span, trimmed at clause boundaries and leading determiners."""
    n = len(tokens)
    sibs = []
    j = span[1]
    while j < n:
        if tokens[j] == ",":
            j += 1
            if j < n and tokens[j] == "and":
                j += 1
        elif tokens[j] == "and":
            j += 1
        else:
            break
        run = []
        while j < n and tokens[j] not in _COORD_STOP:
            run.append(tokens[j])
            j += 1
        run = _strip_determiners(run)
        if not run:
            break
        sibs.append(" ".join(run))
    j = span[0]
    while j > 0:
        if tokens[j - 1] == "and":
            j -= 1
            if j > 0 and tokens[j - 1] == ",":
                j -= 1
        elif tokens[j - 1] == ",":
            j -= 1
        else:
            break
        k = j
        while k > 0 and tokens[k - 1] not in _COORD_STOP:
            k -= 1
        run = _strip_determiners(tokens[k:j])
        if not run:
            break
        sibs.append(" ".join(run))
        j = k
    return sibs


def _find_span(tokens: list[str], text: str) -> tuple[int, int] | None:
    target = [t.lower() for t in text.split()]
    if not target:
        return None
    lows = [t.lower() for t in tokens]
    for i in range(len(lows) - len(target) + 1):
        if lows[i:i + len(target)] == target:
            return (i, i + len(target))
    return None


_COORD_SLOTS = {"A": ("subject", "object"), "B": ("subject", "object"),
                "C": ("object",), "D": ("object",)}


def expand_coordination(
    triples, sentence_tokens: Mapping[int, list[str]], detector=None
) -> list[Triple]:
    """Copy each triple once per coordination sibling of its term slots;
    exact-duplicate outputs are removed. Intra-sentence types only."""
    det = detector or conjunct_siblings
    out = list(triples)
    for t in triples:
        slots = _COORD_SLOTS.get(t.ttype)
        if slots is None or t.sentence_idx is None:
            continue
        tokens = sentence_tokens.get(t.sentence_idx)
        if tokens is None:
            continue
        for slot in slots:
            span = _find_span(tokens, getattr(t, slot))
            if span is None:
                continue
            for sib in det(tokens, span):
                if normalize(sib) == normalize(getattr(t, slot)):
                    continue
                out.append(replace(t, **{slot: sib}))
    return list(dict.fromkeys(out))
