"""Structured extraction of scholarly contributions from NLP papers.

The cascade: contribution-sentence classification over fused
sentence/title/position features, CRF phrase recognition, information
unit assignment with document-level split rules, and typed triple
extraction (classifier-driven for intra-sentence types, rule-driven for
contribution links and cross-sentence relations), plus exact-match
micro-averaged evaluation of every stage.
"""

from .corpus import (
    Document, GoldAnnotations, Phrase, SentenceRecord, UnitRecord,
    load_corpus, load_document, save_document,
)
from .errors import ContribGraphError
from .evalkit import run_cascade, run_phase
from .triples import Triple

__version__ = "0.1.0"

__all__ = [
    "ContribGraphError",
    "Document",
    "GoldAnnotations",
    "Phrase",
    "SentenceRecord",
    "Triple",
    "UnitRecord",
    "load_corpus",
    "load_document",
    "run_cascade",
    "run_phase",
    "save_document",
    "__version__",
]
