import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import corpusgen  # noqa: E402

from contribgraph.corpus import load_corpus, load_document  # noqa: E402


@pytest.fixture(scope="session")
def p01_doc(tmp_path_factory):
    root = tmp_path_factory.mktemp("p01corpus")
    corpusgen.write_fixture_p01(root)
    return load_document(root / "p01")


@pytest.fixture(scope="session")
def fixture_corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("fixcorpus")
    corpusgen.make_corpus(root, n_papers=30, seed=7)
    return root


@pytest.fixture(scope="session")
def fixture_docs(fixture_corpus_dir):
    return load_corpus(fixture_corpus_dir)


@pytest.fixture(scope="session")
def heldout_corpus_dir(tmp_path_factory):
    """Evaluation corpus with held-out vocabulary (same templates,
    unseen modifiers), so trained models stay measurably imperfect."""
    root = tmp_path_factory.mktemp("heldout")
    corpusgen.make_corpus(root, n_papers=12, seed=99, novel=True)
    return root


@pytest.fixture(scope="session")
def heldout_docs(heldout_corpus_dir):
    return load_corpus(heldout_corpus_dir)


TRAIN_STAGES = ("sent", "unit", "phrase", "phrase_type", "a", "pair", "b", "c", "d")


@pytest.fixture(scope="session")
def trained_setup(fixture_corpus_dir, tmp_path_factory):
    """Preprocess the fixture corpus and train every stage once via the
    CLI; returns (config_overrides, store_dir, models_dir)."""
    from contribgraph.cli import main

    work = tmp_path_factory.mktemp("trained")
    store = work / "store"
    models = work / "models"
    base = [
        "--corpus", str(fixture_corpus_dir),
        "--store", str(store),
        "--models", str(models),
    ]
    assert main(["preprocess", *base]) == 0
    for stage in TRAIN_STAGES:
        assert main(["train", stage, *base]) == 0
    return base, store, models


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    print(f"\nACCEPTANCE {name}: {status}")
