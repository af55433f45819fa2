"""Command-line entry point.

Subcommands: preprocess, train <stage>, predict, eval, ablate. Options
come from an optional JSON config file; any config field can be
overridden with ``--<field> <value>`` (a few directory aliases exist:
--corpus, --store, --models, --pred, --reports). Exit codes: 0 success,
1 when some documents failed but the run continued, 2 on fatal
configuration errors.
"""

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import artifacts, evalkit, phrases as phrases_mod, trainsets
from .config import TRAIN_STAGES, RunConfig, load_config, stage_seed
from .corpus import Phrase, load_corpus, load_document
from .errors import ConfigError, ContribGraphError, DegenerateDataError
from .evalkit import PHASES, DocPredictions
from .phrases import CrfConfig
from .scorer import train, train_bagged

_DIR_ALIASES = {
    "corpus": "corpus_dir",
    "store": "store_dir",
    "models": "models_dir",
    "pred": "pred_dir",
    "reports": "report_dir",
}


def _parse_overrides(rest: list[str]) -> dict:
    out = {}
    i = 0
    while i < len(rest):
        tok = rest[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:].replace("-", "_")
        key = _DIR_ALIASES.get(key, key)
        if i + 1 >= len(rest):
            raise ConfigError(f"missing value for --{key}")
        out[key] = rest[i + 1]
        i += 2
    return out


def _map_docs(fn, docs, workers: int):
    if workers <= 1 or len(docs) <= 1:
        return {d.paper_id: fn(d) for d in docs}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(fn, docs))
    return {d.paper_id: r for d, r in zip(docs, results)}


def cmd_preprocess(args, cfg: RunConfig) -> int:
    root = Path(cfg.corpus_dir)
    if not root.is_dir():
        raise ConfigError(f"corpus directory not found: {cfg.corpus_dir}")
    options = artifacts.phase_options(cfg)
    store = Path(cfg.store_dir)
    store.mkdir(parents=True, exist_ok=True)
    prepared, failed = [], []
    for child in sorted(p for p in root.iterdir() if p.is_dir()):
        try:
            doc = load_document(child)
            prepared.append(artifacts.prepare_document(
                doc, options.cue_lexicon, options.header_stopwords))
        except ContribGraphError as exc:
            failed.append(child.name)
            (store / f"{child.name}.error.json").write_text(
                json.dumps({"paper_id": child.name, "error": str(exc)}, sort_keys=True),
                encoding="utf-8",
            )
    if not prepared:
        raise ConfigError(f"no loadable papers under {cfg.corpus_dir}")
    fp = artifacts.save_store(cfg.store_dir, prepared, cfg)
    cfg.save(store / "config.json")
    print(f"preprocessed {len(prepared)} paper(s), fingerprint {fp}")
    if failed:
        print(f"failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    store = artifacts.load_store(cfg.store_dir)
    fp = artifacts.fingerprint_store(cfg.store_dir)
    models_dir = Path(cfg.models_dir)
    models_dir.mkdir(parents=True, exist_ok=True)
    stage = args.stage
    out_path = models_dir / artifacts.STAGE_FILES[stage]

    if stage == "phrase":
        sentences = trainsets.build_crf_sentences(store, cfg)
        crf_cfg = CrfConfig(
            epochs=cfg.crf_epochs,
            learning_rate=cfg.crf_lr,
            seed=stage_seed(cfg.seed, stage),
        )
        scheme = phrases_mod.scheme(cfg.tag_scheme)
        if cfg.phrase_bootstrap > 0:
            subs = phrases_mod.train_phrase_submodels(
                sentences, scheme, crf_cfg,
                n_bootstrap=cfg.phrase_bootstrap,
                snapshot_epochs=tuple(range(cfg.snapshot_first, cfg.snapshot_last + 1)),
                seed=stage_seed(cfg.seed, "phrase-bootstrap"),
            )
            artifacts.save_crf_ensemble(out_path, subs, stage, fp, cfg.hash())
            print(f"trained {len(subs)} phrase submodels -> {out_path}")
        else:
            model = phrases_mod.crf_train(sentences, scheme, crf_cfg)
            artifacts.save_model(out_path, model, stage, fp, cfg.hash())
            print(
                f"trained phrase model on {len(sentences)} sentence(s), "
                f"final nll {model.train_log[-1]:.4f} -> {out_path}"
            )
    else:
        builder = trainsets.SCORER_BUILDERS[stage]
        examples = builder(store, cfg)
        if not examples:
            raise DegenerateDataError(f"stage {stage!r}: empty training set")
        if stage == "a":
            pos = sum(1 for _, y in examples if y == "pos")
            print(f"stage a: {len(examples)} candidates, positive rate "
                  f"{pos / len(examples):.3f}")
        train_cfg = trainsets.train_config_for(stage, cfg)
        if stage in ("sent", "unit") and cfg.sent_bagging > 0:
            model = train_bagged(examples, cfg.sent_bagging, train_cfg)
            artifacts.save_model(out_path, model, stage, fp, cfg.hash())
            print(
                f"trained {stage} bagging ensemble of {cfg.sent_bagging} on "
                f"{len(examples)} example(s) -> {out_path}"
            )
        else:
            model = train(examples, train_cfg)
            artifacts.save_model(out_path, model, stage, fp, cfg.hash())
            print(
                f"trained {stage} on {len(examples)} example(s), "
                f"final loss {model.train_log[-1]:.4f} -> {out_path}"
            )
    cfg.save(models_dir / "config.json")
    return 0


def _write_predictions(out_dir: Path, doc, pred: DocPredictions) -> None:
    d = out_dir / pred.paper_id
    d.mkdir(parents=True, exist_ok=True)
    (d / "sentences.txt").write_text(
        "".join(f"{i}\n" for i in sorted(pred.contribution)), encoding="utf-8"
    )
    (d / "units.tsv").write_text(
        "".join(
            f"{i}\t{pred.unit_by_sentence[i]}\n"
            for i in sorted(pred.unit_by_sentence)
        ),
        encoding="utf-8",
    )
    (d / "phrases.tsv").write_text(
        "".join(
            f"{p.sentence_idx}\t{p.tok_start}\t{p.tok_end}\t{p.text}\n"
            for p in sorted(pred.phrases, key=lambda p: (p.sentence_idx, p.span))
        ),
        encoding="utf-8",
    )
    udir = d / "units"
    udir.mkdir(exist_ok=True)
    sent_by_unit = {}
    for i, u in pred.unit_by_sentence.items():
        sent_by_unit.setdefault(u, []).append(i)
    for unit, rows in sorted(pred.triples_by_unit.items()):
        payload = {
            "unit": unit,
            "sources": [
                doc.sentences[i].text for i in sorted(sent_by_unit.get(unit, []))
            ],
            "triples": [list(t) for t in rows],
        }
        (udir / f"{unit}.json").write_text(
            json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    (d / "triples_typed.tsv").write_text(
        "".join(
            f"{t.unit or ''}\t{t.ttype}\t{t.subject}\t{t.predicate}\t{t.object}\n"
            for t in pred.triples
        ),
        encoding="utf-8",
    )


def cmd_predict(args, cfg: RunConfig) -> int:
    docs = load_corpus(cfg.corpus_dir)
    if not docs:
        raise ConfigError(f"no papers under {cfg.corpus_dir}")
    models = artifacts.load_stage_models(cfg.models_dir, args.mode)
    options = artifacts.phase_options(cfg)
    out_dir = Path(cfg.pred_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    doc_by_id = {d.paper_id: d for d in docs}
    failures: dict[str, str] = {}

    def predict_one(doc):
        try:
            return evalkit.predict_document(doc, models, args.mode, options)
        except ConfigError:
            raise
        except ContribGraphError as exc:
            failures[doc.paper_id] = str(exc)
            return None

    results = _map_docs(predict_one, docs, cfg.workers)
    preds = {pid: r for pid, r in results.items() if r is not None}

    for pid in sorted(preds):
        _write_predictions(out_dir, doc_by_id[pid], preds[pid])
    for pid, msg in sorted(failures.items()):
        (out_dir / f"{pid}.error.json").write_text(
            json.dumps({"paper_id": pid, "error": msg}, sort_keys=True),
            encoding="utf-8",
        )
    meta = {"mode": args.mode, "config_hash": cfg.hash()}
    (out_dir / "meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    cfg.save(out_dir / "config.json")
    print(f"predicted {len(preds)} paper(s) in mode {args.mode} -> {out_dir}")
    if failures:
        print(f"failed: {', '.join(sorted(failures))}", file=sys.stderr)
        return 1
    return 0


def _read_prediction_tree(pred_dir: Path) -> dict[str, DocPredictions]:
    preds = {}
    for d in sorted(p for p in pred_dir.iterdir() if p.is_dir()):
        contribution = set()
        sfile = d / "sentences.txt"
        if sfile.is_file():
            contribution = {
                int(ln) for ln in sfile.read_text(encoding="utf-8").split() if ln
            }
        units = {}
        ufile = d / "units.tsv"
        if ufile.is_file():
            for ln in ufile.read_text(encoding="utf-8").splitlines():
                if ln:
                    idx, unit = ln.split("\t")
                    units[int(idx)] = unit
        phrases = []
        pfile = d / "phrases.tsv"
        if pfile.is_file():
            for ln in pfile.read_text(encoding="utf-8").splitlines():
                if ln:
                    idx, s, e, text = ln.split("\t")
                    phrases.append(Phrase(int(idx), int(s), int(e), text))
        by_unit = {}
        udir = d / "units"
        if udir.is_dir():
            for path in sorted(udir.glob("*.json")):
                data = json.loads(path.read_text(encoding="utf-8"))
                by_unit[data["unit"]] = [tuple(t) for t in data["triples"]]
        preds[d.name] = DocPredictions(
            paper_id=d.name,
            contribution=contribution,
            merged_units={},
            unit_by_sentence=units,
            phrases=phrases,
            triples=[],
            triples_by_unit=by_unit,
        )
    return preds


def cmd_eval(args, cfg: RunConfig) -> int:
    docs = [d for d in load_corpus(cfg.corpus_dir) if d.gold is not None]
    pred_dir = Path(cfg.pred_dir)
    if not pred_dir.is_dir():
        raise ConfigError(f"prediction directory not found: {cfg.pred_dir}")
    meta_path = pred_dir / "meta.json"
    mode = "phase1"
    meta = {}
    if meta_path.is_file():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        mode = meta.get("mode", mode)
    preds = _read_prediction_tree(pred_dir)
    report = evalkit.evaluate_predictions(
        preds, docs, mode, cfg.strict_match,
        meta={
            "normalization": "strict" if cfg.strict_match else "lax",
            "config_hash": cfg.hash(),
            "pred_config_hash": meta.get("config_hash"),
        },
    )
    out = Path(cfg.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    text = evalkit.format_report(report)
    (out / "report.txt").write_text(text, encoding="utf-8")
    cfg.save(out / "config.json")
    print(text, end="")
    return 0


def cmd_ablate(args, cfg: RunConfig) -> int:
    docs = [d for d in load_corpus(cfg.corpus_dir) if d.gold is not None]
    if not docs:
        raise ConfigError(f"no gold-annotated papers under {cfg.corpus_dir}")
    rows = evalkit.ablate_sentence_features(
        docs,
        seed=stage_seed(cfg.seed, "ablate"),
        train_config=trainsets.train_config_for("sent", cfg),
        threshold=cfg.threshold,
    )
    out = Path(cfg.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = [
        {
            "setting": r.setting,
            "precision": r.prf.precision,
            "recall": r.prf.recall,
            "f1": r.prf.f1,
        }
        for r in rows
    ]
    (out / "ablation.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    text = evalkit.format_ablation(rows)
    (out / "ablation.txt").write_text(text, encoding="utf-8")
    cfg.save(out / "config.json")
    print(text, end="")
    return 0


_COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contribgraph",
        description="Extract structured scholarly contributions from papers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("preprocess", "predict", "eval", "ablate"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        if name == "predict":
            p.add_argument("--mode", required=True, choices=PHASES)
    t = sub.add_parser("train")
    t.add_argument("stage", choices=TRAIN_STAGES)
    t.add_argument("--config", help="JSON config file")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    try:
        overrides = _parse_overrides(rest)
        cfg = load_config(args.config, overrides)
        return _COMMANDS[args.command](args, cfg)
    except ContribGraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
