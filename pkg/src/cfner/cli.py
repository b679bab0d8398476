"""Command-line entry point.

Subcommands: train-coarse, train-fine, predict, evaluate, augment, experiment,
synth.  Exit codes: 0 success, 1 runtime failure, 2 usage/config error.  Flag
values take precedence over ``--config`` file entries, which take precedence
over built-in defaults; the resolved configuration is echoed next to each
output artifact.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import corpus as corpus_io
from . import evaluation, pipeline, synth
from .coarse_tagger import (
    TaggerConfig,
    load_tagger,
    save_tagger,
    train_baseline,
    train_tagger,
)
from .fine_classifier import (
    ClassifierConfig,
    FilterConfig,
    load_classifier,
    save_classifier,
    train_classifier,
)
from .taxonomy import load_taxonomy

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "CFNER_OUTPUT_ROOT"

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(ValueError):
    pass


def _require_paths(*paths: str | None) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise UsageError(f"path does not exist: {p}")


def _resolve_out(value: str | None, default_name: str) -> Path:
    if value:
        return Path(value)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if not root:
        raise UsageError(
            f"--out not given and {OUTPUT_ROOT_ENV} is not set in the environment"
        )
    return Path(root) / default_name


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    _require_paths(path)
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return data


def _merge_config(cls, file_values: dict, flag_values: dict):
    """flags > config file > dataclass defaults."""
    merged = dict(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad configuration: {exc}") from exc


def _echo_config(out_path: Path, config) -> None:
    sidecar = out_path.with_name(out_path.name + ".config.json")
    sidecar.write_text(
        json.dumps(asdict(config), indent=2, sort_keys=True), encoding="utf-8"
    )


def _add_common_train_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON file with config defaults")
    sub.add_argument("--lr", type=float, dest="learning_rate", help="learning rate")
    sub.add_argument("--batch-size", type=int, dest="batch_size")
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--hidden", type=int, help="encoder hidden width")
    sub.add_argument("--blocks", type=int, help="encoder block count")
    sub.add_argument("--max-word-vocab", type=int, dest="max_word_vocab")
    sub.add_argument("--out", help=f"output checkpoint (default under ${OUTPUT_ROOT_ENV})")


def _flag_config_values(args: argparse.Namespace, names: tuple[str, ...]) -> dict:
    return {n: getattr(args, n, None) for n in names}


_TRAIN_FLAG_NAMES = (
    "learning_rate",
    "batch_size",
    "epochs",
    "seed",
    "hidden",
    "blocks",
    "max_word_vocab",
)


def cmd_train_coarse(args: argparse.Namespace) -> int:
    _require_paths(args.train, args.dev, args.taxonomy)
    file_cfg = _load_config_file(args.config)
    flags = _flag_config_values(args, _TRAIN_FLAG_NAMES)
    flags["inventory"] = args.inventory
    config = _merge_config(TaggerConfig, file_cfg, flags)
    out = _resolve_out(args.out, "coarse.ckpt")
    taxonomy = load_taxonomy(args.taxonomy)
    train = corpus_io.read_column_corpus(args.train)
    dev = corpus_io.read_column_corpus(args.dev)

    if args.seeds <= 1:
        model = train_tagger(train, dev, config, taxonomy)
        save_tagger(model, out)
        _echo_config(out, config)
        _write_metrics_log(out, model.history)
        print(f"checkpoint written to {out}")
        return EXIT_OK

    reports = []
    base_seed = config.seed
    for k in range(args.seeds):
        cfg_k = TaggerConfig(**{**asdict(config), "seed": base_seed + k})
        model = train_tagger(train, dev, cfg_k, taxonomy)
        out_k = out.with_name(out.name + f".seed{base_seed + k}")
        save_tagger(model, out_k)
        _echo_config(out_k, cfg_k)
        _write_metrics_log(out_k, model.history)
        from .coarse_tagger import predict_documents

        reports.append(evaluation.evaluate_documents(dev, predict_documents(model, dev)))
        print(f"checkpoint written to {out_k}")
    stats = evaluation.seed_stats(reports)
    summary = {
        "seeds": args.seeds,
        "mean": stats.mean,
        "std": stats.std,
    }
    summary_path = out.with_name(out.name + ".seeds.json")
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(f"seed summary written to {summary_path}")
    print(
        f"dev F1 mean {100 * stats.mean['f1']:.2f} "
        f"+/- {100 * stats.std['f1']:.2f} over {args.seeds} seeds"
    )
    return EXIT_OK


def _write_metrics_log(out: Path, history: list[dict]) -> None:
    log_path = out.with_name(out.name + ".metrics.jsonl")
    with open(log_path, "w", encoding="utf-8") as fh:
        for row in history:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def cmd_train_fine(args: argparse.Namespace) -> int:
    _require_paths(args.train, args.dev, args.taxonomy, args.text, args.dev_text)
    file_cfg = _load_config_file(args.config)
    flags = _flag_config_values(args, _TRAIN_FLAG_NAMES)
    flags["representation"] = args.repr
    config = _merge_config(ClassifierConfig, file_cfg, flags)
    out = _resolve_out(args.out, "fine.ckpt")
    taxonomy = load_taxonomy(args.taxonomy)
    train = _read_fine_corpus(args.train, args.text)
    dev = _read_fine_corpus(args.dev, args.dev_text)
    model = train_classifier(train, dev, config, taxonomy)
    save_classifier(model, out)
    _echo_config(out, config)
    _write_metrics_log(out, model.history)
    print(f"checkpoint written to {out}")
    return EXIT_OK


def _read_fine_corpus(path: str, text_path: str | None):
    """Column file, or standoff records plus an untagged companion text file."""
    if text_path:
        return corpus_io.read_standoff_mentions(path, text_path)
    return corpus_io.read_column_corpus(path)


def cmd_predict(args: argparse.Namespace) -> int:
    if args.baseline and (args.tagger or args.classifier):
        raise UsageError("--baseline excludes --tagger/--classifier")
    if not args.baseline and not (args.tagger and args.classifier):
        raise UsageError("need either --baseline or both --tagger and --classifier")
    _require_paths(args.input, args.baseline, args.tagger, args.classifier)
    filter_cfg = _parse_filter(args.filter, args.theta)
    out = _resolve_out(args.out, "predictions.tsv")

    docs = corpus_io.read_text_corpus(args.input)
    if args.baseline:
        model = load_tagger(args.baseline)
        pred = pipeline.run_baseline(model, docs)
    else:
        tagger = load_tagger(args.tagger)
        classifier = load_classifier(args.classifier)
        cascade = pipeline.CascadeConfig(tagger, classifier, filter_cfg)
        pred = pipeline.run_cascade(cascade, docs)
    corpus_io.write_predictions(pred, out)
    n = sum(len(d.mentions) for d in pred)
    print(f"{n} mentions written to {out}")
    return EXIT_OK


def _parse_filter(kind: str, theta: float) -> FilterConfig:
    mapping = {"pass": "pass_through", "coarse": "coarse_type", "threshold": "threshold"}
    if kind not in mapping:
        raise UsageError(f"unknown filter {kind!r}")
    if not 0.0 <= theta <= 1.0:
        raise UsageError(f"theta {theta} outside [0, 1]")
    return FilterConfig(mapping[kind], theta)


def cmd_evaluate(args: argparse.Namespace) -> int:
    _require_paths(args.gold, args.pred)
    gold = corpus_io.read_column_corpus(args.gold)
    pred = corpus_io.read_standoff_mentions(args.pred, gold)
    pred = [corpus_io.Document(d.id, d.sentences, d.mentions, "full") for d in pred]

    if args.hier:
        if not args.gold_spans:
            raise UsageError("--hier requires --gold-spans predictions")
        pairs = evaluation.pair_gold_span_predictions(gold, pred)
        acc = evaluation.hier_accuracy([g for g, _ in pairs], [p for _, p in pairs])
        print(
            f"Acc-T {100 * acc.acc_t:.2f}  Acc-ST {100 * acc.acc_st:.2f}  "
            f"Acc-SST {100 * acc.acc_sst:.2f}  ({len(pairs)} gold spans)"
        )
        if args.out:
            _write_records(
                args.out,
                [
                    {"metric": "acc_t", "granularity": "gold-spans", "value": acc.acc_t},
                    {"metric": "acc_st", "granularity": "gold-spans", "value": acc.acc_st},
                    {"metric": "acc_sst", "granularity": "gold-spans", "value": acc.acc_sst},
                ],
            )
        return EXIT_OK

    if args.granularity == "full":
        report = evaluation.evaluate_documents(gold, pred)
        print(report.to_text())
        records = report.to_records()
    else:
        prf = evaluation.mention_prf(gold, pred, args.granularity)
        print(
            f"{args.granularity}: P {100 * prf.precision:.2f}  R {100 * prf.recall:.2f}  "
            f"F1 {100 * prf.f1:.2f}  (gold {prf.gold}, pred {prf.predicted}, "
            f"matched {prf.matched})"
        )
        records = [
            {
                "metric": m,
                "granularity": args.granularity,
                "value": getattr(prf, m),
                "gold": prf.gold,
                "predicted": prf.predicted,
                "matched": prf.matched,
            }
            for m in ("precision", "recall", "f1")
        ]
    if args.out:
        _write_records(args.out, records)
    return EXIT_OK


def _write_records(path: str, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def cmd_augment(args: argparse.Namespace) -> int:
    _require_paths(args.gold, args.silver)
    allowed = {t.strip() for t in args.allow.split(",") if t.strip()}
    if not allowed:
        raise UsageError("--allow needs at least one coarse type")
    out = _resolve_out(args.out, "augmented.conll")
    gold_docs = corpus_io.read_column_corpus(args.gold)
    silver_docs = corpus_io.read_standoff_mentions(args.silver, gold_docs)
    silver_by_id = {d.id: d.mentions for d in silver_docs}
    merged = []
    totals = corpus_io.MergeReport()
    for doc in gold_docs:
        result = corpus_io.merge_silver(doc, silver_by_id.get(doc.id, ()), allowed)
        merged.append(result.document)
        totals.added += result.report.added
        totals.dropped_overlap += result.report.dropped_overlap
        totals.dropped_type += result.report.dropped_type
    corpus_io.write_column_corpus(merged, out)
    print(f"merged corpus written to {out} ({totals})")
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace) -> int:
    _require_paths(args.manifest)
    result = pipeline.run_experiment(args.manifest)
    print((result.out_dir / "summary.txt").read_text(), end="")
    failed = [c for c in result.cells if c.error]
    if failed:
        print(f"{len(failed)} cell(s) failed; see cells.jsonl", file=sys.stderr)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    world = synth.build_world(
        seed=args.seed,
        coarse_train=args.coarse_train,
        coarse_dev=args.coarse_dev,
        fine_train=args.fine_train,
        fine_dev=args.fine_dev,
        eval_sentences=args.eval_sentences,
    )
    (out_dir / "taxonomy.txt").write_text(
        "".join(l.render() + "\n" for l in world.taxonomy.fine_labels)
    )
    for name, docs in (
        ("train_coarse", world.coarse_train),
        ("dev_coarse", world.coarse_dev),
        ("train_fine", world.fine_train),
        ("dev_fine", world.fine_dev),
        ("eval", world.eval_docs),
    ):
        corpus_io.write_column_corpus(docs, out_dir / f"{name}.conll")
    print(f"synthetic corpora written to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfner",
        description="coarse-to-fine cascaded named-entity recognition toolkit",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-coarse", help="train the boundary/coarse-type tagger")
    p.add_argument("--train", required=True, help="column-format training corpus")
    p.add_argument("--dev", required=True, help="column-format development corpus")
    p.add_argument("--taxonomy", required=True, help="label inventory file")
    p.add_argument(
        "--inventory",
        choices=("coarse", "fine"),
        default="coarse",
        help="tag alphabet: coarse types (stage one) or fine labels (baseline)",
    )
    p.add_argument("--seeds", type=int, default=1, help="train N seeds and summarize")
    _add_common_train_flags(p)
    p.set_defaults(func=cmd_train_coarse)

    p = sub.add_parser("train-fine", help="train the per-mention fine classifier")
    p.add_argument("--train", required=True, help="column corpus or standoff records")
    p.add_argument("--text", help="companion untagged text (standoff training input)")
    p.add_argument("--dev", required=True, help="column corpus or standoff records")
    p.add_argument("--dev-text", dest="dev_text", help="companion text for --dev")
    p.add_argument("--taxonomy", required=True)
    p.add_argument(
        "--repr",
        choices=("masked", "entity_masked", "entity_bounded"),
        default="masked",
        help="mention representation",
    )
    _add_common_train_flags(p)
    p.set_defaults(func=cmd_train_fine)

    p = sub.add_parser("predict", help="run the cascade (or baseline) over a corpus")
    p.add_argument("--tagger", help="coarse tagger checkpoint")
    p.add_argument("--classifier", help="fine classifier checkpoint")
    p.add_argument("--baseline", help="end-to-end baseline checkpoint")
    p.add_argument("--input", required=True, help="column file (tags ignored)")
    p.add_argument(
        "--filter",
        choices=("pass", "coarse", "threshold"),
        default="pass",
        help="decode-time label-space filter",
    )
    p.add_argument("--theta", type=float, default=0.9, help="threshold filter cutoff")
    p.add_argument("--out", help="prediction TSV path")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against gold")
    p.add_argument("--gold", required=True, help="gold column corpus")
    p.add_argument("--pred", required=True, help="prediction TSV")
    p.add_argument(
        "--granularity", choices=("full", "T", "boundary"), default="full"
    )
    p.add_argument("--hier", action="store_true", help="Acc-T/ST/SST mode")
    p.add_argument(
        "--gold-spans",
        action="store_true",
        help="predictions were made on gold spans (required by --hier)",
    )
    p.add_argument("--out", help="write line-delimited metric records here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("augment", help="merge silver mentions under a non-overlap rule")
    p.add_argument("--gold", required=True, help="gold column corpus")
    p.add_argument("--silver", required=True, help="standoff TSV of silver mentions")
    p.add_argument("--allow", required=True, help="comma-separated coarse types to add")
    p.add_argument("--out", help="merged column corpus path")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("experiment", help="run a (representation x filter x seed) grid")
    p.add_argument("--manifest", required=True, help="JSON experiment manifest")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("synth", help="emit a synthetic cue-determined corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--coarse-train", type=int, default=1000)
    p.add_argument("--coarse-dev", type=int, default=200)
    p.add_argument("--fine-train", type=int, default=200)
    p.add_argument("--fine-dev", type=int, default=100)
    p.add_argument("--eval-sentences", type=int, default=150)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
