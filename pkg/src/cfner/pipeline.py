"""Cascade orchestration: two-step inference, the end-to-end baseline path,
and a manifest-driven experiment grid runner.

Stage one proposes mention boundaries with coarse types; stage two classifies
each proposed mention into the fine label space.  Stage two never alters
boundaries, and at inference it consumes stage-one system coarse labels (gold
coarse types are used only in the gold-span accuracy diagnostic).
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from . import corpus as corpus_io
from .coarse_tagger import (
    TaggerConfig,
    TaggerModel,
    predict_documents,
    train_baseline,
    train_tagger,
)
from .corpus import Document, Mention
from .evaluation import EvalReport, evaluate_documents, seed_stats
from .fine_classifier import (
    ClassifierConfig,
    ClassifierModel,
    FilterConfig,
    classify_mentions,
    train_classifier,
)
from .taxonomy import Taxonomy, load_taxonomy

logger = logging.getLogger(__name__)

#: Operating points measured with large pretrained encoders on the licensed
#: TAC-EDL 2019 evaluation data; recorded for orientation only — desk-scale
#: runs cannot reproduce them.
REFERENCE_OPERATING_POINTS = {
    "baseline_end_to_end": {"precision": 35.53, "recall": 51.20, "f1": 41.95},
    "cascade_multi_masked_pass_through": {"precision": 60.7, "recall": 62.43, "f1": 61.60},
    "boundary_baseline": {"precision": 60.02, "recall": 81.44, "f1": 69.11},
    "boundary_two_step_multi": {"precision": 88.49, "recall": 90.88, "f1": 89.67},
    "coarse_multi_f1": {"mean": 79.8, "std": 0.2},
    "gold_span_accuracy_masked": {"acc_sst": 67.63, "acc_st": 75.11, "acc_t": 90.08},
    "filter_masked": {"pass_through": 61.31, "coarse_type": 59.88, "threshold": 60.89},
}


class CompatibilityError(ValueError):
    """Checkpoints disagree on the label space."""


@dataclass(frozen=True)
class CascadeConfig:
    tagger: TaggerModel
    classifier: ClassifierModel
    filter_config: FilterConfig = FilterConfig("pass_through")

    def __post_init__(self) -> None:
        if self.tagger.inventory != "coarse":
            raise CompatibilityError(
                "cascade stage one needs a coarse-inventory tagger; "
                f"got inventory={self.tagger.inventory!r}"
            )
        if self.tagger.taxonomy.fingerprint() != self.classifier.taxonomy.fingerprint():
            raise CompatibilityError(
                "tagger and classifier were built against different taxonomies "
                "(fingerprint mismatch)"
            )

    @property
    def representation(self) -> str:
        return self.classifier.representation


def run_cascade(cfg: CascadeConfig, docs: Sequence[Document]) -> list[Document]:
    """Two-step inference; output spans are exactly the stage-one spans.

    Each output mention carries the decoded fine label, the renormalized decode
    confidence, and the stage-one coarse label for audit.
    """
    stage_one = predict_documents(cfg.tagger, docs)
    jobs = [(doc, doc.mentions) for doc in stage_one]
    decoded = classify_mentions(cfg.classifier, jobs, cfg.filter_config)
    out: list[Document] = []
    for doc, results in zip(stage_one, decoded):
        mentions = []
        for m, res in zip(doc.mentions, results):
            mentions.append(
                Mention(
                    m.sent_index,
                    m.start,
                    m.end,
                    coarse=m.coarse,
                    fine=res.label,
                    confidence=res.confidence,
                    flags=("filter_fallback",) if res.used_fallback else (),
                )
            )
        out.append(Document(doc.id, doc.sentences, tuple(mentions), "full"))
    return out


def run_baseline(model: TaggerModel, docs: Sequence[Document]) -> list[Document]:
    """Single-pass tagging over the fine inventory; same output shape as the cascade."""
    if model.inventory != "fine":
        raise CompatibilityError(
            f"baseline needs a fine-inventory tagger; got {model.inventory!r}"
        )
    return predict_documents(model, docs)


def classify_gold_spans(
    classifier: ClassifierModel,
    gold_docs: Sequence[Document],
    filter_cfg: FilterConfig = FilterConfig("pass_through"),
) -> list[Document]:
    """Classify gold mention spans using gold coarse types (accuracy diagnostic)."""
    jobs = [(doc, doc.mentions) for doc in gold_docs]
    decoded = classify_mentions(classifier, jobs, filter_cfg)
    out = []
    for doc, results in zip(gold_docs, decoded):
        mentions = []
        for m, res in zip(doc.mentions, results):
            mentions.append(
                Mention(
                    m.sent_index,
                    m.start,
                    m.end,
                    coarse=m.coarse,
                    fine=res.label,
                    confidence=res.confidence,
                    flags=("filter_fallback",) if res.used_fallback else (),
                )
            )
        out.append(Document(doc.id, doc.sentences, tuple(mentions), "full"))
    return out


# ---------------------------------------------------------------------------
# experiment grid


class ManifestError(ValueError):
    pass


@dataclass
class CellResult:
    representation: str
    filter: str
    seed: int
    report: EvalReport | None = None
    error: str | None = None
    predictions_path: str | None = None
    wall_seconds: float = 0.0


@dataclass
class ExperimentResult:
    cells: list[CellResult]
    summaries: list[dict]
    out_dir: Path


def _filter_from_spec(spec: dict) -> FilterConfig:
    kind = spec.get("kind")
    if kind == "threshold":
        return FilterConfig("threshold", float(spec.get("theta", 0.9)))
    return FilterConfig(kind)


def _load_manifest(manifest: dict | str | Path) -> dict:
    if isinstance(manifest, (str, Path)):
        manifest = json.loads(Path(manifest).read_text(encoding="utf-8"))
    if not isinstance(manifest, dict):
        raise ManifestError("manifest must be a JSON object")
    for key in ("out_dir", "taxonomy", "corpora", "grid"):
        if key not in manifest:
            raise ManifestError(f"manifest is missing required key {key!r}")
    corpora = manifest["corpora"]
    for key in ("train_coarse", "dev_coarse", "train_fine", "dev_fine", "eval"):
        if key not in corpora:
            raise ManifestError(f"manifest corpora section is missing {key!r}")
        if not Path(corpora[key]).exists():
            raise ManifestError(f"corpus path does not exist: {corpora[key]}")
    if not Path(manifest["taxonomy"]).exists():
        raise ManifestError(f"taxonomy path does not exist: {manifest['taxonomy']}")
    grid = manifest["grid"]
    if not grid.get("representations") or not grid.get("filters") or not grid.get("seeds"):
        raise ManifestError("grid needs representations, filters, and seeds")
    return manifest


def run_experiment(manifest: dict | str | Path) -> ExperimentResult:
    """Train/evaluate every (representation x filter x seed) cell and aggregate.

    Every cell's predictions are persisted in the standard prediction format so
    reports can be re-derived without retraining.  A cell failure is recorded
    and the grid continues.
    """
    manifest = _load_manifest(manifest)
    out_dir = Path(manifest["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    taxonomy = load_taxonomy(manifest["taxonomy"])
    paths = manifest["corpora"]
    train_coarse = corpus_io.read_column_corpus(paths["train_coarse"])
    dev_coarse = corpus_io.read_column_corpus(paths["dev_coarse"])
    train_fine = corpus_io.read_column_corpus(paths["train_fine"])
    dev_fine = corpus_io.read_column_corpus(paths["dev_fine"])
    eval_docs = corpus_io.read_column_corpus(paths["eval"])

    grid = manifest["grid"]
    representations = list(grid["representations"])
    filters = [_filter_from_spec(f) for f in grid["filters"]]
    seeds = [int(s) for s in grid["seeds"]]
    tagger_overrides = dict(manifest.get("tagger", {}))
    classifier_overrides = dict(manifest.get("classifier", {}))
    include_baseline = bool(manifest.get("baseline", False))

    cells: list[CellResult] = []
    for seed in seeds:
        tagger_cfg = TaggerConfig(**{**tagger_overrides, "seed": seed, "inventory": "coarse"})
        tagger = train_tagger(train_coarse, dev_coarse, tagger_cfg, taxonomy)
        for representation in representations:
            cls_cfg = ClassifierConfig(
                **{**classifier_overrides, "seed": seed, "representation": representation}
            )
            classifier = train_classifier(train_fine, dev_fine, cls_cfg, taxonomy)
            for filter_cfg in filters:
                cell = CellResult(representation, filter_cfg.describe(), seed)
                started = time.monotonic()
                try:
                    cascade = CascadeConfig(tagger, classifier, filter_cfg)
                    pred = run_cascade(cascade, eval_docs)
                    name = f"preds_{representation}_{filter_cfg.describe()}_s{seed}.tsv"
                    pred_path = out_dir / name.replace("(", "_").replace(")", "")
                    corpus_io.write_predictions(pred, pred_path)
                    cell.predictions_path = str(pred_path)
                    cell.report = evaluate_documents(eval_docs, pred)
                except Exception as exc:  # grid must survive any cell failure
                    logger.exception("cell failed: %s", cell)
                    cell.error = f"{type(exc).__name__}: {exc}"
                cell.wall_seconds = time.monotonic() - started
                cells.append(cell)
        if include_baseline:
            cell = CellResult("baseline", "-", seed)
            started = time.monotonic()
            try:
                base_cfg = TaggerConfig(
                    **{**tagger_overrides, "seed": seed, "inventory": "fine"}
                )
                baseline = train_baseline(train_fine, dev_fine, base_cfg, taxonomy)
                pred = run_baseline(baseline, eval_docs)
                pred_path = out_dir / f"preds_baseline_s{seed}.tsv"
                corpus_io.write_predictions(pred, pred_path)
                cell.predictions_path = str(pred_path)
                cell.report = evaluate_documents(eval_docs, pred)
            except Exception as exc:
                logger.exception("baseline cell failed (seed %d)", seed)
                cell.error = f"{type(exc).__name__}: {exc}"
            cell.wall_seconds = time.monotonic() - started
            cells.append(cell)

    summaries = _summarize(cells)
    _write_outputs(out_dir, cells, summaries)
    return ExperimentResult(cells, summaries, out_dir)


def _summarize(cells: Sequence[CellResult]) -> list[dict]:
    groups: dict[tuple[str, str], list[CellResult]] = {}
    for cell in cells:
        groups.setdefault((cell.representation, cell.filter), []).append(cell)
    summaries = []
    for (representation, filter_desc), group in sorted(groups.items()):
        reports = [c.report for c in group if c.report is not None]
        row: dict = {
            "representation": representation,
            "filter": filter_desc,
            "seeds": len(group),
            "failed": sum(1 for c in group if c.error),
        }
        if reports:
            stats = seed_stats(reports)
            for key in ("precision", "recall", "f1", "boundary_f1"):
                row[f"{key}_mean"] = stats.mean[key]
                row[f"{key}_std"] = stats.std[key]
        summaries.append(row)
    return summaries


def _write_outputs(
    out_dir: Path, cells: Sequence[CellResult], summaries: Sequence[dict]
) -> None:
    with open(out_dir / "cells.jsonl", "w", encoding="utf-8") as fh:
        for cell in cells:
            record = {
                "representation": cell.representation,
                "filter": cell.filter,
                "seed": cell.seed,
                "error": cell.error,
                "predictions": cell.predictions_path,
                "wall_seconds": round(cell.wall_seconds, 3),
            }
            if cell.report is not None:
                record["metrics"] = cell.report.metrics()
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    (out_dir / "summary.json").write_text(
        json.dumps(list(summaries), indent=2, sort_keys=True), encoding="utf-8"
    )
    lines = [
        f"{'representation':<22}{'filter':<24}{'F1 mean':>9}{'F1 std':>8}{'bF1 mean':>10}"
    ]
    for row in summaries:
        if "f1_mean" in row:
            lines.append(
                f"{row['representation']:<22}{row['filter']:<24}"
                f"{100 * row['f1_mean']:9.2f}{100 * row['f1_std']:8.2f}"
                f"{100 * row['boundary_f1_mean']:10.2f}"
            )
        else:
            lines.append(
                f"{row['representation']:<22}{row['filter']:<24}   (all seeds failed)"
            )
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
