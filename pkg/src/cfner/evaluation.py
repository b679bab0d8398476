"""Scoring: mention-level P/R/F1 at several granularities, hierarchical
accuracy on gold spans, and multi-seed stability statistics.

Matching is exact-span and one-to-one; label equality depends on the chosen
granularity (``full`` = whole fine label, ``T`` = main type only, ``boundary``
ignores labels).  F1 uses full-label equality; back-off credit is reserved for
the Acc-T/ST/SST diagnostic.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Sequence

from .corpus import Document, Mention
from .taxonomy import FineLabel, coarse_of, match_level

GRANULARITIES = ("full", "T", "boundary")


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    gold: int
    predicted: int
    matched: int

    def __post_init__(self) -> None:
        if self.matched > min(self.gold, self.predicted):
            raise ScoringError("matched exceeds min(gold, predicted)")

    @classmethod
    def from_counts(cls, gold: int, predicted: int, matched: int) -> "PRF":
        precision = matched / predicted if predicted else 0.0
        recall = matched / gold if gold else 0.0
        f1 = (
            2 * precision * recall / (precision + recall)
            if precision + recall
            else 0.0
        )
        return cls(precision, recall, f1, gold, predicted, matched)


@dataclass
class EvalReport:
    full: PRF
    coarse: PRF
    boundary: PRF
    acc_t: float | None = None
    acc_st: float | None = None
    acc_sst: float | None = None
    per_type: dict[str, PRF] = field(default_factory=dict)

    def metrics(self) -> dict[str, float]:
        out = {
            "precision": self.full.precision,
            "recall": self.full.recall,
            "f1": self.full.f1,
            "coarse_precision": self.coarse.precision,
            "coarse_recall": self.coarse.recall,
            "coarse_f1": self.coarse.f1,
            "boundary_precision": self.boundary.precision,
            "boundary_recall": self.boundary.recall,
            "boundary_f1": self.boundary.f1,
        }
        for name in ("acc_t", "acc_st", "acc_sst"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out

    def to_records(self) -> list[dict]:
        """Line-delimited structured form: one record per (metric, granularity)."""
        records = []
        for granularity, prf in (
            ("full", self.full),
            ("T", self.coarse),
            ("boundary", self.boundary),
        ):
            for metric in ("precision", "recall", "f1"):
                records.append(
                    {
                        "metric": metric,
                        "granularity": granularity,
                        "value": getattr(prf, metric),
                        "gold": prf.gold,
                        "predicted": prf.predicted,
                        "matched": prf.matched,
                    }
                )
        for name in ("acc_t", "acc_st", "acc_sst"):
            value = getattr(self, name)
            if value is not None:
                records.append({"metric": name, "granularity": "gold-spans", "value": value})
        for coarse, prf in sorted(self.per_type.items()):
            records.append(
                {
                    "metric": "f1",
                    "granularity": f"type:{coarse}",
                    "value": prf.f1,
                    "gold": prf.gold,
                    "predicted": prf.predicted,
                    "matched": prf.matched,
                }
            )
        return records

    def to_text(self) -> str:
        """Human-readable table; rates shown as percentages with 2 decimals."""

        def pct(x: float) -> str:
            return f"{100 * x:6.2f}"

        lines = [
            f"{'granularity':<14}{'P':>8}{'R':>8}{'F1':>8}{'gold':>7}{'pred':>7}{'match':>7}"
        ]
        for name, prf in (
            ("full", self.full),
            ("T", self.coarse),
            ("boundary", self.boundary),
        ):
            lines.append(
                f"{name:<14}{pct(prf.precision):>8}{pct(prf.recall):>8}"
                f"{pct(prf.f1):>8}{prf.gold:>7}{prf.predicted:>7}{prf.matched:>7}"
            )
        if self.acc_t is not None:
            lines.append(
                f"{'gold-spans':<14}Acc-T {pct(self.acc_t)}  "
                f"Acc-ST {pct(self.acc_st)}  Acc-SST {pct(self.acc_sst)}"
            )
        for coarse, prf in sorted(self.per_type.items()):
            lines.append(
                f"{'  ' + coarse:<14}{pct(prf.precision):>8}{pct(prf.recall):>8}"
                f"{pct(prf.f1):>8}{prf.gold:>7}{prf.predicted:>7}{prf.matched:>7}"
            )
        return "\n".join(lines)


def _mention_coarse(m: Mention) -> str:
    if m.fine is not None:
        return coarse_of(m.fine)
    if m.coarse is not None:
        return m.coarse
    raise ScoringError(f"mention {m} has no label")


def _mention_key(doc_id: str, m: Mention, granularity: str) -> Hashable:
    base = (doc_id, m.sent_index, m.start, m.end)
    if granularity == "boundary":
        return base
    if granularity == "T":
        return base + (_mention_coarse(m),)
    if granularity == "full":
        if m.fine is None:
            raise ScoringError(f"mention {m} has no fine label for full scoring")
        return base + (m.fine.render(),)
    raise ScoringError(f"unknown granularity {granularity!r}")


def _aligned_docs(
    gold: Sequence[Document], pred: Sequence[Document]
) -> list[tuple[Document, Document]]:
    gold_by_id = {d.id: d for d in gold}
    pred_by_id = {d.id: d for d in pred}
    if set(gold_by_id) != set(pred_by_id):
        missing = set(gold_by_id) ^ set(pred_by_id)
        raise ScoringError(f"gold/prediction doc ids differ: {sorted(missing)[:5]}")
    return [(gold_by_id[i], pred_by_id[i]) for i in sorted(gold_by_id)]


def mention_prf(
    gold: Sequence[Document], pred: Sequence[Document], granularity: str = "full"
) -> PRF:
    """One-to-one exact-span matching at the chosen label granularity.

    Gold documents must carry full annotation; a partially annotated gold side
    cannot anchor precision.
    """
    pairs = _aligned_docs(gold, pred)
    for g, _ in pairs:
        if g.annotation_mode != "full":
            raise ScoringError(
                f"gold doc {g.id!r} is partially annotated; scoring needs full gold"
            )
    gold_total = pred_total = matched = 0
    for g, p in pairs:
        gold_keys = Counter(_mention_key(g.id, m, granularity) for m in g.mentions)
        pred_keys = Counter(_mention_key(p.id, m, granularity) for m in p.mentions)
        gold_total += sum(gold_keys.values())
        pred_total += sum(pred_keys.values())
        matched += sum((gold_keys & pred_keys).values())
    return PRF.from_counts(gold_total, pred_total, matched)


def per_type_prf(
    gold: Sequence[Document], pred: Sequence[Document], granularity: str = "full"
) -> dict[str, PRF]:
    """Breakdown by coarse type: each side restricted to mentions of that type."""
    pairs = _aligned_docs(gold, pred)
    counts: dict[str, list[int]] = {}
    for g, p in pairs:
        gold_by_type: dict[str, Counter] = {}
        pred_by_type: dict[str, Counter] = {}
        for m in g.mentions:
            gold_by_type.setdefault(_mention_coarse(m), Counter())[
                _mention_key(g.id, m, granularity)
            ] += 1
        for m in p.mentions:
            pred_by_type.setdefault(_mention_coarse(m), Counter())[
                _mention_key(p.id, m, granularity)
            ] += 1
        for t in set(gold_by_type) | set(pred_by_type):
            gk = gold_by_type.get(t, Counter())
            pk = pred_by_type.get(t, Counter())
            row = counts.setdefault(t, [0, 0, 0])
            row[0] += sum(gk.values())
            row[1] += sum(pk.values())
            row[2] += sum((gk & pk).values())
    return {t: PRF.from_counts(*row) for t, row in counts.items()}


def evaluate_documents(
    gold: Sequence[Document],
    pred: Sequence[Document],
    hier_pairs: Sequence[tuple[FineLabel, FineLabel]] | None = None,
) -> EvalReport:
    """Full report: all three granularities, per-type breakdown, optional Acc trio."""
    report = EvalReport(
        full=mention_prf(gold, pred, "full"),
        coarse=mention_prf(gold, pred, "T"),
        boundary=mention_prf(gold, pred, "boundary"),
        per_type=per_type_prf(gold, pred, "full"),
    )
    if hier_pairs is not None:
        acc = hier_accuracy(
            [g for g, _ in hier_pairs], [p for _, p in hier_pairs]
        )
        report.acc_t, report.acc_st, report.acc_sst = acc
    return report


class HierAccuracy(tuple):
    """(acc_t, acc_st, acc_sst) with monotone credit."""

    def __new__(cls, acc_t: float, acc_st: float, acc_sst: float):
        return super().__new__(cls, (acc_t, acc_st, acc_sst))

    @property
    def acc_t(self) -> float:
        return self[0]

    @property
    def acc_st(self) -> float:
        return self[1]

    @property
    def acc_sst(self) -> float:
        return self[2]


def hier_accuracy(
    gold_labels: Sequence[FineLabel], pred_labels: Sequence[FineLabel]
) -> HierAccuracy:
    """Mean per-level agreement over aligned (gold, predicted) label pairs."""
    if len(gold_labels) != len(pred_labels):
        raise ScoringError(
            f"{len(gold_labels)} gold labels vs {len(pred_labels)} predictions"
        )
    if not gold_labels:
        raise ScoringError("no label pairs to score")
    t = st = sst = 0
    for g, p in zip(gold_labels, pred_labels):
        m = match_level(g, p)
        t += m.t
        st += m.st
        sst += m.sst
    n = len(gold_labels)
    return HierAccuracy(t / n, st / n, sst / n)


def pair_gold_span_predictions(
    gold: Sequence[Document], pred: Sequence[Document]
) -> list[tuple[FineLabel, FineLabel]]:
    """Align predictions to gold mentions by exact span for the Acc diagnostic.

    Every gold mention must have exactly one prediction on its span.
    """
    pairs = []
    for g, p in _aligned_docs(gold, pred):
        pred_by_span = {}
        for m in p.mentions:
            key = (m.sent_index, m.start, m.end)
            if key in pred_by_span:
                raise ScoringError(f"duplicate prediction for span {key} in {p.id}")
            pred_by_span[key] = m
        for m in g.mentions:
            key = (m.sent_index, m.start, m.end)
            if key not in pred_by_span:
                raise ScoringError(f"no prediction for gold span {key} in {g.id}")
            if m.fine is None or pred_by_span[key].fine is None:
                raise ScoringError(f"unlabeled mention at {key} in {g.id}")
            pairs.append((m.fine, pred_by_span[key].fine))
    return pairs


# ---------------------------------------------------------------------------
# multi-seed statistics


@dataclass(frozen=True)
class SeedSummary:
    reports: tuple[EvalReport, ...]
    mean: dict[str, float]
    std: dict[str, float]


def sample_mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (n-1 denominator; n=1 gives 0)."""
    if not values:
        raise ScoringError("no values")
    n = len(values)
    mean = sum(values) / n
    if n == 1:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var)


def seed_stats(reports: Sequence[EvalReport]) -> SeedSummary:
    """Per-metric mean and sample std across seed runs."""
    if not reports:
        raise ScoringError("no reports")
    keys = reports[0].metrics().keys()
    mean: dict[str, float] = {}
    std: dict[str, float] = {}
    for key in keys:
        values = [r.metrics().get(key) for r in reports]
        if any(v is None for v in values):
            continue
        mean[key], std[key] = sample_mean_std([float(v) for v in values])
    return SeedSummary(tuple(reports), mean, std)
