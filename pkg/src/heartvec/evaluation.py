"""Quality-weighted sensitivity/specificity, MAcc and threshold sweeps.

Scores are oriented so that larger means "more normal": a record is
labelled Normal when its score is strictly above the threshold.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import Label, LabelTable, Quality
from .errors import InvalidConfigError, UndefinedMetricError, UnknownRecordError


@dataclass(frozen=True)
class EvalWeights:
    wa1: float = 0.8602
    wa2: float = 0.1398
    wn1: float = 0.9252
    wn2: float = 0.0748

    def __post_init__(self):
        vals = (self.wa1, self.wa2, self.wn1, self.wn2)
        if any(not 0.0 <= v <= 1.0 for v in vals):
            raise InvalidConfigError(f"weights must lie in [0, 1], got {vals}")
        if abs(self.wa1 + self.wa2 - 1.0) > 1e-6 or abs(self.wn1 + self.wn2 - 1.0) > 1e-6:
            raise InvalidConfigError(f"each weight pair must sum to 1, got {vals}")

    @classmethod
    def parse(cls, text: str) -> EvalWeights:
        parts = [float(v) for v in text.split(",")]
        if len(parts) != 4:
            raise InvalidConfigError(f"expected wa1,wa2,wn1,wn2, got {text!r}")
        return cls(*parts)


TRAINING_WEIGHTS = EvalWeights()


@dataclass
class ConfusionCounts:
    """Counts keyed <true class><predicted class><quality>.

    True class A(bnormal)/N(ormal); predicted a/q(unsure)/n; quality
    suffix 1 = good, 2 = poor. Unsure is never predicted, so the q cells
    stay zero.
    """

    Aa1: int = 0
    Aq1: int = 0
    An1: int = 0
    Aa2: int = 0
    Aq2: int = 0
    An2: int = 0
    Na1: int = 0
    Nq1: int = 0
    Nn1: int = 0
    Na2: int = 0
    Nq2: int = 0
    Nn2: int = 0

    def total(self) -> int:
        return sum(asdict(self).values())


@dataclass
class EvalReport:
    Se: float
    Sp: float
    MAcc: float
    threshold: float
    curve: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "Se": round(self.Se, 4),
            "Sp": round(self.Sp, 4),
            "MAcc": round(self.MAcc, 4),
            "threshold": self.threshold,
        }


def apply_threshold(scores: dict, threshold: float) -> dict:
    return {rid: Label.NORMAL if s > threshold else Label.ABNORMAL for rid, s in scores.items()}


def tally_confusion(predictions: dict, truth: LabelTable) -> ConfusionCounts:
    missing = [rid for rid in predictions if rid not in truth]
    if missing:
        raise UnknownRecordError(missing)
    counts = ConfusionCounts()
    for rid, pred in predictions.items():
        label, quality = truth[rid]
        key = (
            ("A" if label is Label.ABNORMAL else "N")
            + ("a" if pred is Label.ABNORMAL else "n")
            + ("1" if quality is Quality.GOOD else "2")
        )
        setattr(counts, key, getattr(counts, key) + 1)
    return counts


def _weighted_rate(terms):
    """Weighted sum of (weight, hits, total) terms; empty cells drop out and the rest renormalise."""
    live = [(w, hits / total) for w, hits, total in terms if total > 0]
    if not live:
        return None
    wsum = sum(w for w, _ in live)
    if wsum == 0:
        # all remaining weight sits on empty cells: fall back to equal weights
        return sum(r for _, r in live) / len(live)
    return sum(w * r for w, r in live) / wsum


def compute_se_sp(counts: ConfusionCounts, weights: EvalWeights = TRAINING_WEIGHTS) -> tuple[float, float]:
    c = counts
    se = _weighted_rate(
        [
            (weights.wa1, c.Aa1, c.Aa1 + c.Aq1 + c.An1),
            (weights.wa2, c.Aa2 + c.Aq2, c.Aa2 + c.Aq2 + c.An2),
        ]
    )
    sp = _weighted_rate(
        [
            (weights.wn1, c.Nn1, c.Na1 + c.Nq1 + c.Nn1),
            (weights.wn2, c.Nn2 + c.Nq2, c.Na2 + c.Nq2 + c.Nn2),
        ]
    )
    if se is None:
        raise UndefinedMetricError("sensitivity undefined: no abnormal records")
    if sp is None:
        raise UndefinedMetricError("specificity undefined: no normal records")
    return se, sp


def compute_macc(se: float, sp: float) -> float:
    return (se + sp) / 2.0


def evaluate_threshold(scores: dict, truth: LabelTable, threshold: float, weights: EvalWeights = TRAINING_WEIGHTS) -> EvalReport:
    se, sp = compute_se_sp(tally_confusion(apply_threshold(scores, threshold), truth), weights)
    return EvalReport(se, sp, compute_macc(se, sp), threshold)


def candidate_thresholds(scores) -> np.ndarray:
    """-inf, midpoints between consecutive distinct scores, +inf."""
    u = np.unique(np.asarray(scores, dtype=np.float64))
    return np.concatenate(([-np.inf], 0.5 * (u[:-1] + u[1:]), [np.inf]))


def _sweep_rates(scores: dict, truth: LabelTable, weights: EvalWeights, thresholds):
    """Se and Sp at every threshold without re-tallying each one."""
    missing = [rid for rid in scores if rid not in truth]
    if missing:
        raise UnknownRecordError(missing)
    groups = {}
    for rid, s in scores.items():
        groups.setdefault(truth[rid], []).append(s)
    # predicted abnormal <=> score <= threshold
    hits = {}
    for key, vals in groups.items():
        vals = np.sort(np.asarray(vals))
        n_abn = np.searchsorted(vals, thresholds, side="right")
        label = key[0]
        hits[key] = (n_abn if label is Label.ABNORMAL else vals.size - n_abn, vals.size)

    def rate(label, w_good, w_poor):
        empty = (0, 0)
        return _weighted_rate(
            [
                (w_good, *hits.get((label, Quality.GOOD), empty)),
                (w_poor, *hits.get((label, Quality.POOR), empty)),
            ]
        )

    se = rate(Label.ABNORMAL, weights.wa1, weights.wa2)
    sp = rate(Label.NORMAL, weights.wn1, weights.wn2)
    if se is None or sp is None:
        raise UndefinedMetricError("threshold sweep needs both normal and abnormal records")
    return np.asarray(se, dtype=np.float64), np.asarray(sp, dtype=np.float64)


def sweep_curve(
    scores: dict, truth: LabelTable, weights: EvalWeights = TRAINING_WEIGHTS, grid_size: int | None = None
) -> EvalReport:
    """Sweep every midpoint threshold; report the MAcc-maximising one.

    ``curve`` holds ``(threshold, Se, Sp)`` tuples in increasing threshold
    order, thinned to ``grid_size`` points (ends kept) when requested. The
    best threshold is always chosen from the full candidate set; ties go
    to the lowest threshold.
    """
    if not scores:
        raise UndefinedMetricError("cannot sweep an empty score table")
    thresholds = candidate_thresholds(list(scores.values()))
    se, sp = _sweep_rates(scores, truth, weights, thresholds)
    macc = (se + sp) / 2.0
    best = int(np.argmax(macc))

    keep = np.arange(thresholds.size)
    if grid_size is not None and thresholds.size > grid_size:
        if grid_size < 2:
            raise InvalidConfigError("grid_size must be at least 2")
        keep = np.unique(np.rint(np.linspace(0, thresholds.size - 1, grid_size)).astype(int))
    curve = [(float(thresholds[k]), float(se[k]), float(sp[k])) for k in keep]
    return EvalReport(float(se[best]), float(sp[best]), compute_macc(float(se[best]), float(sp[best])), float(thresholds[best]), curve)


def write_curve_csv(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["threshold", "Se", "Sp", "MAcc"])
        for thr, se, sp in curve:
            writer.writerow([repr(thr) if math.isfinite(thr) else ("inf" if thr > 0 else "-inf"), repr(se), repr(sp), repr(compute_macc(se, sp))])
