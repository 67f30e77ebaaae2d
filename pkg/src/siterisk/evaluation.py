"""ROC/AUC, calibration tables and the within/cross-source evaluation protocol."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .gbdt import TrainParams, ensemble_proba, kfold_cv


class EvaluationError(ValueError):
    pass


def _check_binary(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise EvaluationError("scores and labels must be 1-D and aligned")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos + n_neg != len(y):
        raise EvaluationError("labels must be 0/1")
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("both classes are required")
    return s, y, n_pos, n_neg


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie)."""
    s, y, n_pos, n_neg = _check_binary(scores, labels)
    ranks = rankdata(s)  # average ranks: ties share credit
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> RocCurve:
    """One point per distinct score (predict positive when score >= threshold).

    The first point uses a +inf sentinel threshold and sits at (0, 0).
    """
    s, y, n_pos, n_neg = _check_binary(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_run = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y == 1)[last_of_run]
    fp = np.cumsum(y == 0)[last_of_run]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[np.inf, s[last_of_run]]
    area = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, area)


@dataclass(frozen=True)
class CalibrationBin:
    low: float
    high: float
    mean_predicted: float
    empirical_rate: float
    count: int


@dataclass(frozen=True)
class CalibrationTable:
    bins: tuple[CalibrationBin, ...]
    n_bins: int

    def max_deviation(self, min_count: int = 1) -> float:
        devs = [abs(b.empirical_rate - b.mean_predicted) for b in self.bins if b.count >= max(min_count, 1)]
        return max(devs) if devs else 0.0


def calibration(scores: Sequence[float], labels: Sequence[int], n_bins: int = 40) -> CalibrationTable:
    """Uniform bins over [0, 1], half-open except the last; empty bins carry NaN rates."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape:
        raise EvaluationError("scores and labels must be aligned")
    if np.any((s < 0) | (s > 1)) or np.any(np.isnan(s)):
        raise EvaluationError("scores must lie in [0, 1]")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    sum_s = np.bincount(idx, weights=s, minlength=n_bins)
    sum_y = np.bincount(idx, weights=y, minlength=n_bins)
    bins = []
    for i in range(n_bins):
        c = int(counts[i])
        bins.append(
            CalibrationBin(
                float(edges[i]),
                float(edges[i + 1]),
                sum_s[i] / c if c else math.nan,
                sum_y[i] / c if c else math.nan,
                c,
            )
        )
    return CalibrationTable(tuple(bins), n_bins)


# -- protocol ---------------------------------------------------------------


@dataclass(frozen=True)
class CurveSpec:
    name: str
    train_sources: tuple[str, ...]
    eval_sources: tuple[str, ...]


@dataclass(frozen=True)
class ProtocolSpec:
    curves: tuple[CurveSpec, ...]
    k: int = 5
    rng_seed: int = 0
    holdout_cutoff: date | None = None
    holdout_sources: tuple[str, ...] = ()

    @classmethod
    def cross_dataset(cls, source_a: str, source_b: str, **kw) -> "ProtocolSpec":
        """Within-source, combined and both cross-source curves for two sources."""
        return cls(
            (
                CurveSpec(f"{source_a}->{source_a}", (source_a,), (source_a,)),
                CurveSpec(f"{source_b}->{source_b}", (source_b,), (source_b,)),
                CurveSpec(f"{source_a}+{source_b}->{source_a}+{source_b}", (source_a, source_b), (source_a, source_b)),
                CurveSpec(f"{source_a}->{source_b}", (source_a,), (source_b,)),
                CurveSpec(f"{source_b}->{source_a}", (source_b,), (source_a,)),
            ),
            **kw,
        )


@dataclass
class CurveResult:
    name: str
    auc: float
    roc: RocCurve
    scores: np.ndarray
    labels: np.ndarray
    domains: list[str]


@dataclass
class ProtocolReport:
    curves: dict[str, CurveResult] = field(default_factory=dict)

    def summary(self) -> dict[str, float]:
        return {name: c.auc for name, c in self.curves.items()}


def _positive_mask(dataset, sources: Sequence[str]) -> np.ndarray:
    return (dataset.y == 1) & np.isin(np.array(dataset.sources, dtype=object), list(sources))


def _cv_scores(dataset, rows: np.ndarray, params: TrainParams, k: int, seed: int):
    sub = dataset.subset(rows)
    cv = kfold_cv(sub, k, params, seed)
    return cv, np.array([cv.oof_scores[d] for d in sub.domains])


def protocol_eval(dataset, params: TrainParams, spec: ProtocolSpec) -> ProtocolReport:
    """Run every curve in ``spec``.

    Within-source curves (train sources == eval sources) are plain k-fold CV
    over those positives plus all negatives. Cross-source curves train by CV
    on the train sources, score eval-source positives with the mean of the
    fold models, and score negatives with their out-of-fold predictions.
    """
    available = set(dataset.sources)
    neg = dataset.y == 0
    report = ProtocolReport()
    for curve in spec.curves:
        missing = [s for s in (*curve.train_sources, *curve.eval_sources) if s not in available]
        if missing:
            raise EvaluationError(f"sources {missing} absent; available: {sorted(available)}")
        train_rows = np.flatnonzero(_positive_mask(dataset, curve.train_sources) | neg)
        cv, oof = _cv_scores(dataset, train_rows, params, spec.k, spec.rng_seed)
        if set(curve.eval_sources) == set(curve.train_sources):
            scores, labels = oof, dataset.y[train_rows]
            domains = [dataset.domains[i] for i in train_rows]
        else:
            eval_pos = np.flatnonzero(_positive_mask(dataset, curve.eval_sources) & ~_positive_mask(dataset, curve.train_sources))
            neg_in_train = neg[train_rows]
            pos_scores = ensemble_proba(cv.fold_models, dataset.X[eval_pos])
            scores = np.r_[pos_scores, oof[neg_in_train]]
            labels = np.r_[np.ones(len(eval_pos), dtype=int), np.zeros(int(neg_in_train.sum()), dtype=int)]
            domains = [dataset.domains[i] for i in eval_pos] + [dataset.domains[i] for i in train_rows[neg_in_train]]
        roc = roc_curve(scores, labels)
        report.curves[curve.name] = CurveResult(curve.name, auc(scores, labels), roc, scores, labels, domains)

    if spec.holdout_cutoff is not None:
        report.curves.update(_holdout_curves(dataset, params, spec).curves)
    return report


def _holdout_curves(dataset, params: TrainParams, spec: ProtocolSpec) -> ProtocolReport:
    """Train on rows dated before the cutoff, score later positives against OOF negatives."""
    cutoff = spec.holdout_cutoff
    sources = spec.holdout_sources or tuple(s for s in sorted(set(dataset.sources)) if s != "negative")
    late = np.array(
        [
            y == 1 and src in sources and d is not None and d >= cutoff
            for y, src, d in zip(dataset.y, dataset.sources, dataset.reference_dates)
        ]
    )
    if not late.any():
        raise EvaluationError(f"no positives dated on or after {cutoff}")
    train_rows = np.flatnonzero(~late)
    cv, oof = _cv_scores(dataset, train_rows, params, spec.k, spec.rng_seed)
    neg_in_train = dataset.y[train_rows] == 0
    late_rows = np.flatnonzero(late)
    scores = np.r_[ensemble_proba(cv.fold_models, dataset.X[late_rows]), oof[neg_in_train]]
    labels = np.r_[np.ones(len(late_rows), dtype=int), np.zeros(int(neg_in_train.sum()), dtype=int)]
    name = f"pre-{cutoff.isoformat()}->post-{cutoff.isoformat()}"
    domains = [dataset.domains[i] for i in late_rows] + [dataset.domains[i] for i in train_rows[neg_in_train]]
    return ProtocolReport({name: CurveResult(name, auc(scores, labels), roc_curve(scores, labels), scores, labels, domains)})


# -- report files -----------------------------------------------------------


def _slug(name: str) -> str:
    name = name.replace("->", "_to_").replace("+", "_and_")
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


def _num(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return ""
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return repr(float(x))


def write_roc_csv(path: str | Path, roc: RocCurve, header_lines=()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for f, t, th in roc.points:
            w.writerow([_num(th), _num(f), _num(t)])


def write_calibration_csv(path: str | Path, table: CalibrationTable, header_lines=()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "mean_predicted", "empirical_rate", "count"])
        for b in table.bins:
            w.writerow([_num(b.low), _num(b.high), _num(b.mean_predicted), _num(b.empirical_rate), b.count])


def write_report(report: ProtocolReport, out_dir: str | Path, manifest: dict | None = None) -> dict[str, Path]:
    """JSON summary plus one ``roc_<curve>.csv`` per curve; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = [json.dumps(manifest, sort_keys=True)] if manifest else []
    paths = {}
    for name, c in report.curves.items():
        p = out / f"roc_{_slug(name)}.csv"
        write_roc_csv(p, c.roc, header)
        paths[name] = p
    summary = {"manifest": manifest or {}, "auc": report.summary()}
    (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    paths["report"] = out / "report.json"
    return paths
