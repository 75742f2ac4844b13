"""AUC, ROC curves, vertical ROC averaging and difficulty-stratified AUC."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray

    def __post_init__(self):
        fpr = np.asarray(self.fpr, dtype=np.float64)
        tpr = np.asarray(self.tpr, dtype=np.float64)
        if fpr.shape != tpr.shape or fpr.ndim != 1 or len(fpr) < 2:
            raise ValueError("ROC needs matching 1-D fpr/tpr with at least two points")
        if (np.diff(fpr) < 0).any() or (np.diff(tpr) < 0).any():
            raise ValueError("ROC coordinates must be non-decreasing")
        if (fpr[0], tpr[0]) != (0.0, 0.0) or (fpr[-1], tpr[-1]) != (1.0, 1.0):
            raise ValueError("ROC must run from (0,0) to (1,1)")
        object.__setattr__(self, "fpr", fpr)
        object.__setattr__(self, "tpr", tpr)

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def area(self) -> float:
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2.0))


@dataclass
class FoldResult:
    fold: int
    auc: float
    roc: RocCurve
    image_paths: list = field(default_factory=list)
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0))
    scores: np.ndarray = field(default_factory=lambda: np.zeros(0))
    difficulties: list = field(default_factory=list)
    info: dict = field(default_factory=dict)


def _split(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    lab = np.asarray(labels).ravel()
    if s.shape != lab.shape:
        raise ValueError("scores and labels differ in length")
    pos = lab > 0
    n_pos = int(pos.sum())
    n_neg = len(lab) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    return s, pos, n_pos, n_neg


def auc(scores, labels) -> float:
    """Mann-Whitney AUC; ties between a positive and a negative count one half.

    ``labels`` are positive when > 0 (e.g. +1/-1 or 1/0).
    """
    s, pos, n_pos, n_neg = _split(scores, labels)
    ranks = rankdata(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_curve(scores, labels) -> RocCurve:
    s, pos, n_pos, n_neg = _split(scores, labels)
    order = np.argsort(-s, kind="stable")
    s, pos = s[order], pos[order]
    # last index of every block of equal scores: ties move jointly
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(pos)[ends]
    fp = np.cumsum(~pos)[ends]
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    return RocCurve(fpr, tpr)


def _vertical_limits(curve: RocCurve, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lowest and highest tpr of the curve at each grid fpr.

    They differ only where the curve has a vertical segment at that fpr;
    elsewhere both are the linear interpolation.
    """
    fpr, tpr = curve.fpr, curve.tpr
    last = len(fpr) - 1

    def interp(left):
        left = np.clip(left, 0, last)
        right = np.minimum(left + 1, last)
        span = fpr[right] - fpr[left]
        t = np.divide(grid - fpr[left], span, out=np.zeros_like(grid), where=span > 0)
        return tpr[left] + t * (tpr[right] - tpr[left])

    hi = interp(np.searchsorted(fpr, grid, side="right") - 1)
    first = np.searchsorted(fpr, grid, side="left")
    on_point = (first <= last) & (fpr[np.minimum(first, last)] == grid)
    lo = np.where(on_point, tpr[np.minimum(first, last)], interp(first - 1))
    return lo, hi


def average_roc(curves: list[RocCurve], grid_size: int = 101) -> RocCurve:
    """Vertical averaging of tpr on an even fpr grid.

    Lower and upper limits are averaged separately, so a grid fpr where some
    fold jumps vertically contributes two points and step curves keep their area.
    """
    if not curves:
        raise ValueError("average_roc needs at least one curve")
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    # i/(g-1) is bitwise equal to fp/n_neg when the fractions agree, unlike linspace
    grid = np.arange(grid_size) / (grid_size - 1.0)
    limits = [_vertical_limits(c, grid) for c in curves]
    lo = np.mean([l for l, _ in limits], axis=0)
    hi = np.mean([h for _, h in limits], axis=0)
    fpr, tpr = [], []
    for x, a, b in zip(grid, lo, hi):
        fpr.append(x)
        tpr.append(a)
        if b > a:
            fpr.append(x)
            tpr.append(b)
    tpr = np.maximum.accumulate(np.clip(tpr, 0.0, 1.0))
    tpr[0], tpr[-1] = 0.0, 1.0
    return RocCurve(np.array(fpr), tpr)


def mean_auc(results: list[FoldResult]) -> float:
    return float(np.mean([r.auc for r in results]))


def stratify(results: list[FoldResult], levels=("low", "medium", "high")) -> dict:
    """Mean over folds of the AUC recomputed within each difficulty level.

    Only within-stratum positive/negative pairs count. A fold whose stratum
    lacks either class is skipped; a level with no usable fold maps to None.
    """
    table = {}
    for level in levels:
        vals = []
        for r in results:
            sel = np.array([d == level for d in r.difficulties], dtype=bool)
            if not sel.any():
                continue
            lab = np.asarray(r.labels)[sel]
            if (lab > 0).any() and (lab <= 0).any():
                vals.append(auc(np.asarray(r.scores)[sel], lab))
        table[level] = float(np.mean(vals)) if vals else None
    return table
