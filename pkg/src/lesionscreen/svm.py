"""Soft-margin kernel SVM solved in the dual by SMO, and AUC-driven grid search."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .evaluation import auc

TAU = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "rbf" and not self.gamma > 0:
            raise ValueError("rbf gamma must be > 0")


@dataclass
class SvmModel:
    kernel: KernelSpec
    support_vectors: np.ndarray
    dual_coefs: np.ndarray  # alpha_i * y_i
    bias: float
    C: float
    class_weights: tuple[float, float] = (1.0, 1.0)  # (positive, negative)
    info: dict = field(default_factory=dict)


@dataclass(frozen=True)
class GridSpec:
    C_values: tuple
    gamma_values: tuple = ()
    inner_folds: int = 5

    def __post_init__(self):
        if not self.C_values:
            raise ValueError("grid needs at least one C value")

    def points(self) -> list[tuple[float, float | None]]:
        gammas = self.gamma_values or (None,)
        return [(c, g) for c in self.C_values for g in gammas]


def rbf_grid() -> GridSpec:
    """C in 2^{-5,-3,...,15}, gamma in 2^{-15,-13,...,3}."""
    return GridSpec(tuple(2.0 ** c for c in range(-5, 16, 2)),
                    tuple(2.0 ** g for g in range(-15, 4, 2)))


def linear_grid() -> GridSpec:
    """C in 10^{-4..3}."""
    return GridSpec(tuple(10.0 ** c for c in range(-4, 4)))


def sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a * a).sum(axis=1)[:, None] - 2.0 * (a @ b.T) + (b * b).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def kernel_matrix(a: np.ndarray, b: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    if kernel.kind == "linear":
        return a @ b.T
    return np.exp(-kernel.gamma * sq_dists(a, b))


def balanced_weights(y: np.ndarray) -> tuple[float, float]:
    n, n_pos = len(y), int((y > 0).sum())
    return n / (2.0 * n_pos), n / (2.0 * (n - n_pos))


@njit(cache=True)
def _smo(K, y, upper, tol, max_iter):
    n = y.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)
    diag = np.empty(n)
    for t in range(n):
        diag[t] = K[t, t]
    it = 0
    while it < max_iter:
        # i: maximal violator in I_up; gmin over I_low for the stopping rule
        gmax = -np.inf
        gmin = np.inf
        i = -1
        for t in range(n):
            yg = -y[t] * grad[t]
            if y[t] > 0:
                is_up = alpha[t] < upper[t]
                is_low = alpha[t] > 0
            else:
                is_up = alpha[t] > 0
                is_low = alpha[t] < upper[t]
            if is_up and yg > gmax:
                gmax = yg
                i = t
            if is_low and yg < gmin:
                gmin = yg
        if i < 0 or gmax - gmin < tol:
            break
        # j: second-order gain among I_low members that violate with i
        j = -1
        best = np.inf
        for t in range(n):
            if y[t] > 0:
                is_low = alpha[t] > 0
            else:
                is_low = alpha[t] < upper[t]
            if not is_low:
                continue
            b = gmax + y[t] * grad[t]
            if b <= 0:
                continue
            a = diag[i] + diag[t] - 2.0 * y[i] * y[t] * K[i, t]
            if a <= 0:
                a = TAU
            g = -(b * b) / a
            if g < best:
                best = g
                j = t
        if j < 0:
            break
        it += 1

        Ci = upper[i]
        Cj = upper[j]
        ai_old = alpha[i]
        aj_old = alpha[j]
        Qij = y[i] * y[j] * K[i, j]
        if y[i] != y[j]:
            quad = diag[i] + diag[j] + 2.0 * Qij
            if quad <= 0:
                quad = TAU
            delta = (-grad[i] - grad[j]) / quad
            diff = ai_old - aj_old
            ai = ai_old + delta
            aj = aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj = 0.0
                    ai = diff
            else:
                if ai < 0:
                    ai = 0.0
                    aj = -diff
            if diff > Ci - Cj:
                if ai > Ci:
                    ai = Ci
                    aj = Ci - diff
            else:
                if aj > Cj:
                    aj = Cj
                    ai = Cj + diff
        else:
            quad = diag[i] + diag[j] - 2.0 * Qij
            if quad <= 0:
                quad = TAU
            delta = (grad[i] - grad[j]) / quad
            total = ai_old + aj_old
            ai = ai_old - delta
            aj = aj_old + delta
            if total > Ci:
                if ai > Ci:
                    ai = Ci
                    aj = total - Ci
            else:
                if aj < 0:
                    aj = 0.0
                    ai = total
            if total > Cj:
                if aj > Cj:
                    aj = Cj
                    ai = total - Cj
            else:
                if ai < 0:
                    ai = 0.0
                    aj = total
        alpha[i] = ai
        alpha[j] = aj
        di = (ai - ai_old) * y[i]
        dj = (aj - aj_old) * y[j]
        for t in range(n):
            grad[t] += y[t] * (K[i, t] * di + K[j, t] * dj)
    return alpha, grad, it


def solve_dual(K: np.ndarray, y: np.ndarray, upper: np.ndarray, tol: float = 1e-3,
               max_iter: int | None = None) -> tuple[np.ndarray, float, int]:
    """SMO on min 1/2 a'Qa - e'a, 0 <= a <= upper, y'a = 0 with Q = yy'K.

    Working pairs use maximal violation for i and second-order gain for j.
    Returns (alpha, rho, iterations) where f(x) = sum a_i y_i K(x_i, x) - rho.
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    K = np.ascontiguousarray(K, dtype=np.float64)
    upper = np.ascontiguousarray(upper, dtype=np.float64)
    if max_iter is None:
        max_iter = max(10_000_000, 100 * len(y))
    alpha, grad, it = _smo(K, y, upper, float(tol), int(max_iter))
    return alpha, _rho(alpha, grad, y, upper), int(it)


def _rho(alpha, grad, y, upper) -> float:
    """Offset from the free support vectors, or the midpoint of the feasible interval."""
    ygrad = y * grad
    free = (alpha > 0) & (alpha < upper)
    if free.any():
        return float(ygrad[free].mean())
    pos = y > 0
    at_lo = alpha <= 0
    at_hi = alpha >= upper
    ub_set = (at_hi & ~pos) | (at_lo & pos)
    lb_set = (at_hi & pos) | (at_lo & ~pos)
    ub = ygrad[ub_set].min() if ub_set.any() else np.inf
    lb = ygrad[lb_set].max() if lb_set.any() else -np.inf
    if np.isfinite(ub) and np.isfinite(lb):
        return float((ub + lb) / 2.0)
    return float(ub if np.isfinite(ub) else lb)


def train_svc(X: np.ndarray, y: np.ndarray, C: float, kernel: KernelSpec,
              class_weighting: bool = True, tol: float = 1e-3,
              K: np.ndarray | None = None) -> SvmModel:
    """Train a binary SVM; ``y`` in {-1, +1}. ``K`` may pass a precomputed Gram matrix."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if not ((y == 1).any() and (y == -1).any()):
        raise ValueError("train_svc needs at least one example of each class")
    if not np.isfinite(X).all():
        raise ValueError("training rows must be finite")
    weights = balanced_weights(y) if class_weighting else (1.0, 1.0)
    upper = C * np.where(y > 0, weights[0], weights[1])
    if K is None:
        K = kernel_matrix(X, X, kernel)
    alpha, rho, iters = solve_dual(K, y, upper, tol=tol)
    sv = alpha > 0
    return SvmModel(
        kernel=kernel,
        support_vectors=X[sv].copy(),
        dual_coefs=(alpha * y)[sv],
        bias=-rho,
        C=float(C),
        class_weights=weights,
        info={"iterations": iters, "n_sv": int(sv.sum()), "sv_index": np.flatnonzero(sv)},
    )


def decision_values(model: SvmModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        return np.zeros(0)
    X = X.reshape(len(X), -1)
    if model.support_vectors.size and X.shape[1] != model.support_vectors.shape[1]:
        raise ValueError(f"feature dim {X.shape[1]} != model dim {model.support_vectors.shape[1]}")
    if len(model.support_vectors) == 0:
        return np.full(len(X), model.bias)
    return kernel_matrix(X, model.support_vectors, model.kernel) @ model.dual_coefs + model.bias


def stratified_folds(y: np.ndarray, n_folds: int, seed: int) -> np.ndarray:
    """Fold index per row, each class dealt round-robin after a seeded shuffle."""
    rng = np.random.default_rng(seed)
    folds = np.empty(len(y), dtype=np.int64)
    offset = 0
    for cls in (1, -1):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        folds[idx] = (np.arange(len(idx)) + offset) % n_folds
        offset += len(idx)
    return folds


def grid_search_auc(X: np.ndarray, y: np.ndarray, grid: GridSpec, kind: str = "rbf",
                    seed: int = 0, class_weighting: bool = True) -> tuple[float, float | None, float]:
    """Pick (C, gamma) by mean held-out AUC over stratified inner folds.

    Ties prefer the smaller C, then the smaller gamma. Inner folds whose
    training part lacks a class (or whose held-out part does) are skipped;
    a point with every fold skipped scores 0.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    folds = stratified_folds(y, grid.inner_folds, seed)
    sq = sq_dists(X, X) if kind == "rbf" else None
    lin = X @ X.T if kind == "linear" else None
    scores = {}
    for f in range(grid.inner_folds):
        te = folds == f
        tr = ~te
        ytr, yte = y[tr], y[te]
        usable = len(np.unique(ytr)) == 2 and len(np.unique(yte)) == 2
        for C, g in grid.points():
            if not usable:
                scores.setdefault((C, g), [])
                continue
            if kind == "rbf":
                kern = KernelSpec("rbf", g)
                Kfull = np.exp(-g * sq)
            else:
                kern = KernelSpec("linear")
                Kfull = lin
            model = train_svc(X[tr], ytr, C, kern, class_weighting, K=Kfull[np.ix_(tr, tr)])
            # decision values from the Gram block, avoiding a second kernel evaluation
            alpha_y = np.zeros(int(tr.sum()))
            alpha_y[model.info["sv_index"]] = model.dual_coefs
            dv = Kfull[np.ix_(te, tr)] @ alpha_y + model.bias
            scores.setdefault((C, g), []).append(auc(dv, yte))
    best = None
    for C, g in sorted(grid.points(), key=lambda p: (p[0], p[1] if p[1] is not None else 0.0)):
        vals = scores[(C, g)]
        s = float(np.mean(vals)) if vals else 0.0
        if best is None or s > best[2]:
            best = (C, g, s)
    return best


def dual_objective(alpha: np.ndarray, y: np.ndarray, K: np.ndarray) -> float:
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def primal_objective(alpha: np.ndarray, y: np.ndarray, K: np.ndarray, bias: float, upper: np.ndarray) -> float:
    ay = alpha * y
    f = K @ ay + bias
    hinge = np.maximum(0.0, 1.0 - y * f)
    return float(0.5 * ay @ K @ ay + (upper * hinge).sum())
