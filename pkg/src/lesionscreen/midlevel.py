"""Mid-level transforms: z-normalisation, k-means, PCA, random codebooks,
hard-assignment/sum-pooling and BossaNova coding with a 1x1 + 2x2 pyramid."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .features_haar import LocalFeatureSet

STD_FLOOR = 1e-12
SIGMA_FLOOR = 1e-6
_CHUNK = 4096


@dataclass(frozen=True)
class ZNorm:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, descs: np.ndarray) -> np.ndarray:
        return apply_znorm(self, descs)


@dataclass(frozen=True)
class Codebook:
    centroids: np.ndarray
    sigma: np.ndarray | None = None

    @property
    def k(self) -> int:
        return len(self.centroids)


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    basis: np.ndarray  # (n_components, D), rows orthonormal, eigenvalue-descending
    eigenvalues: np.ndarray


@dataclass(frozen=True)
class BossaParams:
    B: int = 4
    lambda_min: float = 0.6
    lambda_max: float = 1.6
    s: float = 1e-3

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("B must be >= 1")
        if not 0 <= self.lambda_min < self.lambda_max:
            raise ValueError("need 0 <= lambda_min < lambda_max")
        if self.s <= 0:
            raise ValueError("s must be > 0")


# ---------------------------------------------------------------- z-norm

def fit_znorm(train_descs: np.ndarray) -> ZNorm:
    x = np.asarray(train_descs, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise ValueError("fit_znorm needs at least 2 training rows")
    return ZNorm(x.mean(axis=0), np.maximum(x.std(axis=0), STD_FLOOR))


def apply_znorm(zn: ZNorm, descs: np.ndarray) -> np.ndarray:
    return (np.asarray(descs, dtype=np.float64) - zn.mean) / zn.std


# ---------------------------------------------------------------- distances

def sq_distances(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape (len(x), len(c)), clamped at 0."""
    d = (x * x).sum(axis=1)[:, None] - 2.0 * (x @ c.T) + (c * c).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def distances(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Euclidean distances from explicit differences (no expansion round-off)."""
    out = np.empty((len(x), len(c)))
    rows = max(1, 4_000_000 // max(1, c.size))
    for s in range(0, len(x), rows):
        diff = x[s:s + rows, None, :] - c[None, :, :]
        out[s:s + rows] = np.sqrt(np.einsum("nkd,nkd->nk", diff, diff))
    return out


def nearest(x: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of (ties: lowest) and squared distance to the nearest centroid."""
    idx = np.empty(len(x), dtype=np.int64)
    dist = np.empty(len(x))
    for s in range(0, len(x), _CHUNK):
        d = sq_distances(x[s:s + _CHUNK], c)
        i = d.argmin(axis=1)
        idx[s:s + _CHUNK] = i
        dist[s:s + _CHUNK] = d[np.arange(len(i)), i]
    return idx, dist


# ---------------------------------------------------------------- sampling

def distinct_rows(x: np.ndarray) -> np.ndarray:
    """Byte-distinct rows in first-appearance order."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if len(x) == 0:
        return x
    view = x.view(np.dtype((np.void, x.dtype.itemsize * x.shape[1]))).ravel()
    _, first = np.unique(view, return_index=True)
    return x[np.sort(first)]


def subsample(descs_by_image: Iterable[np.ndarray] | np.ndarray, cap: int, seed: int) -> np.ndarray:
    """Uniform sample of at most ``cap`` distinct rows from the pooled descriptors."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    if isinstance(descs_by_image, np.ndarray):
        pool = descs_by_image
    else:
        mats = [np.asarray(m, dtype=np.float64) for m in descs_by_image if len(m)]
        if not mats:
            return np.zeros((0, 0))
        pool = np.concatenate(mats)
    pool = distinct_rows(pool)
    if len(pool) <= cap:
        return pool
    rng = np.random.default_rng(seed)
    return pool[np.sort(rng.choice(len(pool), size=cap, replace=False))]


# ---------------------------------------------------------------- k-means

def kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = sq_distances(x, centers[:1])[:, 0]
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            j = rng.integers(n)
        else:
            j = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            j = min(j, n - 1)
        centers[i] = x[j]
        d2 = np.minimum(d2, sq_distances(x, centers[i:i + 1])[:, 0])
    return centers


def kmeans(sample: np.ndarray, k: int, max_iter: int = 1000, seed: int = 0,
           history: list | None = None) -> Codebook:
    """Lloyd's algorithm with k-means++ seeding.

    Stops after ``max_iter`` iterations or once no assignment changes. When
    ``history`` is a list, the inertia after every iteration is appended to it.
    """
    x = np.asarray(sample, dtype=np.float64)
    if len(x) < k:
        raise ValueError(f"k-means needs at least k={k} rows, got {len(x)}")
    rng = np.random.default_rng(seed)
    centers = kmeans_pp(x, k, rng)
    labels = None
    for _ in range(max_iter):
        new_labels, d2 = nearest(x, centers)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        for m in np.flatnonzero(~nonempty):
            # re-seed with the point lying farthest from its own centroid
            far = int(np.argmax(((x - centers[labels]) ** 2).sum(axis=1)))
            centers[m] = x[far]
            labels[far] = m
        if history is not None:
            history.append(inertia(x, centers))
    return Codebook(centers)


def inertia(x: np.ndarray, centers: np.ndarray) -> float:
    return float(nearest(x, centers)[1].sum())


# ---------------------------------------------------------------- PCA

def fit_pca(sample: np.ndarray, n_components: int = 64) -> PcaModel:
    """Non-whitening PCA from the eigendecomposition of the sample covariance."""
    x = np.asarray(sample, dtype=np.float64)
    if len(x) < n_components + 1:
        raise ValueError(f"PCA to {n_components} dims needs >= {n_components + 1} rows, got {len(x)}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (len(x) - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    tol = max(vals[0], 0.0) * max(cov.shape) * np.finfo(float).eps * 10
    rank = int((vals > tol).sum())
    if rank < n_components:
        raise ValueError(f"sample covariance has rank {rank} < {n_components} components")
    basis = vecs[:, :n_components].T.copy()
    # sign convention: largest-magnitude entry of each axis is positive
    flip = np.sign(basis[np.arange(n_components), np.abs(basis).argmax(axis=1)])
    basis *= flip[:, None]
    return PcaModel(mean, basis, vals[:n_components].copy())


def apply_pca(model: PcaModel, descs: np.ndarray) -> np.ndarray:
    return (np.asarray(descs, dtype=np.float64) - model.mean) @ model.basis.T


# ---------------------------------------------------------------- codebooks

def random_codebook(sample: np.ndarray, k: int = 2048, seed: int = 0) -> Codebook:
    pool = distinct_rows(sample)
    if len(pool) < k:
        raise ValueError(f"need {k} distinct rows for the codebook, got {len(pool)}")
    rng = np.random.default_rng(seed)
    return Codebook(pool[rng.choice(len(pool), size=k, replace=False)].copy())


def estimate_sigma(codebook: Codebook, sample: np.ndarray) -> np.ndarray:
    """Per-codeword spread: root-mean-square distance of the rows assigned to it.

    This is the cluster's standard deviation about its codeword, so the
    [lambda_min, lambda_max] * sigma range covers typical member distances.
    Codewords with fewer than two members get the global mean nearest-codeword
    distance; everything is floored at 1e-6.
    """
    x = np.asarray(sample, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("estimate_sigma needs a non-empty sample")
    idx, d2 = nearest(x, codebook.centroids)
    k = codebook.k
    counts = np.bincount(idx, minlength=k)
    s2 = np.bincount(idx, weights=d2, minlength=k)
    with np.errstate(invalid="ignore", divide="ignore"):
        rms = np.sqrt(s2 / counts)
    sigma = np.where(counts >= 2, rms, np.sqrt(d2).mean())
    return np.maximum(sigma, SIGMA_FLOOR)


def with_sigma(codebook: Codebook, sample: np.ndarray) -> Codebook:
    return Codebook(codebook.centroids, estimate_sigma(codebook, sample))


# ---------------------------------------------------------------- coding / pooling

def classical_encode(descs: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Hard assignment with sum pooling: raw occurrence counts per codeword."""
    x = np.asarray(descs, dtype=np.float64)
    if len(x) == 0:
        return np.zeros(codebook.k)
    idx, _ = nearest(x, codebook.centroids)
    return np.bincount(idx, minlength=codebook.k).astype(np.float64)


def _bossa_block(dist: np.ndarray, nn: np.ndarray, sigma: np.ndarray, params: BossaParams) -> np.ndarray:
    # dist: (n, k) distances, nn: (n,) nearest codeword
    n, k = dist.shape
    out = np.zeros((k, params.B + 1))
    if n == 0:
        return out.ravel()
    lo = params.lambda_min * sigma
    hi = params.lambda_max * sigma
    width = (hi - lo) / params.B
    pos = (dist - lo[None, :]) / width[None, :]
    b = np.floor(pos).astype(np.int64)
    # last bin is right-closed
    b[dist == hi[None, :]] = params.B - 1
    inside = (dist >= lo[None, :]) & (dist <= hi[None, :]) & (b >= 0) & (b < params.B)
    rows, cols = np.nonzero(inside)
    np.add.at(out, (cols, b[rows, cols]), 1.0)
    out[:, :params.B] /= n
    out[:, params.B] = params.s * np.bincount(nn, minlength=k)
    return out.ravel()


def bossanova_encode(features: LocalFeatureSet, codebook: Codebook, params: BossaParams,
                     region: tuple[float, float, float, float] | None = None) -> np.ndarray:
    """BossaNova vector for descriptors whose centre lies in ``region`` = (x0, y0, x1, y1), half-open."""
    if codebook.sigma is None:
        raise ValueError("codebook has no sigma; call with_sigma first")
    keep = _in_region(features.centers, region)
    x = features.descriptors[keep]
    if len(x) == 0:
        return np.zeros(codebook.k * (params.B + 1))
    dist = distances(x, codebook.centroids)
    return _bossa_block(dist, dist.argmin(axis=1), codebook.sigma, params)


def _in_region(centers: np.ndarray, region) -> np.ndarray:
    if region is None:
        return np.ones(len(centers), dtype=bool)
    x0, y0, x1, y1 = region
    cx, cy = centers[:, 0], centers[:, 1]
    return (cx >= x0) & (cx < x1) & (cy >= y0) & (cy < y1)


def pyramid_regions(image_shape: Sequence[int]) -> list[tuple[float, float, float, float]]:
    """Whole image, then TL, TR, BL, BR quadrants split at floor(w/2), floor(h/2)."""
    h, w = image_shape
    mx, my = w // 2, h // 2
    inf = np.inf
    return [
        (-inf, -inf, inf, inf),
        (-inf, -inf, mx, my),
        (mx, -inf, inf, my),
        (-inf, my, mx, inf),
        (mx, my, inf, inf),
    ]


def spatial_pyramid_encode(features: LocalFeatureSet, codebook: Codebook, params: BossaParams,
                           image_dims: Sequence[int] | None = None) -> np.ndarray:
    """Concatenated 5-region BossaNova vector, l2-normalised (zero stays zero)."""
    if codebook.sigma is None:
        raise ValueError("codebook has no sigma; call with_sigma first")
    dims = image_dims if image_dims is not None else features.image_shape
    per_region = codebook.k * (params.B + 1)
    out = np.zeros(5 * per_region)
    x = features.descriptors
    if len(x):
        dist = distances(x, codebook.centroids)
        nn = dist.argmin(axis=1)
        for r, region in enumerate(pyramid_regions(dims)):
            keep = _in_region(features.centers, region)
            out[r * per_region:(r + 1) * per_region] = _bossa_block(
                dist[keep], nn[keep], codebook.sigma, params)
    norm = np.linalg.norm(out)
    return out / norm if norm > 0 else out
