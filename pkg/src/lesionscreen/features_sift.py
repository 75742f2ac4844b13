"""Dense multi-scale upright SIFT, RootSIFT and sparsification."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .features_haar import LocalFeatureSet, grid_centers
from .imgproc import resize_to_area

N_SPATIAL = 4
N_ORIENT = 8
DIM = N_SPATIAL * N_SPATIAL * N_ORIENT
CLIP = 0.2
# raw histograms below this norm are treated as gradient-free
_ZERO_NORM = 1e-8


@dataclass(frozen=True)
class DenseSiftSpec:
    step: int = 8
    patch_sizes: tuple = (12, 26, 58, 128)
    sparsify_threshold: float = 0.0025
    max_pixels: int = 100_000

    def __post_init__(self):
        object.__setattr__(self, "patch_sizes", tuple(int(p) for p in self.patch_sizes))
        if self.sparsify_threshold < 0:
            raise ValueError("sparsify_threshold must be >= 0")


def _orientation_channels(img: np.ndarray, sigma: float) -> np.ndarray:
    """Gradient magnitude split over 8 orientation bins by linear interpolation."""
    sm = ndimage.gaussian_filter(img, max(sigma, 0.5), mode="nearest")
    p = np.pad(sm, 1, mode="edge")
    gx = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    gy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    mag = np.hypot(gx, gy)
    pos = np.mod(np.arctan2(gy, gx), 2 * np.pi) / (2 * np.pi / N_ORIENT)
    lo = np.floor(pos).astype(int) % N_ORIENT
    frac = pos - np.floor(pos)
    hi = (lo + 1) % N_ORIENT
    chans = np.zeros((N_ORIENT,) + img.shape)
    rows, cols = np.indices(img.shape)
    np.add.at(chans, (lo, rows, cols), mag * (1.0 - frac))
    np.add.at(chans, (hi, rows, cols), mag * frac)
    return chans


def _axis_weights(patch_size: int) -> np.ndarray:
    """(4, P) bilinear cell weights times the 1-D factor of the Gaussian window."""
    q = np.arange(patch_size) + 0.5
    cell = patch_size / N_SPATIAL
    centers = (np.arange(N_SPATIAL) + 0.5) * cell
    tri = np.maximum(0.0, 1.0 - np.abs(q[None, :] - centers[:, None]) / cell)
    sigma_w = patch_size / 2.0
    gauss = np.exp(-((q - patch_size / 2.0) ** 2) / (2 * sigma_w ** 2))
    return tri * gauss[None, :]


def normalize_sift(raw: np.ndarray) -> np.ndarray:
    """l2-normalise, clip at 0.2, re-normalise; gradient-free rows become zero."""
    raw = np.atleast_2d(raw)
    out = np.zeros_like(raw)
    norms = np.linalg.norm(raw, axis=1)
    ok = norms > _ZERO_NORM
    v = np.minimum(raw[ok] / norms[ok, None], CLIP)
    out[ok] = v / np.linalg.norm(v, axis=1, keepdims=True)
    return out


def dense_sift(img: np.ndarray, spec: DenseSiftSpec, patch_size: int) -> LocalFeatureSet:
    """Upright SIFT on a grid anchored at patch_size/2, rows ordered (y, x)."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    xs, ys = grid_centers(h, w, patch_size, spec.step)
    if len(xs) == 0 or len(ys) == 0:
        return LocalFeatureSet.empty(DIM, img.shape)
    chans = _orientation_channels(img, patch_size / 12.0)
    wts = _axis_weights(patch_size)
    half = patch_size // 2
    offs = np.arange(patch_size)
    # pool along x: (8, H, nx, P) @ (P, 4) -> (8, H, nx, 4)
    tx = chans[:, :, (xs - half)[:, None] + offs[None, :]] @ wts.T
    # pool along y: (8, ny, P, nx, 4) x (4, P) -> (ny, nx, 4y, 4x, 8)
    ty = tx[:, (ys - half)[:, None] + offs[None, :], :, :]
    hist = np.einsum("onpxj,ip->nxijo", ty, wts, optimize=True)
    raw = hist.reshape(len(ys) * len(xs), DIM)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    centers = np.stack([xx.ravel(), yy.ravel()], axis=1)
    return LocalFeatureSet(normalize_sift(raw), centers, img.shape)


def rootsift(desc: np.ndarray) -> np.ndarray:
    """l1-normalise then take square roots, row-wise; zero rows stay zero."""
    d = np.asarray(desc, dtype=np.float64)
    if (d < 0).any():
        raise ValueError("RootSIFT needs non-negative descriptors")
    single = d.ndim == 1
    d = np.atleast_2d(d)
    l1 = d.sum(axis=1, keepdims=True)
    out = np.sqrt(np.divide(d, l1, out=np.zeros_like(d), where=l1 > 0))
    return out[0] if single else out


def sparsify(desc: np.ndarray, threshold: float) -> np.ndarray:
    d = np.asarray(desc, dtype=np.float64)
    return np.where(d < threshold, 0.0, d)


def extract_dense_rootsift(img: np.ndarray, spec: DenseSiftSpec = DenseSiftSpec()) -> LocalFeatureSet:
    """Resize to the pixel budget, then stack sparsified RootSIFT over all patch sizes."""
    small = resize_to_area(np.asarray(img, dtype=np.float64), spec.max_pixels)
    descs, centers, scales = [], [], []
    for size in sorted(spec.patch_sizes):
        fs = dense_sift(small, spec, size)
        descs.append(sparsify(rootsift(fs.descriptors), spec.sparsify_threshold))
        centers.append(fs.centers)
        scales.append(np.full(len(fs), size))
    return LocalFeatureSet(
        np.concatenate(descs) if descs else np.zeros((0, DIM)),
        np.concatenate(centers) if centers else np.zeros((0, 2)),
        small.shape,
        meta={"scales": np.concatenate(scales).tolist() if scales else []},
    )
