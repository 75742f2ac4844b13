"""Chan-Vese region-based active contours and the baseline lesion-extraction chain."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy import ndimage

from . import imgproc

GRAD_FLOOR = 1e-8


@dataclass(frozen=True)
class ChanVeseParams:
    mu: float = 0.25
    iterations: int = 2000
    init_radius_fraction: float = 0.25
    dt: float = 0.5
    epsilon: float = 1.0
    reinit_every: int = 50

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 < self.init_radius_fraction < 0.5:
            raise ValueError("init_radius_fraction must be in (0, 0.5)")


def init_mask(shape, fraction: float) -> np.ndarray:
    h, w = shape
    return imgproc.disk_mask(w, h, max(1.0, fraction * min(h, w)))


def signed_distance(inside: np.ndarray) -> np.ndarray:
    """Signed distance to the region boundary, negative inside."""
    inside = np.asarray(inside, dtype=bool)
    if inside.all() or not inside.any():
        # no boundary to measure from; keep the sign and unit magnitude
        return np.where(inside, -1.0, 1.0)
    d_out = ndimage.distance_transform_edt(~inside)
    d_in = ndimage.distance_transform_edt(inside)
    return np.where(inside, 0.5 - d_in, d_out - 0.5)


def curvature(phi: np.ndarray) -> np.ndarray:
    """div(grad phi / |grad phi|) by central differences with replicated borders."""
    p = np.pad(phi, 1, mode="edge")
    c = p[1:-1, 1:-1]
    px = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    py = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    pxx = p[1:-1, 2:] - 2 * c + p[1:-1, :-2]
    pyy = p[2:, 1:-1] - 2 * c + p[:-2, 1:-1]
    pxy = 0.25 * (p[2:, 2:] - p[2:, :-2] - p[:-2, 2:] + p[:-2, :-2])
    px2 = px * px
    py2 = py * py
    norm = np.maximum(np.sqrt(px2 + py2), GRAD_FLOOR)
    return (pxx * py2 - 2.0 * px * py * pxy + pyy * px2) / (norm * norm * norm)


def iter_chan_vese(img: np.ndarray, params: ChanVeseParams = ChanVeseParams()) -> Iterator[np.ndarray]:
    """Yield the level set after each iteration (the array is updated in place)."""
    u = np.asarray(img, dtype=np.float64)
    if u.ndim != 2 or min(u.shape) < 3:
        raise ValueError("chan_vese needs a 2-D image of at least 3x3")
    phi = signed_distance(init_mask(u.shape, params.init_radius_fraction))
    c1 = c2 = float(u.mean())
    eps = params.epsilon
    for it in range(1, params.iterations + 1):
        inside = phi < 0
        n_in = int(inside.sum())
        if 0 < n_in:
            c1 = float(u[inside].sum() / n_in)
        if n_in < u.size:
            c2 = float(u[~inside].sum() / (u.size - n_in))
        delta = (eps / np.pi) / (eps * eps + phi * phi)
        # gradient flow of the energy with the interior at phi < 0
        force = params.mu * curvature(phi) + (u - c1) ** 2 - (u - c2) ** 2
        phi += params.dt * delta * force
        if params.reinit_every and it % params.reinit_every == 0:
            phi = signed_distance(phi < 0)
        yield phi


def chan_vese(img: np.ndarray, params: ChanVeseParams = ChanVeseParams()) -> np.ndarray:
    u = np.asarray(img, dtype=np.float64)
    if u.size and np.ptp(u) < 1e-12:
        return init_mask(u.shape, params.init_radius_fraction)
    phi = None
    for phi in iter_chan_vese(u, params):
        pass
    return phi < 0


def perimeter(mask: np.ndarray) -> int:
    """Number of 4-neighbour true/false transitions inside the image."""
    m = np.asarray(mask, dtype=bool)
    return int((m[1:, :] != m[:-1, :]).sum() + (m[:, 1:] != m[:, :-1]).sum())


def energy(img: np.ndarray, mask: np.ndarray, mu: float) -> float:
    u = np.asarray(img, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if u.shape != m.shape:
        raise ValueError("image and mask shapes differ")
    e = mu * perimeter(m)
    for region in (u[m], u[~m]):
        if region.size:
            e += float(((region - region.mean()) ** 2).sum())
    return e


def segment_lesion(img: np.ndarray, params: ChanVeseParams = ChanVeseParams()) -> np.ndarray:
    """Median filter, Chan-Vese, open, close, keep the largest component.

    Falls back to the initialisation disk if the chain leaves nothing.
    """
    u = np.asarray(img, dtype=np.float64)
    p = min(u.shape)
    filtered = imgproc.median_filter(u, imgproc.kernel_for(p, 5, odd=True))
    mask = chan_vese(filtered, params)
    se = imgproc.disk_offsets(imgproc.kernel_for(p, 3, odd=False))
    mask = imgproc.morph_close(imgproc.morph_open(mask, se), se)
    mask = imgproc.largest_component(mask)
    if not mask.any():
        return init_mask(u.shape, params.init_radius_fraction)
    return mask
