"""Baseline local features: 20-d Haar-wavelet statistics on mask-restricted patches."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_S = 1.0 / np.sqrt(2.0)


@dataclass(frozen=True)
class PatchGridSpec:
    step: int = 10
    side: int = 24
    levels: int = 3

    def __post_init__(self):
        if self.step < 1:
            raise ValueError("step must be >= 1")
        if self.side % (2 ** self.levels):
            raise ValueError(f"side {self.side} is not divisible by 2**{self.levels}")


@dataclass
class LocalFeatureSet:
    """Per-image local descriptors with their patch centres (x, y)."""

    descriptors: np.ndarray
    centers: np.ndarray
    image_shape: tuple = (0, 0)  # (height, width) of the image the centres refer to
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.descriptors = np.asarray(self.descriptors, dtype=np.float64)
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)
        if self.descriptors.ndim != 2:
            raise ValueError("descriptors must be a 2-D matrix")
        if len(self.descriptors) != len(self.centers):
            raise ValueError("descriptor and centre counts differ")

    def __len__(self):
        return len(self.descriptors)

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1]

    @classmethod
    def empty(cls, dim: int, image_shape=(0, 0)) -> "LocalFeatureSet":
        return cls(np.zeros((0, dim)), np.zeros((0, 2)), tuple(image_shape))


def grid_centers(height: int, width: int, side: int, step: int) -> tuple[np.ndarray, np.ndarray]:
    """Grid coordinates anchored at side/2 whose full side x side patch fits in the image."""
    half = side // 2
    xs = np.arange(half, width - (side - half) + 1, step)
    ys = np.arange(half, height - (side - half) + 1, step)
    return xs, ys


def sample_patch_centers(mask: np.ndarray, spec: PatchGridSpec = PatchGridSpec()) -> list[tuple[int, int]]:
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    xs, ys = grid_centers(h, w, spec.side, spec.step)
    return [(int(x), int(y)) for y in ys for x in xs if mask[y, x]]


def _analysis_step(a: np.ndarray):
    # rows (y) then columns (x); LH = low along y, high along x
    lo_y = (a[0::2, :] + a[1::2, :]) * _S
    hi_y = (a[0::2, :] - a[1::2, :]) * _S
    ll = (lo_y[:, 0::2] + lo_y[:, 1::2]) * _S
    lh = (lo_y[:, 0::2] - lo_y[:, 1::2]) * _S
    hl = (hi_y[:, 0::2] + hi_y[:, 1::2]) * _S
    hh = (hi_y[:, 0::2] - hi_y[:, 1::2]) * _S
    return ll, lh, hl, hh


def _synthesis_step(ll, lh, hl, hh) -> np.ndarray:
    h, w = ll.shape
    lo_y = np.empty((h, 2 * w))
    hi_y = np.empty((h, 2 * w))
    lo_y[:, 0::2] = (ll + lh) * _S
    lo_y[:, 1::2] = (ll - lh) * _S
    hi_y[:, 0::2] = (hl + hh) * _S
    hi_y[:, 1::2] = (hl - hh) * _S
    out = np.empty((2 * h, 2 * w))
    out[0::2, :] = (lo_y + hi_y) * _S
    out[1::2, :] = (lo_y - hi_y) * _S
    return out


def haar_dwt2(patch: np.ndarray, levels: int = 3) -> list[np.ndarray]:
    """Orthonormal 2-D Haar analysis.

    Returns ``[LH1, HL1, HH1, LH2, HL2, HH2, ..., LL_levels]`` (finest level first).
    """
    a = np.asarray(patch, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] % (2 ** levels) or a.shape[1] % (2 ** levels):
        raise ValueError(f"patch shape {a.shape} is not divisible by 2**{levels}")
    bands = []
    for _ in range(levels):
        a, lh, hl, hh = _analysis_step(a)
        bands.extend((lh, hl, hh))
    bands.append(a)
    return bands


def haar_idwt2(bands: list[np.ndarray]) -> np.ndarray:
    """Inverse of :func:`haar_dwt2`."""
    levels = (len(bands) - 1) // 3
    a = bands[-1]
    for lev in reversed(range(levels)):
        lh, hl, hh = bands[3 * lev: 3 * lev + 3]
        a = _synthesis_step(a, lh, hl, hh)
    return a


def haar_descriptor(patch: np.ndarray, levels: int = 3) -> np.ndarray:
    """Mean and population std of each sub-band, in :func:`haar_dwt2` order."""
    out = []
    for band in haar_dwt2(patch, levels):
        out.append(band.mean())
        out.append(band.std())
    return np.array(out)


def _batched_descriptors(patches: np.ndarray, levels: int) -> np.ndarray:
    # patches: (n, side, side); same arithmetic as haar_descriptor, vectorised
    n = len(patches)
    a = patches
    feats = []
    for _ in range(levels):
        lo_y = (a[:, 0::2, :] + a[:, 1::2, :]) * _S
        hi_y = (a[:, 0::2, :] - a[:, 1::2, :]) * _S
        ll = (lo_y[:, :, 0::2] + lo_y[:, :, 1::2]) * _S
        for band in (
            (lo_y[:, :, 0::2] - lo_y[:, :, 1::2]) * _S,
            (hi_y[:, :, 0::2] + hi_y[:, :, 1::2]) * _S,
            (hi_y[:, :, 0::2] - hi_y[:, :, 1::2]) * _S,
        ):
            flat = band.reshape(n, -1)
            feats.extend((flat.mean(axis=1), flat.std(axis=1)))
        a = ll
    flat = a.reshape(n, -1)
    feats.extend((flat.mean(axis=1), flat.std(axis=1)))
    return np.stack(feats, axis=1)


def extract_haar_features(img: np.ndarray, mask: np.ndarray,
                          spec: PatchGridSpec = PatchGridSpec()) -> LocalFeatureSet:
    img = np.asarray(img, dtype=np.float64)
    if img.shape != np.shape(mask):
        raise ValueError("image and mask shapes differ")
    dim = 2 * (3 * spec.levels + 1)
    centers = sample_patch_centers(mask, spec)
    if not centers:
        return LocalFeatureSet.empty(dim, img.shape)
    half = spec.side // 2
    patches = np.stack([img[y - half:y - half + spec.side, x - half:x - half + spec.side]
                        for x, y in centers])
    return LocalFeatureSet(_batched_descriptors(patches, spec.levels), np.array(centers), img.shape)
