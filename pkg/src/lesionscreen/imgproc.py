"""Raster primitives shared by both BoVW pipelines.

Gray images are 2-D float64 arrays with values in [0, 1] (row = y, column = x).
Masks are 2-D boolean arrays of the same shape.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

# 8-connectivity
_EIGHT = np.ones((3, 3), dtype=bool)


def to_grayscale(rgb) -> np.ndarray:
    """Convert an 8-bit RGB (or already single-channel) array to 256-level gray in [0, 1]."""
    arr = np.asarray(rgb)
    if arr.ndim == 2:
        luma = arr.astype(np.float64)
    elif arr.ndim == 3 and arr.shape[2] in (3, 4):
        rgbf = arr[..., :3].astype(np.float64)
        luma = rgbf @ np.array(LUMA_WEIGHTS)
    else:
        raise ValueError(f"unsupported image shape {arr.shape}; expected HxW or HxWx3")
    # round half up, matching round(76.245) = 76 and keeping values on the 256-level grid
    return np.clip(np.floor(luma + 0.5), 0, 255) / 255.0


def load_gray(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return to_grayscale(np.asarray(im))


def save_gray(img: np.ndarray, path) -> None:
    q = np.clip(np.floor(np.asarray(img) * 255.0 + 0.5), 0, 255).astype(np.uint8)
    Image.fromarray(q, mode="L").save(path)


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def save_mask(mask: np.ndarray, path) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(Path(path))


def resize_to_area(img: np.ndarray, max_pixels: int) -> np.ndarray:
    """Bilinearly downscale so that width*height <= max_pixels; smaller images pass through."""
    if max_pixels < 1:
        raise ValueError("max_pixels must be >= 1")
    h, w = img.shape
    if h * w <= max_pixels:
        return img
    s = math.sqrt(max_pixels / (h * w))
    nh, nw = max(1, int(h * s)), max(1, int(w * s))
    # a side clamped up to 1 pixel must not push the area over the budget
    if nh == 1:
        nw = min(nw, max_pixels)
    if nw == 1:
        nh = min(nh, max_pixels)
    # pixel-centre alignment
    ys = (np.arange(nh) + 0.5) * (h / nh) - 0.5
    xs = (np.arange(nw) + 0.5) * (w / nw) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    out = ndimage.map_coordinates(img, [yy, xx], order=1, mode="nearest")
    return np.clip(out, 0.0, 1.0)


def median_filter(img: np.ndarray, kernel: int) -> np.ndarray:
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"median kernel must be odd and >= 1, got {kernel}")
    if kernel == 1:
        return img.copy()
    return ndimage.median_filter(img, size=kernel, mode="nearest")


def kernel_for(p: int, factor: float, odd: bool = True) -> int:
    """Scale ``factor * p / 256`` to an integer size.

    ``odd=True`` gives a median kernel (even results are bumped up by one);
    ``odd=False`` gives a disk radius clamped to at least 1.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    k = int(math.floor(factor * p / 256.0 + 0.5))
    if odd and k % 2 == 0:
        k += 1
    return max(k, 1)


def disk_offsets(radius: int) -> np.ndarray:
    """Flat disk structuring element as a (2r+1)x(2r+1) boolean footprint."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    r = np.arange(-radius, radius + 1)
    return (r[:, None] ** 2 + r[None, :] ** 2) <= radius * radius


def _padded(op, mask: np.ndarray, se: np.ndarray) -> np.ndarray:
    # out-of-bounds is background; padding by the SE radius makes the finite
    # canvas behave like the infinite plane for both erosion and dilation
    r = se.shape[0] // 2
    m = np.pad(np.asarray(mask, dtype=bool), r, constant_values=False)
    out = op(m, se)
    return out[r:r + mask.shape[0], r:r + mask.shape[1]]


def _open(m, se):
    return ndimage.binary_dilation(ndimage.binary_erosion(m, se, border_value=0), se)


def _close(m, se):
    return ndimage.binary_erosion(ndimage.binary_dilation(m, se), se, border_value=0)


def morph_open(mask: np.ndarray, se: np.ndarray) -> np.ndarray:
    return _padded(_open, mask, se)


def morph_close(mask: np.ndarray, se: np.ndarray) -> np.ndarray:
    return _padded(_close, mask, se)


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Keep the largest 8-connected component.

    Ties go to the component whose first pixel in raster order comes first,
    which is the lowest label assigned by ``ndimage.label``.
    """
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n <= 1:
        return mask.copy()
    sizes = np.bincount(labels.ravel())[1:]
    keep = int(np.argmax(sizes)) + 1
    return labels == keep


def n_components(mask: np.ndarray) -> int:
    return int(ndimage.label(np.asarray(mask, dtype=bool), structure=_EIGHT)[1])


def disk_mask(width: int, height: int, radius: float) -> np.ndarray:
    if radius < 1:
        raise ValueError("radius must be >= 1")
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    y = np.arange(height)[:, None]
    x = np.arange(width)[None, :]
    return (x - cx) ** 2 + (y - cy) ** 2 <= radius * radius
