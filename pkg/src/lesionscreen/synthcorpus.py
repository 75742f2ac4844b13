"""Deterministic synthetic lesion images with ground-truth masks.

The class signal is texture: positives carry a fine stripe pattern inside the
lesion, negatives are smooth. Difficulty tiers shrink the stripe contrast.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .dataset import CaseRecord, Manifest, write_manifest
from .imgproc import save_gray, save_mask

BACKGROUND = 0.75
SPECKLE_SIGMA = 0.05
POS_INTENSITY = 0.35
NEG_INTENSITY = 0.45
STRIPE_PERIOD = 4
STRIPE_CONTRAST = 0.3
TIER_CONTRAST = {"low": 0.4, "medium": 0.25, "high": 0.1}
DIFFICULTY_SHARES = (("low", 0.50), ("medium", 0.35), ("high", 0.15))
HAIR_FRACTION = 0.10
POS_DIAGNOSES = ("melanoma (superficial spreading)", "melanoma (nodular)", "melanoma in situ")
NEG_DIAGNOSES = ("clark nevus", "blue nevus", "seborrheic keratosis", "dermal nevus",
                 "dermatofibroma", "lentigo")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _ellipse(size: int, rng: np.random.Generator) -> np.ndarray:
    c = size / 2.0
    cx = c + rng.uniform(-0.08, 0.08) * size
    cy = c + rng.uniform(-0.08, 0.08) * size
    a = rng.uniform(0.15, 0.35) * size
    b = rng.uniform(0.15, 0.35) * size
    theta = rng.uniform(0, math.pi)
    y, x = np.mgrid[:size, :size].astype(np.float64)
    dx, dy = x - cx, y - cy
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _hair(img: np.ndarray, rng: np.random.Generator, strokes: int = 6) -> None:
    size = img.shape[0]
    t = np.linspace(0, 1, 4 * size)[:, None]
    for _ in range(strokes):
        p = rng.uniform(0, size, (3, 2))
        # quadratic Bezier
        pts = (1 - t) ** 2 * p[0] + 2 * (1 - t) * t * p[1] + t ** 2 * p[2]
        xs = np.clip(np.round(pts[:, 0]).astype(int), 0, size - 1)
        ys = np.clip(np.round(pts[:, 1]).astype(int), 0, size - 1)
        img[ys, xs] = 0.1
        img[ys, np.clip(xs + 1, 0, size - 1)] = 0.1


def gen_lesion_image(seed: int, cls: str, size: int = 128, difficulty: str = "low",
                     hair: bool = False, case_id: str | None = None):
    """Return (image, true_mask, record) for one synthetic case."""
    if size < 64:
        raise ValueError("size must be >= 64")
    if cls not in ("pos", "neg"):
        raise ValueError("cls must be 'pos' or 'neg'")
    rng = np.random.default_rng(seed)
    mask = _ellipse(size, rng)
    img = np.full((size, size), BACKGROUND)
    if cls == "pos":
        amp = 0.5 * STRIPE_CONTRAST * TIER_CONTRAST[difficulty] / TIER_CONTRAST["low"]
        theta = rng.uniform(0, math.pi)
        y, x = np.mgrid[:size, :size]
        phase = (x * math.cos(theta) + y * math.sin(theta)) / STRIPE_PERIOD
        stripes = np.where(np.mod(phase, 1.0) < 0.5, amp, -amp)
        img[mask] = POS_INTENSITY + stripes[mask]
        diagnosis = POS_DIAGNOSES[int(rng.integers(len(POS_DIAGNOSES)))]
    else:
        img[mask] = NEG_INTENSITY
        diagnosis = NEG_DIAGNOSES[int(rng.integers(len(NEG_DIAGNOSES)))]
    img += rng.normal(0.0, SPECKLE_SIGMA, img.shape)
    if hair:
        _hair(img, rng)
    img = np.clip(img, 0.0, 1.0)
    # store on the 256-level grid so PNG round trips are exact
    img = np.floor(img * 255.0 + 0.5) / 255.0
    cid = case_id or f"s{seed}"
    record = CaseRecord(
        case_id=cid,
        image_path=f"images/{cid}.png",
        modality="dermoscopic" if seed % 2 else "clinical",
        diagnosis=diagnosis,
        difficulty=difficulty,
        hair=hair,
    )
    return img, mask, record


def _shares(n: int) -> list[str]:
    counts = [round_half_up(n * f) for _, f in DIFFICULTY_SHARES[:-1]]
    counts.append(n - sum(counts))
    return [lvl for (lvl, _), c in zip(DIFFICULTY_SHARES, counts) for _ in range(c)]


def gen_corpus(n_cases: int, pos_fraction: float, seed: int, out_dir, size: int = 128) -> Manifest:
    """Write images/, truth/ and manifest.csv under ``out_dir``; one image per case."""
    if n_cases < 10:
        raise ValueError("n_cases must be >= 10")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "truth").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_pos = round_half_up(n_cases * pos_fraction)
    classes = ["pos"] * n_pos + ["neg"] * (n_cases - n_pos)
    difficulty = [_shares(n_pos)[i] for i in range(n_pos)] + _shares(n_cases - n_pos)
    hair = np.zeros(n_cases, dtype=bool)
    hair[rng.permutation(n_cases)[:round_half_up(n_cases * HAIR_FRACTION)]] = True
    order = rng.permutation(n_cases)
    image_seeds = rng.integers(0, 2 ** 31 - 1, size=n_cases)
    records = []
    for k, i in enumerate(order):
        cid = f"case{k:04d}"
        img, mask, rec = gen_lesion_image(int(image_seeds[k]), classes[i], size,
                                          difficulty[i], bool(hair[k]), case_id=cid)
        save_gray(img, out / rec.image_path)
        save_mask(mask, out / "truth" / f"{cid}.png")
        records.append(rec)
    manifest = Manifest(tuple(records))
    write_manifest(manifest, out / "manifest.csv")
    return manifest
