"""Per-image feature cache keyed by a content hash of (image bytes, extractor config[, mask])."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import matrixio
from .config import Config
from .dataset import CaseRecord, resolve_path
from .features_haar import LocalFeatureSet, extract_haar_features
from .features_sift import extract_dense_rootsift
from .imgproc import load_gray, load_mask
from .segmentation import segment_lesion


def extractor_config(pipeline: str, config: Config) -> dict:
    if pipeline == "baseline":
        return {"extractor": "haar", "haar": config.to_dict()["haar"],
                "segmentation": config.to_dict()["segmentation"]}
    if pipeline == "bossanova":
        return {"extractor": "dense_rootsift", "sift": config.to_dict()["sift"]}
    raise ValueError(f"pipeline {pipeline!r} has no image feature extractor")


def cache_key(image_bytes: bytes, extractor: dict, mask_bytes: bytes | None = None) -> str:
    h = hashlib.sha256()
    h.update(image_bytes)
    h.update(json.dumps(extractor, sort_keys=True).encode())
    if mask_bytes is not None:
        h.update(b"mask")
        h.update(mask_bytes)
    return h.hexdigest()[:32]


def save_features(path, fs: LocalFeatureSet, extra: dict) -> None:
    side = dict(extra, centers=fs.centers.astype(int).tolist(), image_shape=list(fs.image_shape))
    matrixio.write_matrix(path, fs.descriptors, side)


def load_features(path) -> LocalFeatureSet:
    side = matrixio.read_sidecar(path)
    desc = matrixio.read_matrix(path).astype(np.float64)
    return LocalFeatureSet(desc, np.array(side["centers"], dtype=np.float64).reshape(-1, 2),
                           tuple(side["image_shape"]))


def mask_filename(image_path: str) -> str:
    return image_path.replace("\\", "/").replace("/", "__").rsplit(".", 1)[0] + ".png"


def extract_one(pipeline: str, record: CaseRecord, manifest_path, config: Config, cache_dir,
                masks_dir=None) -> Path:
    """Compute (or reuse) the cached features of one image; returns the cache file path."""
    img_path = resolve_path(manifest_path, record.image_path)
    image_bytes = img_path.read_bytes()
    extractor = extractor_config(pipeline, config)
    mask = None
    mask_bytes = None
    if pipeline == "baseline" and masks_dir is not None:
        mpath = Path(masks_dir) / mask_filename(record.image_path)
        mask_bytes = mpath.read_bytes()
        mask = load_mask(mpath)
    out = Path(cache_dir) / f"{pipeline}-{cache_key(image_bytes, extractor, mask_bytes)}.bin"
    if out.exists() and matrixio.sidecar_path(out).exists():
        return out
    img = load_gray(img_path)
    if pipeline == "baseline":
        if mask is None:
            mask = segment_lesion(img, config.segmentation.params())
        fs = extract_haar_features(img, mask, config.haar.spec())
    else:
        fs = extract_dense_rootsift(img, config.sift.spec())
    Path(cache_dir).mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".tmp")
    save_features(tmp, fs, {"image_path": record.image_path, "extractor": extractor})
    matrixio.sidecar_path(tmp).replace(matrixio.sidecar_path(out))
    tmp.replace(out)
    return out


def _extract_job(args):
    return extract_one(*args)


def extract_all(pipeline: str, records, manifest_path, config: Config, cache_dir, masks_dir=None,
                threads: int = 1) -> dict:
    """image_path -> LocalFeatureSet, filling the cache as needed."""
    jobs = [(pipeline, r, manifest_path, config, cache_dir, masks_dir) for r in records]
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=threads) as pool:
            paths = list(pool.map(_extract_job, jobs))
    else:
        paths = [_extract_job(j) for j in jobs]
    return {r.image_path: load_features(p) for r, p in zip(records, paths)}
