"""Run configuration: JSON with every tunable default, plus a stable hash."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace

from .features_haar import PatchGridSpec
from .features_sift import DenseSiftSpec
from .midlevel import BossaParams
from .segmentation import ChanVeseParams
from .svm import GridSpec


@dataclass(frozen=True)
class SegmentationConfig:
    mu: float = 0.25
    iterations: int = 2000
    init_radius_fraction: float = 0.25
    dt: float = 0.5
    epsilon: float = 1.0
    reinit_every: int = 50

    def params(self) -> ChanVeseParams:
        return ChanVeseParams(**asdict(self))


@dataclass(frozen=True)
class HaarConfig:
    step: int = 10
    side: int = 24
    levels: int = 3

    def spec(self) -> PatchGridSpec:
        return PatchGridSpec(**asdict(self))


@dataclass(frozen=True)
class SiftConfig:
    step: int = 8
    patch_sizes: tuple = (12, 26, 58, 128)
    sparsify_threshold: float = 0.0025
    max_pixels: int = 100_000

    def spec(self) -> DenseSiftSpec:
        return DenseSiftSpec(**asdict(self))


@dataclass(frozen=True)
class BaselineConfig:
    k: int = 200
    kmeans_max_iter: int = 1000
    sample_cap: int = 1_000_000


@dataclass(frozen=True)
class BossaNovaConfig:
    k: int = 2048
    pca_dims: int = 64
    sample_cap: int = 500_000
    B: int = 4
    lambda_min: float = 0.6
    lambda_max: float = 1.6
    s: float = 1e-3

    def params(self) -> BossaParams:
        return BossaParams(self.B, self.lambda_min, self.lambda_max, self.s)


@dataclass(frozen=True)
class SvmConfig:
    class_weighting: bool = True
    inner_folds: int = 5
    tol: float = 1e-3
    rbf_C_log2: tuple = tuple(range(-5, 16, 2))
    rbf_gamma_log2: tuple = tuple(range(-15, 4, 2))
    linear_C_log10: tuple = tuple(range(-4, 4))

    def rbf_grid(self) -> GridSpec:
        return GridSpec(tuple(2.0 ** c for c in self.rbf_C_log2),
                        tuple(2.0 ** g for g in self.rbf_gamma_log2), self.inner_folds)

    def linear_grid(self) -> GridSpec:
        return GridSpec(tuple(10.0 ** c for c in self.linear_C_log10), (), self.inner_folds)


@dataclass(frozen=True)
class Config:
    seed: int = 0
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    haar: HaarConfig = field(default_factory=HaarConfig)
    sift: SiftConfig = field(default_factory=SiftConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    bossanova: BossaNovaConfig = field(default_factory=BossaNovaConfig)
    svm: SvmConfig = field(default_factory=SvmConfig)
    roc_grid: int = 101

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def override(self, **sections) -> "Config":
        """``override(seed=3, bossanova={"k": 64})``"""
        return _merge(self, sections)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _merge(base, updates: dict, where: str = "config"):
    known = {f.name: f for f in fields(base)}
    changes = {}
    for key, value in updates.items():
        if key not in known:
            raise ValueError(f"{where}: unknown key {key!r}")
        current = getattr(base, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ValueError(f"{where}.{key}: expected an object")
            changes[key] = _merge(current, value, f"{where}.{key}")
        elif isinstance(current, tuple):
            changes[key] = tuple(value)
        else:
            changes[key] = type(current)(value) if current is not None else value
    return replace(base, **changes)


def load_config(path=None) -> Config:
    if path is None:
        return Config()
    with open(path, encoding="utf-8") as fh:
        return _merge(Config(), json.load(fh))


def desk_config(**sections) -> Config:
    """Desk-scale settings for the synthetic corpus: small codebooks and budgets."""
    base = Config().override(baseline={"k": 50}, bossanova={"k": 64})
    return base.override(**sections)
