"""The three classification pipelines, each split into a train-only ``fit``
and a ``decision`` step so the harness can enforce fold separation.

Every fitting stage first calls ``guard.check(stage, ids)`` with the image ids
whose data it is about to consume.
"""
from __future__ import annotations

import numpy as np

from . import midlevel, svm
from .config import Config
from .external_features import l2_normalize
from .features_haar import LocalFeatureSet


class Pipeline:
    name = "abstract"
    kernel = "rbf"

    def __init__(self, config: Config):
        self.config = config
        self.model: svm.SvmModel | None = None
        self.selection: dict = {}

    # subclasses turn per-image features into mid-level vectors
    def fit_midlevel(self, ids, feats, guard, seed: int) -> None:
        pass

    def encode(self, feats) -> np.ndarray:
        raise NotImplementedError

    def fit(self, ids: list[str], feats: list, y: np.ndarray, guard, seed: int) -> None:
        seeds = np.random.SeedSequence(seed).generate_state(3)
        self.fit_midlevel(ids, feats, guard, int(seeds[0]))
        X = self.encode(feats)
        scfg = self.config.svm
        grid = scfg.rbf_grid() if self.kernel == "rbf" else scfg.linear_grid()
        guard.check("grid_search", ids)
        C, gamma, cv_auc = svm.grid_search_auc(X, y, grid, self.kernel, int(seeds[1]),
                                               scfg.class_weighting)
        kern = svm.KernelSpec("rbf", gamma) if self.kernel == "rbf" else svm.KernelSpec("linear")
        guard.check("svm", ids)
        self.model = svm.train_svc(X, y, C, kern, scfg.class_weighting, scfg.tol)
        self.selection = {"C": C, "gamma": gamma, "cv_auc": cv_auc}

    def decision(self, feats: list) -> np.ndarray:
        return svm.decision_values(self.model, self.encode(feats))

    def artifacts(self) -> dict:
        """name -> (matrix, sidecar dict) for everything learned in ``fit``."""
        m = self.model
        out = {
            "svm": (m.support_vectors, {
                "kernel": m.kernel.kind, "gamma": m.kernel.gamma if m.kernel.kind == "rbf" else None,
                "C": m.C, "bias": m.bias, "class_weights": list(m.class_weights),
                "dual_coefs": m.dual_coefs.tolist(), "cv_auc": self.selection.get("cv_auc"),
            }),
        }
        out.update(self.midlevel_artifacts())
        return out

    def midlevel_artifacts(self) -> dict:
        return {}


class BaselinePipeline(Pipeline):
    """Haar features -> z-norm -> k-means codebook -> hard assignment + sum pooling -> RBF SVM."""

    name = "baseline"

    def fit_midlevel(self, ids, feats, guard, seed):
        cfg = self.config.baseline
        pooled = np.concatenate([f.descriptors for f in feats])
        guard.check("znorm", ids)
        self.znorm = midlevel.fit_znorm(pooled)
        sample = midlevel.subsample(self.znorm.apply(pooled), cfg.sample_cap, seed)
        guard.check("kmeans", ids)
        self.codebook = midlevel.kmeans(sample, cfg.k, cfg.kmeans_max_iter, seed)

    def encode(self, feats):
        return np.stack([midlevel.classical_encode(self.znorm.apply(f.descriptors), self.codebook)
                         for f in feats])

    def midlevel_artifacts(self):
        return {
            "codebook": (self.codebook.centroids, {"k": self.codebook.k}),
            "znorm": (np.stack([self.znorm.mean, self.znorm.std]), {"rows": ["mean", "std"]}),
        }


class BossaNovaPipeline(Pipeline):
    """RootSIFT -> PCA(64) -> random codebook -> BossaNova + 1x1/2x2 pyramid -> RBF SVM."""

    name = "bossanova"

    def fit_midlevel(self, ids, feats, guard, seed):
        cfg = self.config.bossanova
        s_sample, s_code = np.random.SeedSequence(seed).generate_state(2)
        guard.check("subsample", ids)
        sample = midlevel.subsample([f.descriptors for f in feats], cfg.sample_cap, int(s_sample))
        guard.check("pca", ids)
        self.pca = midlevel.fit_pca(sample, cfg.pca_dims)
        projected = midlevel.apply_pca(self.pca, sample)
        guard.check("codebook", ids)
        cb = midlevel.random_codebook(projected, cfg.k, int(s_code))
        guard.check("sigma", ids)
        self.codebook = midlevel.with_sigma(cb, projected)
        self.params = cfg.params()

    def encode(self, feats):
        rows = []
        for f in feats:
            proj = LocalFeatureSet(midlevel.apply_pca(self.pca, f.descriptors) if len(f)
                                   else np.zeros((0, self.pca.basis.shape[0])),
                                   f.centers, f.image_shape)
            rows.append(midlevel.spatial_pyramid_encode(proj, self.codebook, self.params, f.image_shape))
        return np.stack(rows)

    def midlevel_artifacts(self):
        p = self.params
        side = {"k": self.codebook.k, "B": p.B, "lambda_min": p.lambda_min,
                "lambda_max": p.lambda_max, "s": p.s}
        return {
            "pca": (np.vstack([self.pca.mean[None, :], self.pca.basis]), {"rows": "mean, then basis"}),
            "codebook": (self.codebook.centroids, side),
            "sigma": (self.codebook.sigma[None, :], side),
        }


class ExternalPipeline(Pipeline):
    """Externally extracted deep features -> l2 normalisation -> linear SVM."""

    name = "external"
    kernel = "linear"

    def encode(self, feats):
        return l2_normalize(np.stack([np.asarray(f, dtype=np.float64) for f in feats]))


PIPELINES = {
    "baseline": BaselinePipeline,
    "bossanova": BossaNovaPipeline,
    "external": ExternalPipeline,
}


def make_pipeline(name: str, config: Config) -> Pipeline:
    try:
        return PIPELINES[name](config)
    except KeyError:
        raise ValueError(f"unknown pipeline {name!r}; expected one of {', '.join(PIPELINES)}") from None
