"""Feature side of the transfer-learning path: externally computed deep features
(e.g. 4096-d penultimate-layer activations) in, aligned l2-normalised rows out."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import matrixio
from .dataset import Manifest, derive_label

log = logging.getLogger(__name__)

EXPECTED_DIM = 4096


class MissingFeaturesError(LookupError):
    pass


@dataclass(frozen=True)
class FeatureMatrixFile:
    ids: tuple
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        if len(self.ids) != len(self.matrix):
            raise matrixio.MatrixFormatError(
                f"{len(self.ids)} ids for a matrix with {len(self.matrix)} rows")
        if len(set(self.ids)) != len(self.ids):
            raise matrixio.MatrixFormatError("feature ids are not unique")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def read_features(path) -> FeatureMatrixFile:
    matrix = matrixio.read_matrix(path)
    side = matrixio.read_sidecar(path)
    ids = side.get("ids")
    if ids is None:
        raise matrixio.MatrixFormatError(f"{path}: sidecar has no 'ids'")
    if len(ids) != len(matrix):
        raise matrixio.MatrixFormatError(
            f"{path}: sidecar lists {len(ids)} ids but the matrix has {len(matrix)} rows")
    fmf = FeatureMatrixFile(tuple(ids), matrix)
    if fmf.dim != EXPECTED_DIM and len(matrix):
        log.warning("%s: feature dim %d (expected %d)", path, fmf.dim, EXPECTED_DIM)
    return fmf


def write_features(path, fmf: FeatureMatrixFile) -> None:
    matrixio.write_matrix(path, fmf.matrix, {"ids": list(fmf.ids), "dim": int(fmf.matrix.shape[1])})


def l2_normalize(matrix: np.ndarray) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return np.divide(m, norms, out=m.copy(), where=norms > 0)


def join_with_manifest(fmf: FeatureMatrixFile, manifest: Manifest):
    """Rows in manifest order with +/-1 labels and case ids."""
    row_of = {k: i for i, k in enumerate(fmf.ids)}
    missing = [r.image_path for r in manifest.records if r.image_path not in row_of]
    if missing:
        raise MissingFeaturesError(f"no features for {len(missing)} image(s): {', '.join(missing)}")
    idx = [row_of[r.image_path] for r in manifest.records]
    X = fmf.matrix[idx].astype(np.float64)
    y = np.array([derive_label(r) for r in manifest.records], dtype=np.int64)
    cases = [r.case_id for r in manifest.records]
    return X, y, cases
