import logging
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from lesionscreen import matrixio
from lesionscreen.dataset import CaseRecord, Manifest
from lesionscreen.external_features import (FeatureMatrixFile, MissingFeaturesError,
                                            join_with_manifest, l2_normalize, read_features,
                                            write_features)
from lesionscreen.matrixio import MagicMismatchError, MatrixFormatError, TruncatedPayloadError


def test_header_layout_by_hand():
    buf = matrixio.encode_matrix(np.array([[1.0, -2.0, 0.5]]))
    assert buf[:4] == b"MFV1"
    assert struct.unpack("<II", buf[4:12]) == (1, 3)
    assert np.frombuffer(buf[12:], "<f4").tolist() == [1.0, -2.0, 0.5]


@given(hnp.arrays(np.float32, st.tuples(st.integers(0, 6), st.integers(0, 9)),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_round_trip_is_bit_exact(m):
    back = matrixio.decode_matrix(matrixio.encode_matrix(m))
    assert back.shape == m.shape and back.dtype == np.float32
    assert back.tobytes() == m.astype("<f4").tobytes()


def test_zero_row_matrix_with_4096_cols(tmp_path):
    p = tmp_path / "empty.bin"
    matrixio.write_matrix(p, np.zeros((0, 4096)))
    assert p.stat().st_size == 12
    assert matrixio.read_matrix(p).shape == (0, 4096)


def test_magic_mismatch():
    buf = bytearray(matrixio.encode_matrix(np.ones((2, 2))))
    buf[:4] = b"MFV2"
    with pytest.raises(MagicMismatchError):
        matrixio.decode_matrix(bytes(buf))


@pytest.mark.parametrize("cut", [1, 4, 11, 13, 27])
def test_truncated(cut):
    buf = matrixio.encode_matrix(np.ones((2, 4)))
    with pytest.raises(TruncatedPayloadError):
        matrixio.decode_matrix(buf[:len(buf) - cut] if cut < len(buf) else b"")


def test_trailing_bytes_rejected():
    buf = matrixio.encode_matrix(np.ones((2, 2))) + b"\0"
    with pytest.raises(MatrixFormatError, match="trailing"):
        matrixio.decode_matrix(buf)


def test_non_2d_rejected():
    with pytest.raises(ValueError):
        matrixio.encode_matrix(np.ones(3))


def test_missing_sidecar(tmp_path):
    p = tmp_path / "m.bin"
    matrixio.write_matrix(p, np.ones((1, 1)))
    with pytest.raises(MatrixFormatError, match="sidecar"):
        matrixio.read_sidecar(p)


def test_l2_normalize_example():
    out = l2_normalize(np.array([[3.0, 4.0], [0.0, 0.0]]))
    assert np.allclose(out[0], [0.6, 0.8])
    assert np.array_equal(out[1], [0.0, 0.0])


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 8)),
                  elements=st.floats(-1e3, 1e3)))
def test_l2_normalize_unit_or_zero(m):
    n = np.linalg.norm(l2_normalize(m), axis=1)
    zero = np.linalg.norm(m, axis=1) == 0
    assert np.allclose(n[~zero], 1.0) and np.all(n[zero] == 0)


def _manifest(ids):
    return Manifest(tuple(
        CaseRecord(f"c{i}", p, "clinical", "melanoma" if i % 2 else "nevus", "low")
        for i, p in enumerate(ids)))


def test_feature_file_round_trip_and_join_order(tmp_path):
    ids = ("b.png", "a.png", "c.png")
    m = np.arange(12, dtype=np.float32).reshape(3, 4)
    write_features(tmp_path / "f.bin", FeatureMatrixFile(ids, m))
    fmf = read_features(tmp_path / "f.bin")
    assert fmf.ids == ids and np.array_equal(fmf.matrix, m)
    X, y, cases = join_with_manifest(fmf, _manifest(["c.png", "b.png"]))
    assert np.array_equal(X, m[[2, 0]])
    assert y.tolist() == [-1, 1]
    assert cases == ["c0", "c1"]


def test_join_names_missing_images():
    fmf = FeatureMatrixFile(("a.png",), np.zeros((1, 2), np.float32))
    with pytest.raises(MissingFeaturesError, match="x.png"):
        join_with_manifest(fmf, _manifest(["a.png", "x.png"]))


def test_id_count_mismatch(tmp_path):
    p = tmp_path / "f.bin"
    matrixio.write_matrix(p, np.zeros((2, 3)), {"ids": ["only-one"]})
    with pytest.raises(MatrixFormatError, match="1 ids"):
        read_features(p)


def test_duplicate_ids_rejected():
    with pytest.raises(MatrixFormatError, match="unique"):
        FeatureMatrixFile(("a", "a"), np.zeros((2, 2)))


def test_unexpected_dim_warns(tmp_path, caplog):
    p = tmp_path / "f.bin"
    write_features(p, FeatureMatrixFile(("a",), np.zeros((1, 10), np.float32)))
    with caplog.at_level(logging.WARNING):
        read_features(p)
    assert "expected 4096" in caplog.text
