import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from manifold_dwi import Volume
from manifold_dwi._validation import (
    check_mask,
    check_sym_matrices,
    check_volume_array,
    full9_to_mat,
    mat_to_sym6,
    sym6_to_mat,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


@given(arrays(float, (4, 6), elements=finite))
def test_sym6_round_trip(s):
    m = sym6_to_mat(s)
    assert np.array_equal(m, np.swapaxes(m, -1, -2))
    assert np.array_equal(mat_to_sym6(m), s)


def test_sym6_layout():
    m = sym6_to_mat([1, 2, 3, 4, 5, 6])
    assert np.array_equal(m, [[1, 2, 3], [2, 4, 5], [3, 5, 6]])


def test_full9_is_row_major():
    assert np.array_equal(full9_to_mat(np.arange(9.0)), np.arange(9.0).reshape(3, 3))


def test_check_sym_matrices_rejects():
    with pytest.raises(ValueError, match="non-finite"):
        check_sym_matrices(np.full((3, 3), np.nan))
    with pytest.raises(ValueError, match="shape"):
        check_sym_matrices(np.eye(2))
    with pytest.raises(ValueError, match="not symmetric"):
        check_sym_matrices([[1, 2, 0], [0, 1, 0], [0, 0, 1]])


def test_volume_array_and_mask_shapes():
    assert check_volume_array(np.zeros((2, 3, 4))).shape == (2, 3, 4, 1)
    with pytest.raises(ValueError):
        check_volume_array(np.zeros((2, 3)))
    assert check_mask(np.ones((2, 2, 2, 1))).shape == (2, 2, 2)
    with pytest.raises(ValueError):
        check_mask(np.ones((2, 2)))


def test_volume_container():
    v = Volume(np.zeros((2, 3, 4)))
    assert v.shape == (2, 3, 4) and v.channels == 1 and v.space == "scalar"
    assert np.allclose(v.spacing, 1.0)
    assert Volume(np.zeros((2, 2, 2, 15)), space="sh").channels == 15
    with pytest.raises(ValueError, match="SH basis size"):
        Volume(np.zeros((2, 2, 2, 10)), space="sh")
    with pytest.raises(ValueError, match="needs"):
        Volume(np.zeros((2, 2, 2, 5)), space="tensor")
    with pytest.raises(ValueError, match="unknown volume space"):
        Volume(np.zeros((2, 2, 2)), space="rgb")
    with pytest.raises(ValueError, match="invertible"):
        Volume(np.zeros((2, 2, 2)), affine=np.zeros((4, 4)))
    with pytest.raises(ValueError, match="expected a scalar"):
        Volume(np.zeros((2, 2, 2, 6)), space="tensor").scalar()
