import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from simlmcr.tensor import (
    AugmentedMatrix,
    ComponentProfile,
    DimensionError,
    Gc2Dataset,
    augment,
    canonical_row,
    mode1_matrix_as_profile,
    mode2_matrix_as_vector,
    profile_as_mode1_matrix,
    read_container,
    unaugment,
    vector_as_mode2_matrix,
    write_container,
    write_csv,
)

small_dims = st.tuples(*[st.integers(1, 4)] * 4)


def test_single_element():
    mat = augment(Gc2Dataset(np.full((1, 1, 1, 1), 3.5)))
    assert mat.values.shape == (1, 1)
    assert mat.values[0, 0] == 3.5


def test_index_arithmetic_oracle():
    data = np.zeros((2, 2, 1, 1))
    for i in range(2):
        for k in range(2):
            data[i, k, 0, 0] = 10 * i + k
    col = augment(Gc2Dataset(data)).values[:, 0]
    # i fastest, then k
    np.testing.assert_array_equal(col, [0, 10, 1, 11])


def test_random_tensor_elementwise(rng):
    data = rng.normal(size=(3, 4, 2, 5))
    mat = augment(Gc2Dataset(data))
    for i in range(3):
        for k in range(4):
            for l in range(2):
                np.testing.assert_array_equal(mat.values[canonical_row(i, k, l, (3, 4, 2))], data[i, k, l])


def test_full_scale_shape():
    ds = Gc2Dataset(np.zeros((20, 200, 10, 761)))
    assert augment(ds).values.shape == (40_000, 761)


def test_single_sample_layout(rng):
    data = rng.normal(size=(3, 5, 1, 4))
    mat = augment(Gc2Dataset(data))
    # with L = 1 the rows are the I x K raster with i fastest
    np.testing.assert_array_equal(mat.values, data[:, :, 0].transpose(1, 0, 2).reshape(15, 4))


@settings(max_examples=40, deadline=None)
@given(small_dims, st.integers(0, 2**31))
def test_roundtrip_property(dims, seed):
    data = np.random.default_rng(seed).normal(size=dims)
    ds = Gc2Dataset(data)
    mat = augment(ds)
    back = unaugment(mat)
    assert back == ds
    np.testing.assert_allclose(np.sum(mat.values ** 2), np.sum(data ** 2), rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.tuples(*[st.integers(1, 5)] * 3), st.integers(0, 2**31))
def test_profile_reshapes_roundtrip(dims, seed):
    I, K, L = dims
    v = np.random.default_rng(seed).normal(size=I * K * L)
    M = profile_as_mode1_matrix(ComponentProfile(v, dims))
    assert M.shape == (I, K * L)
    np.testing.assert_array_equal(mode1_matrix_as_profile(M, dims), v)
    w = np.random.default_rng(seed + 1).normal(size=K * L)
    M2 = vector_as_mode2_matrix(w, K, L)
    np.testing.assert_array_equal(mode2_matrix_as_vector(M2), w)
    np.testing.assert_allclose(np.sum(M ** 2), np.sum(v ** 2), rtol=1e-12)


def test_mode1_matrix_oracle():
    M = profile_as_mode1_matrix(ComponentProfile(np.arange(1.0, 7.0), (2, 3, 1)))
    expect = np.empty((2, 3))
    for i in range(2):
        for k in range(3):
            expect[i, k] = 1 + canonical_row(i, k, 0, (2, 3, 1))
    np.testing.assert_array_equal(M, expect)
    assert profile_as_mode1_matrix(ComponentProfile([2.0], (1, 1, 1))).shape == (1, 1)


def test_mode2_matrix_columns_are_samples():
    K, L = 3, 2
    v = np.arange(K * L, dtype=float)
    M = vector_as_mode2_matrix(v, K, L)
    for l in range(L):
        np.testing.assert_array_equal(M[:, l], v[l * K:(l + 1) * K])


def test_mode1_columns_are_first_dimension_profiles(rng):
    data = rng.normal(size=(3, 4, 2, 1))
    v = augment(Gc2Dataset(data)).values[:, 0]
    M = profile_as_mode1_matrix(ComponentProfile(v, (3, 4, 2)))
    np.testing.assert_array_equal(M[:, 1 + 4 * 1], data[:, 1, 1, 0])


def test_validation_errors():
    with pytest.raises(DimensionError):
        Gc2Dataset(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        Gc2Dataset(np.full((1, 1, 1, 2), np.nan))
    with pytest.raises(DimensionError):
        Gc2Dataset(np.zeros((2, 1, 1, 1)), rt1=[0.0])
    with pytest.raises(DimensionError):
        AugmentedMatrix(np.zeros((3, 2)), (2, 1, 1, 2))
    with pytest.raises(DimensionError):
        ComponentProfile(np.zeros(5), (2, 2, 1))
    with pytest.raises(DimensionError):
        vector_as_mode2_matrix(np.zeros(5), 2, 2)
    with pytest.raises(DimensionError):
        mode1_matrix_as_profile(np.zeros((2, 3)), (2, 2, 2))
    with pytest.raises(OverflowError):
        AugmentedMatrix(np.zeros((1, 1)), (2**31, 2**31, 2**31, 1))


def test_immutable():
    ds = Gc2Dataset(np.zeros((1, 1, 1, 2)))
    with pytest.raises(ValueError):
        ds.data[0, 0, 0, 0] = 1.0


def test_container_roundtrip(tmp_path, rng):
    data = rng.normal(size=(2, 3, 2, 4))
    mat = augment(Gc2Dataset(data))
    p = tmp_path / "x.tensor"
    write_container(p, mat.values, mat.dims)
    header, _, payload = p.read_bytes().partition(b"\n")
    assert json.loads(header) == {"dims": [2, 3, 2, 4], "order": "ikl-row-major", "dtype": "f64le"}
    assert len(payload) == data.size * 8
    # first record: (i,k,l) = (0,0,0), then i advances
    first = np.frombuffer(payload[:64], dtype="<f8")
    np.testing.assert_array_equal(first[:4], data[0, 0, 0])
    np.testing.assert_array_equal(first[4:], data[1, 0, 0])
    back = read_container(p)
    assert back.dims == (2, 3, 2, 4)
    np.testing.assert_array_equal(back.values, mat.values)


def test_container_rejects_truncated(tmp_path):
    p = tmp_path / "bad.tensor"
    write_container(p, np.ones((2, 1)), (2, 1, 1, 1))
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(ValueError):
        read_container(p)
    p.write_bytes(b"not json\n")
    with pytest.raises(ValueError):
        read_container(p)


def test_csv_export(tmp_path):
    data = np.arange(8.0).reshape(2, 2, 1, 2)
    p = tmp_path / "x.csv"
    write_csv(p, Gc2Dataset(data))
    lines = p.read_text().splitlines()
    assert lines[0] == "i,k,l,ch0,ch1"
    assert len(lines) == 5
    i, k, l, *vals = lines[2].split(",")
    assert (i, k, l) == ("1", "0", "0")
    np.testing.assert_array_equal([float(v) for v in vals], data[1, 0, 0])
