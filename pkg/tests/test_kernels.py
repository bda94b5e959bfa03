import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import gaussian, naive_dft, nnls_enumeration
from simlmcr.kernels import (
    ConstraintStageError,
    DegenerateFactorError,
    SpectrumSplit,
    cls_step_C,
    cls_step_S,
    dft_forward,
    fcnnls,
    nnls,
    rank1_approx,
    recombine_invert,
    split_spectrum,
)

# -- Fourier -----------------------------------------------------------------


def test_dft_constant_and_impulse():
    np.testing.assert_allclose(dft_forward([1, 1, 1, 1]), [4, 0, 0, 0], atol=1e-15)
    np.testing.assert_allclose(dft_forward([1, 0, 0, 0]), [1, 1, 1, 1], atol=1e-15)


@pytest.mark.parametrize("n", [1, 2, 3, 7, 8, 31, 64])
def test_dft_vs_naive_oracle(n, rng):
    x = rng.normal(size=n)
    assert np.max(np.abs(dft_forward(x) - naive_dft(x))) < 1e-12


def test_dft_along_axis(rng):
    M = rng.normal(size=(6, 3))
    out = dft_forward(M, axis=0)
    for c in range(3):
        np.testing.assert_allclose(out[:, c], naive_dft(M[:, c]), atol=1e-12)


def test_dft_exact_conjugate_symmetry(rng):
    for n in (5, 6):
        z = dft_forward(rng.normal(size=n))
        np.testing.assert_array_equal(z[1:], np.conj(z[1:][::-1]))


def test_dft_rejects_non_finite():
    with pytest.raises(ValueError):
        dft_forward([1.0, np.inf])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 64), st.integers(0, 2**31))
def test_parseval(n, seed):
    x = np.random.default_rng(seed).normal(size=n)
    z = dft_forward(x)
    np.testing.assert_allclose(np.sum(np.abs(z) ** 2), n * np.sum(x ** 2), rtol=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 64), st.integers(0, 10**6), st.integers(0, 2**31))
def test_amplitude_shift_invariance(n, s, seed):
    x = np.random.default_rng(seed).normal(size=n)
    a0 = split_spectrum(dft_forward(x)).amplitude
    a1 = split_spectrum(dft_forward(np.roll(x, s))).amplitude
    np.testing.assert_allclose(a1, a0, rtol=0, atol=1e-12 * max(1.0, a0.max()))


def test_split_shifted_impulse_and_zero():
    x = np.zeros(8)
    x[3] = 1.0
    sp = split_spectrum(dft_forward(x))
    np.testing.assert_allclose(sp.amplitude, 1.0, atol=1e-15)
    z = split_spectrum(np.zeros(5, dtype=complex))
    np.testing.assert_array_equal(z.amplitude, 0.0)
    np.testing.assert_array_equal(z.phase, 1.0)
    np.testing.assert_allclose(np.abs(split_spectrum(dft_forward([1.0, 2, 0, -1])).phase), 1.0, atol=1e-15)


def test_split_recombine_complex_roundtrip(rng):
    z = rng.normal(size=16) + 1j * rng.normal(size=16)
    sp = split_spectrum(z)
    np.testing.assert_allclose(sp.amplitude * sp.phase, z, rtol=0, atol=1e-14)


def test_recombine_roundtrip(rng):
    x = rng.normal(size=33)
    np.testing.assert_allclose(recombine_invert(split_spectrum(dft_forward(x))), x, atol=1e-12)


def test_recombine_moves_gaussian_to_shifted_phase():
    t = np.arange(64.0)
    g = gaussian(t, 20, 3)
    shifted = np.roll(g, 9)
    amp = split_spectrum(dft_forward(g)).amplitude
    phase = split_spectrum(dft_forward(shifted)).phase
    np.testing.assert_allclose(recombine_invert(SpectrumSplit(amp, phase)), shifted, atol=1e-12)


def test_recombine_zero_and_asymmetric():
    np.testing.assert_array_equal(recombine_invert(SpectrumSplit(np.zeros(6), np.ones(6, complex))), 0.0)
    amp = np.ones(4)
    phase = np.array([1, 1j, 1, 1], dtype=complex)  # breaks conjugate symmetry
    with pytest.raises(ConstraintStageError):
        recombine_invert(SpectrumSplit(amp, phase))
    with pytest.raises(ValueError):
        recombine_invert(SpectrumSplit(np.ones(3), np.ones(4, complex)))


# -- rank-1 ------------------------------------------------------------------


def test_rank1_exact_outer_product(rng):
    u, v = rng.uniform(0.1, 1, 5), rng.uniform(0.1, 1, 4)
    t = rank1_approx(np.outer(u, v))
    np.testing.assert_allclose(t.left, u / np.linalg.norm(u), atol=1e-12)
    np.testing.assert_allclose(t.right, v / np.linalg.norm(v), atol=1e-12)
    np.testing.assert_allclose(t.sigma, np.linalg.norm(u) * np.linalg.norm(v), rtol=1e-12)


def test_rank1_diagonal():
    t = rank1_approx(np.diag([2.0, 1.0]))
    np.testing.assert_allclose(t.left, [1, 0], atol=1e-6)
    np.testing.assert_allclose(t.right, [1, 0], atol=1e-6)
    np.testing.assert_allclose(t.sigma, 2.0, rtol=1e-10)


def test_rank1_zero_matrix():
    t = rank1_approx(np.zeros((3, 2)))
    assert t.sigma == 0.0
    np.testing.assert_array_equal(t.left, [1, 0, 0])
    np.testing.assert_array_equal(t.right, [1, 0])


def _eig_oracle(M):
    w, V = np.linalg.eigh(M.T @ M)
    v = V[:, -1]
    u = M @ v
    return np.sqrt(max(w[-1], 0.0)), u / np.linalg.norm(u), v


def test_rank1_vs_eigen_oracle(rng):
    M = rng.uniform(size=(5, 4))
    t = rank1_approx(M)
    sigma, u, v = _eig_oracle(M)
    assert abs(t.sigma - sigma) < 1e-10
    assert abs(t.left @ u) > 1 - 1e-10
    assert abs(t.right @ v) > 1 - 1e-10
    assert np.all(t.left >= 0) and np.all(t.right >= 0)
    np.testing.assert_allclose(np.linalg.norm(t.left), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(t.right), 1.0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31), st.booleans())
def test_rank1_sigma_property(n, m, seed, nonneg):
    g = np.random.default_rng(seed)
    M = g.uniform(size=(n, m)) if nonneg else g.normal(size=(n, m))
    s = np.linalg.svd(M, compute_uv=False)
    if s.size > 1 and s[1] > 0.999 * s[0]:
        return  # near-tied leading pair: power iteration is slow, not wrong
    t = rank1_approx(M)
    assert abs(t.sigma - s[0]) < 1e-10 * max(1.0, s[0])
    assert t.left.sum() >= 0


# -- NNLS --------------------------------------------------------------------


def test_nnls_trivial_cases():
    np.testing.assert_allclose(nnls(np.eye(2), [1.0, 2.0]), [1, 2], atol=1e-14)
    np.testing.assert_array_equal(nnls(np.array([[1.0], [1.0]]), [-1.0, -1.0]), [0.0])


def _kkt(A, b, x):
    g = A.T @ (b - A @ x)  # negative gradient / 2
    tol = 1e-10 * max(np.abs(A.T @ b).max(), 1e-300) * 10
    act = x == 0
    assert np.all(g[act] <= tol)
    assert np.all(np.abs(g[~act]) <= tol * 1e3)


@pytest.mark.parametrize("seed", range(40))
def test_nnls_vs_enumeration(seed):
    g = np.random.default_rng(seed)
    m, n = g.integers(1, 7), g.integers(1, 7)
    A = g.normal(size=(m, n))
    b = g.normal(size=m)
    x, info = nnls(A, b, return_info=True)
    _, obj = nnls_enumeration(A, b)
    r = A @ x - b
    assert np.all(x >= 0)
    assert abs(float(r @ r) - obj) < 1e-10 * max(1.0, obj)
    # never worse than zero or clipped unconstrained least squares
    ls = np.maximum(np.linalg.lstsq(A, b, rcond=None)[0], 0)
    assert r @ r <= b @ b + 1e-12
    assert r @ r <= np.sum((A @ ls - b) ** 2) + 1e-12


def test_nnls_random_4x3_kkt(rng):
    A = rng.normal(size=(4, 3))
    b = rng.normal(size=4)
    x = nnls(A, b)
    _kkt(A, b, x)


def test_nnls_duplicate_columns():
    A = np.array([[1.0, 1.0], [1.0, 1.0], [0, 0]])
    x = nnls(A, np.array([1.0, 1.0, 0.0]))
    np.testing.assert_allclose(A @ x, [1, 1, 0], atol=1e-12)
    assert np.all(x >= 0)


def test_fcnnls_rank_deficient_flagged():
    A = np.array([[1.0, 1.0], [1.0, 1.0], [0, 0]])
    b = np.array([[1.0], [1.0], [0.0]])
    X, P, info = fcnnls(A.T @ A, A.T @ b, return_info=True)
    assert info.rank_deficient
    np.testing.assert_allclose(A @ X[:, 0], b[:, 0], atol=1e-12)
    assert np.all(X >= 0)


def test_nnls_matches_scipy(rng):
    from scipy.optimize import nnls as sp_nnls

    for _ in range(20):
        A = rng.normal(size=(12, 5))
        b = rng.normal(size=12)
        ref, _ = sp_nnls(A, b)
        np.testing.assert_allclose(nnls(A, b), ref, atol=1e-9)


@pytest.mark.parametrize("seed", range(25))
def test_fcnnls_vs_enumeration(seed):
    g = np.random.default_rng(seed)
    m, n, k = g.integers(1, 7), g.integers(1, 6), g.integers(1, 8)
    A = g.normal(size=(m, n))
    Bm = g.normal(size=(m, k))
    warm = g.random((n, k)) > 0.5 if seed % 2 else None
    X, P = fcnnls(A.T @ A, A.T @ Bm, warm)
    assert X.shape == (n, k) and P.shape == (n, k)
    assert np.all(X >= 0)
    for c in range(k):
        _, obj = nnls_enumeration(A, Bm[:, c])
        r = A @ X[:, c] - Bm[:, c]
        assert abs(float(r @ r) - obj) < 1e-9 * max(1.0, obj)


def test_fcnnls_warm_start_invariance(rng):
    A = rng.uniform(size=(30, 4))
    Bm = rng.uniform(size=(30, 50))
    X0, P0 = fcnnls(A.T @ A, A.T @ Bm)
    X1, _ = fcnnls(A.T @ A, A.T @ Bm, P0)
    X2, _ = fcnnls(A.T @ A, A.T @ Bm, ~P0)
    np.testing.assert_allclose(X1, X0, atol=1e-10)
    np.testing.assert_allclose(X2, X0, atol=1e-10)


def test_cls_exact_model(rng):
    c = rng.uniform(0.1, 1, size=(7, 1))
    s = rng.uniform(0.1, 1, size=(5, 1))
    X = c @ s.T
    np.testing.assert_allclose(cls_step_C(X, s), c, atol=1e-10)
    np.testing.assert_allclose(cls_step_S(X, c), s, atol=1e-10)


def test_cls_negative_row_is_zero(rng):
    s = rng.uniform(0.1, 1, size=(5, 1))
    X = rng.uniform(size=(3, 1)) @ s.T
    X[1] = -s[:, 0]
    C = cls_step_C(X, s)
    assert np.all(C[1] == 0)


def test_cls_rowwise_vs_enumeration(rng):
    X = rng.normal(size=(6, 4))
    S = rng.uniform(size=(4, 2))
    C = cls_step_C(X, S)
    for row in range(6):
        _, obj = nnls_enumeration(S, X[row])
        r = S @ C[row] - X[row]
        assert abs(r @ r - obj) < 1e-10
    Cfix = rng.uniform(size=(6, 2))
    St = cls_step_S(X, Cfix)
    for col in range(4):
        _, obj = nnls_enumeration(Cfix, X[:, col])
        r = Cfix @ St[col] - X[:, col]
        assert abs(r @ r - obj) < 1e-10


def test_cls_does_not_increase_loss(rng):
    X = rng.uniform(size=(20, 8))
    S = rng.uniform(size=(8, 3))
    C_old = rng.uniform(size=(20, 3))
    C = cls_step_C(X, S)
    assert np.sum((X - C @ S.T) ** 2) <= np.sum((X - C_old @ S.T) ** 2)


def test_cls_degenerate_factor():
    with pytest.raises(DegenerateFactorError) as err:
        cls_step_C(np.ones((3, 2)), np.array([[1.0, 0.0], [1.0, 0.0]]))
    assert err.value.columns == [1]
    with pytest.raises(ValueError):
        cls_step_S(np.ones((3, 2)), np.ones((4, 1)))
