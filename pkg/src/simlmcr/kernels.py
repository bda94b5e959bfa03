"""Numerical primitives: DFT amplitude/phase split, dominant singular
triple, and non-negative least squares."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "SpectrumSplit",
    "Rank1Triple",
    "NnlsInfo",
    "ConstraintStageError",
    "ConvergenceError",
    "DegenerateFactorError",
    "dft_forward",
    "split_spectrum",
    "recombine_invert",
    "rank1_approx",
    "nnls",
    "fcnnls",
    "cls_step_C",
    "cls_step_S",
]

IMAG_RESIDUE_TOL = 1e-8
SIGMA_RTOL = 1e-12
POWER_MAX_ITER = 10_000


class ConstraintStageError(RuntimeError):
    """A frequency-domain reconstruction lost conjugate symmetry."""


class ConvergenceError(RuntimeError):
    pass


class DegenerateFactorError(ValueError):
    """The fixed factor in a CLS step has all-zero columns."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"all-zero factor columns: {self.columns}")


# -- Fourier ---------------------------------------------------------------


def dft_forward(signal, axis: int = 0) -> np.ndarray:
    """Unnormalized forward DFT along ``axis`` (inverse carries ``1/n``).

    Built from the half spectrum so the output is exactly conjugate
    symmetric; phases of tiny bins then stay consistent between ``f`` and
    ``n - f``.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.size == 0:
        raise ValueError("empty signal")
    if not np.all(np.isfinite(signal)):
        raise ValueError("non-finite input to dft_forward")
    n = signal.shape[axis]
    half = np.fft.rfft(signal, axis=axis)
    mirror = np.conj(np.flip(np.take(half, np.arange(1, n - n // 2), axis=axis), axis=axis))
    return np.concatenate([half, mirror], axis=axis)


@dataclass(frozen=True)
class SpectrumSplit:
    amplitude: np.ndarray
    phase: np.ndarray


def split_spectrum(spectrum) -> SpectrumSplit:
    """Split ``z`` into ``|z|`` and ``z/|z|``; phase is 1 where ``|z| = 0``."""
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    amplitude = np.abs(spectrum)
    phase = np.ones_like(spectrum)
    nz = amplitude > 0
    phase[nz] = spectrum[nz] / amplitude[nz]
    return SpectrumSplit(amplitude, phase)


def recombine_invert(sp: SpectrumSplit, axis: int = 0) -> np.ndarray:
    """Inverse DFT of ``amplitude * phase``, returning the real part.

    Raises ConstraintStageError when the imaginary residue exceeds
    ``1e-8 * max|real|`` along any transformed vector.
    """
    amplitude = np.asarray(sp.amplitude, dtype=np.float64)
    phase = np.asarray(sp.phase, dtype=np.complex128)
    if amplitude.shape != phase.shape:
        raise ValueError(f"shape mismatch {amplitude.shape} vs {phase.shape}")
    z = np.fft.ifft(amplitude * phase, axis=axis)
    real = z.real
    imag = np.abs(z.imag).max(axis=axis)
    scale = np.abs(real).max(axis=axis)
    # absolute floor keeps all-zero vectors from tripping the check
    floor = 1e-14 * np.abs(amplitude).max(axis=axis)
    bad = imag > IMAG_RESIDUE_TOL * scale + floor
    if np.any(bad):
        raise ConstraintStageError(
            f"imaginary residue {float(np.max(imag)):.3g} exceeds tolerance "
            f"(max |real| {float(np.max(scale)):.3g})"
        )
    return real


# -- dominant singular triple ----------------------------------------------


@dataclass(frozen=True)
class Rank1Triple:
    left: np.ndarray
    right: np.ndarray
    sigma: float
    iterations: int = 0

    def matrix(self) -> np.ndarray:
        return self.sigma * np.outer(self.left, self.right)


def rank1_approx(M, max_iter: int = POWER_MAX_ITER, rtol: float = SIGMA_RTOL) -> Rank1Triple:
    """Dominant singular triple of ``M`` by power iteration.

    The iteration runs on the smaller Gram matrix from the normalized
    all-ones start, so results are deterministic.  The sign is fixed so that
    ``sum(left) >= 0``.  For entrywise non-negative ``M`` both vectors come
    out non-negative; entries in ``[-1e-12, 0)`` are clipped and anything
    more negative raises.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("non-finite matrix")
    n, m = M.shape
    if not np.any(M):
        left = np.zeros(n)
        right = np.zeros(m)
        left[0] = right[0] = 1.0
        return Rank1Triple(left, right, 0.0, 0)

    transpose = n < m
    A = M.T if transpose else M
    G = A.T @ A  # small side
    v = np.full(G.shape[0], 1.0 / np.sqrt(G.shape[0]))
    lam = float(v @ G @ v)
    for it in range(1, max_iter + 1):
        w = G @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # start orthogonal to the range; restart from a canonical vector
            v = np.zeros_like(v)
            v[it % v.size] = 1.0
            continue
        v = w / norm
        lam_new = float(v @ G @ v)
        if abs(lam_new - lam) <= rtol * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    else:
        raise ConvergenceError(f"power iteration did not converge in {max_iter} steps")

    u = A @ v
    sigma = float(np.linalg.norm(u))
    u = u / sigma
    left, right = (v, u) if transpose else (u, v)
    if left.sum() < 0:
        left, right = -left, -right
    if np.all(M >= 0):
        left = _perron_clip(left)
        right = _perron_clip(right)
    return Rank1Triple(left, right, sigma, it)


def _perron_clip(x: np.ndarray) -> np.ndarray:
    if x.min() < -1e-12:
        raise ConvergenceError(f"non-negative matrix gave singular vector entry {x.min():.3g}")
    return np.where(x < 0, 0.0, x)


# -- non-negative least squares --------------------------------------------


@dataclass
class NnlsInfo:
    iterations: int = 0
    rank_deficient: bool = False
    kkt_violation: float = 0.0


def nnls(A, b, max_iter: Optional[int] = None, return_info: bool = False):
    """Solve ``min ||A x - b||`` subject to ``x >= 0`` (Lawson-Hanson).

    Passive-set sub-problems are solved with ``lstsq`` so a rank-deficient
    passive set yields the minimum-norm solution; this is recorded in the
    returned info.  KKT tolerance is ``1e-10 * ||A^T b||_inf``.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).ravel()
    if A.ndim != 2 or A.shape[0] != b.shape[0]:
        raise ValueError(f"incompatible shapes {A.shape} and {b.shape}")
    m, n = A.shape
    if max_iter is None:
        max_iter = 3 * n + 30
    info = NnlsInfo()
    tol = 1e-10 * max(np.abs(A.T @ b).max(initial=0.0), np.finfo(float).tiny)

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = A.T @ b
    while not passive.all() and np.max(np.where(passive, -np.inf, w)) > tol:
        if info.iterations >= max_iter:
            log.warning("nnls stopped at iteration limit")
            break
        info.iterations += 1
        passive[np.argmax(np.where(passive, -np.inf, w))] = True
        while True:
            z = np.zeros(n)
            z[passive], _, rank, _ = np.linalg.lstsq(A[:, passive], b, rcond=None)
            if rank < passive.sum():
                info.rank_deficient = True
            if np.all(z[passive] > 0):
                x = z
                break
            neg = passive & (z <= 0)
            ratio = np.full(n, np.inf)
            ratio[neg] = x[neg] / (x[neg] - z[neg])
            alpha = ratio.min()
            x = x + alpha * (z - x)
            passive &= (ratio > alpha) & (x > 0)
            x[~passive] = 0.0
            if not passive.any():
                break
        w = A.T @ (b - A @ x)
    info.kkt_violation = float(np.max(np.where(passive, np.abs(w), w), initial=0.0))
    x[x < 0] = 0.0
    return (x, info) if return_info else x


def _passive_solve(G: np.ndarray, B: np.ndarray, P: np.ndarray, info: Optional[NnlsInfo] = None):
    """Solve ``G[p, p] x_p = B[p, c]`` for every column ``c`` with passive set ``p = P[:, c]``.

    Columns sharing a passive pattern are solved together.
    """
    n, k = B.shape
    X = np.zeros((n, k))
    if k == 0:
        return X
    codes = (P.astype(np.int64) * (1 << np.arange(n, dtype=np.int64))[:, None]).sum(axis=0)
    for code in np.unique(codes):
        cols = np.flatnonzero(codes == code)
        p = P[:, cols[0]]
        if not p.any():
            continue
        Gp = G[np.ix_(p, p)]
        rhs = B[np.ix_(p, cols)]
        try:
            sol = np.linalg.solve(Gp, rhs)
            if not np.all(np.isfinite(sol)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(Gp, rhs, rcond=None)[0]
            if info is not None:
                info.rank_deficient = True
        X[np.ix_(p, cols)] = sol
    return X


def fcnnls(G, B, passive=None, max_iter: Optional[int] = None, return_info: bool = False):
    """Many NNLS problems sharing one normal-equations matrix.

    Solves ``min_x ||A x - b_c||`` for every column ``b_c`` given only
    ``G = A^T A`` and ``B = A^T [b_1 ... b_k]``.  Columns are grouped by
    passive set (fast combinatorial active-set method).

    Parameters
    ----------
    G : ndarray, shape (n, n)
    B : ndarray, shape (n, k)
    passive : ndarray of bool, shape (n, k), optional
        Warm-start passive sets, typically from the previous ALS iteration.

    Returns
    -------
    X : ndarray, shape (n, k)
        Non-negative solutions.
    P : ndarray of bool, shape (n, k)
        Final passive sets, suitable as the next warm start.
    """
    G = np.asarray(G, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if B.ndim == 1:
        B = B[:, None]
    n, k = B.shape
    if G.shape != (n, n):
        raise ValueError(f"G shape {G.shape} incompatible with B shape {B.shape}")
    if max_iter is None:
        max_iter = 3 * n + 30
    info = NnlsInfo()
    tol = 1e-10 * np.maximum(np.abs(B).max(axis=0), np.finfo(float).tiny)

    if passive is None:
        P = np.ones((n, k), dtype=bool)
    else:
        P = np.array(passive, dtype=bool, copy=True)
        if P.shape != (n, k):
            P = np.ones((n, k), dtype=bool)
    X = _passive_solve(G, B, P, info)
    # make the start feasible: drop variables that came out non-positive
    for _ in range(n + 1):
        bad = P & (X <= 0)
        if not bad.any():
            break
        cols = np.flatnonzero(bad.any(axis=0))
        P[:, cols] &= ~bad[:, cols]
        X[:, cols] = _passive_solve(G, B[:, cols], P[:, cols], info)
    X[~P] = 0.0

    W = B - G @ X
    todo = np.flatnonzero((np.where(P, -np.inf, W) > tol).any(axis=0))
    it = 0
    while todo.size:
        it += 1
        if it > max_iter * max(1, n):
            log.warning("fcnnls stopped at iteration limit with %d open columns", todo.size)
            break
        # add the most promising inactive variable to each open column
        Wt = np.where(P[:, todo], -np.inf, W[:, todo])
        P[np.argmax(Wt, axis=0), todo] = True
        Z = _passive_solve(G, B[:, todo], P[:, todo], info)
        # inner loop: step back toward feasibility
        for _ in range(n + 1):
            Pt = P[:, todo]
            infeasible = Pt & (Z <= 0)
            open_cols = np.flatnonzero(infeasible.any(axis=0))
            if open_cols.size == 0:
                break
            cols = todo[open_cols]
            Xc = X[:, cols]
            Zc = Z[:, open_cols]
            neg = infeasible[:, open_cols]
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(neg, Xc / (Xc - Zc), np.inf)
            alpha = np.min(ratio, axis=0)
            Xc = Xc + alpha * (Zc - Xc)
            Pc = P[:, cols] & (Xc > 0) & (ratio > alpha)
            P[:, cols] = Pc
            Xc[~Pc] = 0.0
            X[:, cols] = Xc
            Z[:, open_cols] = _passive_solve(G, B[:, cols], Pc, info)
        X[:, todo] = np.where(P[:, todo], Z, 0.0)
        W[:, todo] = B[:, todo] - G @ X[:, todo]
        still = (np.where(P[:, todo], -np.inf, W[:, todo]) > tol[todo]).any(axis=0)
        todo = todo[still]
    info.iterations = it
    X[X < 0] = 0.0
    if return_info:
        return X, P, info
    return X, P


def _check_fixed(F: np.ndarray) -> None:
    zero = np.flatnonzero(~np.any(F, axis=0))
    if zero.size:
        raise DegenerateFactorError(zero)


def cls_step_C(X, S, passive=None, return_passive: bool = False):
    """Non-negative regression of ``X`` on fixed spectra ``S`` (rows of C).

    ``X`` may be an AugmentedMatrix or a plain ``(IKL, J)`` array.
    """
    Xv = getattr(X, "values", X)
    S = np.asarray(S, dtype=np.float64)
    if Xv.shape[1] != S.shape[0]:
        raise ValueError(f"X has {Xv.shape[1]} columns but S has {S.shape[0]} rows")
    _check_fixed(S)
    Ct, P = fcnnls(S.T @ S, S.T @ Xv.T, None if passive is None else passive.T)
    return (Ct.T, P.T) if return_passive else Ct.T


def cls_step_S(X, C, passive=None, return_passive: bool = False):
    """Non-negative regression of ``X`` on fixed profiles ``C`` (rows of S)."""
    Xv = getattr(X, "values", X)
    C = np.asarray(C, dtype=np.float64)
    if Xv.shape[0] != C.shape[0]:
        raise ValueError(f"X has {Xv.shape[0]} rows but C has {C.shape[0]} rows")
    _check_fixed(C)
    St, P = fcnnls(C.T @ C, C.T @ Xv, None if passive is None else passive.T)
    return (St.T, P.T) if return_passive else St.T
