"""Linear algebra for matrices of the form ``U U^T + diag(d)``.

Everything here works on D x L and L x L arrays only, so solves, sampling
factors, log-determinants and traces cost O(D L^2) time and O(D L) memory.
The one randomized routine, :func:`fast_eig`, takes the target matrix as a
set of columns ``c_j`` and never forms ``sum_j c_j c_j^T``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg as sla

from .errors import ConfigError, NumericError

__all__ = [
    "LowRankDiagMatrix",
    "EigPair",
    "woodbury_solve",
    "symmetric_factor_apply",
    "sample",
    "fast_eig",
    "diag_of_outer",
    "logdet_and_trace_inverse",
    "as_generator",
]


def _frozen(a, ndim):
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise ConfigError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def as_generator(seed) -> np.random.Generator:
    """Return ``seed`` if it is already a Generator, else build one from it."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class LowRankDiagMatrix:
    """Symmetric positive-definite matrix ``U U^T + diag(d)``.

    Parameters
    ----------
    u_factors : ndarray, shape (D, L)
        Low-rank factor. ``L = 0`` gives a pure diagonal matrix.
    diag : ndarray, shape (D,)
        Strictly positive diagonal part.
    """

    u_factors: np.ndarray
    diag: np.ndarray

    def __post_init__(self):
        d = _frozen(self.diag, 1)
        u = np.asarray(self.u_factors, dtype=np.float64)
        if u.ndim == 1 and u.size == 0:
            u = u.reshape(d.shape[0], 0)
        u = _frozen(u, 2)
        if u.shape[0] != d.shape[0]:
            raise ConfigError(f"u_factors has {u.shape[0]} rows but diag has length {d.shape[0]}")
        if u.shape[1] > u.shape[0]:
            raise ConfigError(f"rank {u.shape[1]} exceeds dimension {u.shape[0]}")
        if not np.all(np.isfinite(d)) or not np.all(np.isfinite(u)):
            raise NumericError("non-finite entries in low-rank-plus-diagonal matrix")
        if not np.all(d > 0):
            raise NumericError(f"diagonal must be strictly positive (min {d.min():.3e})")
        object.__setattr__(self, "diag", d)
        object.__setattr__(self, "u_factors", u)

    @classmethod
    def isotropic(cls, dim: int, value: float, rank: int = 0) -> "LowRankDiagMatrix":
        """``value * I`` carried with ``rank`` zero columns in ``U``."""
        return cls(np.zeros((dim, rank)), np.full(dim, float(value)))

    @property
    def dim(self) -> int:
        return self.diag.shape[0]

    @property
    def rank(self) -> int:
        return self.u_factors.shape[1]

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64)
        u = self.u_factors
        if x.ndim == 1:
            return self.diag * x + u @ (u.T @ x)
        return self.diag[:, None] * x + u @ (u.T @ x)

    def to_dense(self) -> np.ndarray:
        u = self.u_factors
        return u @ u.T + np.diag(self.diag)


@dataclass(frozen=True)
class EigPair:
    """Top eigenpairs: orthonormal ``vectors`` (D x L), ``values`` sorted descending."""

    vectors: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vectors", _frozen(self.vectors, 2))
        object.__setattr__(self, "values", _frozen(self.values, 1))

    def scaled_vectors(self) -> np.ndarray:
        """``Q diag(values)^{1/2}``, the factor whose outer product is the approximation."""
        return self.vectors * np.sqrt(self.values)[None, :]


def _cholesky(mat, what):
    try:
        return sla.cholesky(mat, lower=True)
    except (sla.LinAlgError, ValueError) as exc:
        raise NumericError(f"Cholesky factorization of {what} failed: {exc}") from exc


def woodbury_solve(a: LowRankDiagMatrix, g) -> np.ndarray:
    """Solve ``(U U^T + D) x = g`` via the Woodbury identity.

    ``g`` may be a vector of length D or a D x k block of right-hand sides.
    The only factorization is of the L x L capacitance ``I + U^T D^{-1} U``.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.shape[0] != a.dim:
        raise ConfigError(f"right-hand side has leading size {g.shape[0]}, expected {a.dim}")
    d_inv = 1.0 / a.diag
    dg = d_inv * g if g.ndim == 1 else d_inv[:, None] * g
    if a.rank == 0:
        return dg
    u = a.u_factors
    capacitance = np.eye(a.rank) + u.T @ (d_inv[:, None] * u)
    chol = _cholesky(capacitance, "I + U^T D^-1 U")
    inner = sla.cho_solve((chol, True), u.T @ dg)
    correction = u @ inner
    if g.ndim == 1:
        return dg - d_inv * correction
    return dg - d_inv[:, None] * correction


def _drop_zero_columns(u):
    # Exactly-zero columns add nothing to U U^T but make V^T V singular.
    keep = np.any(u != 0.0, axis=0)
    return u if keep.all() else u[:, keep]


def symmetric_factor_apply(a: LowRankDiagMatrix, eps) -> np.ndarray:
    """Apply a factor ``F`` with ``F F^T = (U U^T + D)^{-1}`` to ``eps``.

    With ``V = D^{-1/2} U``, ``A = chol(V^T V)``, ``B = chol(I + A^T A)`` and
    ``C = A^{-T} (B - I) A^{-1}``, the matrix ``W = I + V C V^T`` satisfies
    ``W W^T = I + V V^T``, so ``F = D^{-1/2} W^{-T}``.  ``W^{-T}`` is applied
    with Woodbury as ``I - V K V^T`` where ``K = (C^{-T} + V^T V)^{-1}``.

    ``eps`` is a length-D vector or a D x S block (one column per draw).
    Columns of ``U`` that are exactly zero are ignored; any other linear
    dependence among the columns raises :class:`NumericError`.
    """
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape[0] != a.dim:
        raise ConfigError(f"eps has leading size {eps.shape[0]}, expected {a.dim}")
    inv_sqrt_d = 1.0 / np.sqrt(a.diag)
    scale = inv_sqrt_d if eps.ndim == 1 else inv_sqrt_d[:, None]
    u = _drop_zero_columns(a.u_factors)
    if u.shape[1] == 0:
        return scale * eps
    ell = u.shape[1]
    eye = np.eye(ell)
    v = inv_sqrt_d[:, None] * u
    vtv = v.T @ v
    chol_a = _cholesky(vtv, "V^T V (columns of U are linearly dependent)")
    chol_b = _cholesky(eye + chol_a.T @ chol_a, "I + A^T A")
    # C^{-T} = A (B - I)^{-T} A^T
    b_minus_i = chol_b - eye
    c_inv_t = chol_a @ sla.solve_triangular(b_minus_i, chol_a.T, lower=True, trans="T")
    k_inv = c_inv_t + vtv
    try:
        proj = np.linalg.solve(k_inv, v.T @ eps)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"inner solve in symmetric factor failed: {exc}") from exc
    return scale * (eps - v @ proj)


def sample(mean, a: LowRankDiagMatrix, rng_seed=None, n_samples=None, noise=None) -> np.ndarray:
    """Draw from ``N(mean, (U U^T + D)^{-1})``.

    Parameters
    ----------
    mean : ndarray, shape (D,)
    a : LowRankDiagMatrix
        Precision of the Gaussian.
    rng_seed : int, SeedSequence, Generator or None
        Source of the standard-normal noise; the same seed gives the same draw.
    n_samples : int, optional
        If given, return an ``(n_samples, D)`` array instead of one vector.
    noise : ndarray, optional
        Pre-drawn standard-normal noise (shape (D,) or (D, S)); bypasses the
        generator. Mainly useful in tests.
    """
    mean = np.asarray(mean, dtype=np.float64)
    if mean.shape != (a.dim,):
        raise ConfigError(f"mean has shape {mean.shape}, expected ({a.dim},)")
    if not np.all(np.isfinite(mean)):
        raise NumericError("mean contains non-finite entries")
    if noise is None:
        rng = as_generator(rng_seed)
        shape = (a.dim,) if n_samples is None else (a.dim, n_samples)
        noise = rng.standard_normal(shape)
    noise = np.asarray(noise, dtype=np.float64)
    y = symmetric_factor_apply(a, noise)
    if y.ndim == 1:
        return mean + y
    return mean[None, :] + y.T


def _as_column_matrix(columns) -> np.ndarray:
    if isinstance(columns, np.ndarray):
        cols = np.asarray(columns, dtype=np.float64)
        if cols.ndim == 1:
            cols = cols[:, None]
        return cols
    seq: Sequence = list(columns)
    if not seq:
        raise ConfigError("fast_eig needs at least one column")
    return np.column_stack([np.asarray(c, dtype=np.float64) for c in seq])


def fast_eig(columns, l: int, oversample: int = 2, power_iters: int = 3, rng=None) -> EigPair:
    """Randomized top-``l`` eigendecomposition of ``sum_j c_j c_j^T``.

    Parameters
    ----------
    columns : ndarray of shape (D, n), or a sequence of length-D vectors
        The target matrix is the Gram ``C C^T`` of these columns. To
        represent ``w1 * A A^T + w2 * B B^T`` pass ``sqrt(w1) A`` and
        ``sqrt(w2) B`` side by side.
    l : int
        Number of eigenpairs, ``0 <= l <= min(D, n)``.
    oversample : int
        Extra test vectors; the sketch has width ``min(l + oversample, D, n)``.
    power_iters : int
        QR-stabilized subspace iterations.
    rng : seed or Generator
        Source of the Gaussian test matrix.

    Returns
    -------
    EigPair
        If ``l`` exceeds the numerical rank, trailing values are ~0 and the
        matching vectors are an arbitrary orthonormal completion.
    """
    cols = _as_column_matrix(columns)
    dim, n = cols.shape
    if l < 0 or l > min(dim, n):
        raise ConfigError(f"rank l={l} must lie in [0, min(D={dim}, n={n})]")
    if l == 0:
        return EigPair(np.zeros((dim, 0)), np.zeros(0))
    if oversample < 0 or power_iters < 0:
        raise ConfigError("oversample and power_iters must be nonnegative")
    width = min(l + oversample, dim, n)
    gen = as_generator(rng)
    omega = gen.standard_normal((dim, width))
    basis, _ = np.linalg.qr(cols @ (cols.T @ omega))
    for _ in range(power_iters):
        basis, _ = np.linalg.qr(cols @ (cols.T @ basis))
    projected = basis.T @ cols
    small = projected @ projected.T
    evals, evecs = np.linalg.eigh(small)
    order = np.argsort(evals)[::-1][:l]
    values = np.clip(evals[order], 0.0, None)
    vectors, r = np.linalg.qr(basis @ evecs[:, order])
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return EigPair(vectors * signs[None, :], values)


def diag_of_outer(u) -> np.ndarray:
    """``diag(U U^T)``, i.e. the row-wise sum of squares of ``U``."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 1:
        return u * u
    return np.einsum("ij,ij->i", u, u)


def logdet_and_trace_inverse(a: LowRankDiagMatrix):
    """Return ``(log det(U U^T + D), tr((U U^T + D)^{-1}))``.

    Uses the matrix determinant lemma and the Woodbury form of the inverse.
    """
    d_inv = 1.0 / a.diag
    logdet = float(np.sum(np.log(a.diag)))
    trace_inv = float(np.sum(d_inv))
    if a.rank == 0:
        return logdet, trace_inv
    w = d_inv[:, None] * a.u_factors
    capacitance = np.eye(a.rank) + a.u_factors.T @ w
    chol = _cholesky(capacitance, "I + U^T D^-1 U")
    logdet += 2.0 * float(np.sum(np.log(np.diag(chol))))
    trace_inv -= float(np.trace(sla.cho_solve((chol, True), w.T @ w)))
    return logdet, trace_inv
