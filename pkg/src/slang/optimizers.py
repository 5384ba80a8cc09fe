"""Natural-gradient variational optimizers for Gaussian posteriors.

All methods share one update skeleton: refresh the posterior precision from
per-example gradients (or Hessians), then move the mean along the
precision-preconditioned gradient of the regularized negative
log-likelihood with heavy-ball momentum.

* :func:`slang_step` keeps the precision as ``U U^T + diag(d)`` of rank L.
* :func:`vogn_full_step` / :func:`von_full_step` keep a dense precision and
  use the empirical Fisher / exact Hessian.
* :func:`mean_field_step` keeps only a diagonal.
* :func:`online_eig_step` is the moving-average low-rank variant.

Per-example gradients come as ``(M, D)`` for one posterior draw or
``(S, M, D)`` for S draws. Curvature from several draws is averaged as
``(N / (M S)) sum_{s,i} g_si g_si^T``; every draw contributes its own
columns to the eigendecomposition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np
from scipy import linalg as sla

from . import linalg as la
from .errors import ConfigError, DivergenceError, NumericError
from .models import DENSE_LIMIT, Dataset, LogisticRegression, logistic_hessian_weights, per_example_grads

__all__ = [
    "OptimizerConfig",
    "GaussianState",
    "DenseState",
    "HessianFactors",
    "METHODS",
    "lr_schedule",
    "slang_step",
    "vogn_full_step",
    "von_full_step",
    "mean_field_step",
    "online_eig_step",
    "init_state",
    "draw_parameters",
    "fit",
    "full_gaussian_reference",
]

METHODS = ("slang", "slang-online-eig", "vogn-full", "von-full", "mean-field-ef", "mean-field-hessian")

# stream identifiers for counter-based random streams
_STREAM_BATCH = 0
_STREAM_SAMPLE = 1
_STREAM_EIG = 2


@dataclass(frozen=True)
class OptimizerConfig:
    """Hyperparameters shared by every optimizer.

    ``beta0`` defaults to ``alpha0``. With ``decay`` on, both learning rates
    follow ``rate0 / (1 + t ** decay_exponent)``.
    """

    prior_precision: float
    n_total: int
    rank: int = 1
    batch_size: int = 32
    alpha0: float = 0.05
    beta0: float | None = None
    decay: bool = True
    decay_exponent: float = 0.51
    momentum: float = 0.9
    mc_samples: int = 12
    seed: int = 0
    oversample: int = 2
    power_iters: int = 3

    def __post_init__(self):
        if self.beta0 is None:
            object.__setattr__(self, "beta0", self.alpha0)
        if not self.prior_precision > 0:
            raise ConfigError("prior_precision must be > 0")
        if self.rank < 0:
            raise ConfigError("rank must be >= 0")
        if self.batch_size < 1 or self.n_total < 1:
            raise ConfigError("batch_size and n_total must be >= 1")
        if not (self.alpha0 > 0 and self.beta0 > 0):
            raise ConfigError("learning rates must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.mc_samples < 1:
            raise ConfigError("mc_samples must be >= 1")
        if self.decay_exponent < 0:
            raise ConfigError("decay_exponent must be >= 0")

    def rates(self, step: int):
        return (lr_schedule(self.alpha0, step, self.decay_exponent, self.decay),
                lr_schedule(self.beta0, step, self.decay_exponent, self.decay))

    def stream(self, kind: int, counter: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, kind, counter])


@dataclass(frozen=True)
class GaussianState:
    """Posterior ``N(mean, precision^{-1})`` with structured precision."""

    mean: np.ndarray
    precision: la.LowRankDiagMatrix
    momentum_buf: np.ndarray
    step: int = 0

    def __post_init__(self):
        for name in ("mean", "momentum_buf"):
            arr = np.array(getattr(self, name), dtype=np.float64, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.mean.shape != (self.precision.dim,) or self.momentum_buf.shape != self.mean.shape:
            raise ConfigError("mean, momentum and precision dimensions disagree")
        if not np.all(np.isfinite(self.momentum_buf)):
            raise DivergenceError("momentum buffer is not finite")

    @property
    def dim(self):
        return self.mean.shape[0]

    def precision_dense(self):
        return self.precision.to_dense()

    def covariance_dense(self):
        if self.dim > DENSE_LIMIT:
            raise ConfigError(f"dense covariance needs D <= {DENSE_LIMIT}")
        return la.woodbury_solve(self.precision, np.eye(self.dim))


@dataclass(frozen=True)
class DenseState:
    """Posterior with a dense D x D precision matrix."""

    mean: np.ndarray
    precision: np.ndarray
    momentum_buf: np.ndarray
    step: int = 0
    chol: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        p = np.array(self.precision, dtype=np.float64, copy=True)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ConfigError("precision must be square")
        if p.shape[0] > DENSE_LIMIT:
            raise ConfigError(f"dense state needs D <= {DENSE_LIMIT}, got {p.shape[0]}")
        for name in ("mean", "momentum_buf"):
            arr = np.array(getattr(self, name), dtype=np.float64, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        p.setflags(write=False)
        object.__setattr__(self, "precision", p)
        if self.chol is None:
            object.__setattr__(self, "chol", _chol(p, "dense precision"))

    @property
    def dim(self):
        return self.mean.shape[0]

    def precision_dense(self):
        return self.precision

    def covariance_dense(self):
        return sla.cho_solve((self.chol, True), np.eye(self.dim))


class HessianFactors(NamedTuple):
    """Per-example Hessians ``weights[..., i] * x_i x_i^T`` in factored form."""

    weights: np.ndarray
    features: np.ndarray


def _chol(mat, what):
    try:
        return sla.cholesky(mat, lower=True)
    except (sla.LinAlgError, ValueError) as exc:
        raise NumericError(f"{what} is not positive definite: {exc}") from exc


def lr_schedule(alpha0: float, t: int, decay_exponent: float = 0.51, decay: bool = True) -> float:
    """``alpha0 / (1 + t ** decay_exponent)``, or ``alpha0`` when decay is off."""
    if t < 0:
        raise ConfigError("step must be >= 0")
    if not decay:
        return float(alpha0)
    return float(alpha0) / (1.0 + float(t) ** decay_exponent)


def _as_3d(grads):
    g = np.asarray(grads, dtype=np.float64)
    if g.ndim == 2:
        g = g[None]
    if g.ndim != 3 or g.shape[1] == 0:
        raise ConfigError(f"gradients must have shape (M, D) or (S, M, D), got {np.shape(grads)}")
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite per-example gradients")
    return g


def _loss_gradient(g3, mean, cfg):
    # -(N/M) sum_i g_i (averaged over draws) + lambda * mu
    n_batch = g3.shape[1]
    return -(cfg.n_total / n_batch) * g3.mean(axis=0).sum(axis=0) + cfg.prior_precision * mean


def _ef_columns(g3, cfg, weight=1.0):
    # D x (S M) columns whose Gram is weight * (N / (M S)) sum g g^T
    s, m, d = g3.shape
    scale = math.sqrt(weight * cfg.n_total / (m * s))
    return scale * g3.reshape(s * m, d).T


def _move_mean(state, direction, alpha, cfg):
    with np.errstate(over="ignore", invalid="ignore"):
        buf = cfg.momentum * state.momentum_buf + direction
        mean = state.mean - alpha * buf
    if not np.all(np.isfinite(mean)):
        raise DivergenceError(f"mean diverged at step {state.step}")
    return mean, buf


def _check_dim(state, g3):
    if g3.shape[2] != state.dim:
        raise ConfigError(f"gradients have dimension {g3.shape[2]}, state has {state.dim}")


def slang_step(state: GaussianState, grads, cfg: OptimizerConfig, rng=None) -> GaussianState:
    """One SLANG iteration.

    The rank-(L + M S) matrix ``(1 - beta) U U^T + beta G`` is truncated to
    its top-L eigenpairs, the lost diagonal mass is moved into ``d``, and the
    mean takes a Woodbury-preconditioned step.

    ``rng`` drives the randomized eigendecomposition; by default it is derived
    from ``cfg.seed`` and ``state.step``.
    """
    g3 = _as_3d(grads)
    _check_dim(state, g3)
    alpha, beta = cfg.rates(state.step)
    u_old = state.precision.u_factors
    ell = state.precision.rank
    cols = np.concatenate([math.sqrt(1.0 - beta) * u_old, _ef_columns(g3, cfg, beta)], axis=1)
    if rng is None:
        rng = cfg.stream(_STREAM_EIG, state.step)
    eig = la.fast_eig(cols, ell, cfg.oversample, cfg.power_iters, rng)
    u_new = eig.scaled_vectors()
    correction = la.diag_of_outer(cols) - la.diag_of_outer(u_new)
    d_new = (1.0 - beta) * state.precision.diag + beta * cfg.prior_precision + correction
    if not np.all(d_new > 0):
        raise NumericError(f"diagonal lost positivity at step {state.step}")
    precision = la.LowRankDiagMatrix(u_new, d_new)
    direction = la.woodbury_solve(precision, _loss_gradient(g3, state.mean, cfg))
    mean, buf = _move_mean(state, direction, alpha, cfg)
    return GaussianState(mean, precision, buf, state.step + 1)


def online_eig_step(state: GaussianState, grads, cfg: OptimizerConfig, rng=None) -> GaussianState:
    """Moving-average low-rank update (the OnlineEig variant).

    The top-L eigenpairs of the empirical Fisher alone give ``Q Lambda^{1/2}``,
    which is averaged into ``U``; the diagonal tracks what the truncation of
    the Fisher leaves out.
    """
    g3 = _as_3d(grads)
    _check_dim(state, g3)
    alpha, beta = cfg.rates(state.step)
    ell = state.precision.rank
    cols = _ef_columns(g3, cfg)
    if rng is None:
        rng = cfg.stream(_STREAM_EIG, state.step)
    k = min(ell, cols.shape[1])
    eig = la.fast_eig(cols, k, cfg.oversample, cfg.power_iters, rng)
    top = np.zeros((state.dim, ell))
    top[:, :k] = eig.scaled_vectors()
    # eigenvector signs are arbitrary; align them with U so the average does not cancel
    flip = np.einsum("ij,ij->j", state.precision.u_factors, top) < 0.0
    top[:, flip] *= -1.0
    u_new = (1.0 - beta) * state.precision.u_factors + beta * top
    target = la.diag_of_outer(cols) - la.diag_of_outer(top) + cfg.prior_precision
    d_new = (1.0 - beta) * state.precision.diag + beta * target
    if not np.all(d_new > 0):
        raise NumericError(f"diagonal lost positivity at step {state.step}")
    precision = la.LowRankDiagMatrix(u_new, d_new)
    direction = la.woodbury_solve(precision, _loss_gradient(g3, state.mean, cfg))
    mean, buf = _move_mean(state, direction, alpha, cfg)
    return GaussianState(mean, precision, buf, state.step + 1)


def _hessian_sum(hessians, n_total, dim):
    """``(N / (M S)) sum`` of per-example Hessians, dense."""
    if isinstance(hessians, HessianFactors):
        w = np.asarray(hessians.weights, dtype=np.float64)
        x = np.asarray(hessians.features, dtype=np.float64)
        w2 = w if w.ndim == 2 else w[None]
        s, m = w2.shape
        return (n_total / (m * s)) * (x.T * w2.sum(axis=0)) @ x
    h = np.asarray(hessians, dtype=np.float64)
    if h.ndim == 3:
        h = h[None]
    if h.ndim != 4 or h.shape[-1] != dim or h.shape[-2] != dim:
        raise ConfigError(f"Hessians must have shape (..., M, {dim}, {dim})")
    s, m = h.shape[:2]
    return (n_total / (m * s)) * h.sum(axis=(0, 1))


def _hessian_diag(hessians, n_total, dim):
    if isinstance(hessians, HessianFactors):
        w = np.asarray(hessians.weights, dtype=np.float64)
        x = np.asarray(hessians.features, dtype=np.float64)
        w2 = w if w.ndim == 2 else w[None]
        s, m = w2.shape
        return (n_total / (m * s)) * (w2.sum(axis=0) @ (x * x))
    return np.diag(_hessian_sum(hessians, n_total, dim)).copy()


def _dense_step(state: DenseState, curvature, g3, cfg):
    alpha, beta = cfg.rates(state.step)
    precision = (1.0 - beta) * state.precision + beta * (curvature + cfg.prior_precision * np.eye(state.dim))
    precision = 0.5 * (precision + precision.T)
    chol = _chol(precision, "updated precision")
    direction = sla.cho_solve((chol, True), _loss_gradient(g3, state.mean, cfg))
    mean, buf = _move_mean(state, direction, alpha, cfg)
    return DenseState(mean, precision, buf, state.step + 1, chol=chol)


def vogn_full_step(state: DenseState, grads, cfg: OptimizerConfig) -> DenseState:
    """Dense update with the empirical Fisher ``(N/M) sum g g^T`` as curvature."""
    g3 = _as_3d(grads)
    _check_dim(state, g3)
    cols = _ef_columns(g3, cfg)
    return _dense_step(state, cols @ cols.T, g3, cfg)


def von_full_step(state: DenseState, hessians, grads, cfg: OptimizerConfig) -> DenseState:
    """Dense update with exact per-example negative log-likelihood Hessians.

    ``hessians`` is a ``(M, D, D)`` / ``(S, M, D, D)`` array or a
    :class:`HessianFactors` for models whose Hessians are weighted outer
    products of the features.
    """
    g3 = _as_3d(grads)
    _check_dim(state, g3)
    return _dense_step(state, _hessian_sum(hessians, cfg.n_total, state.dim), g3, cfg)


def mean_field_step(state: GaussianState, grads, cfg: OptimizerConfig, hessians=None) -> GaussianState:
    """Diagonal-only update; curvature is ``diag`` of the EF, or of ``hessians`` if given."""
    if state.precision.rank != 0:
        raise ConfigError("mean-field state must have rank 0")
    g3 = _as_3d(grads)
    _check_dim(state, g3)
    alpha, beta = cfg.rates(state.step)
    if hessians is None:
        curv = la.diag_of_outer(_ef_columns(g3, cfg))
    else:
        curv = _hessian_diag(hessians, cfg.n_total, state.dim)
    d_new = (1.0 - beta) * state.precision.diag + beta * (curv + cfg.prior_precision)
    precision = la.LowRankDiagMatrix(np.zeros((state.dim, 0)), d_new)
    direction = _loss_gradient(g3, state.mean, cfg) / d_new
    mean, buf = _move_mean(state, direction, alpha, cfg)
    return GaussianState(mean, precision, buf, state.step + 1)


def init_state(method: str, dim: int, cfg: OptimizerConfig, mean=None):
    """Prior-initialized state: precision ``lambda I`` (U = 0), zero momentum."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")
    mean = np.zeros(dim) if mean is None else np.asarray(mean, dtype=np.float64)
    zeros = np.zeros(dim)
    if method in ("vogn-full", "von-full"):
        return DenseState(mean, cfg.prior_precision * np.eye(dim), zeros)
    rank = cfg.rank if method in ("slang", "slang-online-eig") else 0
    if rank > dim:
        raise ConfigError(f"rank {rank} exceeds parameter dimension {dim}")
    return GaussianState(mean, la.LowRankDiagMatrix.isotropic(dim, cfg.prior_precision, rank), zeros)


def draw_parameters(state, n_samples: int, rng) -> np.ndarray:
    """``(n_samples, D)`` draws from the state's Gaussian."""
    if isinstance(state, DenseState):
        eps = rng.standard_normal((state.dim, n_samples))
        # precision = L L^T  =>  L^{-T} eps has covariance precision^{-1}
        return state.mean[None, :] + sla.solve_triangular(state.chol, eps, lower=True, trans="T").T
    return la.sample(state.mean, state.precision, rng, n_samples=n_samples)


def _step(method, state, model, batch, cfg, thetas):
    grads = per_example_grads(thetas, model, batch)
    if method == "slang":
        return slang_step(state, grads, cfg)
    if method == "slang-online-eig":
        return online_eig_step(state, grads, cfg)
    if method == "vogn-full":
        return vogn_full_step(state, grads, cfg)
    if method == "mean-field-ef":
        return mean_field_step(state, grads, cfg)
    if not isinstance(model, LogisticRegression):
        raise ConfigError(f"method {method!r} needs exact Hessians (logistic regression only)")
    hess = HessianFactors(logistic_hessian_weights(thetas, batch), batch.features)
    if method == "von-full":
        return von_full_step(state, hess, grads, cfg)
    return mean_field_step(state, grads, cfg, hessians=hess)


def fit(model, train: Dataset, cfg: OptimizerConfig, method: str, epochs: int, state=None,
        callback: Callable | None = None):
    """Run ``epochs`` passes over ``train`` and return the final state.

    Each epoch visits a fresh seeded permutation in minibatches of
    ``cfg.batch_size`` (the last one may be smaller). Every iteration draws
    ``cfg.mc_samples`` parameters from the current posterior.
    ``callback(epoch, state)`` is called after each epoch.
    """
    if cfg.n_total != train.n:
        cfg = replace(cfg, n_total=train.n)
    if state is None:
        state = init_state(method, model.n_params(train.d), cfg)
    for epoch in range(epochs):
        order = cfg.stream(_STREAM_BATCH, epoch).permutation(train.n)
        for start in range(0, train.n, cfg.batch_size):
            batch = train.subset(order[start:start + cfg.batch_size])
            thetas = draw_parameters(state, cfg.mc_samples, cfg.stream(_STREAM_SAMPLE, state.step))
            state = _step(method, state, model, batch, cfg, thetas)
        if callback is not None:
            callback(epoch + 1, state)
    return state


def _gauss_hermite(n=80):
    nodes, weights = np.polynomial.hermite.hermgauss(n)
    return math.sqrt(2.0) * nodes, weights / math.sqrt(math.pi)


def full_gaussian_reference(train: Dataset, prior_precision: float, damping: float = 0.5,
                            tol: float = 1e-10, max_iter: int = 5000) -> DenseState:
    """Converged full-Gaussian posterior for Bayesian logistic regression.

    Iterates :func:`von_full_step` on the whole training set with the
    expected gradients and Hessians under the current Gaussian evaluated by
    Gauss-Hermite quadrature over each example's scalar logit, so there is
    no Monte-Carlo noise. The fixed point is the optimal full-covariance
    Gaussian for the ELBO.
    """
    from scipy.special import expit

    x, y = train.features, train.targets
    n, dim = x.shape
    cfg = OptimizerConfig(prior_precision=prior_precision, n_total=n, batch_size=n, alpha0=damping,
                          decay=False, momentum=0.0, mc_samples=1)
    nodes, weights = _gauss_hermite()
    state = init_state("von-full", dim, cfg)
    for _ in range(max_iter):
        cov = state.covariance_dense()
        m = x @ state.mean
        v = np.einsum("ij,jk,ik->i", x, cov, x)
        z = m[:, None] + np.sqrt(np.maximum(v, 0.0))[:, None] * nodes[None, :]
        p = expit(z)
        mean_sig = p @ weights
        mean_curv = (p * (1.0 - p)) @ weights
        grads = (y - mean_sig)[:, None] * x
        new = von_full_step(state, HessianFactors(mean_curv, x), grads, cfg)
        shift = max(np.max(np.abs(new.mean - state.mean)),
                    np.max(np.abs(new.precision - state.precision)) / np.max(np.abs(new.precision)))
        state = new
        if shift < tol:
            break
    return replace(state, momentum_buf=np.zeros(dim), step=0)
