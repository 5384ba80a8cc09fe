"""ELBO, Gaussian KL divergences and predictive metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import linalg as sla
from scipy.special import logsumexp

from . import linalg as la
from .errors import ConfigError, NumericError
from .models import DENSE_LIMIT, Dataset, log_likelihood, predict_mean
from .optimizers import DenseState, GaussianState, draw_parameters

__all__ = [
    "DenseGaussian",
    "MetricsRecord",
    "kl_to_prior",
    "expected_log_likelihood",
    "elbo_estimate",
    "logistic_elbo_quadrature",
    "gaussian_kl",
    "symmetric_kl",
    "predictive_nll",
    "rmse",
]


@dataclass(frozen=True)
class DenseGaussian:
    """Gaussian with an explicit covariance (and its precision)."""

    mean: np.ndarray
    covariance: np.ndarray
    precision: np.ndarray | None = None

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ConfigError("covariance shape does not match mean")
        if mean.shape[0] > DENSE_LIMIT:
            raise ConfigError(f"dense Gaussian needs D <= {DENSE_LIMIT}")
        scale = max(1.0, float(np.max(np.abs(cov))))
        if np.max(np.abs(cov - cov.T)) > 1e-10 * scale:
            raise NumericError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        try:
            chol = sla.cholesky(cov, lower=True)
        except (sla.LinAlgError, ValueError) as exc:
            raise NumericError(f"covariance is not positive definite: {exc}") from exc
        prec = self.precision
        if prec is None:
            prec = sla.cho_solve((chol, True), np.eye(mean.shape[0]))
        prec = np.asarray(prec, dtype=np.float64)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "precision", 0.5 * (prec + prec.T))
        object.__setattr__(self, "_logdet", 2.0 * float(np.sum(np.log(np.diag(chol)))))

    @property
    def dim(self):
        return self.mean.shape[0]

    @property
    def logdet_cov(self) -> float:
        return self._logdet

    @classmethod
    def from_state(cls, state) -> "DenseGaussian":
        if isinstance(state, DenseGaussian):
            return state
        if state.dim > DENSE_LIMIT:
            raise ConfigError(f"densifying needs D <= {DENSE_LIMIT}")
        return cls(state.mean, state.covariance_dense(), np.asarray(state.precision_dense()))


@dataclass
class MetricsRecord:
    neg_elbo_per_example: float
    test_nll: float
    symmetric_kl: float | None = None
    rmse: float | None = None
    wall_time: float | None = None

    def as_dict(self):
        return asdict(self)


def kl_to_prior(state, prior_precision: float) -> float:
    """Closed-form ``KL(q || N(0, prior_precision^{-1} I))``."""
    lam = float(prior_precision)
    dim = state.dim
    if isinstance(state, GaussianState):
        logdet_prec, trace_cov = la.logdet_and_trace_inverse(state.precision)
    elif isinstance(state, DenseState):
        logdet_prec = 2.0 * float(np.sum(np.log(np.diag(state.chol))))
        trace_cov = float(np.trace(state.covariance_dense()))
    else:
        g = DenseGaussian.from_state(state)
        logdet_prec, trace_cov = -g.logdet_cov, float(np.trace(g.covariance))
    quad = float(state.mean @ state.mean)
    return 0.5 * (lam * (trace_cov + quad) - dim + logdet_prec - dim * np.log(lam))


def expected_log_likelihood(state, model, dataset: Dataset, n_mc: int, rng) -> float:
    """Monte-Carlo estimate of ``E_q[sum_i log p(D_i | theta)]``."""
    thetas = draw_parameters(state, n_mc, la.as_generator(rng))
    return float(np.mean(log_likelihood(thetas, model, dataset).sum(axis=1)))


def elbo_estimate(state, model, dataset: Dataset, prior_precision: float, n_mc: int = 1000,
                  rng=None, per_example: bool = False) -> float:
    """ELBO = MC expected log-likelihood minus the closed-form KL to the prior.

    With ``per_example`` the value is divided by the number of examples.
    """
    if n_mc < 1:
        raise ConfigError("n_mc must be >= 1")
    value = expected_log_likelihood(state, model, dataset, n_mc, rng) - kl_to_prior(state, prior_precision)
    return value / dataset.n if per_example else value


def _logit_moments(state, x):
    if isinstance(state, GaussianState):
        cov_x = la.woodbury_solve(state.precision, x.T)
    else:
        cov_x = DenseGaussian.from_state(state).covariance @ x.T
    return x @ state.mean, np.einsum("ij,ji->i", x, cov_x)


def logistic_elbo_quadrature(state, dataset: Dataset, prior_precision: float, n_nodes: int = 80,
                             per_example: bool = False) -> float:
    """Deterministic ELBO for logistic regression.

    Each expected log-likelihood term is a one-dimensional integral over the
    logit ``x_i^T theta ~ N(m_i, v_i)``, done by Gauss-Hermite quadrature.
    """
    if dataset.task != "classification":
        raise ConfigError("quadrature ELBO is for logistic regression")
    nodes, weights = np.polynomial.hermite.hermgauss(n_nodes)
    m, v = _logit_moments(state, dataset.features)
    z = m[:, None] + np.sqrt(2.0 * np.maximum(v, 0.0))[:, None] * nodes[None, :]
    y = dataset.targets[:, None]
    ll = (y * z - np.logaddexp(0.0, z)) @ weights / np.sqrt(np.pi)
    value = float(ll.sum()) - kl_to_prior(state, prior_precision)
    return value / dataset.n if per_example else value


def gaussian_kl(p: DenseGaussian, q: DenseGaussian) -> float:
    """``KL(p || q)`` for dense Gaussians."""
    if p.dim != q.dim:
        raise ConfigError("dimension mismatch")
    diff = q.mean - p.mean
    trace = float(np.sum(q.precision * p.covariance))
    return 0.5 * (trace + float(diff @ q.precision @ diff) - p.dim + q.logdet_cov - p.logdet_cov)


def symmetric_kl(q1, q2) -> float:
    """``KL(q1 || q2) + KL(q2 || q1)``; structured states are densified first."""
    a = DenseGaussian.from_state(q1)
    b = DenseGaussian.from_state(q2)
    if a.dim != b.dim:
        raise ConfigError("dimension mismatch")
    diff = a.mean - b.mean
    trace = float(np.sum(b.precision * a.covariance) + np.sum(a.precision * b.covariance))
    return 0.5 * (trace + float(diff @ (a.precision + b.precision) @ diff)) - a.dim


def predictive_nll(state, model, test: Dataset, n_mc: int = 1000, rng=None) -> float:
    """``-(1/N) sum_j log( (1/S) sum_s p(y_j | x_j, theta_s) )`` with ``theta_s ~ q``."""
    if n_mc < 1:
        raise ConfigError("n_mc must be >= 1")
    thetas = draw_parameters(state, n_mc, la.as_generator(rng))
    ll = log_likelihood(thetas, model, test)
    return float(-np.mean(logsumexp(ll, axis=0) - np.log(n_mc)))


def rmse(state, model, test: Dataset, n_mc: int = 1000, rng=None) -> float:
    """Root mean squared error of the posterior-averaged prediction."""
    if model.likelihood != "gaussian" or test.task != "regression":
        raise ConfigError("rmse is defined for regression models only")
    thetas = draw_parameters(state, n_mc, la.as_generator(rng))
    pred = np.mean(predict_mean(thetas, model, test.features), axis=0)
    return float(np.sqrt(np.mean((test.targets - pred) ** 2)))
