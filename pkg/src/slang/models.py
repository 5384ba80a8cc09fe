"""Likelihood models with per-example gradients.

Two models are provided: Bayesian logistic regression (closed-form
per-example gradients and Hessians) and a rectifier MLP whose per-example
gradients come from one batched forward pass plus a manual backward pass
that never sums over the batch.

Parameter vectors ``theta`` may be 1-d (one parameter setting) or 2-d with
one row per Monte-Carlo draw; per-example gradient arrays then have shape
``(M, D)`` or ``(S, M, D)`` respectively.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigError

__all__ = [
    "Dataset",
    "LogisticRegression",
    "MlpArchitecture",
    "log_sigmoid",
    "logistic_per_example_grads",
    "logistic_per_example_hessians",
    "logistic_hessian_weights",
    "mlp_forward",
    "mlp_per_example_grads",
    "log_likelihood",
    "per_example_grads",
    "predict_mean",
    "DENSE_LIMIT",
]

DENSE_LIMIT = 2000


@dataclass(frozen=True)
class Dataset:
    """Features, targets and the task they belong to.

    ``task`` is ``"classification"`` (targets in {0, 1}) or ``"regression"``.
    """

    features: np.ndarray
    targets: np.ndarray
    task: str = "classification"

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64, copy=True)
        y = np.array(self.targets, dtype=np.float64, copy=True).reshape(-1)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise ConfigError(f"features {x.shape} and targets {y.shape} do not align")
        if self.task not in ("classification", "regression"):
            raise ConfigError(f"unknown task {self.task!r}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ConfigError("dataset contains NaN or inf")
        if self.task == "classification" and not np.all((y == 0.0) | (y == 1.0)):
            raise ConfigError("classification targets must be 0 or 1")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "targets", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "Dataset":
        return Dataset(self.features[index], self.targets[index], self.task)


def log_sigmoid(z):
    """``log(1 / (1 + exp(-z)))`` without overflow."""
    return -np.logaddexp(0.0, -np.asarray(z, dtype=np.float64))


def _check_theta(theta, dim):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape[-1] != dim or theta.ndim > 2:
        raise ConfigError(f"theta has shape {theta.shape}, expected (..., {dim})")
    return theta


def logistic_per_example_grads(theta, batch: Dataset) -> np.ndarray:
    """Rows ``(y_i - sigmoid(x_i^T theta)) x_i`` of the log-likelihood gradient."""
    if batch.n == 0:
        raise ConfigError("empty batch")
    theta = _check_theta(theta, batch.d)
    x, y = batch.features, batch.targets
    if theta.ndim == 1:
        resid = y - expit(x @ theta)
        return resid[:, None] * x
    resid = y[None, :] - expit(theta @ x.T)
    return resid[:, :, None] * x[None, :, :]


def logistic_hessian_weights(theta, batch: Dataset) -> np.ndarray:
    """``sigmoid(z)(1 - sigmoid(z))`` per example (and per draw if theta is 2-d)."""
    theta = _check_theta(theta, batch.d)
    z = batch.features @ theta if theta.ndim == 1 else theta @ batch.features.T
    p = expit(z)
    return p * (1.0 - p)


def logistic_per_example_hessians(theta, batch: Dataset) -> np.ndarray:
    """Dense per-example Hessians of the negative log-likelihood, shape (M, D, D)."""
    if batch.d > DENSE_LIMIT:
        raise ConfigError(f"dense Hessians need D <= {DENSE_LIMIT}, got {batch.d}")
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1:
        raise ConfigError("dense Hessians take a single parameter vector")
    w = logistic_hessian_weights(theta, batch)
    x = batch.features
    return w[:, None, None] * x[:, :, None] * x[:, None, :]


@dataclass(frozen=True)
class LogisticRegression:
    """Bernoulli-logit likelihood on features that already carry a bias column."""

    likelihood: str = field(default="bernoulli", init=False)

    def n_params(self, n_features: int) -> int:
        return n_features

    def predictor(self, theta, x):
        theta = np.asarray(theta, dtype=np.float64)
        return x @ theta if theta.ndim == 1 else theta @ x.T


@dataclass(frozen=True)
class MlpArchitecture:
    """Fully connected rectifier network with one scalar output.

    ``likelihood`` is ``"bernoulli"`` (output is a logit) or ``"gaussian"``
    with fixed noise precision ``tau``.

    Parameters are packed layer by layer: the ``fan_in x fan_out`` weight
    matrix in row-major order, then the ``fan_out`` biases.
    """

    n_inputs: int
    hidden: Sequence[int] = (50,)
    n_outputs: int = 1
    likelihood: str = "gaussian"
    tau: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if min((self.n_inputs, self.n_outputs) + self.hidden) < 1:
            raise ConfigError("layer widths must be >= 1")
        if self.likelihood not in ("bernoulli", "gaussian"):
            raise ConfigError(f"unknown likelihood {self.likelihood!r}")
        if self.n_outputs != 1:
            raise ConfigError("only scalar-output networks are supported")
        if self.tau <= 0:
            raise ConfigError("noise precision tau must be positive")

    @property
    def widths(self):
        return (self.n_inputs,) + self.hidden + (self.n_outputs,)

    @property
    def layer_shapes(self):
        w = self.widths
        return list(zip(w[:-1], w[1:]))

    def n_params(self, n_features: int | None = None) -> int:
        if n_features is not None and n_features != self.n_inputs:
            raise ConfigError(f"network expects {self.n_inputs} inputs, data has {n_features}")
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in self.layer_shapes)

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params(),):
            raise ConfigError(f"theta has shape {theta.shape}, expected ({self.n_params()},)")
        layers, pos = [], 0
        for fan_in, fan_out in self.layer_shapes:
            w = theta[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
            pos += fan_in * fan_out
            b = theta[pos:pos + fan_out]
            pos += fan_out
            layers.append((w, b))
        return layers

    def init_mean(self, rng) -> np.ndarray:
        """Fan-in scaled uniform weights, zero biases."""
        parts = []
        for fan_in, fan_out in self.layer_shapes:
            bound = 1.0 / np.sqrt(fan_in)
            parts.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
            parts.append(np.zeros(fan_out))
        return np.concatenate(parts)

    def predictor(self, theta, x):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.ndim == 1:
            return mlp_forward(theta, self, x)[0]
        return np.stack([mlp_forward(t, self, x)[0] for t in theta])


def mlp_forward(theta, arch: MlpArchitecture, x):
    """Return ``(f, pre_activations, activations)`` for a batch ``x``.

    ``activations[k]`` is the input to layer ``k`` (``activations[0] = x``).
    """
    layers = arch.unpack(theta)
    h = np.asarray(x, dtype=np.float64)
    acts, pres = [h], []
    for k, (w, b) in enumerate(layers):
        # einsum keeps each row's reduction independent of the batch size,
        # so batched and one-at-a-time results agree bitwise
        a = np.einsum("mi,io->mo", h, w) + b
        pres.append(a)
        if k < len(layers) - 1:
            h = np.maximum(a, 0.0)
            acts.append(h)
    return pres[-1][:, 0], pres, acts


def _output_residual(arch: MlpArchitecture, f, y):
    # d log p / d f
    if arch.likelihood == "bernoulli":
        return y - expit(f)
    return arch.tau * (y - f)


def _mlp_grads_single(theta, arch: MlpArchitecture, x, y):
    f, pres, acts = mlp_forward(theta, arch, x)
    layers = arch.unpack(theta)
    delta = _output_residual(arch, f, y)[:, None]
    blocks = [None] * len(layers)
    for k in range(len(layers) - 1, -1, -1):
        w, _ = layers[k]
        h = acts[k]
        gw = h[:, :, None] * delta[:, None, :]
        blocks[k] = (gw.reshape(h.shape[0], -1), delta)
        if k > 0:
            # rectifier subgradient at exactly 0 is taken as 0
            delta = np.einsum("mo,io->mi", delta, w) * (pres[k - 1] > 0.0)
    return np.concatenate([part for pair in blocks for part in pair], axis=1)


def mlp_per_example_grads(theta, arch: MlpArchitecture, batch: Dataset) -> np.ndarray:
    """Per-example log-likelihood gradients of an MLP, shape (M, D) or (S, M, D).

    One forward pass caches pre-activations and activations; the backward
    pass carries an (M, width) error signal per layer and forms each
    example's weight gradient as an outer product, so nothing is summed
    over the batch.
    """
    if batch.n == 0:
        raise ConfigError("empty batch")
    arch.n_params(batch.d)
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim == 2:
        return np.stack([_mlp_grads_single(t, arch, batch.features, batch.targets) for t in theta])
    return _mlp_grads_single(theta, arch, batch.features, batch.targets)


def _predict(model, theta, x):
    return model.predictor(theta, x)


def log_likelihood(theta, model, batch: Dataset) -> np.ndarray:
    """Per-example ``log p(y_i | x_i, theta)``; shape (M,) or (S, M)."""
    f = _predict(model, theta, batch.features)
    y = batch.targets
    if model.likelihood == "bernoulli":
        # y f - log(1 + e^f), written to stay finite for large |f|
        return y * f - np.logaddexp(0.0, f)
    tau = model.tau
    return 0.5 * np.log(tau / (2.0 * np.pi)) - 0.5 * tau * (y - f) ** 2


def per_example_grads(theta, model, batch: Dataset) -> np.ndarray:
    """Dispatch to the model's per-example gradient routine."""
    if isinstance(model, LogisticRegression):
        return logistic_per_example_grads(theta, batch)
    if isinstance(model, MlpArchitecture):
        return mlp_per_example_grads(theta, model, batch)
    raise ConfigError(f"unsupported model {model!r}")


def predict_mean(theta, model, x) -> np.ndarray:
    """Network output (regression) or logit (classification) for each row of ``x``."""
    return _predict(model, theta, np.asarray(x, dtype=np.float64))
