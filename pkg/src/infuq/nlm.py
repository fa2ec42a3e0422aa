"""Neural linear model: a trained deterministic feature map plus Bayesian linear regression
on the last layer.

With features ``Phi`` (N x H), noise precision ``alpha`` and weight precision ``beta``::

    Sigma = (alpha Phi^T Phi + beta I)^{-1}
    mu    = alpha Sigma Phi^T Y

The matrix being inverted is H x H, so the cost of the Bayesian step is set by
the last hidden width rather than by the number of training points.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import nets
from .architecture import Architecture
from .gp import Dataset, GaussianPosterior, Provenance
from .linalg_stats import SeededRng, cholesky, factor_solve


@dataclass(frozen=True)
class NLMConfig:
    alpha: float = 100.0
    beta: float = 1.0
    feature_training: nets.TrainingConfig = field(default_factory=lambda: nets.TrainingConfig(steps=2000))

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be strictly positive")


@dataclass
class FittedNLM:
    arch: Architecture
    params: nets.Params
    mean: np.ndarray
    cov: np.ndarray
    alpha: float
    beta: float
    trace: Optional[nets.TrainingTrace] = None

    @property
    def feature_dim(self) -> int:
        return self.mean.shape[0]

    def features(self, x) -> np.ndarray:
        return nets.features(self.arch, self.params, x)


def blr_posterior(phi: np.ndarray, y: np.ndarray, alpha: float, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and covariance of the last-layer weights."""
    phi = np.asarray(phi, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    h = phi.shape[1]
    precision = alpha * (phi.T @ phi) + beta * np.eye(h)
    factor = cholesky(0.5 * (precision + precision.T))
    cov = factor_solve(factor, np.eye(h))
    mean = alpha * factor_solve(factor, phi.T @ y)
    return mean, 0.5 * (cov + cov.T)


def nlm_fit(
    arch: Architecture,
    data: Dataset,
    cfg: NLMConfig,
    rng: Optional[SeededRng] = None,
    params: Optional[nets.Params] = None,
) -> FittedNLM:
    """Train the whole network (point-estimate output layer), then condition the
    last layer. With no training data the prior ``N(0, I / beta)`` comes back."""
    if params is None:
        params = nets.init(arch, rng if rng is not None else SeededRng(0))
    trace = None
    if data.n_train > 0 and cfg.feature_training.steps > 0:
        params, trace = nets.train(arch, params, data, cfg.feature_training)
    h = arch.input_dim if arch.depth == 0 else arch.hidden_widths[-1]
    if data.n_train == 0:
        mean, cov = np.zeros(h), np.eye(h) / cfg.beta
    else:
        phi = nets.features(arch, params, data.train_x)
        mean, cov = blr_posterior(phi, data.train_y, cfg.alpha, cfg.beta)
    return FittedNLM(arch, params, mean, cov, cfg.alpha, cfg.beta, trace)


def nlm_predict(fit: FittedNLM, x, include_noise: bool = False) -> tuple[float, float]:
    """Predictive mean and variance at a single input."""
    phi = fit.features(np.atleast_1d(np.asarray(x, dtype=np.float64)).reshape(1, -1))[0]
    mean = float(phi @ fit.mean)
    var = float(phi @ fit.cov @ phi)
    if include_noise:
        var += 1.0 / fit.alpha
    return mean, var


def nlm_predictive(fit: FittedNLM, xs, include_noise: bool = False) -> GaussianPosterior:
    """Joint predictive over a point set."""
    phi = fit.features(xs)
    cov = phi @ fit.cov @ phi.T
    if include_noise:
        cov = cov + np.eye(phi.shape[0]) / fit.alpha
    return GaussianPosterior(phi @ fit.mean, 0.5 * (cov + cov.T), Provenance.NLM)
