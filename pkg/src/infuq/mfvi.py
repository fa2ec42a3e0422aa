"""Mean-field variational inference for one-hidden-layer Bayesian networks.

The network is the NTK-parameterized MLP from :mod:`infuq.nets`, so the prior
``N(0, prior_std^2)`` sits on the unit-scale parameters. The variational family is a
fully factorized Gaussian. The ELBO is maximized by plain stochastic gradient
ascent with fresh reparameterization draws at every step, all taken from one
seeded stream so a fit is reproducible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import nets
from .architecture import Architecture
from .errors import Diverged
from .gp import Dataset
from .kernels import nngp_kernel
from .linalg_stats import SeededRng

INIT_MEAN_STD = 0.05


@dataclass
class VariationalPosterior:
    mean: np.ndarray
    log_var: np.ndarray
    elbo_trace: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.log_var = np.asarray(self.log_var, dtype=np.float64)
        if self.mean.shape != self.log_var.shape:
            raise ValueError("mean and log_var must have the same shape")

    @property
    def std(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var)

    @classmethod
    def prior(cls, size: int, prior_std: float) -> "VariationalPosterior":
        return cls(np.zeros(size), np.full(size, 2.0 * math.log(prior_std)))


@dataclass(frozen=True)
class MFVIConfig:
    prior_std: float = 1.0
    obs_std: float = 0.1
    steps: int = 3000
    learning_rate: float = 1e-3
    mc_samples: int = 32
    predictive_samples: int = 1000


def kl_factorized_gaussian(q: VariationalPosterior, prior_std: float) -> float:
    """``sum_i KL(N(m_i, s_i^2) || N(0, prior_std^2))``."""
    p2 = prior_std**2
    var = np.exp(q.log_var)
    terms = 0.5 * ((var + np.square(q.mean)) / p2 - 1.0 - (q.log_var - math.log(p2)))
    return float(np.sum(terms))


def _kl_grads(q: VariationalPosterior, prior_std: float):
    p2 = prior_std**2
    return q.mean / p2, 0.5 * (np.exp(q.log_var) / p2 - 1.0)


def _check_arch(arch: Architecture):
    if arch.depth != 1 or not arch.is_finite:
        raise ValueError("MFVI is implemented for one finite hidden layer")


def draw_eps(arch: Architecture, count: int, rng) -> np.ndarray:
    """Standard normal draws of shape ``(count, n_params)``; ``rng`` is a SeededRng or a Generator."""
    gen = rng.generator() if isinstance(rng, SeededRng) else rng
    return gen.standard_normal((count, _size(arch)))


def _size(arch: Architecture) -> int:
    sizes = arch.layer_sizes()
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def expected_log_likelihood(arch, q, data, eps, obs_std) -> float:
    theta = q.mean + q.std * eps
    out = nets.forward(arch, nets.unflatten(arch, theta), data.train_x)
    resid = data.train_y - out
    ll = -0.5 * np.square(resid) / obs_std**2 - math.log(obs_std) - 0.5 * math.log(2 * math.pi)
    return float(np.mean(np.sum(ll, axis=-1)))


def elbo_with_eps(arch, q, data, prior_std, eps, obs_std=0.1) -> float:
    return expected_log_likelihood(arch, q, data, eps, obs_std) - kl_factorized_gaussian(q, prior_std)


def elbo(
    arch: Architecture,
    q: VariationalPosterior,
    data: Dataset,
    prior_std: float,
    mc_samples: int,
    rng: SeededRng,
    obs_std: float = 0.1,
) -> float:
    """Reparameterized Monte Carlo expected Gaussian log-likelihood minus the KL term."""
    _check_arch(arch)
    if mc_samples < 1:
        raise ValueError("mc_samples must be at least 1")
    return elbo_with_eps(arch, q, data, prior_std, draw_eps(arch, mc_samples, rng), obs_std)


def elbo_grad(arch, q, data, prior_std, eps, obs_std=0.1):
    """ELBO value and its gradients with respect to ``q.mean`` and ``q.log_var``."""
    s = q.std
    theta = q.mean + s * eps
    params = nets.unflatten(arch, theta)
    out = nets.forward(arch, params, data.train_x)
    resid = data.train_y - out
    count = eps.shape[0]
    ll = -0.5 * np.square(resid) / obs_std**2 - math.log(obs_std) - 0.5 * math.log(2 * math.pi)
    value = float(np.mean(np.sum(ll, axis=-1))) - kl_factorized_gaussian(q, prior_std)
    g_theta = nets.vjp(arch, params, data.train_x, resid / (obs_std**2 * count)).flatten()
    kl_m, kl_lv = _kl_grads(q, prior_std)
    grad_mean = g_theta.sum(axis=0) - kl_m
    grad_log_var = (g_theta * eps).sum(axis=0) * 0.5 * s - kl_lv
    return value, grad_mean, grad_log_var


def init_posterior(arch: Architecture, prior_std: float, rng: SeededRng) -> VariationalPosterior:
    """Means iid N(0, 0.05^2) and variances at the prior."""
    size = _size(arch)
    mean = INIT_MEAN_STD * rng.generator().standard_normal(size)
    return VariationalPosterior(mean, np.full(size, 2.0 * math.log(prior_std)))


def fit_mfvi(
    arch: Architecture,
    data: Dataset,
    prior_std: float,
    steps: int,
    rng: SeededRng,
    learning_rate: float = 1e-3,
    mc_samples: int = 32,
    obs_std: float = 0.1,
) -> VariationalPosterior:
    """Stochastic gradient ascent on the ELBO with a fixed step size.

    ``rng.stream(0)`` initializes q and ``rng.stream(1)`` supplies the
    reparameterization noise, ``mc_samples`` fresh draws per step. The returned
    posterior carries the ELBO estimate trace (``steps + 1`` values, the last
    one at the returned q).
    """
    _check_arch(arch)
    q = init_posterior(arch, prior_std, rng.stream(0))
    noise = rng.stream(1).generator()
    trace = np.empty(steps + 1)
    for step in range(steps + 1):
        eps = draw_eps(arch, mc_samples, noise)
        value, g_m, g_lv = elbo_grad(arch, q, data, prior_std, eps, obs_std)
        if not math.isfinite(value):
            raise Diverged(f"ELBO became {value} at step {step}")
        trace[step] = value
        if step == steps:
            break
        q = VariationalPosterior(q.mean + learning_rate * g_m, q.log_var + learning_rate * g_lv)
    q.elbo_trace = trace
    return q


def predictive_mean(arch: Architecture, q: VariationalPosterior, xs, samples: int, rng: SeededRng) -> np.ndarray:
    """Monte Carlo posterior predictive mean at ``xs``."""
    eps = draw_eps(arch, samples, rng)
    out = nets.forward(arch, nets.unflatten(arch, q.mean + q.std * eps), xs)
    return out.mean(axis=0)


@dataclass
class CollapseTable:
    rows: list[tuple[int, int, float]]  # (width, repetition, mean |predictive mean|)
    widths: list[int]
    medians: list[float]
    spearman: float
    nngp_abs_mean: float


def collapse_experiment(
    widths: Sequence[int],
    data: Dataset,
    prior_std: float,
    steps: int,
    repetitions: int,
    rng: SeededRng,
    activation: str = "erf",
    sigma_w: float = 1.0,
    sigma_b: float = 0.0,
    learning_rate: float = 1e-3,
    mc_samples: int = 32,
    obs_std: float = 0.1,
    predictive_samples: int = 1000,
) -> CollapseTable:
    """Fit MFVI at each width and record the average predictive-mean magnitude on ``data.test_x``.

    Repetition ``r`` at width index ``i`` uses ``rng.stream(i).stream(r)``.
    The NNGP posterior mean (noise ``obs_std^2``) is reported as a width-free reference.
    """
    rows = []
    medians = []
    for i, width in enumerate(widths):
        arch = Architecture(data.input_dim, (int(width),), activation, sigma_w, sigma_b)
        values = []
        for r in range(repetitions):
            stream = rng.stream(i).stream(r)
            q = fit_mfvi(arch, data, prior_std, steps, stream.stream(0), learning_rate, mc_samples, obs_std)
            mean = predictive_mean(arch, q, data.test_x, predictive_samples, stream.stream(1))
            value = float(np.mean(np.abs(mean)))
            rows.append((int(width), r, value))
            values.append(value)
        medians.append(float(np.median(values)))
    if len(widths) > 1:
        rho = float(stats.spearmanr(widths, medians).statistic)
    else:
        rho = math.nan
    ref_arch = Architecture(data.input_dim, (None,), activation, sigma_w * prior_std, sigma_b * prior_std)
    nngp_mean = nngp_reference_mean(ref_arch, data, obs_std)
    return CollapseTable(rows, [int(w) for w in widths], medians, rho, float(np.mean(np.abs(nngp_mean))))


def nngp_reference_mean(arch: Architecture, data: Dataset, obs_std: float) -> np.ndarray:
    """Exact NNGP posterior mean with Gaussian observation noise; has no width parameter."""
    from .gp import gp_posterior

    k = nngp_kernel(arch, data.train_x, data.test_x)
    return gp_posterior(k, data, noise=obs_std**2).mean
