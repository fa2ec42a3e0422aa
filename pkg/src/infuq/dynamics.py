"""Linearized training dynamics, deep-ensemble and NTKGP moments, and Monte Carlo ensembles.

Output-space conventions: ``rate`` is the coefficient in ``df/dt = -rate * Theta (f - Y)``.
Gradient descent with step ``lr`` on the mean squared error moves the training
outputs with ``rate = 2 lr / N`` per step (see :func:`infuq.nets.function_space_rate`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import nets
from .architecture import ANALYTIC_ACTIVATIONS, Architecture
from .errors import DimensionMismatch, NotPSD
from .gp import (
    Dataset,
    GaussianPosterior,
    Provenance,
    conditional_mean,
    gp_posterior,
    gp_prior,
    gram_factor,
)
from .kernels import KernelMatrices, nngp_kernel, ntk_kernel
from .linalg_stats import SeededRng, check_symmetric, factor_solve

EIG_RTOL = 1e-10


def _eigh_psd(theta_xx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    theta_xx = np.asarray(theta_xx, dtype=np.float64)
    check_symmetric(theta_xx)
    lam, vec = np.linalg.eigh(theta_xx)
    top = max(lam[-1], 0.0) if lam.size else 0.0
    if lam.size and lam[0] < -EIG_RTOL * max(top, 1e-300):
        raise NotPSD(f"kernel has eigenvalue {lam[0]:.3e} (largest {top:.3e})")
    return np.maximum(lam, 0.0), vec


def analytic_trajectory(theta_xx, f0_x, y, lr: float, t: float) -> np.ndarray:
    """Training outputs at time ``t``: ``Y + exp(-lr Theta t) (f0 - Y)``, via eigendecomposition."""
    f0_x = np.asarray(f0_x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if f0_x.shape != y.shape or np.shape(theta_xx) != (y.shape[0], y.shape[0]):
        raise DimensionMismatch("theta_xx, f0_x and y must conform")
    if lr <= 0 or t < 0:
        raise ValueError("lr must be positive and t non-negative")
    if t == 0:
        return f0_x.copy()
    lam, vec = _eigh_psd(theta_xx)
    decay = np.exp(-lr * lam * t)
    return y + vec @ (decay * (vec.T @ (f0_x - y)))


def output_gradient_descent(theta_xx, f0_x, y, rate: float, steps: int) -> np.ndarray:
    """Explicit Euler steps ``f <- f - rate * Theta (f - Y)`` on the training outputs."""
    theta_xx = np.asarray(theta_xx, dtype=np.float64)
    f = np.array(f0_x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    for _ in range(steps):
        f = f - rate * (theta_xx @ (f - y))
    return f


F0 = Union[Callable[[np.ndarray], np.ndarray], tuple]


def linearized_prediction(f0: F0, theta: KernelMatrices, data: Dataset) -> np.ndarray:
    """Converged linearized network at the test points:
    ``f0(x) - Theta(x, X) Theta(X, X)^{-1} (f0(X) - Y)``.

    ``f0`` is a callable over point sets or a ``(f0_train, f0_test)`` pair.
    """
    if callable(f0):
        f0_train, f0_test = np.asarray(f0(data.train_x)), np.asarray(f0(data.test_x))
    else:
        f0_train, f0_test = (np.asarray(a, dtype=np.float64) for a in f0)
    factor = gram_factor(theta.train_train)
    return f0_test - conditional_mean(theta.test_train, factor, f0_train - data.train_y)


def nngp_posterior(k: KernelMatrices, data: Dataset, noise: float = 0.0) -> GaussianPosterior:
    return gp_posterior(k, data, noise, provenance=Provenance.NNGP_POSTERIOR)


def ntkgp_moments(theta: KernelMatrices, data: Dataset) -> GaussianPosterior:
    """GP posterior with the NTK as prior kernel (noiseless)."""
    return gp_posterior(theta, data, 0.0, provenance=Provenance.NTKGP)


def de_gp_moments(k: KernelMatrices, theta: KernelMatrices, data: Dataset) -> GaussianPosterior:
    """Law of the converged linearized network when ``f0 ~ GP(0, K)``.

    With ``B = Theta(x, X) Theta(X, X)^{-1}``::

        mean = B Y
        cov  = K(x, x') + B K(X, X) B^T - (B K(X, x') + its transpose)
    """
    if k.n_train != theta.n_train or k.n_test != theta.n_test:
        raise DimensionMismatch("K and Theta blocks must cover the same points")
    factor = gram_factor(theta.train_train)
    mean = conditional_mean(theta.test_train, factor, data.train_y)
    b = factor_solve(factor, theta.test_train.T).T
    cross = b @ k.test_train.T
    cov = k.test_test + b @ k.train_train @ b.T - (cross + cross.T)
    cov = 0.5 * (cov + cov.T)
    return GaussianPosterior(mean, cov, Provenance.DE_GP, factor.jitter)


# --- ensembles -------------------------------------------------------------


@dataclass
class EnsembleReport:
    members: int
    width: Optional[int]
    mode: nets.TrainingMode
    predictions: np.ndarray  # (members, n_test)
    mean: np.ndarray
    cov: np.ndarray
    mean_stderr: np.ndarray
    cov_stderr: np.ndarray
    reference: Optional[GaussianPosterior] = None
    z_mean: Optional[np.ndarray] = None
    z_cov: Optional[np.ndarray] = None
    rel_frobenius: Optional[float] = None
    final_loss: Optional[np.ndarray] = None
    steps_taken: int = 0
    converged: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def max_z(self) -> float:
        if self.z_mean is None:
            return math.nan
        return float(max(np.max(self.z_mean), np.max(self.z_cov)))


def ensemble_moments(predictions: np.ndarray):
    """Empirical mean, covariance and their entrywise Monte Carlo standard errors."""
    predictions = np.asarray(predictions, dtype=np.float64)
    m = predictions.shape[0]
    if m < 2:
        raise ValueError("need at least two members")
    mean = predictions.mean(axis=0)
    centered = predictions - mean
    prods = centered[:, :, None] * centered[:, None, :]
    cov = prods.sum(axis=0) / (m - 1)
    mean_se = predictions.std(axis=0, ddof=1) / math.sqrt(m)
    cov_se = prods.std(axis=0, ddof=1) / math.sqrt(m)
    return mean, 0.5 * (cov + cov.T), mean_se, cov_se


def _z(diff, se):
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(diff) / se
    return np.where(np.abs(diff) == 0, 0.0, z)


def relative_frobenius(a: np.ndarray, b: np.ndarray) -> float:
    """``|a - b|_F / |b|_F``."""
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def reference_posterior(arch: Architecture, data: Dataset, cfg: nets.TrainingConfig) -> Optional[GaussianPosterior]:
    """Infinite-width law that an ensemble trained with ``cfg`` should match."""
    if arch.activation not in ANALYTIC_ACTIVATIONS:
        return None
    inf = arch.with_width(None)
    k = nngp_kernel(inf, data.train_x, data.test_x)
    if cfg.steps == 0:
        return gp_prior(k, data, Provenance.NNGP_PRIOR)
    if cfg.mode == nets.TrainingMode.LAST_LAYER_ONLY:
        return nngp_posterior(k, data)
    return de_gp_moments(k, ntk_kernel(inf, data.train_x, data.test_x), data)


def train_members(
    arch: Architecture,
    data: Dataset,
    cfg: nets.TrainingConfig,
    rngs: list[SeededRng],
    max_chunk_params: int = 8_000_000,
):
    """Train one network per rng in vectorized chunks; returns test predictions and diagnostics."""
    sizes = arch.layer_sizes()
    per_net = sum(a * b for a, b in zip(sizes[:-1], sizes[1:]))
    chunk = max(1, max_chunk_params // per_net)
    preds, losses, steps, converged = [], [], 0, True
    for start in range(0, len(rngs), chunk):
        params = nets.init_stack(arch, rngs[start : start + chunk])
        trained, trace = nets.train(arch, params, data, cfg)
        preds.append(nets.forward(arch, trained, data.test_x))
        losses.append(np.asarray(trace.final_loss))
        steps = max(steps, trace.steps_taken)
        converged = converged and (trace.converged or cfg.loss_tol is None)
    return np.concatenate(preds), np.concatenate(losses), steps, converged


def run_ensemble(
    arch: Architecture,
    data: Dataset,
    cfg: nets.TrainingConfig,
    members: int,
    base_rng: SeededRng,
    reference: Optional[GaussianPosterior] = None,
) -> EnsembleReport:
    """Train ``members`` independent networks (member ``i`` uses ``base_rng.stream(i)``)
    and compare their test-point moments with the matching analytic law.

    Aggregation runs in member order, so the report does not depend on chunking.
    """
    if members < 2:
        raise ValueError("an ensemble needs at least two members")
    rngs = [base_rng.stream(i) for i in range(members)]
    preds, losses, steps, converged = train_members(arch, data, cfg, rngs)
    mean, cov, mean_se, cov_se = ensemble_moments(preds)
    if reference is None:
        reference = reference_posterior(arch, data, cfg)
    report = EnsembleReport(
        members=members,
        width=arch.hidden_widths[0] if arch.depth else None,
        mode=cfg.mode,
        predictions=preds,
        mean=mean,
        cov=cov,
        mean_stderr=mean_se,
        cov_stderr=cov_se,
        final_loss=losses,
        steps_taken=steps,
        converged=converged,
    )
    if reference is not None:
        report.reference = reference
        report.z_mean = _z(mean - reference.mean, mean_se)
        report.z_cov = _z(cov - reference.cov, cov_se)
        report.rel_frobenius = relative_frobenius(cov, reference.cov)
    return report
