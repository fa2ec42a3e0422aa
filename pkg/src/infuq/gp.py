"""Gaussian process prior and exact posterior over precomputed kernel blocks."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionMismatch, NotPSD, SingularGram
from .kernels import KernelMatrices
from .linalg_stats import CholeskyFactor, SeededRng, cholesky, factor_solve, half_solve, mvn_sample


class Provenance(str, Enum):
    RBF_GP = "RBF_GP"
    NNGP_PRIOR = "NNGP_PRIOR"
    NNGP_POSTERIOR = "NNGP_POSTERIOR"
    DE_GP = "DE_GP"
    NTKGP = "NTKGP"
    NLM = "NLM"
    PRIOR = "PRIOR"


@dataclass(frozen=True)
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray

    def __post_init__(self):
        tx = np.asarray(self.train_x, dtype=np.float64)
        ty = np.asarray(self.train_y, dtype=np.float64).reshape(-1)
        sx = np.asarray(self.test_x, dtype=np.float64)
        if tx.ndim == 1:
            tx = tx[:, None]
        if sx.ndim == 1:
            sx = sx[:, None]
        if tx.shape[0] != ty.shape[0]:
            raise DimensionMismatch(f"{tx.shape[0]} inputs but {ty.shape[0]} targets")
        if tx.shape[0] and sx.shape[0] and tx.shape[1] != sx.shape[1]:
            raise DimensionMismatch("train and test inputs have different dimensions")
        object.__setattr__(self, "train_x", tx)
        object.__setattr__(self, "train_y", ty)
        object.__setattr__(self, "test_x", sx)

    @property
    def n_train(self) -> int:
        return self.train_x.shape[0]

    @property
    def n_test(self) -> int:
        return self.test_x.shape[0]

    @property
    def input_dim(self) -> int:
        return self.train_x.shape[1] if self.n_train else self.test_x.shape[1]

    def has_duplicate_inputs(self) -> bool:
        return np.unique(self.train_x, axis=0).shape[0] < self.n_train


@dataclass(frozen=True)
class GaussianPosterior:
    mean: np.ndarray
    cov: np.ndarray
    provenance: Provenance
    jitter: float = 0.0

    @property
    def var(self) -> np.ndarray:
        return np.diag(self.cov).copy()


def _check(kernel: KernelMatrices, data: Dataset, need_train: bool) -> None:
    if kernel.n_test != data.n_test:
        raise DimensionMismatch(f"kernel has {kernel.n_test} test points, data has {data.n_test}")
    if need_train and kernel.n_train != data.n_train:
        raise DimensionMismatch(f"kernel has {kernel.n_train} training points, data has {data.n_train}")


def gram_factor(train_train: np.ndarray, noise: float = 0.0) -> CholeskyFactor:
    """Cholesky of ``K(X, X) + noise I``; exhausting the jitter ladder raises SingularGram."""
    a = train_train + noise * np.eye(train_train.shape[0]) if noise else train_train
    try:
        return cholesky(a)
    except NotPSD as exc:
        if isinstance(exc, SingularGram):
            raise
        raise SingularGram(str(exc)) from exc


def conditional_mean(cross: np.ndarray, factor: CholeskyFactor, y: np.ndarray) -> np.ndarray:
    """``K(x, X) K(X, X)^{-1} y``; the single code path for every posterior mean."""
    return cross @ factor_solve(factor, y)


def gp_prior(kernel: KernelMatrices, data: Dataset, provenance: Provenance = Provenance.PRIOR) -> GaussianPosterior:
    """Zero-mean prior predictive at the test points."""
    _check(kernel, data, need_train=False)
    return GaussianPosterior(np.zeros(data.n_test), kernel.test_test.copy(), provenance)


def gp_posterior(
    kernel: KernelMatrices,
    data: Dataset,
    noise: float = 0.0,
    provenance: Provenance = Provenance.RBF_GP,
) -> GaussianPosterior:
    """Condition the GP on the training points.

    mean = K(x,X) (K(X,X) + noise I)^{-1} Y
    cov  = K(x,x) - K(x,X) (K(X,X) + noise I)^{-1} K(X,x)

    ``noise=0`` is the noiseless case.
    """
    if data.n_train < 1:
        raise DimensionMismatch("gp_posterior needs at least one training point")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    _check(kernel, data, need_train=True)
    factor = gram_factor(kernel.train_train, noise)
    mean = conditional_mean(kernel.test_train, factor, data.train_y)
    half = half_solve(factor, kernel.test_train.T)
    cov = kernel.test_test - half.T @ half
    cov = 0.5 * (cov + cov.T)
    return GaussianPosterior(mean, cov, provenance, factor.jitter)


def gp_posterior_sample(post: GaussianPosterior, rng: SeededRng, count: int) -> np.ndarray:
    return mvn_sample(post.mean, post.cov, rng, count)
