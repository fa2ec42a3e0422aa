"""Numerical substrate: jittered Cholesky, PSD solves and seeded Gaussian sampling.

Every matrix inverse in the library goes through :func:`cholesky`; nothing
calls ``np.linalg.inv``. Gram matrices of noiseless kernel models are often
near-singular, so the factorization walks a small jitter ladder before giving
up.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np
from scipy import linalg as sla

from .errors import DimensionMismatch, NotPSD, NotSymmetric

#: Diagonal increments tried in order, as multiples of the mean diagonal.
JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8)
SYMMETRY_RTOL = 1e-12


@dataclass(frozen=True)
class PSDMatrix:
    """A symmetric positive semi-definite matrix and the jitter it needed."""

    values: np.ndarray
    jitter_applied: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got shape {values.shape}")
        object.__setattr__(self, "values", values)

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class SeededRng:
    """Splittable, counter-based random stream.

    ``(seed, key)`` fully determines the draws. ``stream(i)`` derives an
    independent child, so ensemble member ``i`` can use ``base.stream(i)``
    regardless of how members are scheduled.
    """

    seed: int
    stream_id: int = 0
    parent: tuple = field(default=())

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2**64) or not (0 <= int(self.stream_id) < 2**64):
            raise ValueError("seed and stream_id must be unsigned 64-bit integers")

    @property
    def key(self) -> tuple:
        return self.parent + (int(self.stream_id),)

    def stream(self, stream_id: int) -> "SeededRng":
        return SeededRng(self.seed, stream_id, self.key)

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.key)
        return np.random.Generator(np.random.Philox(ss))


class CholeskyFactor(NamedTuple):
    lower: np.ndarray
    jitter: float


MatrixLike = Union[PSDMatrix, np.ndarray]


def _values(a: MatrixLike) -> np.ndarray:
    if isinstance(a, PSDMatrix):
        return a.values
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    return a


def check_symmetric(a: np.ndarray, rtol: float = SYMMETRY_RTOL) -> None:
    scale = np.max(np.abs(a)) if a.size else 0.0
    asym = np.max(np.abs(a - a.T)) if a.size else 0.0
    if asym > rtol * scale:
        raise NotSymmetric(f"asymmetry {asym:.3e} exceeds {rtol:g} x {scale:.3e}")


def cholesky(a: MatrixLike) -> CholeskyFactor:
    """Lower Cholesky factor of ``a + jitter * I``.

    Jitter starts at zero and escalates through ``JITTER_LADDER`` (relative to
    the mean diagonal). Raises NotSymmetric or NotPSD.
    """
    a = _values(a)
    check_symmetric(a)
    n = a.shape[0]
    if n == 0:
        return CholeskyFactor(np.zeros((0, 0)), 0.0)
    scale = float(np.mean(np.diag(a)))
    if scale == 0.0 and not np.any(a):
        # the zero matrix is PSD with a zero factor
        return CholeskyFactor(np.zeros_like(a), 0.0)
    for rel in JITTER_LADDER:
        jitter = rel * abs(scale)
        if rel > 0.0 and jitter == 0.0:
            continue
        try:
            lower = np.linalg.cholesky(a + jitter * np.eye(n) if jitter else a)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(lower)) and np.all(np.diag(lower) > 0):
            return CholeskyFactor(lower, jitter)
    raise NotPSD(f"Cholesky failed at maximum jitter {JITTER_LADDER[-1]:g} x {scale:.3e}")


def factor_solve(factor: CholeskyFactor, b: np.ndarray) -> np.ndarray:
    """Solve ``(a + jitter I) x = b`` given the factor of ``a``."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != factor.lower.shape[0]:
        raise DimensionMismatch(f"rhs has {b.shape[0]} rows, matrix is {factor.lower.shape[0]}")
    if b.size == 0:
        return np.zeros_like(b)
    return sla.cho_solve((factor.lower, True), b, check_finite=False)


def half_solve(factor: CholeskyFactor, b: np.ndarray) -> np.ndarray:
    """``L^{-1} b``, so that ``half_solve(f, b).T @ half_solve(f, c) == b.T a^{-1} c``."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != factor.lower.shape[0]:
        raise DimensionMismatch(f"rhs has {b.shape[0]} rows, matrix is {factor.lower.shape[0]}")
    if b.size == 0:
        return np.zeros_like(b)
    return sla.solve_triangular(factor.lower, b, lower=True, check_finite=False)


def psd_solve(a: MatrixLike, b: np.ndarray) -> np.ndarray:
    """Solve ``a x = b`` for symmetric PSD ``a`` through its Cholesky factor."""
    return factor_solve(cholesky(a), b)


def mvn_sample(mean: np.ndarray, cov: MatrixLike, rng: SeededRng, count: int) -> np.ndarray:
    """Draw ``count`` rows ``mean + L z`` with ``z`` standard normal."""
    mean = np.asarray(mean, dtype=np.float64)
    cov = _values(cov)
    if cov.shape[0] != mean.shape[0]:
        raise DimensionMismatch(f"mean has length {mean.shape[0]}, cov is {cov.shape[0]}")
    if count < 1:
        raise ValueError("count must be positive")
    lower = cholesky(cov).lower
    z = rng.generator().standard_normal((count, mean.shape[0]))
    return mean + z @ lower.T
