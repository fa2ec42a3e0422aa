r"""Analytic kernels of wide MLPs and Monte Carlo estimators of them.

Layer recursion (``d`` = input dimension, ``L`` = number of hidden layers)::

    K0(x, x')    = sigma_b^2 + sigma_w^2 <x, x'> / d
    K(l)(x, x')  = sigma_b^2 + sigma_w^2 E[phi(u) phi(v)]
    Kd(l)(x, x') = sigma_w^2 E[phi'(u) phi'(v)]
    T0           = K0
    T(l)         = K(l) + Kd(l) * T(l-1)

with ``(u, v) ~ N(0, [[K(l-1)(x,x), K(l-1)(x,x')], [., K(l-1)(x',x')]])``.
The NNGP kernel is ``K(L)`` and the NTK is ``T(L)``.

Gaussian expectations used (``s11, s22, s12`` the entries of the 2x2 covariance):

erf
    ``E[erf u erf v] = 2/pi * arcsin(2 s12 / sqrt((1 + 2 s11)(1 + 2 s22)))``
    ``E[erf' u erf' v] = 4/pi / sqrt((1 + 2 s11)(1 + 2 s22) - 4 s12^2)``
relu (arc-cosine kernels of degree 1 and 0, ``cos t = s12 / sqrt(s11 s22)``)
    ``E[relu u relu v] = sqrt(s11 s22) / (2 pi) * (sin t + (pi - t) cos t)``
    ``E[step u step v] = (pi - t) / (2 pi)``
identity
    ``E[u v] = s12`` and ``E[1 * 1] = 1``

tanh has no closed form; use :func:`empirical_nngp` or :func:`infuq.nets.empirical_ntk`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .architecture import ANALYTIC_ACTIVATIONS, Architecture
from .errors import DimensionMismatch, UnsupportedActivation
from .linalg_stats import SeededRng


class KernelKind(str, Enum):
    RBF = "RBF"
    NNGP = "NNGP"
    NTK = "NTK"
    EMPIRICAL_NNGP = "EMPIRICAL_NNGP"
    EMPIRICAL_NTK = "EMPIRICAL_NTK"


@dataclass(frozen=True)
class RBFParams:
    sigma: float = 1.0
    length: float = 1.0

    def __post_init__(self):
        if not (self.sigma > 0 and self.length > 0):
            raise ValueError("RBF sigma and length must be strictly positive")


@dataclass(frozen=True)
class KernelMatrices:
    """Kernel blocks over a training set (N points) and a test set (M points)."""

    train_train: np.ndarray
    test_train: np.ndarray
    test_test: np.ndarray
    kind: KernelKind

    def __post_init__(self):
        n = self.train_train.shape[0]
        m = self.test_test.shape[0]
        if self.train_train.shape != (n, n) or self.test_test.shape != (m, m):
            raise DimensionMismatch("train_train and test_test must be square")
        if self.test_train.shape != (m, n):
            raise DimensionMismatch(f"test_train has shape {self.test_train.shape}, expected {(m, n)}")

    @property
    def n_train(self) -> int:
        return self.train_train.shape[0]

    @property
    def n_test(self) -> int:
        return self.test_test.shape[0]

    def joint(self) -> np.ndarray:
        """Full ``(N+M) x (N+M)`` matrix, training points first."""
        top = np.hstack([self.train_train, self.test_train.T])
        bottom = np.hstack([self.test_train, self.test_test])
        return np.vstack([top, bottom])


def _points(xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim == 1:
        xs = xs[:, None]
    if xs.ndim != 2:
        raise DimensionMismatch(f"point set must be 2-d, got shape {xs.shape}")
    return xs


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _inner(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # fixed summation order over features so that k(x, x') == k(x', x) bit for bit
    out = np.zeros((a.shape[0], b.shape[0]))
    for j in range(a.shape[1]):
        out += a[:, j, None] * b[None, :, j]
    return out


# --- RBF -------------------------------------------------------------------


def rbf_kernel(x, x2, p: RBFParams) -> float:
    """``sigma^2 exp(-|x - x2|^2 / (2 l^2))``."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    x2 = np.atleast_1d(np.asarray(x2, dtype=np.float64))
    if x.shape != x2.shape:
        raise DimensionMismatch(f"{x.shape} vs {x2.shape}")
    sq = float(np.sum(np.square(x - x2)))
    return p.sigma**2 * math.exp(-sq / (2.0 * p.length**2))


def rbf_gram(xs, xs2, p: RBFParams) -> np.ndarray:
    xs, xs2 = _points(xs), _points(xs2)
    if xs.shape[1] != xs2.shape[1]:
        raise DimensionMismatch(f"input dims {xs.shape[1]} and {xs2.shape[1]} differ")
    sq = np.zeros((xs.shape[0], xs2.shape[0]))
    for j in range(xs.shape[1]):
        sq += np.square(xs[:, j, None] - xs2[None, :, j])
    return p.sigma**2 * np.exp(-sq / (2.0 * p.length**2))


def rbf_matrices(train_x, test_x, p: RBFParams) -> KernelMatrices:
    return KernelMatrices(
        train_train=_symmetrize(rbf_gram(train_x, train_x, p)),
        test_train=rbf_gram(test_x, train_x, p),
        test_test=_symmetrize(rbf_gram(test_x, test_x, p)),
        kind=KernelKind.RBF,
    )


# --- Gaussian expectations --------------------------------------------------


def _erf_pair(s11, s22, s12):
    denom = np.sqrt((1.0 + 2.0 * s11) * (1.0 + 2.0 * s22))
    value = (2.0 / math.pi) * np.arcsin(np.clip(2.0 * s12 / denom, -1.0, 1.0))
    det = (1.0 + 2.0 * s11) * (1.0 + 2.0 * s22) - 4.0 * s12 * s12
    deriv = (4.0 / math.pi) / np.sqrt(np.maximum(det, 1e-300))
    return value, deriv


def _relu_pair(s11, s22, s12):
    norm = np.sqrt(s11 * s22)
    positive = norm > 0
    safe = np.where(positive, norm, 1.0)
    cos = np.where(positive, np.clip(s12 / safe, -1.0, 1.0), 0.0)
    angle = np.arccos(cos)
    value = norm * (np.sin(angle) + (math.pi - angle) * cos) / (2.0 * math.pi)
    deriv = np.where(positive, (math.pi - angle) / (2.0 * math.pi), 0.0)
    return value, deriv


def _identity_pair(s11, s22, s12):
    return s12, np.ones(np.broadcast(s11, s22, s12).shape)


_PAIRS = {"erf": _erf_pair, "relu": _relu_pair, "identity": _identity_pair}


def _recursion(arch: Architecture, xs: np.ndarray, xs2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cross NNGP and NTK matrices between two point sets."""
    if arch.activation not in ANALYTIC_ACTIVATIONS:
        raise UnsupportedActivation(
            f"no closed-form kernel for {arch.activation!r}; use the empirical estimators"
        )
    if xs.shape[1] != arch.input_dim or xs2.shape[1] != arch.input_dim:
        raise DimensionMismatch(f"architecture expects input_dim {arch.input_dim}")
    pair = _PAIRS[arch.activation]
    sw2, sb2, d = arch.sigma_w**2, arch.sigma_b**2, arch.input_dim

    k12 = sb2 + sw2 * _inner(xs, xs2) / d
    k11 = sb2 + sw2 * np.sum(np.square(xs), axis=1) / d
    k22 = sb2 + sw2 * np.sum(np.square(xs2), axis=1) / d
    ntk = k12.copy()
    for _ in range(arch.depth):
        value, deriv = pair(k11[:, None], k22[None, :], k12)
        diag1, _ = pair(k11, k11, k11)
        diag2, _ = pair(k22, k22, k22)
        k12 = sb2 + sw2 * value
        ntk = k12 + sw2 * deriv * ntk
        k11 = sb2 + sw2 * diag1
        k22 = sb2 + sw2 * diag2
    return k12, ntk


def nngp_gram(arch: Architecture, xs, xs2=None) -> np.ndarray:
    xs = _points(xs)
    same = xs2 is None
    out = _recursion(arch, xs, xs if same else _points(xs2))[0]
    return _symmetrize(out) if same else out


def ntk_gram(arch: Architecture, xs, xs2=None) -> np.ndarray:
    xs = _points(xs)
    same = xs2 is None
    out = _recursion(arch, xs, xs if same else _points(xs2))[1]
    return _symmetrize(out) if same else out


def nngp_kernel(arch: Architecture, xs, xs2) -> KernelMatrices:
    """NNGP blocks with ``xs`` as the training set and ``xs2`` as the test set."""
    return KernelMatrices(
        train_train=nngp_gram(arch, xs),
        test_train=nngp_gram(arch, xs2, xs),
        test_test=nngp_gram(arch, xs2),
        kind=KernelKind.NNGP,
    )


def ntk_kernel(arch: Architecture, xs, xs2) -> KernelMatrices:
    """NTK blocks with ``xs`` as the training set and ``xs2`` as the test set."""
    return KernelMatrices(
        train_train=ntk_gram(arch, xs),
        test_train=ntk_gram(arch, xs2, xs),
        test_test=ntk_gram(arch, xs2),
        kind=KernelKind.NTK,
    )


# --- Monte Carlo estimators ------------------------------------------------


def empirical_nngp(
    arch: Architecture,
    xs,
    samples: int,
    rng: SeededRng,
    max_chunk_params: int = 4_000_000,
    estimator: str = "output",
) -> tuple[KernelMatrices, np.ndarray]:
    """Monte Carlo second moment ``mean_s f_s(x) f_s(x')`` over ``samples`` initializations.

    Initialization ``s`` draws from ``rng.stream(s)``. Returns the estimate
    (as the train block of a KernelMatrices with an empty test set) and the
    entrywise standard error.

    ``estimator="readout"`` averages the readout weights out analytically,
    using ``sigma_w^2 <h, h'> / n + sigma_b^2`` from the last hidden features
    ``h`` of each sample. Same expectation, but the noise also shrinks with
    width, so it exposes finite-width bias that the plain estimator hides.
    """
    from . import nets

    if not arch.is_finite:
        raise ValueError("empirical_nngp needs concrete hidden widths")
    if samples < 1:
        raise ValueError("samples must be positive")
    if estimator not in ("output", "readout"):
        raise ValueError(f"unknown estimator {estimator!r}")
    xs = _points(xs)
    n = xs.shape[0]
    total = np.zeros((n, n))
    total_sq = np.zeros((n, n))
    sizes = arch.layer_sizes()
    per_net = sum(a * b for a, b in zip(sizes[:-1], sizes[1:]))
    chunk = max(1, max_chunk_params // per_net)
    for start in range(0, samples, chunk):
        ids = range(start, min(samples, start + chunk))
        params = nets.init_stack(arch, [rng.stream(s) for s in ids])
        if estimator == "output":
            out = nets.forward(arch, params, xs)  # (chunk, n)
            prods = out[:, :, None] * out[:, None, :]
        else:
            h = nets.features(arch, params, xs)  # (chunk, n, width)
            prods = arch.sigma_w**2 / h.shape[-1] * (h @ np.swapaxes(h, -1, -2)) + arch.sigma_b**2
        total += prods.sum(axis=0)
        total_sq += np.square(prods).sum(axis=0)
    mean = total / samples
    if samples > 1:
        var = np.maximum(total_sq / samples - np.square(mean), 0.0) * samples / (samples - 1)
        stderr = np.sqrt(var / samples)
    else:
        stderr = np.full((n, n), np.inf)
    mats = KernelMatrices(mean, np.zeros((0, n)), np.zeros((0, 0)), KernelKind.EMPIRICAL_NNGP)
    return mats, stderr


def monte_carlo_moments(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error over the leading axis."""
    values = np.asarray(values, dtype=np.float64)
    count = values.shape[0]
    mean = values.mean(axis=0)
    if count < 2:
        return mean, np.full(mean.shape, np.inf)
    return mean, values.std(axis=0, ddof=1) / math.sqrt(count)


def analytic_kernel(kind: KernelKind, arch: Architecture, xs, xs2) -> KernelMatrices:
    if kind == KernelKind.NNGP:
        return nngp_kernel(arch, xs, xs2)
    if kind == KernelKind.NTK:
        return ntk_kernel(arch, xs, xs2)
    raise ValueError(f"not an analytic MLP kernel: {kind}")


def max_entry_error(estimate: np.ndarray, reference: np.ndarray) -> float:
    return float(np.max(np.abs(estimate - reference)))


def z_scores(estimate: np.ndarray, reference: np.ndarray, stderr: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(estimate - reference) / stderr
    return np.where(np.abs(estimate - reference) == 0, 0.0, z)

