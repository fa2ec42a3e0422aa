"""Finite-width MLPs in NTK parameterization, hand-rolled backprop and gradient descent.

Every routine accepts parameters with an optional leading *stack* axis, so an
ensemble of equally shaped networks trains in one vectorized loop. Weight
``l`` has shape ``(*stack, fan_out, fan_in)`` and bias ``l`` has shape
``(*stack, fan_out)``; outputs come back as ``(*stack, N)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .architecture import Architecture, activation
from .errors import DimensionMismatch, Diverged
from .gp import Dataset
from .kernels import KernelKind, KernelMatrices
from .linalg_stats import SeededRng

DIVERGENCE_FACTOR = 1e6


@dataclass
class Params:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def stack_shape(self) -> tuple[int, ...]:
        return self.weights[0].shape[:-2]

    @property
    def size(self) -> int:
        """Number of scalar parameters in one network."""
        return sum(math.prod(w.shape[-2:]) for w in self.weights) + sum(b.shape[-1] for b in self.biases)

    def copy(self) -> "Params":
        return Params([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        """Per-layer ``W, b`` in interleaved order (the flattening order)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def flatten(self) -> np.ndarray:
        lead = self.stack_shape
        return np.concatenate([a.reshape(*lead, -1) for a in self.arrays()], axis=-1)

    def member(self, i: int) -> "Params":
        return Params([w[i] for w in self.weights], [b[i] for b in self.biases])

    def map(self, fn) -> "Params":
        return Params([fn(w) for w in self.weights], [fn(b) for b in self.biases])


def unflatten(arch: Architecture, flat: np.ndarray) -> Params:
    flat = np.asarray(flat, dtype=np.float64)
    lead = flat.shape[:-1]
    sizes = arch.layer_sizes()
    weights, biases, pos = [], [], 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        n = fan_in * fan_out
        weights.append(flat[..., pos : pos + n].reshape(*lead, fan_out, fan_in).copy())
        pos += n
        biases.append(flat[..., pos : pos + fan_out].copy())
        pos += fan_out
    if pos != flat.shape[-1]:
        raise DimensionMismatch(f"flat vector has {flat.shape[-1]} entries, architecture needs {pos}")
    return Params(weights, biases)


def init(arch: Architecture, rng: SeededRng) -> Params:
    """All weights and biases iid N(0, 1); scaling lives in the forward pass."""
    sizes = arch.layer_sizes()
    gen = rng.generator()
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(gen.standard_normal((fan_out, fan_in)))
        biases.append(gen.standard_normal(fan_out))
    return Params(weights, biases)


def init_stack(arch: Architecture, rngs: Sequence[SeededRng]) -> Params:
    """Stack of independent initializations, member ``i`` drawn from ``rngs[i]``."""
    members = [init(arch, r) for r in rngs]
    return Params(
        [np.stack([m.weights[l] for m in members]) for l in range(arch.depth + 1)],
        [np.stack([m.biases[l] for m in members]) for l in range(arch.depth + 1)],
    )


def _inputs(arch: Architecture, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1 and arch.input_dim == x.shape[0]
    if x.ndim == 1:
        x = x[None, :] if single else x[:, None]
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise DimensionMismatch(f"expected inputs of dimension {arch.input_dim}, got shape {x.shape}")
    return x, single


def _scales(arch: Architecture) -> list[float]:
    return [arch.sigma_w / math.sqrt(n) for n in arch.layer_sizes()[:-1]]


def _forward_cache(arch: Architecture, params: Params, xs: np.ndarray):
    """Layer inputs and pre-activations for every layer."""
    phi, _ = activation(arch.activation)
    scales = _scales(arch)
    a = xs
    inputs, pre = [], []
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        h = scales[l] * (a @ np.swapaxes(w, -1, -2)) + arch.sigma_b * b[..., None, :]
        pre.append(h)
        if l < arch.depth:
            a = phi(h)
    return inputs, pre


def forward(arch: Architecture, params: Params, x) -> np.ndarray:
    """Network output ``f(x, theta)``.

    A single input vector gives a scalar (or one value per stacked network);
    an ``(N, d)`` point set gives ``(*stack, N)``.
    """
    xs, single = _inputs(arch, x)
    _, pre = _forward_cache(arch, params, xs)
    out = pre[-1][..., 0]
    if single:
        out = out[..., 0]
        return float(out) if out.ndim == 0 else out
    return out


def features(arch: Architecture, params: Params, x) -> np.ndarray:
    """Last hidden layer activations (the input itself for a depth-0 network)."""
    xs, _ = _inputs(arch, x)
    inputs, _ = _forward_cache(arch, params, xs)
    return inputs[-1]


def _backward(arch, params, inputs, pre, cot, last_only=False):
    """Reverse pass for the output cotangent ``cot`` of shape ``(*stack, N)``."""
    _, dphi = activation(arch.activation)
    scales = _scales(arch)
    delta = cot[..., :, None]
    gw = [None] * (arch.depth + 1)
    gb = [None] * (arch.depth + 1)
    for l in range(arch.depth, -1, -1):
        gw[l] = scales[l] * (np.swapaxes(delta, -1, -2) @ inputs[l])
        gb[l] = arch.sigma_b * delta.sum(axis=-2)
        if l == 0 or last_only:
            break
        delta = (scales[l] * (delta @ params.weights[l])) * dphi(pre[l - 1])
    return gw, gb


def vjp(arch: Architecture, params: Params, x, cotangent) -> Params:
    """``sum_i c_i * d f(x_i) / d theta`` for every parameter."""
    xs, _ = _inputs(arch, x)
    inputs, pre = _forward_cache(arch, params, xs)
    cot = np.broadcast_to(np.asarray(cotangent, dtype=np.float64), pre[-1].shape[:-1])
    gw, gb = _backward(arch, params, inputs, pre, cot)
    return Params(gw, gb)


def loss(arch: Architecture, params: Params, data: Dataset) -> float | np.ndarray:
    """Mean squared error ``(1/N) sum_i (y_i - f(x_i))^2``."""
    resid = data.train_y - forward(arch, params, data.train_x)
    return np.mean(np.square(resid), axis=-1)


def _loss_and_grad(arch, params, data, last_only=False):
    inputs, pre = _forward_cache(arch, params, data.train_x)
    out = pre[-1][..., 0]
    resid = out - data.train_y
    n = data.n_train
    value = np.mean(np.square(resid), axis=-1)
    gw, gb = _backward(arch, params, inputs, pre, (2.0 / n) * resid, last_only=last_only)
    return value, gw, gb, out


def grad(arch: Architecture, params: Params, data: Dataset) -> Params:
    """Exact gradient of the MSE loss with respect to all parameters."""
    _, gw, gb, _ = _loss_and_grad(arch, params, data)
    return Params(gw, gb)


def output_jacobian(arch: Architecture, params: Params, x) -> np.ndarray:
    """``(N, P)`` matrix of flattened output gradients for a single network."""
    xs, _ = _inputs(arch, x)
    rows = []
    for i in range(xs.shape[0]):
        g = vjp(arch, params, xs[i : i + 1], np.ones(1))
        rows.append(g.flatten())
    return np.stack(rows)


def empirical_ntk_gram(arch: Architecture, params: Params, xs, last_layer_only: bool = False) -> np.ndarray:
    """Gram matrix of output gradients, ``grad f(x) . grad f(x')``.

    Uses the layerwise factorization
    ``sum_l (scale_l^2 <a_l(x), a_l(x')> + sigma_b^2) <delta_l(x), delta_l(x')>``
    so the per-parameter Jacobian is never materialized.
    """
    xs, _ = _inputs(arch, xs)
    _, dphi = activation(arch.activation)
    scales = _scales(arch)
    inputs, pre = _forward_cache(arch, params, xs)
    delta = np.ones(pre[-1].shape)
    gram = 0.0
    for l in range(arch.depth, -1, -1):
        a = inputs[l]
        a_gram = scales[l] ** 2 * (a @ np.swapaxes(a, -1, -2)) + arch.sigma_b**2
        gram = gram + a_gram * (delta @ np.swapaxes(delta, -1, -2))
        if l == 0 or last_layer_only:
            break
        delta = (scales[l] * (delta @ params.weights[l])) * dphi(pre[l - 1])
    return 0.5 * (gram + np.swapaxes(gram, -1, -2))


def empirical_ntk(arch: Architecture, params: Params, xs, xs2=None) -> KernelMatrices:
    """Empirical NTK blocks of one network; ``xs`` is the training set and ``xs2`` the test set."""
    if params.stack_shape:
        raise ValueError("empirical_ntk expects a single network; use empirical_ntk_gram for stacks")
    xs, _ = _inputs(arch, xs)
    xs2 = np.zeros((0, arch.input_dim)) if xs2 is None else _inputs(arch, xs2)[0]
    n = xs.shape[0]
    full = empirical_ntk_gram(arch, params, np.vstack([xs, xs2]))
    return KernelMatrices(
        train_train=full[:n, :n],
        test_train=full[n:, :n],
        test_test=full[n:, n:],
        kind=KernelKind.EMPIRICAL_NTK,
    )


def ntk_drift(arch: Architecture, before: Params, after: Params, xs) -> np.ndarray:
    """Relative Frobenius change ``|T_after - T_before| / |T_before|`` of the empirical NTK Gram."""
    t0 = empirical_ntk_gram(arch, before, xs)
    t1 = empirical_ntk_gram(arch, after, xs)
    axes = (-2, -1)
    return np.linalg.norm(t1 - t0, axis=axes) / np.linalg.norm(t0, axis=axes)


# --- training ----------------------------------------------------------------


class TrainingMode(str, Enum):
    FULL = "FULL"
    LAST_LAYER_ONLY = "LAST_LAYER_ONLY"


@dataclass(frozen=True)
class TrainingConfig:
    """Full-batch gradient descent settings.

    ``learning_rate=None`` picks half the stability bound of each network.
    Training stops early once every network's loss is below ``loss_tol``.
    """

    learning_rate: Optional[float] = None
    steps: int = 1000
    mode: TrainingMode = TrainingMode.FULL
    record_every: int = 1
    loss_tol: Optional[float] = None
    record_predictions: bool = False

    def __post_init__(self):
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.record_every < 1:
            raise ValueError("record_every must be positive")
        object.__setattr__(self, "mode", TrainingMode(self.mode))


@dataclass
class TrainingTrace:
    steps: list[int] = field(default_factory=list)
    loss: list[np.ndarray] = field(default_factory=list)
    train_predictions: list[np.ndarray] = field(default_factory=list)
    test_predictions: list[np.ndarray] = field(default_factory=list)
    learning_rate: Optional[np.ndarray] = None
    steps_taken: int = 0
    converged: bool = False

    @property
    def final_loss(self):
        return self.loss[-1]


def stability_bound(arch: Architecture, params: Params, data: Dataset, mode: TrainingMode = TrainingMode.FULL):
    """Largest stable step for gradient descent on the mean squared error.

    The Gauss-Newton curvature of ``(1/N) |f - y|^2`` is ``(2/N) J^T J``, whose top
    eigenvalue is ``(2/N) lambda_max(NTK)``; steps below ``N / lambda_max`` are stable.
    """
    gram = empirical_ntk_gram(arch, params, data.train_x, last_layer_only=mode == TrainingMode.LAST_LAYER_ONLY)
    lam = np.linalg.eigvalsh(gram)[..., -1]
    return data.n_train / lam


def function_space_rate(learning_rate, n_train: int):
    """Rate multiplying the NTK in output space for a parameter-space step size."""
    return 2.0 * np.asarray(learning_rate) / n_train


def _bcast(values, arr):
    values = np.asarray(values, dtype=np.float64)
    return values.reshape(values.shape + (1,) * (arr.ndim - values.ndim))


def train(arch: Architecture, params: Params, data: Dataset, cfg: TrainingConfig) -> tuple[Params, TrainingTrace]:
    """Full-batch gradient descent ``theta <- theta - lr * grad L``.

    In LAST_LAYER_ONLY mode the hidden layers are never touched.
    """
    params = params.copy()
    last_only = cfg.mode == TrainingMode.LAST_LAYER_ONLY
    if cfg.learning_rate is None:
        lr = 0.5 * stability_bound(arch, params, data, cfg.mode)
    else:
        lr = np.full(params.stack_shape, cfg.learning_rate)
    trace = TrainingTrace(learning_rate=np.asarray(lr))
    has_test = data.n_test > 0 and cfg.record_predictions

    def record(step, value, out):
        trace.steps.append(step)
        trace.loss.append(np.asarray(value).copy())
        if cfg.record_predictions:
            trace.train_predictions.append(out.copy())
            if has_test:
                trace.test_predictions.append(forward(arch, params, data.test_x))

    value, gw, gb, out = _loss_and_grad(arch, params, data, last_only)
    initial = np.asarray(value)
    record(0, value, out)
    step = 0
    while step < cfg.steps:
        if cfg.loss_tol is not None and np.all(value < cfg.loss_tol):
            break
        first = arch.depth if last_only else 0
        for l in range(first, arch.depth + 1):
            params.weights[l] -= _bcast(lr, gw[l]) * gw[l]
            params.biases[l] -= _bcast(lr, gb[l]) * gb[l]
        step += 1
        value, gw, gb, out = _loss_and_grad(arch, params, data, last_only)
        if not np.all(np.isfinite(value)) or np.any(value > DIVERGENCE_FACTOR * np.maximum(initial, 1e-300)):
            raise Diverged(f"loss {np.max(value):.3e} at step {step} (initial {np.max(initial):.3e})")
        if step % cfg.record_every == 0:
            record(step, value, out)
    if trace.steps[-1] != step:
        record(step, value, out)
    trace.steps_taken = step
    trace.converged = cfg.loss_tol is not None and bool(np.all(value < cfg.loss_tol))
    return params, trace


# --- persistence -------------------------------------------------------------

PARAMS_FORMAT = "infuq-params"


def save_params(path, arch: Architecture, params: Params) -> None:
    """Text format: JSON header with the architecture and layer shapes, then the flat vector."""
    if params.stack_shape:
        raise ValueError("save_params expects a single network")
    doc = {
        "format": PARAMS_FORMAT,
        "version": 1,
        "architecture": {
            "input_dim": arch.input_dim,
            "hidden_widths": list(arch.hidden_widths),
            "activation": arch.activation,
            "sigma_w": arch.sigma_w,
            "sigma_b": arch.sigma_b,
        },
        "shapes": [list(a.shape) for a in params.arrays()],
        "values": params.flatten().tolist(),
    }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_params(path) -> tuple[Architecture, Params]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != PARAMS_FORMAT:
        raise ValueError(f"{path} is not a {PARAMS_FORMAT} file")
    desc = doc["architecture"]
    arch = Architecture(
        desc["input_dim"], tuple(desc["hidden_widths"]), desc["activation"], desc["sigma_w"], desc["sigma_b"]
    )
    params = unflatten(arch, np.asarray(doc["values"], dtype=np.float64))
    if [list(a.shape) for a in params.arrays()] != doc["shapes"]:
        raise DimensionMismatch("shape header does not match the architecture")
    return arch, params
