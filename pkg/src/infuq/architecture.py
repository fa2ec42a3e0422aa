"""MLP description shared by the analytic kernels and the finite networks."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import special

from .errors import UnsupportedActivation

ACTIVATIONS = ("erf", "relu", "tanh", "identity")
ANALYTIC_ACTIVATIONS = ("erf", "relu", "identity")

_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(x):
    return (x > 0).astype(np.float64)


def _erf_grad(x):
    return _TWO_OVER_SQRT_PI * np.exp(-np.square(x))


def _tanh_grad(x):
    return 1.0 - np.square(np.tanh(x))


def _identity(x):
    return x


def _identity_grad(x):
    return np.ones_like(x)


_TABLE: dict[str, tuple[Callable, Callable]] = {
    "erf": (special.erf, _erf_grad),
    "relu": (_relu, _relu_grad),
    "tanh": (np.tanh, _tanh_grad),
    "identity": (_identity, _identity_grad),
}


def activation(name: str) -> tuple[Callable, Callable]:
    """Return ``(phi, phi_prime)`` for an activation name."""
    try:
        return _TABLE[name]
    except KeyError:
        raise UnsupportedActivation(f"unknown activation {name!r}; expected one of {ACTIVATIONS}") from None


@dataclass(frozen=True)
class Architecture:
    """Fully connected scalar-output network in NTK parameterization.

    Pre-activations are ``sigma_w / sqrt(fan_in) * W a + sigma_b * b`` with all
    entries of ``W`` and ``b`` standard normal. A width of ``None`` marks an
    infinite layer; only the analytic kernels accept those.
    """

    input_dim: int
    hidden_widths: tuple[Optional[int], ...] = ()
    activation: str = "erf"
    sigma_w: float = 1.0
    sigma_b: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(self.hidden_widths))
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        for w in self.hidden_widths:
            if w is not None and w < 1:
                raise ValueError(f"hidden widths must be positive, got {w}")
        if self.activation not in ACTIVATIONS:
            raise UnsupportedActivation(f"unknown activation {self.activation!r}")
        if not self.sigma_w > 0:
            raise ValueError("sigma_w must be positive")
        if not self.sigma_b >= 0:
            raise ValueError("sigma_b must be non-negative")

    @classmethod
    def infinite(cls, input_dim: int, depth: int, **kwargs) -> "Architecture":
        return cls(input_dim, (None,) * depth, **kwargs)

    @property
    def depth(self) -> int:
        return len(self.hidden_widths)

    @property
    def is_finite(self) -> bool:
        return all(w is not None for w in self.hidden_widths)

    def with_widths(self, *widths: Optional[int]) -> "Architecture":
        return Architecture(self.input_dim, tuple(widths), self.activation, self.sigma_w, self.sigma_b)

    def with_width(self, width: Optional[int]) -> "Architecture":
        """Same depth, every hidden layer set to ``width``."""
        return self.with_widths(*([width] * self.depth))

    def layer_sizes(self) -> list[int]:
        if not self.is_finite:
            raise ValueError("architecture has infinite layers")
        return [self.input_dim, *self.hidden_widths, 1]
