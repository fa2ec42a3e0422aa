"""Experiment configuration: a flat ``key = value`` text format.

Grammar, one entry per line::

    # comment
    key = value    # trailing comments allowed outside strings

``value`` is a JSON literal (number, double-quoted string, list, ``true``,
``false``, ``null``) or a bare word such as ``erf`` or ``FULL``, read as a
string. Keys may appear at most once; unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .architecture import ACTIVATIONS
from .errors import ParseError, ValidationError

EXPERIMENTS = (
    "kernel-convergence",
    "posterior-compare",
    "trajectory",
    "ensemble-compare",
    "nlm-compare",
    "mfvi-collapse",
    "timing-scaling",
)
DATASETS = ("toy", "inline", "csv")
MODES = ("FULL", "LAST_LAYER_ONLY")

_LINE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*?)\s*$")
_BARE = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-./]*$")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int = 0
    output_dir: str = ""
    threads: int = 1

    # dataset
    dataset: str = "toy"
    toy_n: int = 8
    toy_low: float = -2.0
    toy_high: float = 2.0
    gap_low: float = -0.5
    gap_high: float = 0.5
    toy_noise: float = 0.0
    train_x: list = field(default_factory=list)
    train_y: list = field(default_factory=list)
    test_x: list = field(default_factory=list)
    csv_path: str = ""
    test_n: int = 41
    test_low: float = -3.0
    test_high: float = 3.0

    # architecture
    activation: str = "erf"
    depth: int = 1
    width: int = 512
    sigma_w: float = 1.5
    sigma_b: float = 0.1

    # training
    learning_rate: Optional[float] = None
    steps: int = 10000
    loss_tol: float = 1e-8
    record_every: int = 10
    modes: list = field(default_factory=lambda: list(MODES))
    members: int = 64
    repetitions: int = 1

    # kernels and GP
    rbf_sigma: float = 1.0
    rbf_length: float = 1.0
    noise: float = 0.0
    widths: list = field(default_factory=lambda: [64, 256, 1024])
    samples: int = 2000

    # neural linear model
    alpha: float = 100.0
    beta: float = 1.0

    # mean-field VI
    prior_std: float = 1.0
    obs_std: float = 0.1
    mfvi_steps: int = 3000
    mfvi_lr: float = 1e-3
    mc_samples: int = 32
    predictive_samples: int = 1000

    # timing
    sizes: list = field(default_factory=lambda: [100, 200, 400, 800])
    timing_repeats: int = 5

    def replace(self, **changes) -> "ExperimentConfig":
        return validate(dataclasses.replace(self, **changes))

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_INT_FIELDS = {n for n, f in _FIELDS.items() if f.type in ("int",)}
_FLOAT_FIELDS = {n for n, f in _FIELDS.items() if f.type in ("float", "Optional[float]")}
_STR_FIELDS = {n for n, f in _FIELDS.items() if f.type == "str"}
_LIST_FIELDS = {n for n, f in _FIELDS.items() if f.type == "list"}


def _strip_comment(text: str) -> str:
    in_string = escaped = False
    for i, ch in enumerate(text):
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch == "#":
            return text[:i]
    return text


def _parse_value(raw: str, line: int) -> Any:
    if not raw:
        raise ParseError("missing value", line)
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        if _BARE.match(raw):
            return raw
        raise ParseError(f"cannot parse value {raw!r}", line) from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate configuration text."""
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = _strip_comment(line).strip()
        if not body:
            continue
        m = _LINE.match(body)
        if not m:
            raise ParseError(f"expected 'key = value', got {body!r}", lineno)
        key, raw = m.group(1), m.group(2)
        if key in values:
            raise ParseError(f"duplicate key {key!r}", lineno)
        if key not in _FIELDS:
            raise ValidationError(key, "unknown key")
        values[key] = _parse_value(raw, lineno)
    if "experiment" not in values:
        raise ValidationError("experiment", "required")
    return validate(ExperimentConfig(**values))


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def _coerce(name: str, value: Any) -> Any:
    if name in _INT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(name, f"expected an integer, got {value!r}")
        return value
    if name in _FLOAT_FIELDS:
        if value is None and name == "learning_rate":
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(name, f"expected a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise ValidationError(name, "must be finite")
        return value
    if name in _STR_FIELDS:
        if not isinstance(value, str):
            raise ValidationError(name, f"expected a string, got {value!r}")
        return value
    if name in _LIST_FIELDS:
        if not isinstance(value, list):
            raise ValidationError(name, f"expected a list, got {value!r}")
        return value
    return value


def _require(cond: bool, name: str, message: str) -> None:
    if not cond:
        raise ValidationError(name, message)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Type-check and range-check every field; returns a normalized copy."""
    coerced = {name: _coerce(name, getattr(cfg, name)) for name in _FIELDS}
    c = ExperimentConfig(**coerced)
    _require(c.experiment in EXPERIMENTS, "experiment", f"must be one of {EXPERIMENTS}")
    _require(0 <= c.seed < 2**64, "seed", "must be an unsigned 64-bit integer")
    _require(c.threads >= 1, "threads", "must be at least 1")
    _require(c.dataset in DATASETS, "dataset", f"must be one of {DATASETS}")
    _require(c.toy_n >= 1, "toy_n", "must be positive")
    _require(c.toy_low < c.toy_high, "toy_high", "must exceed toy_low")
    _require(c.gap_low <= c.gap_high, "gap_high", "must not be below gap_low")
    _require(c.toy_noise >= 0, "toy_noise", "must be non-negative")
    if c.dataset == "inline":
        _require(len(c.train_x) == len(c.train_y), "train_y", "must have the same length as train_x")
        for name in ("train_x", "train_y", "test_x"):
            for v in getattr(c, name):
                vals = v if isinstance(v, list) else [v]
                _require(all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in vals),
                         name, "entries must be numbers or lists of numbers")
    if c.dataset == "csv":
        _require(bool(c.csv_path), "csv_path", "required when dataset = csv")
        _require(Path(c.csv_path).is_file(), "csv_path", f"file not found: {c.csv_path}")
    _require(c.test_n >= 1, "test_n", "must be positive")
    _require(c.test_low <= c.test_high, "test_high", "must not be below test_low")
    _require(c.activation in ACTIVATIONS, "activation", f"must be one of {ACTIVATIONS}")
    _require(c.depth >= 0, "depth", "must be non-negative")
    _require(c.width >= 1, "width", "must be positive")
    _require(c.sigma_w > 0, "sigma_w", "must be positive")
    _require(c.sigma_b >= 0, "sigma_b", "must be non-negative")
    _require(c.learning_rate is None or c.learning_rate > 0, "learning_rate", "must be positive")
    _require(c.steps >= 0, "steps", "must be non-negative")
    _require(c.loss_tol > 0, "loss_tol", "must be positive")
    _require(c.record_every >= 1, "record_every", "must be positive")
    _require(len(c.modes) > 0 and all(m in MODES for m in c.modes), "modes", f"entries must be in {MODES}")
    _require(c.members >= 2, "members", "must be at least 2")
    _require(c.repetitions >= 1, "repetitions", "must be positive")
    _require(c.rbf_sigma > 0, "rbf_sigma", "must be positive")
    _require(c.rbf_length > 0, "rbf_length", "must be positive")
    _require(c.noise >= 0, "noise", "must be non-negative")
    _require(len(c.widths) > 0 and all(isinstance(w, int) and w >= 1 for w in c.widths),
             "widths", "must be a non-empty list of positive integers")
    _require(c.samples >= 1, "samples", "must be positive")
    _require(c.alpha > 0, "alpha", "must be positive")
    _require(c.beta > 0, "beta", "must be positive")
    _require(c.prior_std > 0, "prior_std", "must be positive")
    _require(c.obs_std > 0, "obs_std", "must be positive")
    _require(c.mfvi_steps >= 0, "mfvi_steps", "must be non-negative")
    _require(c.mfvi_lr > 0, "mfvi_lr", "must be positive")
    _require(c.mc_samples >= 1, "mc_samples", "must be positive")
    _require(c.predictive_samples >= 1, "predictive_samples", "must be positive")
    _require(len(c.sizes) > 0 and all(isinstance(n, int) and n >= 2 for n in c.sizes),
             "sizes", "must be a non-empty list of integers >= 2")
    _require(c.timing_repeats >= 1, "timing_repeats", "must be positive")
    return c


def serialize_config(cfg: ExperimentConfig) -> str:
    """Text form that :func:`parse_config` maps back to an equal config."""
    lines = []
    for name in _FIELDS:
        value = getattr(cfg, name)
        if value is None:
            continue
        lines.append(f"{name} = {json.dumps(value)}")
    return "\n".join(lines) + "\n"
