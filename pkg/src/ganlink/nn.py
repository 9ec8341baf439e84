"""Parameter containers, initialization and the Adam optimizer."""

from __future__ import annotations

import contextlib
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import ConfigError, UsageError
from .tensor import Tensor, get_dtype

INIT_STD = 0.02


@dataclass
class OptimConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {value}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")


@dataclass(frozen=True)
class ParamSpec:
    """One learned tensor: ``kind`` is weight, bias, gamma or beta."""

    name: str
    shape: tuple
    kind: str = "weight"


class ParamSet:
    """Ordered name -> Tensor map with Adam moment buffers and a shared step counter."""

    def __init__(self, tensors: Iterable[tuple[str, Tensor]] = ()):
        self._tensors: OrderedDict[str, Tensor] = OrderedDict()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0
        for name, tensor in tensors:
            self.add(name, tensor)

    def add(self, name: str, tensor: Tensor) -> None:
        if name in self._tensors:
            raise ConfigError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        tensor.name = name
        self._tensors[name] = tensor
        self.m[name] = np.zeros_like(tensor.data)
        self.v[name] = np.zeros_like(tensor.data)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def values(self):
        return self._tensors.values()

    def names(self) -> list[str]:
        return list(self._tensors)

    def count(self) -> int:
        """Total number of scalar parameters."""
        return sum(t.size for t in self._tensors.values())

    @contextlib.contextmanager
    def frozen(self):
        """Temporarily stop gradients from flowing into these parameters."""
        flags = {n: t.requires_grad for n, t in self._tensors.items()}
        for t in self._tensors.values():
            t.requires_grad = False
        try:
            yield self
        finally:
            for n, t in self._tensors.items():
                t.requires_grad = flags[n]


def init_params(specs: Iterable[ParamSpec], seed: int) -> ParamSet:
    """Build a ParamSet: weights ~ N(0, 0.02), biases and betas 0, gammas 1."""
    rng = np.random.default_rng(seed)
    dtype = get_dtype()
    params = ParamSet()
    for spec in specs:
        if not spec.shape or any(int(d) <= 0 for d in spec.shape):
            raise ConfigError(f"parameter {spec.name!r} has non-positive shape {spec.shape}")
        if spec.kind == "weight":
            data = rng.normal(0.0, INIT_STD, size=spec.shape)
        elif spec.kind in ("bias", "beta"):
            data = np.zeros(spec.shape)
        elif spec.kind == "gamma":
            data = np.ones(spec.shape)
        else:
            raise ConfigError(f"unknown parameter kind {spec.kind!r}")
        params.add(spec.name, Tensor(data.astype(dtype), dtype=dtype))
    return params


def zero_grads(params: ParamSet) -> None:
    for tensor in params.values():
        tensor.grad = None


def adam_step(params: ParamSet, config: OptimConfig) -> None:
    """One bias-corrected Adam update over every parameter, then clear gradients."""
    for name, tensor in params.items():
        if tensor.grad is None:
            raise UsageError(f"parameter {name!r} has no gradient; run backward first")
    params.t += 1
    t = params.t
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, tensor in params.items():
        g = tensor.grad
        m = params.m[name] = b1 * params.m[name] + (1.0 - b1) * g
        v = params.v[name] = b2 * params.v[name] + (1.0 - b2) * (g * g)
        update = config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.epsilon)
        # in place so views (e.g. tied transposes) stay attached to the same storage
        tensor.data -= update.astype(tensor.data.dtype)
        tensor.grad = None
