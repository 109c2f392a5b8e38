"""Minimal module system: parameter registry and common layers."""

from __future__ import annotations

from typing import Dict, Iterator, Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter:
    """A trainable tensor with a unique dotted-path name.

    The gradient buffer is always allocated so untouched parameters read as
    zero gradient after a backward pass.
    """

    def __init__(self, data: np.ndarray, name: str = ""):
        self.tensor = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self.tensor.zero_grad()
        self.name = name

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray:
        return self.tensor.grad

    @property
    def size(self) -> int:
        return self.tensor.size

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


class Module:
    """Base class tracking child modules and parameters by attribute name."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
        elif isinstance(value, Module):
            self._children[key] = value
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for k, p in self._params.items():
            yield prefix + k, p
        for k, m in self._children.items():
            yield from m.named_parameters(f"{prefix}{k}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]


class ModuleList(Module):
    def __init__(self, mods=()):
        super().__init__()
        self._items = []
        for m in mods:
            self.append(m)

    def append(self, m: Module):
        self._children[str(len(self._items))] = m
        self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def build_registry(model: Module) -> Dict[str, Parameter]:
    """Bind names and return the registry ordered lexicographically by name."""
    reg: Dict[str, Parameter] = {}
    for name, p in model.named_parameters():
        if name in reg:
            raise ValueError(f"duplicate parameter name {name}")
        p.name = name
        reg[name] = p
    return dict(sorted(reg.items()))


def zero_grads(params) -> None:
    for p in params:
        p.tensor.zero_grad()


def param_count(model: Module) -> int:
    return sum(p.size for p in model.parameters())


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def _normal(rng: np.random.Generator, shape, std=None):
    """Glorot-scaled normal init: the trailing two axes are (fan_in-ish, out)
    with any leading axes treated as receptive field."""
    if std is None:
        receptive = int(np.prod(shape[:-2])) if len(shape) > 2 else 1
        fan_in = receptive * shape[-2]
        fan_out = receptive * shape[-1]
        std = float(np.sqrt(2.0 / (fan_in + fan_out)))
    return rng.normal(0.0, std, size=shape)


class Linear(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 bias: bool = True, zero_init: bool = False):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        w = np.zeros((c_in, c_out)) if zero_init else _normal(rng, (c_in, c_out))
        self.w = Parameter(w)
        self.b = Parameter(np.zeros(c_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        y = T.matmul(x.reshape(-1, self.c_in), self.w.tensor)
        if self.b is not None:
            y = y + self.b.tensor
        return y.reshape(*lead, self.c_out)


class LayerNorm(Module):
    def __init__(self, c: int):
        super().__init__()
        self.g = Parameter(np.ones(c))
        self.b = Parameter(np.zeros(c))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.g.tensor, self.b.tensor)


class GroupNorm(Module):
    def __init__(self, c: int, groups: int):
        super().__init__()
        self.groups = groups
        self.g = Parameter(np.ones(c))
        self.b = Parameter(np.zeros(c))

    def __call__(self, x: Tensor) -> Tensor:
        return T.group_norm(x, self.g.tensor, self.b.tensor, self.groups)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, zero_init: bool = False,
                 bias: bool = True):
        super().__init__()
        self.stride, self.padding = stride, padding
        w = np.zeros((k, k, c_in, c_out)) if zero_init else _normal(rng, (k, k, c_in, c_out))
        self.w = Parameter(w)
        self.b = Parameter(np.zeros(c_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        b = self.b.tensor if self.b is not None else None
        return T.conv2d(x, self.w.tensor, b, self.stride, self.padding)


class Conv3d(Module):
    def __init__(self, c_in: int, c_out: int, k, rng: np.random.Generator,
                 stride=1, padding=0):
        super().__init__()
        kd, kh, kw = (k, k, k) if isinstance(k, int) else k
        self.stride, self.padding = stride, padding
        self.w = Parameter(_normal(rng, (kd, kh, kw, c_in, c_out)))
        self.b = Parameter(np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv3d(x, self.w.tensor, self.b.tensor, self.stride, self.padding)


class Mlp(Module):
    """Two linear layers with GELU between, hidden ratio fixed by caller."""

    def __init__(self, c: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(c, hidden, rng)
        self.fc2 = Linear(hidden, c, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))
