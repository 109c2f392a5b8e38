"""Dense tensor engine with reverse-mode automatic differentiation.

Values live in numpy arrays (float64 by default, float32 accepted). Every
primitive that participates in gradients records a tape entry holding its
inputs and a backward closure; ``backward`` replays entries in exact reverse
execution order, which makes gradient accumulation deterministic and
bit-reproducible in single-threaded mode.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


_FLOAT_DTYPES = (np.float32, np.float64)

# Monotonic counter stamping tape entries with execution order.
_seq_lock = threading.Lock()
_seq_counter = 0


def _next_seq() -> int:
    global _seq_counter
    with _seq_lock:
        _seq_counter += 1
        return _seq_counter


class _GradMode:
    enabled = True


class no_grad:
    """Context manager disabling tape recording (forward-only evaluation)."""

    def __enter__(self):
        self._prev = _GradMode.enabled
        _GradMode.enabled = False
        return self

    def __exit__(self, *exc):
        _GradMode.enabled = self._prev
        return False


class TapeEntry:
    """One executed primitive: inputs, output, and the backward rule."""

    __slots__ = ("inputs", "backward_fn", "seq", "name")

    def __init__(self, inputs, backward_fn, name):
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.seq = _next_seq()
        self.name = name


class Tensor:
    """N-dimensional array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_entry")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._entry: Optional[TapeEntry] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not scalar")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_scalar(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, inputs: Sequence[Tensor], backward_fn: Callable, name: str) -> Tensor:
    if _GradMode.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._entry = TapeEntry(tuple(inputs), backward_fn, name)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum-reduce a gradient back to the shape it was broadcast from."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(loss: Tensor):
    """Populate gradients of everything ``loss`` depends on.

    Entries replay in exact reverse execution order. ``loss`` must be scalar
    and have been produced while recording was enabled.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._entry is None and not loss.requires_grad:
        raise ValueError("backward: loss was not recorded on the active tape")

    entries = []
    seen = set()
    stack = [loss._entry] if loss._entry is not None else []
    while stack:
        e = stack.pop()
        if e is None or id(e) in seen:
            continue
        seen.add(id(e))
        entries.append(e)
        for t in e.inputs:
            if t._entry is not None and id(t._entry) not in seen:
                stack.append(t._entry)
    entries.sort(key=lambda e: -e.seq)

    loss.grad = np.ones_like(loss.data)
    for e in entries:
        e.backward_fn()


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)

    def bwd():
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return _record(out, (a, b), bwd, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)

    def bwd():
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.shape))

    return _record(out, (a, b), bwd, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def bwd():
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _record(out, (a, b), bwd, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data)

    def bwd():
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _record(out, (a, b), bwd, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data)

    def bwd():
        if a.requires_grad:
            a.accumulate_grad(-out.grad)

    return _record(out, (a,), bwd, "neg")


def pow_scalar(a, p: float) -> Tensor:
    """Elementwise x**p for a python scalar exponent.

    The derivative at x == 0 is defined as 0 for p > 1 (the focal-loss use
    case); other exponents assume strictly positive inputs.
    """
    a = as_tensor(a)
    p = float(p)
    out = Tensor(a.data ** p)

    def bwd():
        if a.requires_grad:
            if p == 0.0:
                a.accumulate_grad(np.zeros_like(a.data))
                return
            base = np.where(a.data == 0.0, 1.0, a.data)
            d = p * base ** (p - 1.0)
            if p > 1.0:
                d = np.where(a.data == 0.0, 0.0, d)
            a.accumulate_grad(out.grad * d)

    return _record(out, (a,), bwd, "pow")


# ---------------------------------------------------------------------------
# transcendental / activation
# ---------------------------------------------------------------------------

def exp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.data))

    def bwd():
        if a.requires_grad:
            a.accumulate_grad(out.grad * out.data)

    return _record(out, (a,), bwd, "exp")


def log(a) -> Tensor:
    """Natural log. Domain: strictly positive values."""
    a = as_tensor(a)
    out = Tensor(np.log(a.data))

    def bwd():
        if a.requires_grad:
            a.accumulate_grad(out.grad / a.data)

    return _record(out, (a,), bwd, "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.sqrt(a.data))

    def bwd():
        if a.requires_grad:
            a.accumulate_grad(out.grad * 0.5 / out.data)

    return _record(out, (a,), bwd, "sqrt")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.tanh(a.data))

    def bwd():
        if a.requires_grad:
            a.accumulate_grad(out.grad * (1.0 - out.data * out.data))

    return _record(out, (a,), bwd, "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(s)

    def bwd():
        if a.requires_grad:
            a.accumulate_grad(out.grad * out.data * (1.0 - out.data))

    return _record(out, (a,), bwd, "sigmoid")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """GELU in its tanh form: 0.5*x*(1+tanh(c*(x+0.044715*x^3)))."""
    a = as_tensor(a)
    x = a.data
    u = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(u)
    out = Tensor(0.5 * x * (1.0 + t))

    def bwd():
        if a.requires_grad:
            du = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
            d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            a.accumulate_grad(out.grad * d)

    return _record(out, (a,), bwd, "gelu")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for shape {a.shape}")
    z = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=axis, keepdims=True)
    out = Tensor(y)

    def bwd():
        if a.requires_grad:
            g = out.grad
            a.accumulate_grad((g - np.sum(g * y, axis=axis, keepdims=True)) * y)

    return _record(out, (a,), bwd, "softmax")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product; leading axes batch via numpy broadcasting rules."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be >=2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ for {a.shape} and {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def bwd():
        g = out.grad
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a.accumulate_grad(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b.accumulate_grad(_unbroadcast(gb, b.shape))

    return _record(out, (a, b), bwd, "matmul")


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    out = Tensor(a.data.reshape(shape))

    def bwd():
        if a.requires_grad:
            a.accumulate_grad(out.grad.reshape(a.shape))

    return _record(out, (a,), bwd, "reshape")


def permute(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"permute: axes {axes} invalid for shape {a.shape}")
    inv = np.argsort(axes)
    out = Tensor(np.transpose(a.data, axes))

    def bwd():
        if a.requires_grad:
            a.accumulate_grad(np.transpose(out.grad, inv))

    return _record(out, (a,), bwd, "permute")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    nd = ts[0].ndim
    if not -nd <= axis < nd:
        raise ShapeError(f"concat: axis {axis} out of range for shape {ts[0].shape}")
    axis = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or any(
            i != axis and t.shape[i] != ts[0].shape[i] for i in range(nd)
        ):
            raise ShapeError(f"concat: shapes {ts[0].shape} and {t.shape} differ off-axis")
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))

    def bwd():
        g = out.grad
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * nd
                idx[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(idx)])

    return _record(out, tuple(ts), bwd, "concat")


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"slice: axis {axis} out of range for shape {a.shape}")
    axis = axis % a.ndim
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = Tensor(a.data[idx])

    def bwd():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[idx] = out.grad
            a.accumulate_grad(g)

    return _record(out, (a,), bwd, "slice")


def split(a, sizes: Sequence[int], axis: int = 0) -> list:
    """Split into consecutive chunks of the given sizes along an axis."""
    a = as_tensor(a)
    if sum(sizes) != a.shape[axis % a.ndim]:
        raise ShapeError(f"split: sizes {tuple(sizes)} do not cover axis of shape {a.shape}")
    pieces = []
    off = 0
    for s in sizes:
        pieces.append(slice_axis(a, axis, off, off + s))
        off += s
    return pieces


def pad(a, pad_width) -> Tensor:
    """Zero padding; pad_width is ((before, after), ...) per axis."""
    a = as_tensor(a)
    pw = tuple((int(lo), int(hi)) for lo, hi in pad_width)
    if len(pw) != a.ndim:
        raise ShapeError(f"pad: got {len(pw)} axis pads for shape {a.shape}")
    out = Tensor(np.pad(a.data, pw))

    def bwd():
        if a.requires_grad:
            idx = tuple(slice(lo, lo + n) for (lo, _), n in zip(pw, a.shape))
            a.accumulate_grad(out.grad[idx])

    return _record(out, (a,), bwd, "pad")


def roll(a, shift: int, axis: int) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.roll(a.data, shift, axis=axis))

    def bwd():
        if a.requires_grad:
            a.accumulate_grad(np.roll(out.grad, -shift, axis=axis))

    return _record(out, (a,), bwd, "roll")


def gather_rows(table, indices: np.ndarray) -> Tensor:
    """Row lookup table[indices]; backward scatter-adds into the table."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    out = Tensor(table.data[idx])

    def bwd():
        if table.requires_grad:
            g = np.zeros_like(table.data)
            np.add.at(g, idx, out.grad)
            table.accumulate_grad(g)

    return _record(out, (table,), bwd, "gather_rows")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    axis = tuple(int(x) % ndim for x in axis)
    return axis


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    out = Tensor(np.sum(a.data, axis=ax, keepdims=keepdims))

    def bwd():
        if a.requires_grad:
            g = out.grad
            if ax is not None and not keepdims:
                g = np.expand_dims(g, ax)
            a.accumulate_grad(np.broadcast_to(g, a.shape).copy())

    return _record(out, (a,), bwd, "sum")


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    n = a.size if ax is None else int(np.prod([a.shape[i] for i in ax]))
    out = Tensor(np.mean(a.data, axis=ax, keepdims=keepdims))

    def bwd():
        if a.requires_grad:
            g = out.grad
            if ax is not None and not keepdims:
                g = np.expand_dims(g, ax)
            a.accumulate_grad(np.broadcast_to(g, a.shape) / n)

    return _record(out, (a,), bwd, "mean")


def reduce_max(a, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; ties route the gradient to the first occurrence."""
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    out_data = np.max(a.data, axis=ax, keepdims=keepdims)
    out = Tensor(out_data)

    def bwd():
        if a.requires_grad:
            g = out.grad
            ref = out_data
            if ax is not None and not keepdims:
                g = np.expand_dims(g, ax)
                ref = np.expand_dims(ref, ax)
            hit = a.data == ref
            if ax is None:
                flat = hit.reshape(-1)
                first = np.zeros_like(flat)
                first[np.argmax(flat)] = True
                mask = first.reshape(a.shape)
            elif len(ax) == 1:
                # first occurrence wins along the reduced axis
                mask = hit & (np.cumsum(hit, axis=ax[0]) == 1)
            else:
                mask = hit  # multi-axis reduction: ties share the gradient
            a.accumulate_grad(np.where(mask, np.broadcast_to(g, a.shape), 0.0))

    return _record(out, (a,), bwd, "max")


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

NORM_EPS = 1e-5


def layer_norm(a, gamma, beta, eps: float = NORM_EPS) -> Tensor:
    """Normalize the last axis per token, then apply a learnable affine."""
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    if gamma.shape != (a.shape[-1],) or beta.shape != (a.shape[-1],):
        raise ShapeError(
            f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match channel {a.shape[-1]}"
        )
    mu = np.mean(a.data, axis=-1, keepdims=True)
    xc = a.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = Tensor(y * gamma.data + beta.data)

    def bwd():
        g = out.grad
        if gamma.requires_grad:
            gamma.accumulate_grad(np.sum(g * y, axis=tuple(range(a.ndim - 1))))
        if beta.requires_grad:
            beta.accumulate_grad(np.sum(g, axis=tuple(range(a.ndim - 1))))
        if a.requires_grad:
            gy = g * gamma.data
            m1 = np.mean(gy, axis=-1, keepdims=True)
            m2 = np.mean(gy * y, axis=-1, keepdims=True)
            a.accumulate_grad((gy - m1 - y * m2) * inv)

    return _record(out, (a, gamma, beta), bwd, "layer_norm")


def group_norm(a, gamma, beta, groups: int, eps: float = NORM_EPS) -> Tensor:
    """Group normalization over channels-last input.

    Channels split into ``groups``; statistics pool over all non-channel axes
    plus the in-group channels (no batch axis in this engine so a sample is
    the whole tensor).
    """
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    c = a.shape[-1]
    if c % groups != 0:
        raise ShapeError(f"group_norm: channels {c} not divisible by groups {groups}")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"group_norm: affine shapes {gamma.shape}/{beta.shape} do not match channel {c}"
        )
    gsz = c // groups
    lead = a.shape[:-1]
    x = a.data.reshape(-1, groups, gsz)
    mu = x.mean(axis=(0, 2), keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=(0, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (xc * inv).reshape(*lead, c)
    out = Tensor(y * gamma.data + beta.data)

    def bwd():
        g = out.grad
        if gamma.requires_grad:
            gamma.accumulate_grad(np.sum(g * y, axis=tuple(range(a.ndim - 1))))
        if beta.requires_grad:
            beta.accumulate_grad(np.sum(g, axis=tuple(range(a.ndim - 1))))
        if a.requires_grad:
            gy = (g * gamma.data).reshape(-1, groups, gsz)
            yv = y.reshape(-1, groups, gsz)
            m1 = gy.mean(axis=(0, 2), keepdims=True)
            m2 = (gy * yv).mean(axis=(0, 2), keepdims=True)
            ga = (gy - m1 - yv * m2) * inv
            a.accumulate_grad(ga.reshape(a.shape))

    return _record(out, (a, gamma, beta), bwd, "group_norm")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2D convolution, channels-last: x (H,W,Ci), w (kh,kw,Ci,Co), b (Co,)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected (H,W,Ci) and (kh,kw,Ci,Co), got {x.shape} and {w.shape}")
    if x.shape[2] != w.shape[2]:
        raise ShapeError(f"conv2d: input channels differ, {x.shape} vs {w.shape}")
    kh, kw, ci, co = w.shape
    s, p = int(stride), int(padding)
    xp = np.pad(x.data, ((p, p), (p, p), (0, 0)))
    hp, wp = xp.shape[0], xp.shape[1]
    ho = (hp - kh) // s + 1
    wo = (wp - kw) // s + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: kernel {w.shape} too large for input {x.shape} (pad {p})")
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(0, 1))[::s, ::s]
    # win: (ho, wo, Ci, kh, kw) -> cols (ho*wo, kh*kw*Ci)
    cols = win.transpose(0, 1, 3, 4, 2).reshape(ho * wo, kh * kw * ci)
    wmat = w.data.reshape(kh * kw * ci, co)
    y = cols @ wmat
    if b is not None:
        b = as_tensor(b)
        y = y + b.data
    out = Tensor(y.reshape(ho, wo, co))
    parents = (x, w) if b is None else (x, w, b)

    def bwd():
        g2 = out.grad.reshape(ho * wo, co)
        if w.requires_grad:
            w.accumulate_grad((cols.T @ g2).reshape(w.shape))
        if b is not None and b.requires_grad:
            b.accumulate_grad(g2.sum(axis=0))
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(ho, wo, kh, kw, ci)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[i:i + ho * s:s, j:j + wo * s:s] += dcols[:, :, i, j]
            gx = gxp[p:p + x.shape[0], p:p + x.shape[1]] if p else gxp
            x.accumulate_grad(gx)

    return _record(out, parents, bwd, "conv2d")


def conv3d(x, w, b=None, stride=1, padding=0) -> Tensor:
    """3D convolution, channels-last: x (D,H,W,Ci), w (kd,kh,kw,Ci,Co).

    stride/padding may be an int or a (d,h,w) triple.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 5:
        raise ShapeError(f"conv3d: expected (D,H,W,Ci) and (kd,kh,kw,Ci,Co), got {x.shape} and {w.shape}")
    if x.shape[3] != w.shape[3]:
        raise ShapeError(f"conv3d: input channels differ, {x.shape} vs {w.shape}")
    kd, kh, kw, ci, co = w.shape
    sd, sh, sw = (stride, stride, stride) if isinstance(stride, int) else stride
    pd, ph, pw = (padding, padding, padding) if isinstance(padding, int) else padding
    xp = np.pad(x.data, ((pd, pd), (ph, ph), (pw, pw), (0, 0)))
    do = (xp.shape[0] - kd) // sd + 1
    ho = (xp.shape[1] - kh) // sh + 1
    wo = (xp.shape[2] - kw) // sw + 1
    if do <= 0 or ho <= 0 or wo <= 0:
        raise ShapeError(f"conv3d: kernel {w.shape} too large for input {x.shape}")
    win = np.lib.stride_tricks.sliding_window_view(xp, (kd, kh, kw), axis=(0, 1, 2))
    win = win[::sd, ::sh, ::sw]
    # win: (do,ho,wo,Ci,kd,kh,kw)
    cols = win.transpose(0, 1, 2, 4, 5, 6, 3).reshape(do * ho * wo, kd * kh * kw * ci)
    wmat = w.data.reshape(kd * kh * kw * ci, co)
    y = cols @ wmat
    if b is not None:
        b = as_tensor(b)
        y = y + b.data
    out = Tensor(y.reshape(do, ho, wo, co))
    parents = (x, w) if b is None else (x, w, b)

    def bwd():
        g2 = out.grad.reshape(do * ho * wo, co)
        if w.requires_grad:
            w.accumulate_grad((cols.T @ g2).reshape(w.shape))
        if b is not None and b.requires_grad:
            b.accumulate_grad(g2.sum(axis=0))
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(do, ho, wo, kd, kh, kw, ci)
            gxp = np.zeros_like(xp)
            for a_ in range(kd):
                for i in range(kh):
                    for j in range(kw):
                        gxp[a_:a_ + do * sd:sd, i:i + ho * sh:sh, j:j + wo * sw:sw] += dcols[:, :, :, a_, i, j]
            gx = gxp[pd:pd + x.shape[0], ph:ph + x.shape[1], pw:pw + x.shape[2]]
            x.accumulate_grad(gx)

    return _record(out, parents, bwd, "conv3d")


# ---------------------------------------------------------------------------
# pooling / resampling
# ---------------------------------------------------------------------------

def avg_pool2d(x, k: int = 2) -> Tensor:
    """Non-overlapping k x k average pooling on (H,W,C); sides must divide."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"avg_pool2d: expected (H,W,C), got {x.shape}")
    h, w, c = x.shape
    if h % k or w % k:
        raise ShapeError(f"avg_pool2d: {h}x{w} not divisible by {k}")
    out = Tensor(x.data.reshape(h // k, k, w // k, k, c).mean(axis=(1, 3)))

    def bwd():
        if x.requires_grad:
            g = out.grad[:, None, :, None, :] / (k * k)
            x.accumulate_grad(np.broadcast_to(g, (h // k, k, w // k, k, c)).reshape(h, w, c))

    return _record(out, (x,), bwd, "avg_pool2d")


def _bilinear_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Row-stochastic 1D resampling matrix, align_corners=False convention."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for o in range(n_out):
        src = (o + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        i0 = int(math.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        t = src - i0
        m[o, i0] += 1.0 - t
        m[o, i1] += t
    return m


_BILINEAR_CACHE: dict = {}


def upsample_bilinear2d(x, out_hw) -> Tensor:
    """Bilinear 2D resize of (H,W,C) to (Ho,Wo), align_corners=False."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"upsample_bilinear2d: expected (H,W,C), got {x.shape}")
    h, w, c = x.shape
    ho, wo = int(out_hw[0]), int(out_hw[1])
    key = (h, ho, str(x.dtype))
    if key not in _BILINEAR_CACHE:
        _BILINEAR_CACHE[key] = _bilinear_matrix(h, ho, x.data.dtype)
    rh = _BILINEAR_CACHE[key]
    key = (w, wo, str(x.dtype))
    if key not in _BILINEAR_CACHE:
        _BILINEAR_CACHE[key] = _bilinear_matrix(w, wo, x.data.dtype)
    rw = _BILINEAR_CACHE[key]
    # y[o,p,c] = sum_ij rh[o,i] rw[p,j] x[i,j,c]
    y = np.einsum("oi,ijc,pj->opc", rh, x.data, rw, optimize=True)
    out = Tensor(y)

    def bwd():
        if x.requires_grad:
            x.accumulate_grad(np.einsum("oi,opc,pj->ijc", rh, out.grad, rw, optimize=True))

    return _record(out, (x,), bwd, "upsample_bilinear2d")


def grid_sample_bilinear(x, grid) -> Tensor:
    """Sample (..,H,W,C) maps at fractional points with border clamping.

    ``x`` is (H,W,C) or batched (B,H,W,C); ``grid`` holds (gx, gy) pairs in
    [-1,1] normalized coordinates (align_corners=False pixel centers) with
    shape (Q,2) or (B,Q,2) to match. Out-of-range points clamp to the border,
    where the coordinate gradient is zero.
    """
    x, grid = as_tensor(x), as_tensor(grid)
    batched = x.ndim == 4
    xd = x.data if batched else x.data[None]
    gd = grid.data if batched else grid.data[None]
    bsz, h, w, c = xd.shape
    if gd.ndim != 3 or gd.shape[0] != bsz or gd.shape[2] != 2:
        raise ShapeError(f"grid_sample: grid {grid.shape} incompatible with input {x.shape}")
    q = gd.shape[1]

    ix = ((gd[..., 0] + 1.0) * w - 1.0) / 2.0
    iy = ((gd[..., 1] + 1.0) * h - 1.0) / 2.0
    in_x = (ix > 0.0) & (ix < w - 1.0)
    in_y = (iy > 0.0) & (iy < h - 1.0)
    ixc = np.clip(ix, 0.0, w - 1.0)
    iyc = np.clip(iy, 0.0, h - 1.0)
    x0 = np.floor(ixc).astype(np.int64)
    y0 = np.floor(iyc).astype(np.int64)
    x0 = np.clip(x0, 0, w - 1)
    y0 = np.clip(y0, 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    tx = (ixc - x0)[..., None]
    ty = (iyc - y0)[..., None]

    bidx = np.arange(bsz)[:, None].repeat(q, axis=1)
    v00 = xd[bidx, y0, x0]
    v01 = xd[bidx, y0, x1]
    v10 = xd[bidx, y1, x0]
    v11 = xd[bidx, y1, x1]
    top = v00 * (1 - tx) + v01 * tx
    bot = v10 * (1 - tx) + v11 * tx
    y = top * (1 - ty) + bot * ty
    out = Tensor(y if batched else y[0])

    def bwd():
        g = out.grad if batched else out.grad[None]
        w00 = (1 - tx) * (1 - ty)
        w01 = tx * (1 - ty)
        w10 = (1 - tx) * ty
        w11 = tx * ty
        if x.requires_grad:
            gx_ = np.zeros_like(xd)
            np.add.at(gx_, (bidx, y0, x0), g * w00)
            np.add.at(gx_, (bidx, y0, x1), g * w01)
            np.add.at(gx_, (bidx, y1, x0), g * w10)
            np.add.at(gx_, (bidx, y1, x1), g * w11)
            x.accumulate_grad(gx_ if batched else gx_[0])
        if grid.requires_grad:
            dix = np.sum(g * ((v01 - v00) * (1 - ty) + (v11 - v10) * ty), axis=-1)
            diy = np.sum(g * ((v10 - v00) * (1 - tx) + (v11 - v01) * tx), axis=-1)
            ggrid = np.stack(
                [np.where(in_x, dix, 0.0) * (w / 2.0), np.where(in_y, diy, 0.0) * (h / 2.0)],
                axis=-1,
            )
            grid.accumulate_grad(ggrid if batched else ggrid[0])

    return _record(out, (x, grid), bwd, "grid_sample")


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    n_coords: int
    worst_coord: Optional[tuple] = None
    non_finite: list = field(default_factory=list)

    def __str__(self):
        state = "PASS" if self.passed else "FAIL"
        return f"{state} max_rel_err={self.max_rel_err:.3e} over {self.n_coords} coords"


def _rel_err(g_ad: float, g_fd: float) -> float:
    return abs(g_ad - g_fd) / max(1e-8, abs(g_ad) + abs(g_fd))


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-6,
    tol: float = 1e-5,
    max_coords: int = 100,
    rng: Optional[np.random.Generator] = None,
) -> GradCheckReport:
    """Compare the autodiff gradient of scalar-valued ``f`` to central differences.

    Checks every coordinate of ``x`` when it is small, otherwise a random
    subset of at least ``max_coords``. Relative error per coordinate is
    |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
    """
    if not 0.0 < eps <= 1e-3:
        raise ValueError(f"finite_diff_check: eps {eps} outside (0, 1e-3]")
    xt = Tensor(x.data.astype(np.float64).copy(), requires_grad=True)
    loss = f(xt)
    backward(loss)
    g_ad = xt.grad.copy() if xt.grad is not None else np.zeros_like(xt.data)

    n = xt.size
    if n <= max_coords:
        coords = np.arange(n)
    else:
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(n, size=max_coords, replace=False)
        coords.sort()

    flat = xt.data.reshape(-1)
    ad_flat = g_ad.reshape(-1)
    worst = 0.0
    worst_coord = None
    non_finite = []
    for i in coords:
        orig = flat[i]
        with no_grad():
            flat[i] = orig + eps
            fp = f(xt).item()
            flat[i] = orig - eps
            fm = f(xt).item()
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            non_finite.append(int(i))
            continue
        g_fd = (fp - fm) / (2.0 * eps)
        r = _rel_err(ad_flat[i], g_fd)
        if r > worst:
            worst = r
            worst_coord = (int(i), float(ad_flat[i]), float(g_fd))
    passed = worst <= tol and not non_finite
    return GradCheckReport(worst, passed, len(coords), worst_coord, non_finite)


def finite_diff_check_params(
    loss_fn: Callable[[], Tensor],
    params: Iterable,
    n_coords: int = 100,
    eps: float = 1e-5,
    tol: float = 1e-3,
    seed: int = 0,
) -> GradCheckReport:
    """Spot-check model gradients: perturb sampled parameter scalars in place.

    ``params`` is an iterable of objects exposing ``.tensor`` (Parameter) or
    raw Tensors. The loss closure is re-evaluated under no_grad for the
    +/- eps probes.
    """
    tensors = [getattr(p, "tensor", p) for p in params]
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    backward(loss)

    sizes = np.array([t.size for t in tensors])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    n_coords = min(n_coords, total)
    flat_ids = rng.choice(total, size=n_coords, replace=False)
    flat_ids.sort()
    bounds = np.cumsum(sizes)

    worst = 0.0
    worst_coord = None
    non_finite = []
    for fid in flat_ids:
        ti = int(np.searchsorted(bounds, fid, side="right"))
        local = int(fid - (bounds[ti - 1] if ti else 0))
        t = tensors[ti]
        buf = t.data.reshape(-1)
        g_ad = 0.0 if t.grad is None else float(t.grad.reshape(-1)[local])
        orig = buf[local]
        with no_grad():
            buf[local] = orig + eps
            fp = loss_fn().item()
            buf[local] = orig - eps
            fm = loss_fn().item()
        buf[local] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            non_finite.append((ti, local))
            continue
        g_fd = (fp - fm) / (2.0 * eps)
        r = _rel_err(g_ad, g_fd)
        if r > worst:
            worst = r
            worst_coord = (ti, local, g_ad, g_fd)
    passed = worst <= tol and not non_finite
    return GradCheckReport(worst, passed, n_coords, worst_coord, non_finite)
