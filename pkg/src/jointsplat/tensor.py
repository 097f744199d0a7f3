"""Reverse-mode automatic differentiation over dense numpy arrays.

A ``Tensor`` wraps a numpy array plus an optional gradient buffer. Operations
executed while a ``Tape`` is active are recorded in creation order, which is
by construction a topological order of the computation graph, so the backward
pass is a single reversed sweep with a fixed, deterministic reduction order.

Conventions:
  * one tape per training step, built single-threaded;
  * f64 is the default precision (gradient checks and oracles run at f64);
    f32 can be selected globally for training speed via ``set_default_dtype``;
  * ops executed with no active tape just compute values (inference mode);
  * custom ops with hand-derived backwards (e.g. the splat renderer) build
    their output through ``register_op`` and plug into the same tape.
"""
from __future__ import annotations

import itertools
import json
import os
from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "NonFiniteError",
    "ShapeError",
    "set_default_dtype",
    "default_dtype",
    "no_grad",
    "tensor",
    "param",
    "zeros",
    "ones",
    "register_op",
    "forward_op",
    "grad_check",
    "check_finite",
    "matmul",
    "concat",
    "stack",
    "where",
    "take",
    "softmax",
    "masked_softmax",
    "layer_norm",
    "save_arrays",
    "load_arrays",
    "MASK_NEG_F32",
]

_DEFAULT_DTYPE = np.float64

# Additive-mask constant: true -inf at f64 gives exactly zero weight; at f32 a
# large-but-finite negative avoids inf-inf traps while still underflowing to 0.
MASK_NEG_F32 = -1e30


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported default dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


def mask_neg(dtype) -> float:
    """Most-negative additive mask value appropriate for ``dtype``."""
    return -np.inf if np.dtype(dtype) == np.float64 else MASK_NEG_F32


class NonFiniteError(FloatingPointError):
    """A value that must be finite was NaN or Inf."""


class ShapeError(ValueError):
    """Operand shapes are invalid for the requested operation."""


_node_ids = itertools.count()
_active_tape: "Tape | None" = None
_grad_enabled = True


class Tape:
    """Ordered record of operations; owns the backward sweep."""

    def __init__(self):
        self._ops: list[Tensor] = []

    def __enter__(self) -> "Tape":
        global _active_tape
        if _active_tape is not None:
            raise RuntimeError("tapes do not nest; one tape per step")
        _active_tape = self
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = None
        return False

    def __len__(self) -> int:
        return len(self._ops)

    @property
    def ops(self) -> list["Tensor"]:
        return self._ops

    def backward(self, root: "Tensor") -> dict["Tensor", np.ndarray]:
        """Reverse sweep from a scalar root.

        Populates ``.grad`` on every reachable tensor and returns a map from
        reachable leaves (parameters / inputs with ``requires_grad``) to their
        gradients. Unreachable leaves keep ``grad=None``.
        """
        if root.size != 1:
            raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
        reachable: set[int] = set()
        stack = [root]
        while stack:
            t = stack.pop()
            if id(t) in reachable:
                continue
            reachable.add(id(t))
            stack.extend(t._parents)
        root.grad = np.ones_like(root.data)
        for t in reversed(self._ops):
            if id(t) not in reachable or t.grad is None or t._backward is None:
                continue
            grads = t._backward(t.grad)
            for p, g in zip(t._parents, grads):
                if g is None or not p.requires_grad:
                    continue
                if g.shape != p.data.shape:
                    raise ShapeError(
                        f"op '{t._kind}' produced gradient of shape {g.shape} "
                        f"for parent of shape {p.data.shape}"
                    )
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
                p.grad = p.grad + g.astype(p.data.dtype, copy=False)
        leaves = {}
        for t in self._ops:
            for p in t._parents:
                if not p._parents and p.requires_grad and id(p) in reachable:
                    leaves[p] = p.grad
        if not root._parents and root.requires_grad:
            leaves[root] = root.grad
        return leaves

    def clear(self) -> None:
        """Drop recorded ops and their saved activations."""
        for t in self._ops:
            t._parents = ()
            t._backward = None
        self._ops.clear()


@contextmanager
def no_grad():
    """Disable recording even if a tape is active."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense n-dimensional value with an attached reverse-mode gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_backward", "_kind")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype if dtype is not None else None)
        if self.data.dtype not in (np.float32, np.float64) and dtype is None:
            self.data = self.data.astype(_DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._kind = "leaf"

    # -- introspection -------------------------------------------------------
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
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, kind={self._kind}, grad={'set' if self.grad is not None else 'none'})"

    # -- leaf management -----------------------------------------------------
    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self, None)

    def exp(self):
        return exp(self)

    def abs(self):
        return absolute(self)


def tensor(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


def param(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype)


def zeros(shape, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or _DEFAULT_DTYPE))


def ones(shape, dtype=None) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype or _DEFAULT_DTYPE))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def register_op(kind: str, data: np.ndarray, parents, backward) -> Tensor:
    """Create a recorded op result.

    ``backward(grad_out) -> sequence of ndarray|None`` aligned with parents.
    Custom ops (the rasterizer) use this to join the tape with hand-derived
    gradients. Recording happens only when a tape is active, grad mode is on,
    and some parent requires a gradient.
    """
    parents = tuple(parents)
    out = Tensor(data)
    if (
        _active_tape is not None
        and _grad_enabled
        and any(p.requires_grad for p in parents)
    ):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out._kind = kind
        _active_tape._ops.append(out)
    return out


def check_finite(t, name: str = "tensor"):
    """Finiteness hook: raise instead of silently propagating NaN/Inf."""
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    if not np.isfinite(data).all():
        bad = int(np.count_nonzero(~np.isfinite(data)))
        raise NonFiniteError(f"{name}: {bad} non-finite element(s)")
    return t


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape of a broadcast operand."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic --------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return register_op("add", out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return register_op("sub", out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return register_op("mul", out, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return register_op("div", out, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        return (-g,)

    return register_op("neg", -a.data, (a,), backward)


def power(a, p: float) -> Tensor:
    """Elementwise power with constant exponent (x > 0 for fractional p)."""
    a = _as_tensor(a)
    out = a.data ** p

    def backward(g):
        return (g * p * a.data ** (p - 1.0),)

    return register_op("power", out, (a,), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return register_op("exp", out, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        return (g / a.data,)

    return register_op("log", np.log(a.data), (a,), backward)


def softplus(a) -> Tensor:
    a = _as_tensor(a)
    out = np.logaddexp(0.0, a.data)

    def backward(g):
        return (g / (1.0 + np.exp(-a.data)),)

    return register_op("softplus", out, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        return (g * out * (1.0 - out),)

    return register_op("sigmoid", out, (a,), backward)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return register_op("tanh", out, (a,), backward)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(a) -> Tensor:
    # tanh approximation; smooth everywhere, which finite differences like
    a = _as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner),)

    return register_op("gelu", out, (a,), backward)


def absolute(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        return (g * np.sign(a.data),)

    return register_op("abs", np.abs(a.data), (a,), backward)


def acos(a) -> Tensor:
    a = _as_tensor(a)
    out = np.arccos(a.data)

    def backward(g):
        return (-g / np.sqrt(1.0 - a.data * a.data),)

    return register_op("acos", out, (a,), backward)


def clamp(a, lo=None, hi=None) -> Tensor:
    """Clamp with pass-through gradient strictly inside [lo, hi]."""
    a = _as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = np.ones_like(a.data, dtype=bool)
    if lo is not None:
        inside &= a.data >= lo
    if hi is not None:
        inside &= a.data <= hi

    def backward(g):
        return (g * inside,)

    return register_op("clamp", out, (a,), backward)


def sqrt(a) -> Tensor:
    return power(a, 0.5)


def where(cond, a, b) -> Tensor:
    """Select by a constant boolean mask; gradient routes to the taken branch."""
    cond = np.asarray(cond.data if isinstance(cond, Tensor) else cond, dtype=bool)
    a, b = _as_tensor(a), _as_tensor(b)
    out = np.where(cond, a.data, b.data)

    def backward(g):
        ga = _unbroadcast(np.where(cond, g, 0.0), a.shape)
        gb = _unbroadcast(np.where(cond, 0.0, g), b.shape)
        return ga, gb

    return register_op("where", out, (a, b), backward)


# -- reductions ---------------------------------------------------------------

def _norm_axis(axis):
    if axis is None or isinstance(axis, tuple):
        return axis
    return (axis,)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axis = _norm_axis(axis)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        gg = g
        if not keepdims and axis is not None:
            gg = np.expand_dims(gg, axis)
        elif not keepdims and axis is None:
            gg = np.asarray(gg).reshape((1,) * a.ndim)
        return (np.broadcast_to(gg, a.shape).astype(a.dtype, copy=False).copy(),)

    return register_op("sum", out, (a,), backward)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axis = _norm_axis(axis)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in axis]))

    def backward(g):
        gg = g / count
        if not keepdims and axis is not None:
            gg = np.expand_dims(gg, axis)
        elif not keepdims and axis is None:
            gg = np.asarray(gg).reshape((1,) * a.ndim)
        return (np.broadcast_to(gg, a.shape).astype(a.dtype, copy=False).copy(),)

    return register_op("mean", out, (a,), backward)


# -- linear algebra / structure ------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return register_op("matmul", out, (a, b), backward)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.shape),)

    return register_op("reshape", out, (a,), backward)


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inv),)

    return register_op("transpose", out, (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return register_op("concat", out, tuple(parts), backward)


def stack(tensors, axis: int = 0) -> Tensor:
    expanded = [reshape(_as_tensor(t), _expand_shape(_as_tensor(t).shape, axis)) for t in tensors]
    return concat(expanded, axis=axis)


def _expand_shape(shape, axis):
    s = list(shape)
    s.insert(axis if axis >= 0 else len(s) + 1 + axis, 1)
    return tuple(s)


def getitem(a, key) -> Tensor:
    """Basic indexing only (ints, slices, tuples thereof); view semantics."""
    a = _as_tensor(a)
    out = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] += g
        return (full,)

    return register_op("slice", np.ascontiguousarray(out), (a,), backward)


def take(a, indices, axis: int = 0) -> Tensor:
    """Embedding-style row lookup; duplicate indices accumulate gradient."""
    a = _as_tensor(a)
    if axis != 0:
        raise ShapeError("take supports axis=0 only")
    idx = np.asarray(indices, dtype=np.int64)
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return register_op("embedding", out, (a,), backward)


# -- neural-net specifics ------------------------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax; -inf logits yield exactly zero weight."""
    a = _as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)  # all-masked rows stay defined
    e = np.exp(a.data - m)
    z = e.sum(axis=axis, keepdims=True)
    out = e / z

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return register_op("softmax", out, (a,), backward)


def masked_softmax(a, additive_mask, axis: int = -1) -> Tensor:
    """Softmax over ``a + additive_mask``; forbidden entries carry -inf
    (f64) or a large negative constant (f32) and get exactly zero weight and
    exactly zero gradient flow."""
    mask = additive_mask.data if isinstance(additive_mask, Tensor) else np.asarray(additive_mask)
    return softmax(add(a, Tensor(mask)), axis=axis)


def layer_norm(x, weight, bias, eps: float = 1e-6) -> Tensor:
    """Layer normalization over the last axis.

    The variance is floored by ``eps`` so a constant input normalizes to zero
    (then the affine part passes ``bias`` through).
    """
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.shape[-1] != weight.shape[-1] or x.shape[-1] != bias.shape[-1]:
        raise ShapeError(
            f"layer_norm affine dims {weight.shape}/{bias.shape} do not match input {x.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = weight.data * xhat + bias.data

    def backward(g):
        gx = g * weight.data
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        dx = (gx - m1 - xhat * m2) * inv
        dw = _unbroadcast(g * xhat, weight.shape)
        db = _unbroadcast(g, bias.shape)
        return dx, dw, db

    return register_op("layer_norm", out, (x, weight, bias), backward)


# -- generic dispatch -----------------------------------------------------------

_OP_TABLE = {
    "matmul": lambda inputs, attrs: matmul(*inputs),
    "add": lambda inputs, attrs: add(*inputs),
    "sub": lambda inputs, attrs: sub(*inputs),
    "mul": lambda inputs, attrs: mul(*inputs),
    "div": lambda inputs, attrs: div(*inputs),
    "neg": lambda inputs, attrs: neg(*inputs),
    "exp": lambda inputs, attrs: exp(*inputs),
    "log": lambda inputs, attrs: log(*inputs),
    "softplus": lambda inputs, attrs: softplus(*inputs),
    "sigmoid": lambda inputs, attrs: sigmoid(*inputs),
    "tanh": lambda inputs, attrs: tanh(*inputs),
    "gelu": lambda inputs, attrs: gelu(*inputs),
    "abs": lambda inputs, attrs: absolute(*inputs),
    "acos": lambda inputs, attrs: acos(*inputs),
    "power": lambda inputs, attrs: power(inputs[0], attrs["p"]),
    "clamp": lambda inputs, attrs: clamp(inputs[0], attrs.get("lo"), attrs.get("hi")),
    "sum": lambda inputs, attrs: reduce_sum(inputs[0], attrs.get("axis"), attrs.get("keepdims", False)),
    "mean": lambda inputs, attrs: reduce_mean(inputs[0], attrs.get("axis"), attrs.get("keepdims", False)),
    "concat": lambda inputs, attrs: concat(inputs, attrs.get("axis", 0)),
    "slice": lambda inputs, attrs: getitem(inputs[0], attrs["key"]),
    "reshape": lambda inputs, attrs: reshape(inputs[0], attrs["shape"]),
    "transpose": lambda inputs, attrs: transpose(inputs[0], attrs.get("axes")),
    "softmax": lambda inputs, attrs: softmax(inputs[0], attrs.get("axis", -1)),
    "softmax_masked": lambda inputs, attrs: masked_softmax(inputs[0], attrs["mask"], attrs.get("axis", -1)),
    "layer_norm": lambda inputs, attrs: layer_norm(*inputs, eps=attrs.get("eps", 1e-6)),
    "embedding": lambda inputs, attrs: take(inputs[0], attrs["indices"]),
    "where": lambda inputs, attrs: where(attrs["cond"], *inputs),
}


def forward_op(kind: str, inputs, attrs: dict | None = None) -> Tensor:
    """Kind-string dispatch into the op table; errors on unsupported kinds."""
    if kind not in _OP_TABLE:
        raise ValueError(f"unsupported op kind '{kind}'")
    return _OP_TABLE[kind](list(inputs), attrs or {})


def op_kinds() -> list[str]:
    return sorted(_OP_TABLE)


# -- verification ---------------------------------------------------------------

def grad_check(f, x: Tensor, eps: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps one tensor to a scalar tensor. Relative error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    with Tape() as tape:
        y = f(x)
    if y.size != 1:
        raise ShapeError("grad_check target must be scalar")
    if not np.isfinite(y.data).all():
        raise NonFiniteError("grad_check: function value is not finite")
    x.zero_grad()
    tape.backward(y)
    analytic = (x.grad if x.grad is not None else np.zeros_like(x.data)).ravel().copy()
    x.zero_grad()

    flat = x.data.ravel()
    numeric = np.zeros_like(analytic)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        yp = float(f(x).data.reshape(()))
        flat[i] = orig - eps
        ym = float(f(x).data.reshape(()))
        flat[i] = orig
        if not (np.isfinite(yp) and np.isfinite(ym)):
            raise NonFiniteError("grad_check: perturbed function value is not finite")
        numeric[i] = (yp - ym) / (2.0 * eps)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0


# -- parameter checkpoints --------------------------------------------------------

def save_arrays(directory: str, arrays: dict, bin_name: str = "params.bin",
                manifest_name: str = "manifest.json") -> None:
    """Write a flat little-endian container plus a JSON manifest."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": np.dtype(arr.dtype).newbyteorder("<").str,
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    with open(os.path.join(directory, bin_name), "wb") as f:
        for raw in blobs:
            f.write(raw)
    manifest = {"format_version": 1, "total_bytes": offset, "tensors": entries}
    with open(os.path.join(directory, manifest_name), "w") as f:
        json.dump(manifest, f, indent=1)


def load_arrays(directory: str, bin_name: str = "params.bin",
                manifest_name: str = "manifest.json") -> dict:
    with open(os.path.join(directory, manifest_name)) as f:
        manifest = json.load(f)
    with open(os.path.join(directory, bin_name), "rb") as f:
        blob = f.read()
    if len(blob) != manifest["total_bytes"]:
        raise IOError(
            f"container size {len(blob)} does not match manifest {manifest['total_bytes']}"
        )
    out = {}
    for e in manifest["tensors"]:
        dt = np.dtype(e["dtype"])
        arr = np.frombuffer(blob, dtype=dt, count=int(np.prod(e["shape"], dtype=np.int64)) if e["shape"] else 1,
                            offset=e["offset"])
        out[e["name"]] = arr.reshape(e["shape"]).astype(dt.newbyteorder("="))
    return out
