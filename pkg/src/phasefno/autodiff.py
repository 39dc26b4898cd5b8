"""Reverse-mode automatic differentiation on numpy arrays.

Define-by-run: every operation whose inputs include a tracked tensor records
itself on that tensor's tape, and ``Tape.backward`` replays the records in
reverse to accumulate gradients of a real scalar loss.

Conventions that the rest of the package relies on:

* All real data is float64, all complex data is complex128. Nothing here
  upcasts silently except real-with-complex arithmetic, which promotes the
  result to complex128.
* The gradient with respect to a complex tensor w is stored as a complex
  array whose real part is dL/d(Re w) and whose imaginary part is
  dL/d(Im w). Equivalently it is 2*dL/d(conj w), so holomorphic ops use the
  familiar conjugate chain rule, and a real leaf reached through complex
  arithmetic just takes the real part of the incoming gradient.
* Tapes are single-use: build a fresh Tape per forward pass, watch the
  leaves, run the graph, call backward once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A numpy array plus optional membership in a Tape."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape=None, node_id=None):
        arr = np.asarray(data)
        # asarray keeps 0-d shapes; ascontiguousarray would promote to 1-d
        if np.iscomplexobj(arr):
            arr = np.asarray(arr, dtype=np.complex128, order="C")
        else:
            arr = np.asarray(arr, dtype=np.float64, order="C")
        self.data = arr
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_complex(self):
        return np.iscomplexobj(self.data)

    @property
    def tracked(self):
        return self.tape is not None and self.node_id is not None

    def item(self):
        return self.data.item()

    def __repr__(self):
        tag = f", node={self.node_id}" if self.tracked else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{tag})"

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


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Record:
    op: str
    input_ids: tuple
    out_id: int
    backward: object  # callable(g_out) -> tuple of contributions (None allowed)


class Gradients:
    """Map node-id -> gradient array, with zeros for unreached leaves."""

    def __init__(self, tape, table):
        self._tape = tape
        self._table = table

    def wrt(self, t: Tensor) -> np.ndarray:
        if not isinstance(t, Tensor) or t.tape is not self._tape:
            raise ValueError("gradient queried for a tensor not on this tape")
        g = self._table.get(t.node_id)
        if g is None:
            return np.zeros_like(t.data)
        return g

    def by_id(self, node_id: int):
        return self._table.get(node_id)


class Tape:
    def __init__(self):
        self._records: list[_Record] = []
        self._next_id = 0

    def watch(self, *tensors: Tensor):
        for t in tensors:
            if t.tape is self and t.node_id is not None:
                continue
            t.tape = self
            t.node_id = self._alloc()
        return tensors[0] if len(tensors) == 1 else tensors

    def _alloc(self) -> int:
        i = self._next_id
        self._next_id += 1
        return i

    def _emit(self, op, inputs, out_data, backward) -> Tensor:
        out = Tensor(out_data, tape=self, node_id=self._alloc())
        self._records.append(
            _Record(op, tuple(t.node_id if t.tracked else None for t in inputs),
                    out.node_id, backward)
        )
        return out

    def backward(self, loss: Tensor) -> Gradients:
        if not isinstance(loss, Tensor) or loss.tape is not self or loss.node_id is None:
            raise ValueError("backward requires a loss tracked on this tape")
        if loss.is_complex:
            raise ValueError("backward requires a real scalar loss, got complex")
        if loss.data.shape != ():
            raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        table: dict[int, np.ndarray] = {loss.node_id: np.ones((), dtype=np.float64)}
        for rec in reversed(self._records):
            g_out = table.get(rec.out_id)
            if g_out is None:
                continue
            contribs = rec.backward(g_out)
            for iid, c in zip(rec.input_ids, contribs):
                if iid is None or c is None:
                    continue
                prev = table.get(iid)
                # out-of-place accumulation: backward rules may hand back views
                table[iid] = c if prev is None else prev + c
        return Gradients(self, table)


def _shared_tape(*tensors):
    tape = None
    for t in tensors:
        if t.tracked:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise ValueError("operation mixes tensors from different tapes")
    return tape


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _to_input(g: np.ndarray, ref: Tensor, shape=None) -> np.ndarray:
    """Demote to the input's dtype and undo broadcasting."""
    g = _unbroadcast(g, ref.shape if shape is None else shape)
    if not ref.is_complex and np.iscomplexobj(g):
        g = np.asarray(g.real, order="C")
    return g


# ---------------------------------------------------------------------------
# elementwise


def _elementwise(op_name, a, b, fwd, bwd_a, bwd_b):
    a, b = as_tensor(a), as_tensor(b)
    tape = _shared_tape(a, b)
    try:
        out = fwd(a.data, b.data)
    except ValueError:
        raise ValueError(
            f"{op_name}: shapes {a.shape} and {b.shape} do not broadcast") from None
    if tape is None:
        return Tensor(out)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _to_input(bwd_a(g, ad, bd), a) if a.tracked else None
        gb = _to_input(bwd_b(g, ad, bd), b) if b.tracked else None
        return ga, gb

    return tape._emit(op_name, (a, b), out, backward)


def add(a, b):
    return _elementwise("add", a, b, lambda x, y: x + y,
                        lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _elementwise("sub", a, b, lambda x, y: x - y,
                        lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _elementwise("mul", a, b, lambda x, y: x * y,
                        lambda g, x, y: g * np.conj(y),
                        lambda g, x, y: g * np.conj(x))


def div(a, b):
    return _elementwise("div", a, b, lambda x, y: x / y,
                        lambda g, x, y: g / np.conj(y),
                        lambda g, x, y: -g * np.conj(x / (y * y)))


def neg(x):
    x = as_tensor(x)
    tape = _shared_tape(x)
    if tape is None:
        return Tensor(-x.data)
    return tape._emit("neg", (x,), -x.data, lambda g: (-g,))


# ---------------------------------------------------------------------------
# contractions


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    tape = _shared_tape(a, b)
    out = a.data @ b.data
    if tape is None:
        return Tensor(out)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _to_input(g @ np.conj(bd).T, a) if a.tracked else None
        gb = _to_input(np.conj(ad).T @ g, b) if b.tracked else None
        return ga, gb

    return tape._emit("matmul", (a, b), out, backward)


def bmm(a, b):
    """Batched matmul over the leading axis: (n,p,q) @ (n,q,r) -> (n,p,r)."""
    a, b = as_tensor(a), as_tensor(b)
    if (a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0]
            or a.shape[2] != b.shape[1]):
        raise ValueError(f"bmm: shapes {a.shape} and {b.shape} do not conform")
    tape = _shared_tape(a, b)
    out = a.data @ b.data
    if tape is None:
        return Tensor(out)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _to_input(g @ np.conj(bd).transpose(0, 2, 1), a) if a.tracked else None
        gb = _to_input(np.conj(ad).transpose(0, 2, 1) @ g, b) if b.tracked else None
        return ga, gb

    return tape._emit("bmm", (a, b), out, backward)


# ---------------------------------------------------------------------------
# shape


def reshape(x, shape):
    x = as_tensor(x)
    shape = tuple(shape)
    if -1 in shape or int(np.prod(shape, dtype=np.int64)) != x.data.size:
        raise ValueError(f"reshape: cannot view shape {x.shape} as {shape}")
    tape = _shared_tape(x)
    out = np.reshape(x.data, shape)
    if tape is None:
        return Tensor(out)
    orig = x.shape
    return tape._emit("reshape", (x,), out, lambda g: (np.reshape(g, orig),))


def moveaxis(x, src, dst):
    x = as_tensor(x)
    tape = _shared_tape(x)
    out = np.moveaxis(x.data, src, dst)
    if tape is None:
        return Tensor(out)
    return tape._emit("moveaxis", (x,), out, lambda g: (np.moveaxis(g, dst, src),))


def transpose(x):
    return moveaxis(x, 0, 1)


# ---------------------------------------------------------------------------
# reductions


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _spread(g, axes, in_shape, keepdims):
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, in_shape)


def reduce_sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    tape = _shared_tape(x)
    out = x.data.sum(axis=axes, keepdims=keepdims)
    if tape is None:
        return Tensor(out)
    shape = x.shape
    return tape._emit("reduce_sum", (x,), out,
                      lambda g: (_spread(g, axes, shape, keepdims),))


def reduce_mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    tape = _shared_tape(x)
    out = x.data.mean(axis=axes, keepdims=keepdims)
    if tape is None:
        return Tensor(out)
    shape = x.shape
    count = int(np.prod([shape[a] for a in axes])) if axes else 1
    return tape._emit("reduce_mean", (x,), out,
                      lambda g: (_spread(g, axes, shape, keepdims) / count,))


# ---------------------------------------------------------------------------
# transcendental


def sqrt(x):
    x = as_tensor(x)
    if x.is_complex:
        raise ValueError("sqrt: complex input not supported")
    tape = _shared_tape(x)
    out = np.sqrt(x.data)
    if tape is None:
        return Tensor(out)
    return tape._emit("sqrt", (x,), out, lambda g: (g / (2.0 * out),))


def exp(x):
    x = as_tensor(x)
    tape = _shared_tape(x)
    out = np.exp(x.data)
    if tape is None:
        return Tensor(out)
    co = np.conj(out) if x.is_complex else out
    return tape._emit("exp", (x,), out, lambda g: (g * co,))


def sin(x):
    x = as_tensor(x)
    if x.is_complex:
        raise ValueError("sin: complex input not supported")
    tape = _shared_tape(x)
    out = np.sin(x.data)
    if tape is None:
        return Tensor(out)
    xd = x.data
    return tape._emit("sin", (x,), out, lambda g: (g * np.cos(xd),))


def cos(x):
    x = as_tensor(x)
    if x.is_complex:
        raise ValueError("cos: complex input not supported")
    tape = _shared_tape(x)
    out = np.cos(x.data)
    if tape is None:
        return Tensor(out)
    xd = x.data
    return tape._emit("cos", (x,), out, lambda g: (-g * np.sin(xd),))


def gelu(x):
    """Exact gelu, x * Phi(x) with the Gaussian cdf, no tanh shortcut."""
    x = as_tensor(x)
    if x.is_complex:
        raise ValueError("gelu: complex input not supported")
    tape = _shared_tape(x)
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / _SQRT2))
    out = xd * cdf
    if tape is None:
        return Tensor(out)
    pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT_2PI
    return tape._emit("gelu", (x,), out, lambda g: (g * (cdf + xd * pdf),))


# ---------------------------------------------------------------------------
# complex structure


def real_part(x):
    x = as_tensor(x)
    tape = _shared_tape(x)
    out = np.asarray(x.data.real, order="C")
    if tape is None:
        return Tensor(out)
    return tape._emit("real_part", (x,), out,
                      lambda g: (g.astype(np.complex128),))


def imag_part(x):
    x = as_tensor(x)
    tape = _shared_tape(x)
    out = np.asarray(np.imag(x.data), order="C")
    if tape is None:
        return Tensor(out)
    return tape._emit("imag_part", (x,), out, lambda g: (1j * g,))


def make_complex(re, im):
    re, im = as_tensor(re), as_tensor(im)
    if re.is_complex or im.is_complex:
        raise ValueError("make_complex: parts must be real")
    if re.shape != im.shape:
        raise ValueError(
            f"make_complex: shapes {re.shape} and {im.shape} differ")
    tape = _shared_tape(re, im)
    out = re.data + 1j * im.data
    if tape is None:
        return Tensor(out)

    def backward(g):
        gr = np.asarray(g.real, order="C") if re.tracked else None
        gi = np.asarray(g.imag, order="C") if im.tracked else None
        return gr, gi

    return tape._emit("make_complex", (re, im), out, backward)


def conj(x):
    x = as_tensor(x)
    tape = _shared_tape(x)
    out = np.conj(x.data)
    if tape is None:
        return Tensor(out)
    return tape._emit("conj", (x,), out, lambda g: (np.conj(g),))


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class BatchNormState:
    """Running statistics, one entry per channel. Mutated only in train mode."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, channels: int) -> "BatchNormState":
        return cls(np.zeros(channels), np.ones(channels))

    def copy(self) -> "BatchNormState":
        return BatchNormState(self.mean.copy(), self.var.copy())


def batch_norm(x, gamma, beta, state: BatchNormState, mode: str,
               channel_axis: int = 0, eps: float = 1e-5, momentum: float = 0.1):
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.is_complex:
        raise ValueError("batch_norm: complex input not supported")
    if mode not in ("train", "eval"):
        raise ValueError(f"batch_norm: unknown mode {mode!r}")
    c = x.shape[channel_axis]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(
            f"batch_norm: channel count {c} does not match gamma {gamma.shape}"
            f" / beta {beta.shape}")
    bshape = tuple(c if a == channel_axis else 1 for a in range(x.ndim))
    axes = tuple(a for a in range(x.ndim) if a != channel_axis)
    if mode == "train":
        mu = reduce_mean(x, axis=axes, keepdims=True)
        xc = sub(x, mu)
        var = reduce_mean(mul(xc, xc), axis=axes, keepdims=True)
        inv = div(1.0, sqrt(add(var, eps)))
        xn = mul(xc, inv)
        state.mean *= 1.0 - momentum
        state.mean += momentum * mu.data.reshape(c)
        state.var *= 1.0 - momentum
        state.var += momentum * var.data.reshape(c)
    else:
        inv_c = 1.0 / np.sqrt(state.var + eps)
        xn = mul(sub(x, state.mean.reshape(bshape)), inv_c.reshape(bshape))
    return add(mul(xn, reshape(gamma, bshape)), reshape(beta, bshape))
