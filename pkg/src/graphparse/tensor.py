"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is deliberately small: a Tensor wraps a C-contiguous float64
numpy array, and a Tape records primitive operations during a forward
pass.  Calling ``tape.backward(loss)`` replays the records in reverse
order and accumulates gradients for every tensor watched by (or derived
on) that tape.  There is no implicit global tape: a tensor participates
in differentiation only while its ``tape`` attribute points at a live
Tape, and each forward/backward episode owns exactly one Tape.

Gradients accumulate additively across multiple uses of a tensor, and
the forward numerics are identical whether or not a tape is attached.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class TapeError(RuntimeError):
    """Tape misuse: consumed twice, empty, or mixed between episodes."""


class Tensor:
    """Dense n-dimensional float64 array, optionally attached to a Tape."""

    __slots__ = ("data", "tape")

    def __init__(self, data, tape=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.tape = tape

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() requires a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def copy(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        taped = " taped" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{taped})\n{self.data}"

    # Operator sugar for the common same-shape binary ops.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    @staticmethod
    def zeros(shape, tape=None):
        return Tensor(np.zeros(shape, dtype=np.float64), tape=tape)

    @staticmethod
    def ones(shape, tape=None):
        return Tensor(np.ones(shape, dtype=np.float64), tape=tape)

    @staticmethod
    def full(shape, value, tape=None):
        return Tensor(np.full(shape, value, dtype=np.float64), tape=tape)


class _Node:
    """One recorded primitive: output, inputs, and a local backward."""

    __slots__ = ("out", "inputs", "back")

    def __init__(self, out, inputs, back):
        self.out = out
        self.inputs = inputs
        self.back = back


class Tape:
    """Ordered record of primitives for one forward/backward episode.

    Records append in execution order, so the reversed list is a valid
    reverse topological order.  A tape is single-owner and single-shot:
    after ``backward`` it must be cleared (or discarded) before any new
    recording, and a second backward without re-recording raises.
    """

    def __init__(self):
        self._nodes = []
        self._grads = {}
        self._consumed = False

    def watch(self, tensor):
        """Attach an existing tensor (typically a parameter) to this tape."""
        tensor.tape = self
        return tensor

    def clear(self):
        """Drop all records and gradient state; the tape is reusable after."""
        self._nodes.clear()
        self._grads.clear()
        self._consumed = False

    def grad(self, tensor):
        """Gradient of the last backward's loss w.r.t. ``tensor``.

        Returns an all-zero array if the tensor was watched but the loss
        did not depend on it.
        """
        if tensor.tape is not self:
            raise TapeError("tensor is not on this tape")
        g = self._grads.get(id(tensor))
        if g is None:
            return np.zeros_like(tensor.data)
        return g

    def backward(self, loss):
        """Accumulate d(loss)/d(t) for every tensor recorded on this tape."""
        if not isinstance(loss, Tensor) or loss.tape is not self:
            raise TapeError("loss tensor is not on this tape")
        if loss.data.shape != ():
            raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
        if self._consumed:
            raise TapeError("second backward without re-recording")
        if not self._nodes:
            raise TapeError("backward on an empty tape")
        self._grads[id(loss)] = np.ones((), dtype=np.float64)
        for node in reversed(self._nodes):
            g_out = self._grads.get(id(node.out))
            if g_out is None:
                continue
            for inp, g_in in zip(node.inputs, node.back(g_out)):
                if g_in is None or inp.tape is None:
                    continue
                acc = self._grads.get(id(inp))
                self._grads[id(inp)] = g_in if acc is None else acc + g_in
        self._consumed = True


def _record(out, inputs, back):
    tapes = {t.tape for t in inputs if isinstance(t, Tensor) and t.tape is not None}
    if len(tapes) > 1:
        raise TapeError("operands belong to different tapes")
    if tapes:
        tape = tapes.pop()
        if tape._consumed:
            raise TapeError("recording on a consumed tape; clear() it first")
        out.tape = tape
        tape._nodes.append(_Node(out, inputs, back))
    return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same_shape(opname, a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{opname}: shapes {a.data.shape} and {b.data.shape} differ")


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b):
    """Matrix product of two rank-2 tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dims disagree for {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data
    return _record(out, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("add", a, b)
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("sub", a, b)
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("mul", a, b)
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data
    return _record(out, (a, b), lambda g: (g * bd, g * ad))


def scale(a, c):
    """Multiply by a Python scalar."""
    a = _as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c)
    return _record(out, (a,), lambda g: (g * c,))


def add_bias(x, b):
    """Add a vector along the last axis (the one broadcast the layers need)."""
    x, b = _as_tensor(x), _as_tensor(b)
    if b.data.ndim != 1 or x.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"add_bias: bias {b.shape} does not fit last axis of {x.shape}")
    out = Tensor(x.data + b.data)
    n = b.data.shape[0]
    return _record(out, (x, b), lambda g: (g, g.reshape(-1, n).sum(axis=0)))


def sigmoid(x):
    x = _as_tensor(x)
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = Tensor(y)
    yd = out.data
    return _record(out, (x,), lambda g: (g * yd * (1.0 - yd),))


def tanh(x):
    x = _as_tensor(x)
    out = Tensor(np.tanh(x.data))
    yd = out.data
    return _record(out, (x,), lambda g: (g * (1.0 - yd * yd),))


def relu(x):
    x = _as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0))
    mask = (x.data > 0.0).astype(np.float64)  # subgradient at 0 is 0
    return _record(out, (x,), lambda g: (g * mask,))


def log(x):
    x = _as_tensor(x)
    if np.any(x.data <= 0.0):
        raise ValueError("log: operand must be strictly positive")
    out = Tensor(np.log(x.data))
    xd = x.data
    return _record(out, (x,), lambda g: (g / xd,))


def concat(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of zero tensors")
    ndim = tensors[0].data.ndim
    if not 0 <= axis < ndim:
        raise ShapeError(f"concat: axis {axis} out of range for rank {ndim}")
    for t in tensors:
        if t.data.ndim != ndim:
            raise ShapeError("concat: ranks differ")
        for ax in range(ndim):
            if ax != axis and t.data.shape[ax] != tensors[0].data.shape[ax]:
                raise ShapeError(
                    f"concat: shapes {t.data.shape} vs {tensors[0].data.shape} "
                    f"differ off axis {axis}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, offsets, axis=axis))

    return _record(out, tuple(tensors), back)


def softmax(x, axis):
    x = _as_tensor(x)
    if not 0 <= axis < x.data.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for rank {x.data.ndim}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)
    yd = out.data

    def back(g):
        dot = (g * yd).sum(axis=axis, keepdims=True)
        return (yd * (g - dot),)

    return _record(out, (x,), back)


def reduce_sum(x, axis=None):
    """Sum along one axis, or over everything (axis=None) to a scalar."""
    x = _as_tensor(x)
    if axis is None:
        out = Tensor(x.data.sum())
        shp = x.data.shape
        return _record(out, (x,), lambda g: (np.full(shp, g, dtype=np.float64),))
    if not 0 <= axis < x.data.ndim:
        raise ShapeError(f"reduce_sum: axis {axis} out of range for rank {x.data.ndim}")
    out = Tensor(x.data.sum(axis=axis))
    n = x.data.shape[axis]

    def back(g):
        return (np.ascontiguousarray(
            np.broadcast_to(np.expand_dims(g, axis),
                            g.shape[:axis] + (n,) + g.shape[axis:])),)

    return _record(out, (x,), back)


def l1(a, b):
    """Mean absolute difference; subgradient at zero difference is zero."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("l1", a, b)
    diff = a.data - b.data
    out = Tensor(np.mean(np.abs(diff)))
    sgn = np.sign(diff) / diff.size

    def back(g):
        return (g * sgn, -g * sgn)

    return _record(out, (a, b), back)


def reshape(x, shape):
    x = _as_tensor(x)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.data.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    out = Tensor(x.data.reshape(shape))
    old = x.data.shape
    return _record(out, (x,), lambda g: (g.reshape(old),))


def transpose2d(x):
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose2d needs rank 2, got {x.shape}")
    out = Tensor(np.ascontiguousarray(x.data.T))
    return _record(out, (x,), lambda g: (np.ascontiguousarray(g.T),))


def swap01(x):
    """Swap the first two axes (used to flip a pair grid's row/col roles)."""
    x = _as_tensor(x)
    if x.data.ndim < 2:
        raise ShapeError(f"swap01 needs rank >= 2, got {x.shape}")
    out = Tensor(np.ascontiguousarray(np.swapaxes(x.data, 0, 1)))
    return _record(out, (x,), lambda g: (np.ascontiguousarray(np.swapaxes(g, 0, 1)),))


def replicate_rows(x, n):
    """Stack ``n`` copies of ``x`` along a new leading axis."""
    x = _as_tensor(x)
    n = int(n)
    if n < 1:
        raise ShapeError(f"replicate_rows: count must be positive, got {n}")
    out = Tensor(np.ascontiguousarray(np.broadcast_to(x.data, (n,) + x.data.shape)))
    return _record(out, (x,), lambda g: (g.sum(axis=0),))


def scale_cells(grid, w):
    """Multiply every channel vector of a rank-3 grid by its cell weight."""
    grid, w = _as_tensor(grid), _as_tensor(w)
    if grid.data.ndim != 3 or w.data.ndim != 2 or grid.data.shape[:2] != w.data.shape:
        raise ShapeError(f"scale_cells: grid {grid.shape} vs weights {w.shape}")
    out = Tensor(grid.data * w.data[:, :, None])
    gd, wd = grid.data, w.data
    return _record(out, (grid, w),
                   lambda g: (g * wd[:, :, None], (g * gd).sum(axis=2)))


def take_rows(x, indices):
    """Gather rows by index along axis 0 (repeats accumulate in backward)."""
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("take_rows: indices must be one-dimensional")
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise ShapeError(f"take_rows: index out of range for {x.shape}")
    out = Tensor(x.data[idx])
    shp = x.data.shape

    def back(g):
        z = np.zeros(shp, dtype=np.float64)
        np.add.at(z, idx, g)
        return (z,)

    return _record(out, (x,), back)
