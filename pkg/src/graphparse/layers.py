"""Parameterized building blocks: linear maps, the shared per-edge link
network, a GRU update cell, and a per-edge (1x1 kernel) convolutional
LSTM for carrying adjacency state through time.

All layers operate on the tensor engine in :mod:`graphparse.tensor` and
expose their parameters through ``params(prefix)`` so models can collect
them under hierarchical names for checkpoints and optimizers.
"""

from __future__ import annotations

import math

import numpy as np

from graphparse import tensor as T
from graphparse.tensor import ShapeError, Tensor


def _uniform_init(rng, out_dim, in_dim):
    bound = 1.0 / math.sqrt(in_dim)
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))


class Linear:
    """Affine map along the last axis: y = x W^T + b."""

    def __init__(self, weight, bias):
        self.weight = Tensor(weight)
        self.bias = Tensor(bias)
        if self.weight.data.ndim != 2 or self.bias.data.ndim != 1:
            raise ShapeError("Linear expects weight [out, in] and bias [out]")
        if self.weight.data.shape[0] != self.bias.data.shape[0]:
            raise ShapeError(
                f"Linear: weight {self.weight.shape} vs bias {self.bias.shape}")

    @classmethod
    def init(cls, rng, in_dim, out_dim):
        return cls(_uniform_init(rng, out_dim, in_dim), np.zeros(out_dim))

    @property
    def in_dim(self):
        return self.weight.data.shape[1]

    @property
    def out_dim(self):
        return self.weight.data.shape[0]

    def __call__(self, x):
        if x.data.shape[-1] != self.in_dim:
            raise ShapeError(
                f"linear: input last dim {x.data.shape[-1]} != {self.in_dim}")
        lead = x.data.shape[:-1]
        rows = int(np.prod(lead)) if lead else 1
        flat = x if x.data.ndim == 2 else T.reshape(x, (rows, self.in_dim))
        out = T.add_bias(T.matmul(flat, T.transpose2d(self.weight)), self.bias)
        if x.data.ndim != 2:
            out = T.reshape(out, lead + (self.out_dim,))
        return out

    def params(self, prefix):
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


_HIDDEN_ACTS = {"tanh": T.tanh, "relu": T.relu}


class EdgeMlp:
    """Shared-weight MLP applied to every (v, w) cell of a feature grid,
    with a final sigmoid squashing each cell into [0, 1].

    The same weights score every edge, so the layer is equivariant to
    simultaneous permutation of both grid axes.
    """

    def __init__(self, layers, hidden_act="tanh"):
        if not layers:
            raise ShapeError("EdgeMlp needs at least one layer")
        if layers[-1].out_dim != 1:
            raise ShapeError("EdgeMlp final layer must emit a single channel")
        if hidden_act not in _HIDDEN_ACTS:
            raise ValueError(f"unknown hidden activation {hidden_act!r}")
        self.layers = list(layers)
        self.hidden_act = hidden_act

    @classmethod
    def init(cls, rng, in_dim, hidden_dims, hidden_act="tanh"):
        dims = [in_dim] + list(hidden_dims) + [1]
        layers = [Linear.init(rng, dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
        return cls(layers, hidden_act=hidden_act)

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    def __call__(self, grid):
        if grid.data.ndim != 3:
            raise ShapeError(f"edge grid must be rank 3, got {grid.shape}")
        if grid.data.shape[2] != self.in_dim:
            raise ShapeError(
                f"edge grid has {grid.data.shape[2]} channels, net expects {self.in_dim}")
        n, m, _ = grid.data.shape
        act = _HIDDEN_ACTS[self.hidden_act]
        x = T.reshape(grid, (n * m, self.in_dim))
        for layer in self.layers[:-1]:
            x = act(layer(x))
        x = T.sigmoid(self.layers[-1](x))
        return T.reshape(x, (n, m))

    def params(self, prefix):
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.params(f"{prefix}.{i}"))
        return out


class GruCell:
    """Gated recurrent update, one fixed convention throughout:

        z = sigmoid(Wz m + Uz h + bz)
        r = sigmoid(Wr m + Ur h + br)
        n = tanh(Wn m + r * (Un h) + bn)
        h' = (1 - z) * n + z * h
    """

    GATES = ("z", "r", "n")

    def __init__(self, weights):
        self.w = weights  # dict: Wz, Uz, bz, Wr, Ur, br, Wn, Un, bn
        self.hidden_dim = self.w["Uz"].data.shape[1]
        self.input_dim = self.w["Wz"].data.shape[1]

    @classmethod
    def init(cls, rng, input_dim, hidden_dim):
        w = {}
        for gate in cls.GATES:
            w[f"W{gate}"] = Tensor(_uniform_init(rng, hidden_dim, input_dim))
            w[f"U{gate}"] = Tensor(_uniform_init(rng, hidden_dim, hidden_dim))
            w[f"b{gate}"] = Tensor(np.zeros(hidden_dim))
        return cls(w)

    def step(self, h_prev, m):
        if h_prev.data.shape[-1] != self.hidden_dim:
            raise ShapeError(
                f"gru: hidden dim {h_prev.data.shape[-1]} != {self.hidden_dim}")
        if m.data.shape[-1] != self.input_dim:
            raise ShapeError(f"gru: input dim {m.data.shape[-1]} != {self.input_dim}")
        single = h_prev.data.ndim == 1
        if single:
            h_prev = T.reshape(h_prev, (1, self.hidden_dim))
            m = T.reshape(m, (1, self.input_dim))
        w = self.w
        lin = lambda x, W: T.matmul(x, T.transpose2d(W))
        z = T.sigmoid(T.add_bias(lin(m, w["Wz"]) + lin(h_prev, w["Uz"]), w["bz"]))
        r = T.sigmoid(T.add_bias(lin(m, w["Wr"]) + lin(h_prev, w["Ur"]), w["br"]))
        n = T.tanh(T.add_bias(lin(m, w["Wn"]) + T.mul(r, lin(h_prev, w["Un"])), w["bn"]))
        out = (n - T.mul(z, n)) + T.mul(z, h_prev)
        return T.reshape(out, (self.hidden_dim,)) if single else out

    def params(self, prefix):
        return {f"{prefix}.{name}": t for name, t in self.w.items()}


class ConvLstmCell:
    """Per-edge LSTM: every grid cell runs the same 1x1-kernel gating.

    Gates i, f, o use sigmoid, the candidate g uses tanh:
        c' = f * c + i * g,   h' = o * tanh(c')
    """

    GATES = ("i", "f", "o", "g")

    def __init__(self, weights, in_channels, hidden_channels):
        self.w = weights  # dict: Wx_i, Wh_i, b_i, ... for i/f/o/g
        self.in_channels = in_channels
        self.hidden_channels = hidden_channels

    @classmethod
    def init(cls, rng, in_channels, hidden_channels, forget_bias=1.0):
        w = {}
        for gate in cls.GATES:
            w[f"Wx_{gate}"] = Tensor(_uniform_init(rng, hidden_channels, in_channels))
            w[f"Wh_{gate}"] = Tensor(_uniform_init(rng, hidden_channels, hidden_channels))
            bias = np.full(hidden_channels, forget_bias) if gate == "f" \
                else np.zeros(hidden_channels)
            w[f"b_{gate}"] = Tensor(bias)
        return cls(w, in_channels, hidden_channels)

    def zero_state(self, n):
        shape = (n, n, self.hidden_channels)
        return (Tensor.zeros(shape), Tensor.zeros(shape))

    def step(self, x, state):
        if x.data.ndim != 3 or x.data.shape[2] != self.in_channels:
            raise ShapeError(
                f"convlstm: input {x.shape} does not carry {self.in_channels} channels")
        h_prev, c_prev = state
        if h_prev.data.shape != x.data.shape[:2] + (self.hidden_channels,):
            raise ShapeError(
                f"convlstm: state {h_prev.shape} does not match input grid {x.shape}")
        n, m, _ = x.data.shape
        xf = T.reshape(x, (n * m, self.in_channels))
        hf = T.reshape(h_prev, (n * m, self.hidden_channels))
        w = self.w
        gate = lambda name, act: act(T.add_bias(
            T.matmul(xf, T.transpose2d(w[f"Wx_{name}"]))
            + T.matmul(hf, T.transpose2d(w[f"Wh_{name}"])), w[f"b_{name}"]))
        i = gate("i", T.sigmoid)
        f = gate("f", T.sigmoid)
        o = gate("o", T.sigmoid)
        g = gate("g", T.tanh)
        cf = T.reshape(c_prev, (n * m, self.hidden_channels))
        c_new = T.mul(f, cf) + T.mul(i, g)
        h_new = T.mul(o, T.tanh(c_new))
        h_out = T.reshape(h_new, (n, m, self.hidden_channels))
        c_out = T.reshape(c_new, (n, m, self.hidden_channels))
        return h_out, (h_out, c_out)

    def params(self, prefix):
        return {f"{prefix}.{name}": t for name, t in self.w.items()}


class ConvLstmStack:
    """Stacked per-edge LSTM layers; the last layer has one channel and
    its hidden state is the pre-sigmoid adjacency logit map."""

    def __init__(self, cells):
        if not cells:
            raise ShapeError("ConvLstmStack needs at least one cell")
        if cells[-1].hidden_channels != 1:
            raise ShapeError("final convLSTM layer must have a single channel")
        self.cells = list(cells)

    @classmethod
    def init(cls, rng, in_channels, hidden_channels, forget_bias=1.0):
        dims = [in_channels] + list(hidden_channels)
        if dims[-1] != 1:
            dims = dims + [1]
        cells = [ConvLstmCell.init(rng, dims[i], dims[i + 1], forget_bias)
                 for i in range(len(dims) - 1)]
        return cls(cells)

    @property
    def in_dim(self):
        return self.cells[0].in_channels

    def zero_state(self, n):
        return [cell.zero_state(n) for cell in self.cells]

    def step(self, x, states):
        if len(states) != len(self.cells):
            raise ShapeError(
                f"convlstm stack: got {len(states)} states for {len(self.cells)} layers")
        new_states = []
        out = x
        for cell, state in zip(self.cells, states):
            out, new_state = cell.step(out, state)
            new_states.append(new_state)
        return out, new_states

    def params(self, prefix):
        out = {}
        for i, cell in enumerate(self.cells):
            out.update(cell.params(f"{prefix}.{i}"))
        return out
