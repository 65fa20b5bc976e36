"""The parsing network itself.

A scene is a complete graph over detected humans and objects.  Each
forward pass alternates, for a fixed number of steps:

  1. score a soft adjacency over all ordered node pairs from the current
     hidden states and the latest per-pair channel (the link network);
  2. form per-pair raw messages from linear transforms of both endpoint
     states and the static edge features, then sum them into each node
     weighted by the adjacency row (diagonal excluded);
  3. refresh every hidden state with a shared GRU.

Readout heads then map final hidden states to per-node label
distributions.  The same machinery runs per frame for sequences, with a
convolutional-LSTM link whose state carries the adjacency logits across
time (one state per step index).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from graphparse import tensor as T
from graphparse.fileio import write_matrix_csv, write_pgm
from graphparse.layers import ConvLstmStack, EdgeMlp, GruCell, Linear
from graphparse.tensor import ShapeError, Tensor

HUMAN = "human"
OBJECT = "object"

MODE_JOINT = "joint-iterative"
MODE_STATIC = "static-structure"
MODE_CONSTANT = "constant-structure"
MODE_NO_GRAPH = "no-graph"
MODES = (MODE_JOINT, MODE_STATIC, MODE_CONSTANT, MODE_NO_GRAPH)


@dataclass
class SceneGraph:
    """One complete scene: node features, pairwise edge features, kinds,
    and (for training data) ground-truth structure and labels."""

    node_features: np.ndarray          # [V, d_V]
    edge_features: np.ndarray          # [V, V, d_E], stored for every ordered pair
    node_kinds: tuple                  # "human" | "object" per node
    gt_adjacency: np.ndarray = None    # [V, V] in {0,1}, symmetric, zero diagonal
    gt_labels: dict = None             # head name -> [V] int ids or [V, Y] binary
    boxes: np.ndarray = None           # [V, 4] axis-aligned rectangles
    scene_id: str = ""

    def __post_init__(self):
        self.node_features = np.asarray(self.node_features, dtype=np.float64)
        self.edge_features = np.asarray(self.edge_features, dtype=np.float64)
        self.node_kinds = tuple(self.node_kinds)
        v = self.node_features.shape[0]
        if self.node_features.ndim != 2:
            raise ShapeError("node features must be [V, d_V]")
        if self.edge_features.shape[:2] != (v, v) or self.edge_features.ndim != 3:
            raise ShapeError(
                f"edge features must be [V, V, d_E], got {self.edge_features.shape}")
        if len(self.node_kinds) != v:
            raise ShapeError("one kind tag per node required")
        for kind in self.node_kinds:
            if kind not in (HUMAN, OBJECT):
                raise ValueError(f"unknown node kind {kind!r}")
        if self.gt_adjacency is not None:
            a = np.asarray(self.gt_adjacency, dtype=np.float64)
            if a.shape != (v, v):
                raise ShapeError(f"gt adjacency must be [V, V], got {a.shape}")
            if not np.array_equal(a, a.T):
                raise ValueError("gt adjacency must be symmetric")
            if np.any(np.diag(a) != 0.0):
                raise ValueError("gt adjacency must be zero on the diagonal")
            if not np.all((a == 0.0) | (a == 1.0)):
                raise ValueError("gt adjacency entries must be in {0, 1}")
            self.gt_adjacency = a

    @property
    def node_count(self):
        return self.node_features.shape[0]

    @property
    def d_v(self):
        return self.node_features.shape[1]

    @property
    def d_e(self):
        return self.edge_features.shape[2]

    def kind_indices(self, kind):
        if kind == "all":
            return np.arange(self.node_count)
        return np.array([i for i, k in enumerate(self.node_kinds) if k == kind],
                        dtype=np.intp)


@dataclass
class ReadoutHead:
    """A linear head plus activation; ``kind_filter`` names which nodes
    the head is scored on at loss/metric time (all nodes get outputs)."""

    linear: Linear
    activation: str                    # "softmax" | "sigmoid"
    kind_filter: str = "all"           # "all" | "human" | "object"

    def __post_init__(self):
        if self.activation not in ("softmax", "sigmoid"):
            raise ValueError(f"unknown readout activation {self.activation!r}")
        if self.kind_filter not in ("all", HUMAN, OBJECT):
            raise ValueError(f"unknown kind filter {self.kind_filter!r}")

    @property
    def n_classes(self):
        return self.linear.out_dim

    def __call__(self, h):
        out = self.linear(h)
        if self.activation == "softmax":
            return T.softmax(out, axis=1)
        return T.sigmoid(out)


@dataclass
class ParseTrace:
    """Per-iteration intermediates kept for supervision and inspection."""

    hidden: list = field(default_factory=list)      # h^0 .. h^S, Tensors [V, d_V]
    adjacency: list = field(default_factory=list)   # A^1 .. A^S, Tensors [V, V]
    messages: list = field(default_factory=list)    # raw per-pair messages [V, V, d_M]


@dataclass
class ParseResult:
    """Final adjacency, per-head node outputs, and the iteration trace."""

    adjacency: Tensor                 # [V, V] or None in no-graph mode
    outputs: dict                     # head name -> Tensor [V, Y]
    trace: ParseTrace
    scene: SceneGraph

    def adjacency_np(self):
        return None if self.adjacency is None else self.adjacency.data.copy()

    def output_np(self, head):
        return self.outputs[head].data.copy()


class GraphParser:
    """Link + message + update + readout, iterated a fixed number of steps."""

    def __init__(self, link, message_node, message_edge, update, readouts,
                 steps, mode=MODE_JOINT):
        if steps < 1:
            raise ValueError(f"step count must be >= 1, got {steps}")
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.link = link
        self.message_node = message_node
        self.message_edge = message_edge
        self.update = update
        self.readouts = dict(readouts)
        self.steps = steps
        self.mode = mode
        self.d_v = message_node.in_dim
        self.d_e = message_edge.in_dim
        # message = [node transform, node transform, edge transform]
        self.d_m = 2 * self.d_v + self.d_e
        self.link_channels = 2 * self.d_v + self.d_m
        if link is not None and link.in_dim != self.link_channels:
            raise ShapeError(
                f"link network expects {link.in_dim} channels, "
                f"model needs {self.link_channels}")
        if update.hidden_dim != self.d_v or update.input_dim != self.d_m:
            raise ShapeError("update cell dims do not match message layout")

    @property
    def temporal(self):
        return isinstance(self.link, ConvLstmStack)

    @classmethod
    def build(cls, rng, d_v, d_e, steps, heads, mode=MODE_JOINT,
              link_hidden=(128, 128), link_kind="mlp", hidden_act="tanh"):
        """Construct a fresh model.

        ``heads``: list of (name, n_classes, activation, kind_filter).
        ``link_kind``: "mlp" for per-edge MLP, "convlstm" for the temporal
        link, "none" for the no-graph ablation.
        """
        d_m = 2 * d_v + d_e
        channels = 2 * d_v + d_m
        if mode == MODE_NO_GRAPH or link_kind == "none":
            link = None
            mode = MODE_NO_GRAPH
        elif link_kind == "mlp":
            link = EdgeMlp.init(rng, channels, list(link_hidden), hidden_act=hidden_act)
        elif link_kind == "convlstm":
            link = ConvLstmStack.init(rng, channels, list(link_hidden))
        else:
            raise ValueError(f"unknown link kind {link_kind!r}")
        message_node = Linear.init(rng, d_v, d_v)
        message_edge = Linear.init(rng, d_e, d_e)
        update = GruCell.init(rng, d_m, d_v)
        readouts = {}
        for name, n_classes, activation, kind_filter in heads:
            readouts[name] = ReadoutHead(Linear.init(rng, d_v, n_classes),
                                         activation, kind_filter)
        return cls(link, message_node, message_edge, update, readouts, steps, mode)

    def named_parameters(self):
        out = {}
        if self.link is not None:
            out.update(self.link.params("link"))
        out.update(self.message_node.params("message_node"))
        out.update(self.message_edge.params("message_edge"))
        out.update(self.update.params("gru"))
        for name in sorted(self.readouts):
            out.update(self.readouts[name].linear.params(f"readout.{name}"))
        return out

    def watch(self, tape):
        for t in self.named_parameters().values():
            tape.watch(t)
        return tape

    def load_parameters(self, arrays):
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        extra = {k for k in set(arrays) - set(params) if not k.startswith("opt.")
                 and not k.startswith("meta.")}
        if missing or extra:
            raise ShapeError(
                f"parameter names do not match: missing {sorted(missing)}, "
                f"unexpected {sorted(extra)}")
        for name, tensor in params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != tensor.data.shape:
                raise ShapeError(
                    f"{name}: checkpoint shape {arr.shape} != model {tensor.data.shape}")
            tensor.data[...] = arr


def build_feature_grid(h, pair_channel):
    """Cell (v, w) of the grid is [h_v, h_w, pair_channel_vw]."""
    if h.data.ndim != 2 or pair_channel.data.ndim != 3:
        raise ShapeError("feature grid wants h [V, d] and pair channel [V, V, c]")
    v = h.data.shape[0]
    if pair_channel.data.shape[:2] != (v, v):
        raise ShapeError(
            f"pair channel {pair_channel.shape} does not cover {v} nodes")
    cols = T.replicate_rows(h, v)        # [v, w, :] = h_w
    rows = T.swap01(cols)                # [v, w, :] = h_v
    return T.concat([rows, cols, pair_channel], axis=2)


def _offdiag_mask(v):
    return Tensor(1.0 - np.eye(v))


def _bootstrap_pair_channel(scene, d_m):
    """Step-1 pair channel: raw edge features sit in the trailing slot
    where edge transforms live in later steps' messages; the leading
    node-transform channels are zero."""
    v = scene.node_count
    pad = Tensor.zeros((v, v, d_m - scene.d_e))
    return T.concat([pad, Tensor(scene.edge_features)], axis=2)


def infer_adjacency(model, grid, v, temporal_states=None, step_index=0):
    """Soft adjacency for one iteration; the diagonal is forced to zero
    except in constant mode, which is all ones by definition."""
    if model.mode == MODE_CONSTANT:
        return Tensor(np.ones((v, v))), temporal_states
    if model.temporal:
        if temporal_states is None:
            raise ShapeError("temporal link requires carried state")
        logits, new_state = model.link.step(grid, temporal_states[step_index])
        temporal_states = list(temporal_states)
        temporal_states[step_index] = new_state
        raw = T.sigmoid(T.reshape(logits, (v, v)))
    else:
        raw = model.link(grid)
    return T.mul(raw, _offdiag_mask(v)), temporal_states


def aggregate_messages(model, h, edge_features, adjacency):
    """Raw per-pair messages plus their adjacency-weighted per-node sum.

    Returns (raw [V, V, d_M], summed [V, d_M]).  The diagonal never
    contributes to the sum regardless of the adjacency values.
    """
    v = h.data.shape[0]
    node_t = model.message_node(h)                    # [V, d_V]
    cols = T.replicate_rows(node_t, v)                # [v, w] = Wh_w
    rows = T.swap01(cols)                             # [v, w] = Wh_v
    edge_t = model.message_edge(edge_features)        # [V, V, d_E]
    raw = T.concat([rows, cols, edge_t], axis=2)      # [V, V, d_M]
    weights = T.mul(adjacency, _offdiag_mask(v))
    summed = T.reduce_sum(T.scale_cells(raw, weights), axis=1)
    return raw, summed


def parse(model, scene, tape=None, temporal_states=None, forced_adjacency=None):
    """Run the full forward pass on one scene.

    ``temporal_states`` is a list with one convLSTM state per step index,
    threaded through by :func:`parse_sequence`.  ``forced_adjacency``
    substitutes a fixed matrix for the link network (diagnostics only).
    Returns (ParseResult, temporal_states).
    """
    if scene.d_v != model.d_v or scene.d_e != model.d_e:
        raise ShapeError(
            f"scene dims (d_V={scene.d_v}, d_E={scene.d_e}) do not match model "
            f"(d_V={model.d_v}, d_E={model.d_e})")
    if tape is not None:
        model.watch(tape)
    v = scene.node_count
    h = Tensor(scene.node_features)
    trace = ParseTrace(hidden=[h])

    if model.mode == MODE_NO_GRAPH:
        outputs = {name: head(h) for name, head in model.readouts.items()}
        return ParseResult(None, outputs, trace, scene), temporal_states

    if model.temporal and temporal_states is None:
        temporal_states = [model.link.zero_state(v) for _ in range(model.steps)]

    edge_feats = Tensor(scene.edge_features)
    pair_channel = _bootstrap_pair_channel(scene, model.d_m)
    static_adjacency = None
    for s in range(model.steps):
        if forced_adjacency is not None:
            adjacency = Tensor(np.asarray(forced_adjacency, dtype=np.float64))
        elif model.mode == MODE_STATIC and static_adjacency is not None:
            adjacency = static_adjacency
        else:
            grid = build_feature_grid(h, pair_channel)
            adjacency, temporal_states = infer_adjacency(
                model, grid, v, temporal_states, s)
            if model.mode == MODE_STATIC:
                static_adjacency = adjacency
        raw, summed = aggregate_messages(model, h, edge_feats, adjacency)
        h = model.update.step(h, summed)
        pair_channel = raw
        trace.adjacency.append(adjacency)
        trace.messages.append(raw)
        trace.hidden.append(h)

    outputs = {name: head(h) for name, head in model.readouts.items()}
    return ParseResult(trace.adjacency[-1], outputs, trace, scene), temporal_states


def parse_sequence(model, scenes, tape=None):
    """Parse a time-ordered list of frames, carrying link state across
    frames (per step index).  Non-temporal links parse independently."""
    if not scenes:
        return []
    first = scenes[0]
    for s in scenes[1:]:
        if s.node_count != first.node_count:
            raise ShapeError("all frames must share the node set")
        if s.node_kinds != first.node_kinds:
            raise ShapeError("node kinds must be stable across frames")
        if s.d_v != first.d_v or s.d_e != first.d_e:
            raise ShapeError("feature dims must be stable across frames")
    results = []
    states = None
    for scene in scenes:
        result, states = parse(model, scene, tape=tape, temporal_states=states)
        results.append(result)
    return results


def pair_score(result, human_idx, object_idx, head, class_id):
    """Interaction probability of a (human, object) pair for one class:
    the product of the two nodes' output probabilities."""
    kinds = result.scene.node_kinds
    if kinds[human_idx] != HUMAN:
        raise ValueError(f"node {human_idx} is {kinds[human_idx]}, expected human")
    if kinds[object_idx] != OBJECT:
        raise ValueError(f"node {object_idx} is {kinds[object_idx]}, expected object")
    out = result.outputs[head].data
    if not 0 <= class_id < out.shape[1]:
        raise ValueError(f"class {class_id} out of range for head {head!r}")
    return float(out[human_idx, class_id] * out[object_idx, class_id])


def export_adjacency_csv(path, adjacency):
    write_matrix_csv(path, np.asarray(adjacency, dtype=np.float64))


def export_adjacency_pgm(path, adjacency):
    write_pgm(path, np.asarray(adjacency, dtype=np.float64))
