"""Training objectives: adjacency L1 supervision, a weighted two-sided
hinge on sigmoid scores for multi-label heads, cross entropy for softmax
heads, and the combined objective over every iteration's adjacency."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from graphparse import tensor as T
from graphparse.tensor import ShapeError, Tensor


@dataclass
class LossConfig:
    adjacency_weight: float = 1.0
    hinge_margin: float = 1.0
    class_weights: dict = field(default_factory=dict)   # head -> [Y] positive weights
    head_weights: dict = field(default_factory=dict)    # head -> scalar, default 1

    def __post_init__(self):
        if self.adjacency_weight < 0:
            raise ValueError("adjacency weight must be nonnegative")
        if self.hinge_margin <= 0:
            raise ValueError("hinge margin must be positive")
        for head, w in self.class_weights.items():
            if np.any(np.asarray(w) <= 0):
                raise ValueError(f"class weights for {head!r} must be positive")
        for head, w in self.head_weights.items():
            if w < 0:
                raise ValueError(f"head weight for {head!r} must be nonnegative")


def adjacency_l1(adjacency, target):
    """Mean absolute difference over off-diagonal entries."""
    tgt = np.asarray(target, dtype=np.float64)
    if adjacency.data.shape != tgt.shape:
        raise ShapeError(
            f"adjacency {adjacency.shape} vs target {tgt.shape}")
    if not np.all((tgt == 0.0) | (tgt == 1.0)):
        raise ValueError("adjacency target entries must be in {0, 1}")
    v = tgt.shape[0]
    if v < 2:
        return T.scale(T.l1(adjacency, Tensor(tgt)), 0.0)
    mask = 1.0 - np.eye(v)
    masked = T.mul(adjacency, Tensor(mask))
    # l1 averages over all V^2 cells; rescale to the off-diagonal count
    return T.scale(T.l1(masked, Tensor(tgt * mask)), v * v / (v * v - v))


def hinge_multilabel(scores, labels, class_weights=None, margin=1.0):
    """Weighted two-sided hinge on probabilities in [0, 1], mean over nodes.

    Positive labels pay max(0, margin - s); negatives pay
    max(0, margin + s - 1).  With the default margin of 1 the feasible
    band is exactly s = 1 for positives and s = 0 for negatives.
    """
    lab = np.asarray(labels, dtype=np.float64)
    if scores.data.shape != lab.shape:
        raise ShapeError(f"scores {scores.shape} vs labels {lab.shape}")
    if not np.all((lab == 0.0) | (lab == 1.0)):
        raise ValueError("hinge labels must be in {0, 1}")
    n, k = lab.shape
    weights = np.ones(k) if class_weights is None \
        else np.asarray(class_weights, dtype=np.float64)
    if weights.shape != (k,):
        raise ShapeError(f"class weights must be [{k}], got {weights.shape}")
    margin_t = Tensor.full((n, k), float(margin))
    shift_t = Tensor.full((n, k), float(margin) - 1.0)
    pos = T.relu(margin_t - scores)
    neg = T.relu(shift_t + scores)
    per = T.mul(Tensor(lab), pos) + T.mul(Tensor(1.0 - lab), neg)
    weighted = T.mul(per, Tensor(np.broadcast_to(weights, (n, k)).copy()))
    return T.scale(T.reduce_sum(weighted), 1.0 / n)


def cross_entropy(probs, labels):
    """Mean -log p_true over rows; probabilities clamped at 1e-12."""
    lab = np.asarray(labels)
    if probs.data.ndim != 2:
        raise ShapeError(f"probs must be [n, Y], got {probs.shape}")
    n, k = probs.data.shape
    if lab.shape != (n,):
        raise ShapeError(f"labels must be [{n}], got {lab.shape}")
    if np.any(lab < 0) or np.any(lab >= k):
        raise ValueError("label id out of range")
    sums = probs.data.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ValueError("probability rows must sum to 1")
    onehot = np.zeros((n, k))
    onehot[np.arange(n), lab] = 1.0
    p_true = T.reduce_sum(T.mul(probs, Tensor(onehot)), axis=1)
    # clamp: max(p, c) = relu(p - c) + c
    clamp = 1e-12
    clamped = T.relu(p_true - Tensor.full((n,), clamp)) + Tensor.full((n,), clamp)
    return T.scale(T.reduce_sum(T.log(clamped)), -1.0 / n)


def total_loss(result, scene, cfg, model):
    """Sum of per-head losses plus the adjacency L1 on every iteration."""
    if scene.gt_labels is None:
        raise ValueError("scene has no ground-truth labels")
    parts = []
    for name in sorted(model.readouts):
        head = model.readouts[name]
        if name not in scene.gt_labels:
            raise ValueError(f"scene has no labels for head {name!r}")
        labels = scene.gt_labels[name]
        head_w = cfg.head_weights.get(name, 1.0)
        if head.activation == "softmax":
            lab = np.asarray(labels)
            idx = [i for i in scene.kind_indices(head.kind_filter) if lab[i] >= 0]
            if not idx:
                continue
            probs = T.take_rows(result.outputs[name], idx)
            part = cross_entropy(probs, lab[idx])
        else:
            lab = np.asarray(labels, dtype=np.float64)
            idx = list(scene.kind_indices(head.kind_filter))
            scores = result.outputs[name] if len(idx) == scene.node_count \
                else T.take_rows(result.outputs[name], idx)
            part = hinge_multilabel(scores, lab[idx],
                                    cfg.class_weights.get(name),
                                    cfg.hinge_margin)
        parts.append(T.scale(part, head_w))
    if cfg.adjacency_weight > 0 and result.trace.adjacency:
        if scene.gt_adjacency is None:
            raise ValueError("scene has no ground-truth adjacency")
        for adjacency in result.trace.adjacency:
            parts.append(T.scale(adjacency_l1(adjacency, scene.gt_adjacency),
                                 cfg.adjacency_weight))
    if not parts:
        raise ValueError("nothing to optimize: no heads and no adjacency loss")
    out = parts[0]
    for p in parts[1:]:
        out = out + p
    return out
