"""Listwise ranking losses and the inverse-weighted dual pair.

Every loss here treats one document list as the unit: a list of scores is
turned into a softmax distribution and scored against nonnegative per-item
targets with cross-entropy. The dual losses differ only in what plays the
role of scores and what supplies the weights:

    ranking loss:    -sum_{i} click_i * w_i * log softmax(f)_i,
                     w_i inverse-propensity weights, w_1 = 1
    propensity loss: -sum_{i} click_i * v_i * log softmax(g)_i,
                     v_i inverse-relevance weights

Weights are plain arrays computed outside the graph, so no gradient ever
flows through a weighting term. Inputs may be a single list (n,) or a
batch of equal-length lists (batch, n); a batch averages per-list losses.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class LossInputError(ValueError):
    pass


def np_softmax(x, axis=-1):
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def inverse_weights(values, clip_max):
    """Per-list leading-entry ratios values[0] / values[i], clamped to
    [1/clip_max, clip_max]. The leading entry always maps to weight 1."""
    v = np.asarray(values, dtype=np.float64)
    if np.any(v <= 0.0):
        raise LossInputError("inverse weighting needs strictly positive values")
    if clip_max < 1.0:
        raise LossInputError("weight clip must be >= 1")
    w = v[..., :1] / v
    return np.clip(w, 1.0 / clip_max, clip_max)


def _target_cross_entropy(scores, targets):
    scores = scores if isinstance(scores, Tensor) else ad.tensor(scores)
    targets = np.asarray(targets, dtype=np.float64)
    try:
        joint = np.broadcast_shapes(scores.shape, targets.shape)
    except ValueError as err:
        raise LossInputError(
            f"targets shape {targets.shape} does not broadcast with scores {scores.shape}"
        ) from err
    if joint[-1] != scores.shape[-1]:
        raise LossInputError(f"targets shape {targets.shape} does not match list length")
    num_lists = int(np.prod(joint[:-1])) if len(joint) > 1 else 1
    total = ad.reduce_sum(ad.mul(ad.log_softmax(scores, axis=-1), targets))
    return ad.mul(total, -1.0 / num_lists)


def loss_listwise_softmax(scores, targets):
    """Softmax cross-entropy against nonnegative targets; with 0/1 click
    targets this is the naive click-fitting loss."""
    t = np.asarray(targets, dtype=np.float64)
    if np.any(t < 0):
        raise LossInputError("targets must be nonnegative")
    if np.any(t.sum(axis=-1) <= 0.0):
        raise LossInputError("every list needs at least one positive target")
    return _target_cross_entropy(scores, t)


def loss_ipw(scores, clicks, weights):
    """Inverse-propensity-weighted listwise loss over clicked documents.

    ``clicks`` are 0/1 indicators (or soft click weights in [0, 1]);
    ``weights`` must be strictly positive, pre-clamped by the caller.
    """
    c = np.asarray(clicks, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w <= 0.0):
        raise LossInputError("propensity weights must be strictly positive")
    if np.any((c < 0) | (c > 1)):
        raise LossInputError("clicks must lie in [0, 1]")
    if np.any(c.sum(axis=-1) <= 0.0):
        raise LossInputError("every list needs at least one click")
    return _target_cross_entropy(scores, c * w)


def loss_irw(propensity_scores, clicks, weights):
    """Mirror image of ``loss_ipw``: the propensity side is softmaxed and the
    ranker supplies the inverse weights. Identical computation, swapped roles."""
    return loss_ipw(propensity_scores, clicks, weights)


def loss_distill(teacher_scores, student_scores):
    """Listwise distillation: cross-entropy from the teacher's softmax to the
    student's. The teacher is treated as a constant; gradients reach only the
    student. Minimum value is the teacher distribution's entropy."""
    t = teacher_scores.values if isinstance(teacher_scores, Tensor) else np.asarray(
        teacher_scores, dtype=np.float64
    )
    p = np_softmax(t, axis=-1)
    return _target_cross_entropy(student_scores, p)


def teacher_entropy(teacher_scores, axis=-1):
    """Entropy of softmax(teacher); the floor of the distillation loss."""
    t = teacher_scores.values if isinstance(teacher_scores, Tensor) else np.asarray(
        teacher_scores, dtype=np.float64
    )
    p = np_softmax(t, axis=axis)
    return -(p * np.log(p)).sum(axis=axis)
