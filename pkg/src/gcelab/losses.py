"""Cross-entropy, Complement Entropy and Guided Complement Entropy.

All losses consume predicted probabilities ``probs`` (N x K tensor) and
integer ground-truth labels. The complement distribution of a sample is the
probability vector over its incorrect classes renormalized by ``1 - y_g``.

Sign convention: every loss here is meant to be *minimized*. Complement
Entropy returns minus the complement entropy (range ``[-log(K-1), 0]``) and
normalized GCE returns ``-y_g**alpha * H / log(K-1)`` (range ``[-1, 0]``), so
the optimum sits at ``y_g -> 1`` with a flat complement. Pass
``literal_sign=True`` to get the value with the sign flipped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

DEFAULT_PROB_FLOOR = 1e-12
LOSS_KINDS = ("xe", "gce", "complement_entropy")


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class GceConfig:
    alpha: float = 1.0 / 3.0
    normalized: bool = True
    prob_floor: float = DEFAULT_PROB_FLOOR

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise LossError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not (0.0 < self.prob_floor <= 1e-6):
            raise LossError(f"prob_floor must lie in (0, 1e-6], got {self.prob_floor}")


def _validate(probs: Tensor, labels) -> np.ndarray:
    if probs.ndim != 2:
        raise LossError(f"probs must be N x K, got shape {probs.shape}")
    n, k = probs.shape
    if n == 0:
        raise LossError("empty batch")
    if k < 2:
        raise LossError(f"need at least 2 classes, got K={k}")
    labels = np.asarray(labels)
    if labels.shape != (n,) or not np.issubdtype(labels.dtype, np.integer):
        raise LossError(f"labels must be {n} integer class indices")
    if labels.min() < 0 or labels.max() >= k:
        raise LossError(f"label out of range [0, {k})")
    if np.abs(probs.data.sum(axis=1) - 1.0).max() > 1e-9:
        raise LossError("probability rows must sum to 1")
    return labels.astype(np.int64)


def _reduce(per_sample: Tensor, reduction: str) -> Tensor:
    if reduction == "mean":
        return per_sample.mean()
    if reduction == "none":
        return per_sample
    raise LossError(f"unknown reduction {reduction!r}")


def complement_entropy_terms(probs: Tensor, labels: np.ndarray, prob_floor: float):
    """Return ``(y_g, H)`` per sample, H being the entropy of the complement distribution.

    Samples whose ``1 - y_g`` is at or below ``prob_floor`` get ``H = log(K-1)``,
    the flat-complement limit.
    """
    n, k = probs.shape
    rows = np.arange(n)
    y_true = T.take(probs, labels)
    denom = T.maximum(1.0 - y_true, prob_floor)
    ratio = probs / denom.reshape(n, 1)
    incorrect = np.ones((n, k))
    incorrect[rows, labels] = 0.0
    # 0 * log 0 == 0: the multiplier is the unclamped ratio
    plogp = ratio * T.log(T.clip(ratio, prob_floor, 1.0))
    h = -(plogp * incorrect).sum(axis=1)
    degenerate = (1.0 - y_true.data) <= prob_floor
    if degenerate.any():
        h = h * (~degenerate).astype(np.float64) + math.log(k - 1) * degenerate
    return y_true, h


def cross_entropy(probs: Tensor, labels, prob_floor: float = DEFAULT_PROB_FLOOR,
                  reduction: str = "mean") -> Tensor:
    labels = _validate(probs, labels)
    y_true = T.take(probs, labels)
    return _reduce(-T.log(T.clip(y_true, prob_floor, 1.0)), reduction)


def complement_entropy(probs: Tensor, labels, prob_floor: float = DEFAULT_PROB_FLOOR,
                       reduction: str = "mean", literal_sign: bool = False) -> Tensor:
    labels = _validate(probs, labels)
    _, h = complement_entropy_terms(probs, labels, prob_floor)
    per_sample = h if literal_sign else -h
    return _reduce(per_sample, reduction)


def guided_complement_entropy(probs: Tensor, labels, cfg: GceConfig = GceConfig(),
                              reduction: str = "mean", literal_sign: bool = False) -> Tensor:
    labels = _validate(probs, labels)
    k = probs.shape[1]
    if cfg.normalized and k < 3:
        raise LossError("normalized GCE is undefined for K=2 (log(K-1) = 0); "
                        "use GceConfig(normalized=False)")
    y_true, h = complement_entropy_terms(probs, labels, cfg.prob_floor)
    guide = T.power(y_true, cfg.alpha, grad_floor=cfg.prob_floor)
    term = guide * h
    if cfg.normalized:
        term = term * (1.0 / math.log(k - 1))
    per_sample = term if literal_sign else -term
    return _reduce(per_sample, reduction)


def loss_from_logits(kind: str, logits: Tensor, labels, gce: GceConfig = GceConfig(),
                     reduction: str = "mean") -> Tensor:
    """Softmax the logits and apply the named loss (``xe``, ``gce`` or ``complement_entropy``)."""
    probs = T.softmax(logits, axis=1)
    if kind == "xe":
        return cross_entropy(probs, labels, gce.prob_floor, reduction)
    if kind == "gce":
        return guided_complement_entropy(probs, labels, gce, reduction)
    if kind == "complement_entropy":
        return complement_entropy(probs, labels, gce.prob_floor, reduction)
    raise LossError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
