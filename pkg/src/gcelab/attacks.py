"""White-box attacks: FGSM, BIM, PGD, MIM, JSMA and Carlini-Wagner L2.

A *model* here is any callable mapping an input ``Tensor`` (N x ...) to a
logits ``Tensor`` (N x K). Use :func:`bind` to get one from a spec and a
parameter dict. Pixel values live in [0, 1].
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import models
from . import tensor as T
from .losses import GceConfig, loss_from_logits
from .tensor import Tensor

ATTACK_KINDS = ("fgsm", "bim", "pgd", "mim", "jsma", "cw")
EPS_BOUNDED = ("fgsm", "bim", "pgd", "mim")

Model = Callable[[Tensor], Tensor]


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "fgsm"
    epsilon: float = 0.1
    iterations: int = 1
    step_size: Optional[float] = None     # defaults to epsilon / iterations
    decay: float = 1.0                    # mim momentum
    gamma: float = 0.25                   # jsma pixel fraction
    gamma_unit: str = "pixels"            # jsma: "pixels" or "iterations"
    confidence: float = 0.0               # cw kappa
    initial_constant: float = 1e-3        # cw c0
    binary_steps: int = 9
    max_opt_iterations: int = 1000
    learning_rate: float = 0.01           # cw inner Adam step
    targeted: bool = False
    target: Optional[int] = None          # fixed target class; None draws per sample
    loss_kind: str = "xe"                 # loss whose input gradient drives fgsm/bim/pgd/mim
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise AttackError(f"unknown attack {self.kind!r}")
        if not self.epsilon >= 0:
            raise AttackError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.iterations < 1:
            raise AttackError(f"iterations must be >= 1, got {self.iterations}")
        if self.step_size is not None and self.step_size < 0:
            raise AttackError("step_size must be >= 0")
        if self.decay < 0:
            raise AttackError("decay must be >= 0")
        if not (0 < self.gamma <= 1):
            raise AttackError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.gamma_unit not in ("pixels", "iterations"):
            raise AttackError("gamma_unit must be 'pixels' or 'iterations'")
        if self.confidence < 0:
            raise AttackError("confidence must be >= 0")
        if not self.initial_constant > 0:
            raise AttackError("initial_constant must be > 0")
        if self.binary_steps < 1 or self.max_opt_iterations < 1:
            raise AttackError("binary_steps and max_opt_iterations must be >= 1")

    @property
    def step(self) -> float:
        return self.epsilon / self.iterations if self.step_size is None else self.step_size


@dataclass
class AttackResult:
    x_adv: np.ndarray
    labels: np.ndarray
    predictions: np.ndarray
    success: np.ndarray
    linf: np.ndarray
    l2: np.ndarray
    targets: Optional[np.ndarray] = None
    pixels_changed: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        """Percentage of samples still classified correctly."""
        return 100.0 * float(np.mean(self.predictions == self.labels)) if len(self.labels) else 0.0

    @classmethod
    def concat(cls, parts: list) -> "AttackResult":
        def cat(name):
            vals = [getattr(p, name) for p in parts]
            return None if vals[0] is None else np.concatenate(vals)
        out = cls(**{name: cat(name) for name in
                     ("x_adv", "labels", "predictions", "success", "linf", "l2", "targets", "pixels_changed")})
        # per-sample extras (e.g. cw "diverged", mim "momentum") are stitched back together
        for key in parts[0].extra:
            if all(key in p.extra for p in parts):
                out.extra[key] = np.concatenate([p.extra[key] for p in parts])
        return out


def bind(spec: models.ModelSpec, params) -> Model:
    """Model callable over frozen parameters (only input gradients are tracked)."""
    fixed = models.frozen(params)
    return lambda x: models.forward(spec, fixed, x)


def _predict(model: Model, x: np.ndarray) -> np.ndarray:
    with T.no_grad():
        return model(Tensor(x)).data.argmax(axis=1)


def _finish(model, x, x_adv, labels, targets=None, **kw) -> AttackResult:
    pred = _predict(model, x_adv)
    success = pred == targets if targets is not None else pred != labels
    diff = (x_adv - x).reshape(len(x), -1)
    return AttackResult(x_adv=x_adv, labels=labels, predictions=pred, success=success,
                        linf=np.abs(diff).max(axis=1) if diff.size else np.zeros(len(x)),
                        l2=np.sqrt((diff ** 2).sum(axis=1)), targets=targets, **kw)


def _targets_for(cfg: AttackConfig, labels: np.ndarray, num_classes: int) -> Optional[np.ndarray]:
    if not cfg.targeted:
        return None
    if cfg.target is not None:
        if not 0 <= cfg.target < num_classes:
            raise AttackError(f"target {cfg.target} out of range")
        return np.full(len(labels), cfg.target, dtype=np.int64)
    # "average case": uniform over the incorrect classes
    rng = np.random.default_rng([cfg.seed, 7919])
    offset = rng.integers(1, num_classes, size=len(labels))
    return (labels + offset) % num_classes


def input_gradient(model: Model, x: np.ndarray, labels: np.ndarray, loss_kind: str = "xe",
                   gce: GceConfig = GceConfig()) -> np.ndarray:
    """Gradient of the summed per-sample loss with respect to the input batch."""
    xt = Tensor(x, requires_grad=True)
    loss = loss_from_logits(loss_kind, model(xt), labels, gce, reduction="none").sum()
    loss.backward()
    g = xt.grad if xt.grad is not None else np.zeros_like(x)
    if not np.isfinite(g).all():
        raise AttackError("non-finite input gradient")
    return g


def _num_classes(model: Model, x: np.ndarray) -> int:
    with T.no_grad():
        return model(Tensor(x[:1])).shape[1]


def _sign_iterate(model, x, labels, cfg, gce, start, steps, step, momentum=None):
    """Shared loop for bim/pgd/mim: sign steps projected onto the eps-ball and [0, 1]."""
    targets = _targets_for(cfg, labels, _num_classes(model, x))
    aim = targets if targets is not None else labels
    direction = -1.0 if targets is not None else 1.0
    lo = np.clip(x - cfg.epsilon, 0.0, 1.0)
    hi = np.clip(x + cfg.epsilon, 0.0, 1.0)
    x_adv = start.copy()
    g_acc = np.zeros_like(x)
    for _ in range(steps):
        if cfg.epsilon == 0:
            break
        grad = input_gradient(model, x_adv, aim, cfg.loss_kind, gce)
        if momentum is not None:
            l1 = np.abs(grad).reshape(len(x), -1).sum(axis=1)
            scale = np.where(l1 > 1e-20, 1.0 / np.where(l1 > 1e-20, l1, 1.0), 0.0)
            g_acc = momentum * g_acc + grad * scale.reshape((-1,) + (1,) * (x.ndim - 1))
            grad = g_acc
        x_adv = np.clip(x_adv + direction * step * np.sign(grad), lo, hi)
    res = _finish(model, x, x_adv, labels, targets)
    if momentum is not None:
        res.extra["momentum"] = g_acc
    return res


def fgsm(model: Model, x, labels, cfg: AttackConfig, gce: GceConfig = GceConfig()) -> AttackResult:
    """One signed-gradient step of size epsilon, clipped to [0, 1]."""
    x, labels = np.asarray(x, dtype=np.float64), np.asarray(labels, dtype=np.int64)
    return _sign_iterate(model, x, labels, cfg, gce, x, 1, cfg.epsilon)


def bim(model: Model, x, labels, cfg: AttackConfig, gce: GceConfig = GceConfig()) -> AttackResult:
    x, labels = np.asarray(x, dtype=np.float64), np.asarray(labels, dtype=np.int64)
    return _sign_iterate(model, x, labels, cfg, gce, x, cfg.iterations, cfg.step)


def pgd(model: Model, x, labels, cfg: AttackConfig, gce: GceConfig = GceConfig()) -> AttackResult:
    """BIM from a uniformly random point of the eps-ball (intersected with [0, 1])."""
    x, labels = np.asarray(x, dtype=np.float64), np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(cfg.seed)
    noise = rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape) if cfg.epsilon > 0 else 0.0
    start = np.clip(x + noise, 0.0, 1.0)
    return _sign_iterate(model, x, labels, cfg, gce, start, cfg.iterations, cfg.step)


def mim(model: Model, x, labels, cfg: AttackConfig, gce: GceConfig = GceConfig()) -> AttackResult:
    x, labels = np.asarray(x, dtype=np.float64), np.asarray(labels, dtype=np.int64)
    return _sign_iterate(model, x, labels, cfg, gce, x, cfg.iterations, cfg.step, momentum=cfg.decay)


# JSMA

def _jsma_budget(cfg: AttackConfig, num_features: int) -> tuple[int, int]:
    """Return (max pixel-pair iterations, max pixels changed)."""
    if cfg.gamma_unit == "pixels":
        max_pixels = int(math.floor(cfg.gamma * num_features))
        return max_pixels // 2, max_pixels
    iters = int(math.floor(cfg.gamma * num_features))
    return iters, 2 * iters


def saliency_pair(alpha: np.ndarray, beta: np.ndarray, domain: np.ndarray):
    """Best pixel pair for an increasing perturbation, or None.

    ``alpha``: d(target logit)/dx, ``beta``: d(sum of other logits)/dx. A pair
    (p, q) is admissible when alpha_p + alpha_q > 0 and beta_p + beta_q < 0;
    among those the score is (alpha_p + alpha_q) * |beta_p + beta_q|.
    """
    idx = np.flatnonzero(domain)
    if idx.size < 2:
        return None
    a, b = alpha[idx], beta[idx]
    pa = a[:, None] + a[None, :]
    pb = b[:, None] + b[None, :]
    score = np.where((pa > 0) & (pb < 0), pa * -pb, -np.inf)
    score[np.tril_indices(idx.size)] = -np.inf
    flat = int(np.argmax(score))
    i, j = divmod(flat, idx.size)
    if not np.isfinite(score[i, j]):
        return None
    return int(idx[i]), int(idx[j])


def _logit_jacobian_rows(model: Model, x: np.ndarray, targets: np.ndarray):
    """Per-sample gradients of the target logit and of the sum of the other logits."""
    xt = Tensor(x, requires_grad=True)
    logits = model(xt)
    T.take(logits, targets).sum().backward()
    g_target = xt.grad.reshape(len(x), -1)
    xt = Tensor(x, requires_grad=True)
    logits = model(xt)
    logits.sum().backward()
    g_all = xt.grad.reshape(len(x), -1)
    return g_target, g_all - g_target


def jsma(model: Model, x, labels, cfg: AttackConfig, chunk: int = 32) -> AttackResult:
    """Pixel-pair saliency attack setting chosen pixels to 1.0 (perturbation epsilon = 1).

    Untargeted runs aim at the runner-up class of the clean prediction and
    stop as soon as the prediction leaves the true label.
    """
    x, labels = np.asarray(x, dtype=np.float64), np.asarray(labels, dtype=np.int64)
    n = len(x)
    d = int(np.prod(x.shape[1:]))
    max_iters, max_pixels = _jsma_budget(cfg, d)
    with T.no_grad():
        clean_logits = model(Tensor(x)).data
    k = clean_logits.shape[1]
    if cfg.targeted:
        targets = _targets_for(cfg, labels, k)
    else:
        ranked = np.argsort(-clean_logits, axis=1, kind="stable")
        targets = np.where(ranked[:, 0] == labels, ranked[:, 1], ranked[:, 0])
    x_adv = x.reshape(n, d).copy()
    domain = x_adv < 1.0
    changed = np.zeros(n, dtype=np.int64)
    done = _jsma_success(clean_logits.argmax(axis=1), labels, targets, cfg.targeted)
    stuck = np.zeros(n, dtype=bool)
    for _ in range(max_iters):
        active = np.flatnonzero(~done & ~stuck & (changed + 2 <= max_pixels))
        if active.size == 0:
            break
        for s in range(0, active.size, chunk):
            rows = active[s:s + chunk]
            ga, gb = _logit_jacobian_rows(model, x_adv[rows].reshape((len(rows),) + x.shape[1:]), targets[rows])
            for r, i in enumerate(rows):
                pair = saliency_pair(ga[r], gb[r], domain[i])
                if pair is None:
                    stuck[i] = True
                    continue
                for p in pair:
                    x_adv[i, p] = 1.0
                    domain[i, p] = False
                changed[i] += 2
        pred = _predict(model, x_adv[active].reshape((len(active),) + x.shape[1:]))
        done[active] = _jsma_success(pred, labels[active], targets[active], cfg.targeted)
    x_adv = x_adv.reshape(x.shape)
    res = _finish(model, x, x_adv, labels, targets if cfg.targeted else None,
                  pixels_changed=(x_adv != x).reshape(n, -1).sum(axis=1))
    res.targets = targets
    return res


def _jsma_success(pred, labels, targets, targeted):
    return pred == targets if targeted else pred != labels


# Carlini-Wagner L2

def _cw_margin(logits: np.ndarray, aim: np.ndarray, targeted: bool) -> np.ndarray:
    rows = np.arange(len(aim))
    masked = logits.copy()
    masked[rows, aim] = -np.inf
    other = masked.max(axis=1)
    own = logits[rows, aim]
    return other - own if targeted else own - other


def cw(model: Model, x, labels, cfg: AttackConfig) -> AttackResult:
    """L2 attack on w with x* = (tanh(w) + 1) / 2 and a per-sample binary search over c.

    Objective per sample: ||x* - x||^2 + c * f(x*), with
    f = max(max_{i != t} Z_i - Z_t, -kappa) (targeted) or
    f = max(Z_y - max_{i != y} Z_i, -kappa) (untargeted).
    """
    x, labels = np.asarray(x, dtype=np.float64), np.asarray(labels, dtype=np.int64)
    n = len(x)
    k = _num_classes(model, x)
    targets = _targets_for(cfg, labels, k)
    targeted = targets is not None
    aim = targets if targeted else labels
    rows = np.arange(n)
    onehot = np.zeros((n, k))
    onehot[rows, aim] = 1.0
    kappa = cfg.confidence
    flat = (n, -1)
    bshape = (-1,) + (1,) * (x.ndim - 1)

    best_l2sq = np.full(n, np.inf)
    best_adv = x.copy()
    with T.no_grad():
        margin0 = _cw_margin(model(Tensor(x)).data, aim, targeted)
    already = margin0 <= -kappa if kappa > 0 else margin0 < 0
    best_l2sq[already] = 0.0

    lower = np.zeros(n)
    upper = np.full(n, 1e10)
    const = np.full(n, cfg.initial_constant)
    w0 = np.arctanh(np.clip(2.0 * x - 1.0, -1.0, 1.0) * (1.0 - 1e-6))
    diverged = np.zeros(n, dtype=bool)
    b1, b2, eps = 0.9, 0.999, 1e-8

    for _ in range(cfg.binary_steps):
        w = w0.copy()
        m = np.zeros_like(w)
        v = np.zeros_like(w)
        found = already.copy()
        for it in range(1, cfg.max_opt_iterations + 1):
            wt = Tensor(w, requires_grad=True)
            x_star = (T.tanh(wt) + 1.0) * 0.5
            l2sq = ((x_star - x) * (x_star - x)).reshape(flat).sum(axis=1)
            logits = model(x_star)
            own = T.take(logits, aim)
            other = T.max(logits + onehot * -1e10, axis=1)
            gap = other - own if targeted else own - other
            f = T.maximum(gap, -kappa)
            total = (l2sq + f * const).sum()
            total.backward()

            z = logits.data
            margin = _cw_margin(z, aim, targeted)
            ok = (margin <= -kappa if kappa > 0 else margin < 0) & ~diverged
            better = ok & (l2sq.data < best_l2sq)
            best_l2sq[better] = l2sq.data[better]
            best_adv[better] = x_star.data[better]
            found |= ok

            grad = wt.grad
            m = b1 * m + (1 - b1) * grad
            v = b2 * v + (1 - b2) * grad * grad
            mhat = m / (1 - b1 ** it)
            vhat = v / (1 - b2 ** it)
            w = w - cfg.learning_rate * mhat / (np.sqrt(vhat) + eps)
            bad = ~np.isfinite(w.reshape(flat)).all(axis=1)
            if bad.any():
                diverged |= bad
                w[bad] = w0[bad]
                m[bad] = 0.0
                v[bad] = 0.0

        succeeded = found
        upper = np.where(succeeded, np.minimum(upper, const), upper)
        lower = np.where(succeeded, lower, np.maximum(lower, const))
        bisect = upper < 1e9
        const = np.where(bisect, (lower + upper) / 2.0, const * 10.0)

    res = _finish(model, x, best_adv, labels, targets)
    found_any = np.isfinite(best_l2sq)
    res.success &= found_any
    res.extra["diverged"] = diverged
    return res


_DISPATCH = {"fgsm": fgsm, "bim": bim, "pgd": pgd, "mim": mim}


def run_attack(model: Model, x, labels, cfg: AttackConfig, gce: GceConfig = GceConfig(),
               batch_size: int = 250) -> AttackResult:
    """Run ``cfg.kind`` over the data in fixed-size chunks and merge the results."""
    x, labels = np.asarray(x, dtype=np.float64), np.asarray(labels, dtype=np.int64)
    parts = []
    for ci, start in enumerate(range(0, len(x), batch_size)):
        xs, ys = x[start:start + batch_size], labels[start:start + batch_size]
        chunk_cfg = _reseed(cfg, ci)
        if cfg.kind == "jsma":
            parts.append(jsma(model, xs, ys, chunk_cfg))
        elif cfg.kind == "cw":
            parts.append(cw(model, xs, ys, chunk_cfg))
        else:
            parts.append(_DISPATCH[cfg.kind](model, xs, ys, chunk_cfg, gce))
    return AttackResult.concat(parts)


def _reseed(cfg: AttackConfig, chunk_index: int) -> AttackConfig:
    if chunk_index == 0:
        return cfg
    seed = int(np.random.SeedSequence([cfg.seed, chunk_index]).generate_state(1)[0])
    return AttackConfig(**{**asdict(cfg), "seed": seed})


def save_adversarial(path, result: AttackResult, cfg: AttackConfig, meta: dict | None = None) -> None:
    descriptor = {"kind": "adversarial_batch", "attack": asdict(cfg), "meta": dict(meta or {})}
    models.write_container(path, descriptor, {"x_adv": result.x_adv,
                                              "labels": result.labels.astype(np.float64)})


MANIFEST_HEADER = ["sample_id", "label", "prediction", "success", "linf", "l2"]


def write_manifest(path, result: AttackResult, sample_ids=None) -> None:
    ids = range(len(result.labels)) if sample_ids is None else sample_ids
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_HEADER)
        for sid, lab, pred, ok, linf, l2 in zip(ids, result.labels, result.predictions,
                                                result.success, result.linf, result.l2):
            w.writerow([int(sid), int(lab), int(pred), int(bool(ok)), repr(float(linf)), repr(float(l2))])
