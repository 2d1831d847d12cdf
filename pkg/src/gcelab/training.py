"""Optimizers, learning-rate schedule and the three training procedures.

* natural training with XE or GCE,
* COT-style alternation (XE on even batches, complement entropy on odd ones),
* PGD min-max adversarial training: each batch is replaced by PGD examples
  crafted against the current weights with XE, then the configured outer loss
  takes the optimizer step.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import attacks, models
from . import tensor as T
from .data import Dataset, batches
from .losses import GceConfig, LossError, complement_entropy, cross_entropy, guided_complement_entropy

logger = logging.getLogger(__name__)

TRAIN_LOSSES = ("xe", "gce", "cot")
OPTIMIZERS = ("adam", "sgd_momentum")


class TrainingError(RuntimeError):
    pass


class SGDMomentum:
    """v <- mu * v + (g + wd * w);  w <- w - lr * v."""

    def __init__(self, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.velocity: dict = {}

    def step(self, params, grads) -> None:
        for name, p in params.items():
            g = _checked_grad(name, grads.get(name), p)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v = self.velocity.get(name)
            v = g if v is None else self.momentum * v + g
            self.velocity[name] = v
            p.data = p.data - self.lr * v


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = _checked_grad(name, grads.get(name), p)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m = self.beta1 * self.m.get(name, 0.0) + (1 - self.beta1) * g
            v = self.beta2 * self.v.get(name, 0.0) + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _checked_grad(name, g, p):
    if g is None:
        return np.zeros_like(p.data)
    if g.shape != p.data.shape:
        raise TrainingError(f"gradient for {name} has shape {g.shape}, parameter {p.data.shape}")
    if not np.isfinite(g).all():
        raise TrainingError(f"non-finite gradient for parameter {name}")
    return g


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "xe"
    gce: GceConfig = GceConfig()
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 10
    batch_size: int = 128
    lr_decay: float = 0.1
    lr_decay_epochs: tuple = ()
    seed: int = 0
    adversarial: bool = False
    adv_epsilon: float = 0.3
    adv_iterations: int = 10
    adv_step_size: Optional[float] = None
    cot_normalize: str = "batch"

    def __post_init__(self):
        object.__setattr__(self, "lr_decay_epochs", tuple(int(e) for e in self.lr_decay_epochs))
        if self.loss not in TRAIN_LOSSES:
            raise TrainingError(f"unknown loss {self.loss!r}")
        if self.optimizer not in OPTIMIZERS:
            raise TrainingError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 1:
            raise TrainingError("epochs must be >= 1")
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")
        if not self.lr > 0:
            raise TrainingError("learning rate must be > 0")
        if self.adv_epsilon < 0 or self.adv_iterations < 1:
            raise TrainingError("adversarial epsilon must be >= 0 and iterations >= 1")
        if self.cot_normalize not in ("batch", "classes"):
            raise TrainingError("cot_normalize must be 'batch' or 'classes'")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch index."""
        drops = sum(1 for d in self.lr_decay_epochs if epoch >= d)
        return self.lr * self.lr_decay ** drops

    def make_optimizer(self):
        if self.optimizer == "adam":
            return Adam(self.lr, self.beta1, self.beta2, weight_decay=self.weight_decay)
        return SGDMomentum(self.lr, self.momentum, self.weight_decay)

    def inner_attack(self, seed: int) -> attacks.AttackConfig:
        return attacks.AttackConfig(kind="pgd", epsilon=self.adv_epsilon, iterations=self.adv_iterations,
                                    step_size=self.adv_step_size, loss_kind="xe", seed=seed)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_error: float
    lr: float
    seconds: float
    mean_true_prob: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    steps: list = field(default_factory=list)   # loss kind used at each optimizer step
    checkpoint: Optional[str] = None

    @property
    def losses(self) -> list:
        return [r.train_loss for r in self.records]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "test_error", "lr", "seconds", "mean_true_prob"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.test_error), repr(r.lr),
                            f"{r.seconds:.3f}", repr(r.mean_true_prob)])


def batch_loss(kind: str, logits: T.Tensor, labels, cfg: TrainConfig) -> T.Tensor:
    probs = T.softmax(logits, axis=1)
    if kind == "xe":
        return cross_entropy(probs, labels, cfg.gce.prob_floor)
    if kind == "gce":
        return guided_complement_entropy(probs, labels, cfg.gce)
    if kind == "complement_entropy":
        loss = complement_entropy(probs, labels, cfg.gce.prob_floor)
        if cfg.cot_normalize == "classes":
            loss = loss * (1.0 / probs.shape[1])
        return loss
    raise LossError(f"unknown loss kind {kind!r}")


def error_rate(spec: models.ModelSpec, params, data: Dataset) -> float:
    """Percentage of misclassified samples."""
    pred = models.predict(spec, params, data.images)
    return 100.0 * float(np.mean(pred != data.labels))


def _check_compat(spec: models.ModelSpec, data: Dataset) -> None:
    if tuple(data.images.shape[1:]) != spec.input_shape:
        raise TrainingError(f"dataset images {data.images.shape[1:]} do not match model input {spec.input_shape}")
    if data.labels.max() >= spec.num_classes:
        raise TrainingError("dataset has more classes than the model outputs")


def _train(spec, train: Dataset, test: Optional[Dataset], cfg: TrainConfig, params=None):
    _check_compat(spec, train)
    if cfg.loss == "cot" and spec.num_classes < 3:
        raise LossError("complement entropy needs K >= 3 for a non-degenerate complement (K=2 has one incorrect class)")
    params = models.init(spec, cfg.seed) if params is None else params
    opt = cfg.make_optimizer()
    opt_complement = cfg.make_optimizer() if cfg.loss == "cot" else None
    log = TrainLog()
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = cfg.lr_at(epoch)
        opt.lr = lr
        if opt_complement is not None:
            opt_complement.lr = lr
        loss_sum, prob_sum, seen = 0.0, 0.0, 0
        for bi, (xb, yb) in enumerate(batches(train, cfg.batch_size, cfg.seed, epoch)):
            if cfg.adversarial:
                inner = cfg.inner_attack(seed=int(np.random.SeedSequence([cfg.seed, epoch, bi]).generate_state(1)[0]))
                xb = attacks.pgd(attacks.bind(spec, params), xb, yb, inner).x_adv
            if cfg.loss == "cot":
                kind = "xe" if step % 2 == 0 else "complement_entropy"
            else:
                kind = cfg.loss
            try:
                logits = models.forward(spec, params, xb)
                loss = batch_loss(kind, logits, yb, cfg)
                loss.backward()
            except T.NumericError as exc:
                raise TrainingError(f"loss diverged at epoch {epoch} batch {bi}: {exc}") from exc
            grads = {name: p.grad for name, p in params.items()}
            (opt_complement if kind == "complement_entropy" else opt).step(params, grads)
            log.steps.append(kind)
            step += 1

            probs = np.exp(logits.data - logits.data.max(axis=1, keepdims=True))
            probs /= probs.sum(axis=1, keepdims=True)
            prob_sum += float(probs[np.arange(len(yb)), yb].sum())
            loss_sum += loss.item() * len(yb)
            seen += len(yb)
        test_err = error_rate(spec, params, test) if test is not None else float("nan")
        rec = EpochRecord(epoch + 1, loss_sum / seen, test_err, lr, time.perf_counter() - t0, prob_sum / seen)
        log.records.append(rec)
        logger.info("epoch %d loss %.6f test_error %.2f%% lr %g (%.1fs)",
                    rec.epoch, rec.train_loss, rec.test_error, rec.lr, rec.seconds)
    return params, log


def train_natural(spec, train: Dataset, test: Optional[Dataset], cfg: TrainConfig):
    if cfg.loss == "cot":
        return train_cot(spec, train, test, cfg)
    if cfg.adversarial:
        raise TrainingError("adversarial config passed to train_natural; use train_adversarial_pgd")
    return _train(spec, train, test, cfg)


def train_cot(spec, train: Dataset, test: Optional[Dataset], cfg: TrainConfig):
    if cfg.loss != "cot":
        cfg = TrainConfig(**{**cfg.__dict__, "loss": "cot"})
    return _train(spec, train, test, cfg)


def train_adversarial_pgd(spec, train: Dataset, test: Optional[Dataset], cfg: TrainConfig):
    if not cfg.adversarial:
        raise TrainingError("adversarial training needs adversarial.enabled = true")
    return _train(spec, train, test, cfg)


def train(spec, train_data: Dataset, test_data: Optional[Dataset], cfg: TrainConfig):
    """Dispatch on the config: adversarial, COT or natural training."""
    if cfg.adversarial:
        return train_adversarial_pgd(spec, train_data, test_data, cfg)
    if cfg.loss == "cot":
        return train_cot(spec, train_data, test_data, cfg)
    return train_natural(spec, train_data, test_data, cfg)
