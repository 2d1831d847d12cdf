"""Flat ``key = value`` configuration files with dotted section keys.

Lines are ``section.name = value``; ``#`` starts a comment. Unknown keys,
malformed lines and bad values are reported with their line number, missing
required keys by name. ``--set key=value`` overrides are applied on top and the
resolved config is what gets hashed and echoed into the run directory.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .losses import GceConfig
from .models import ModelSpec
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _opt_float(text: str) -> Optional[float]:
    return None if text.lower() in ("", "none", "auto") else float(text)


# key -> (parser, default); default None with required=True means the key must be given
TRAIN_SCHEMA: dict = {
    "model.arch": (str, None),
    "model.widths": (_ints, ""),
    "data.dataset": (str, None),
    "data.train_subset": (int, "0"),
    "data.test_subset": (int, "0"),
    "data.subset_seed": (int, "0"),
    "loss.kind": (str, None),
    "loss.alpha": (float, repr(1.0 / 3.0)),
    "loss.normalized": (_bool, "true"),
    "loss.prob_floor": (float, "1e-12"),
    "optimizer.kind": (str, None),
    "optimizer.lr": (float, "0.001"),
    "optimizer.momentum": (float, "0.9"),
    "optimizer.weight_decay": (float, "0.0"),
    "optimizer.beta1": (float, "0.9"),
    "optimizer.beta2": (float, "0.999"),
    "schedule.decay_factor": (float, "0.1"),
    "schedule.decay_epochs": (_ints, ""),
    "train.epochs": (int, None),
    "train.batch_size": (int, None),
    "train.seed": (int, "0"),
    "adversarial.enabled": (_bool, "false"),
    "adversarial.epsilon": (float, "0.3"),
    "adversarial.iterations": (int, "10"),
    "adversarial.step_size": (_opt_float, "auto"),
    "cot.normalize": (str, "batch"),
    "output.dir": (str, "out"),
}

# keys that name the run directory rather than define the experiment
NON_HASHED = ("train.seed", "output.dir")


def parse_text(text: str, source: str = "<config>") -> dict:
    """Parse raw ``key = value`` lines into a dict of strings."""
    raw: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = (part.strip() for part in body.split("=", 1))
        if not key or " " in key:
            raise ConfigError(f"{source}:{lineno}: bad key {key!r}")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = (value, lineno)
    return raw


def split_override(item: str) -> tuple:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, value = item.split("=", 1)
    return key.strip(), value.strip()


@dataclass
class Resolved:
    """A validated config: typed values plus the canonical text it hashes to."""
    values: dict
    text: str

    def __getitem__(self, key):
        return self.values[key]

    @property
    def hash(self) -> str:
        body = "\n".join(line for line in self.text.splitlines()
                         if line.split(" = ", 1)[0] not in NON_HASHED)
        return hashlib.sha256(body.encode("utf-8")).hexdigest()[:8]


def resolve(raw: dict, schema: dict, overrides: Iterable[str] = (), source: str = "<config>") -> Resolved:
    merged = {k: v for k, v in raw.items()}
    for item in overrides:
        key, value = split_override(item)
        merged[key] = (value, "--set")
    values, lines = {}, []
    for key in merged:
        if key not in schema:
            where = merged[key][1]
            raise ConfigError(f"{source}:{where}: unknown key {key!r}")
    for key, (parse, default) in schema.items():
        if key in merged:
            text, where = merged[key]
        elif default is None:
            raise ConfigError(f"{source}: missing required key {key!r}")
        else:
            text, where = default, "default"
        try:
            values[key] = parse(text)
        except ValueError as exc:
            raise ConfigError(f"{source}:{where}: bad value for {key!r}: {exc}") from None
        lines.append(f"{key} = {text}")
    return Resolved(values, "\n".join(lines) + "\n")


def load(path, overrides: Iterable[str] = (), schema: dict = TRAIN_SCHEMA) -> Resolved:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return resolve(parse_text(text, str(path)), schema, overrides, str(path))


def model_spec(cfg: Resolved, input_shape: tuple, num_classes: int) -> ModelSpec:
    return ModelSpec(cfg["model.arch"], input_shape, num_classes, cfg["model.widths"])


def train_config(cfg: Resolved) -> TrainConfig:
    gce = GceConfig(alpha=cfg["loss.alpha"], normalized=cfg["loss.normalized"],
                    prob_floor=cfg["loss.prob_floor"])
    return TrainConfig(
        loss=cfg["loss.kind"], gce=gce, optimizer=cfg["optimizer.kind"], lr=cfg["optimizer.lr"],
        momentum=cfg["optimizer.momentum"], weight_decay=cfg["optimizer.weight_decay"],
        beta1=cfg["optimizer.beta1"], beta2=cfg["optimizer.beta2"],
        epochs=cfg["train.epochs"], batch_size=cfg["train.batch_size"],
        lr_decay=cfg["schedule.decay_factor"], lr_decay_epochs=cfg["schedule.decay_epochs"],
        seed=cfg["train.seed"], adversarial=cfg["adversarial.enabled"],
        adv_epsilon=cfg["adversarial.epsilon"], adv_iterations=cfg["adversarial.iterations"],
        adv_step_size=cfg["adversarial.step_size"], cot_normalize=cfg["cot.normalize"],
    )


# Evaluation suites: which attacks and budgets to run against each checkpoint.
SUITE_SCHEMA: dict = {
    "suite.dataset": (str, "mnist"),
    "suite.split": (str, "test"),
    "suite.samples": (int, "1000"),
    "suite.subset_seed": (int, "0"),
    "suite.seed": (int, "0"),
    "suite.clean": (_bool, "true"),
    "suite.attacks": (lambda t: tuple(v.strip() for v in t.split(",") if v.strip()), "fgsm,bim,pgd,mim"),
    "fgsm.eps": (_floats, "0.1,0.2,0.3"),
    "bim.eps": (_floats, "0.1,0.2,0.3"),
    "bim.iters": (int, "10"),
    "pgd.eps": (_floats, "0.1,0.2,0.3"),
    "pgd.iters": (int, "40"),
    "mim.eps": (_floats, "0.1,0.2,0.3"),
    "mim.iters": (int, "40"),
    "mim.decay": (float, "1.0"),
    "jsma.gamma": (_floats, "0.1"),
    "cw.kappa": (_floats, "0"),
    "cw.c0": (float, "0.001"),
    "cw.binary_steps": (int, "9"),
    "cw.max_iter": (int, "1000"),
    "cw.targeted": (_bool, "true"),
}
