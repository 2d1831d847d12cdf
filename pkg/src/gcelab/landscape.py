"""Three-class loss landscapes over the probability simplex.

Class 0 is the ground truth; ``p1`` and ``p2`` are the probabilities of the two
incorrect classes and ``p0 = 1 - (p1 + p2)``. A point is *shaded* when the
prediction is correct, i.e. ``p0 > max(p1, p2)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .losses import GceConfig, LossError, complement_entropy, cross_entropy, guided_complement_entropy
from .tensor import Tensor

LANDSCAPE_LOSSES = ("complement_entropy", "gce", "normalized_gce", "xe")
BASIN_TOLERANCE = 0.05


@dataclass
class SimplexGrid:
    resolution: int
    p1: np.ndarray      # resolution x resolution, p1[i, j] = axis[i]
    p2: np.ndarray      # p2[i, j] = axis[j]
    p0: np.ndarray
    valid: np.ndarray

    @classmethod
    def build(cls, resolution: int) -> "SimplexGrid":
        if resolution < 3:
            raise ValueError("resolution must be >= 3")
        axis = np.linspace(0.0, 1.0, resolution)
        p1, p2 = np.meshgrid(axis, axis, indexing="ij")
        # parenthesized so that (a, b) and (b, a) give the same p0 bit for bit
        p0 = 1.0 - (p1 + p2)
        valid = p0 >= -1e-12
        p0 = np.where(valid, np.maximum(p0, 0.0), np.nan)
        return cls(resolution, p1, p2, p0, valid)


@dataclass
class LandscapeSheet:
    grid: SimplexGrid
    loss_kind: str
    alpha: float
    loss: np.ndarray        # nan outside the simplex
    shaded: np.ndarray

    def argmin(self) -> tuple:
        vals = np.where(self.grid.valid, self.loss, np.inf)
        return np.unravel_index(int(np.argmin(vals)), vals.shape)

    def minimum_is_shaded(self) -> bool:
        return bool(self.shaded[self.argmin()])

    def basin_fraction(self, tolerance: float = BASIN_TOLERANCE) -> float:
        """Fraction of valid grid points whose loss is within ``tolerance`` of the minimum."""
        vals = self.loss[self.grid.valid]
        return float(np.mean(vals <= vals.min() + tolerance))

    def is_symmetric(self) -> bool:
        a = np.where(self.grid.valid, self.loss, 0.0)
        return bool(np.array_equal(a, a.T))

    def write_csv(self, path) -> None:
        g = self.grid
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["p1", "p2", "p0", "loss", "shaded"])
            for i, j in zip(*np.nonzero(g.valid)):
                w.writerow([repr(float(g.p1[i, j])), repr(float(g.p2[i, j])), repr(float(g.p0[i, j])),
                            repr(float(self.loss[i, j])), int(self.shaded[i, j])])

    def write_pgm(self, path) -> None:
        """Binary grayscale render: p1 to the right, p2 upward, darker is lower loss, white is off-simplex."""
        vals = self.loss[self.grid.valid]
        lo, hi = float(vals.min()), float(vals.max())
        scale = 254.0 / (hi - lo) if hi > lo else 0.0
        img = np.full(self.loss.shape, 255, dtype=np.uint8)
        img[self.grid.valid] = np.round((vals - lo) * scale).astype(np.uint8)
        img = img.T[::-1]
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
        Path(path).write_bytes(header + img.tobytes())


def _check_kind(loss_kind: str) -> None:
    if loss_kind not in LANDSCAPE_LOSSES:
        raise LossError(f"unknown landscape loss {loss_kind!r}; expected one of {LANDSCAPE_LOSSES}")


def loss_values(loss_kind: str, alpha: float, p0, p1, p2) -> np.ndarray:
    """Single-sample loss with ground truth class 0, vectorized over points."""
    _check_kind(loss_kind)
    probs = Tensor(np.stack([np.ravel(p0), np.ravel(p1), np.ravel(p2)], axis=1))
    labels = np.zeros(probs.shape[0], dtype=np.int64)
    if loss_kind == "xe":
        out = cross_entropy(probs, labels, reduction="none")
    elif loss_kind == "complement_entropy":
        out = complement_entropy(probs, labels, reduction="none")
    else:
        cfg = GceConfig(alpha=alpha, normalized=loss_kind == "normalized_gce")
        out = guided_complement_entropy(probs, labels, cfg, reduction="none")
    return out.data.reshape(np.shape(p0))


def evaluate_sheet(loss_kind: str, alpha: float = 1.0 / 3.0, resolution: int = 201) -> LandscapeSheet:
    _check_kind(loss_kind)
    grid = SimplexGrid.build(resolution)
    loss = np.full(grid.p0.shape, np.nan)
    v = grid.valid
    loss[v] = loss_values(loss_kind, alpha, grid.p0[v], grid.p1[v], grid.p2[v])
    shaded = v & (np.nan_to_num(grid.p0, nan=-1.0) > np.maximum(grid.p1, grid.p2))
    return LandscapeSheet(grid, loss_kind, alpha, loss, shaded)


def profile_equal_incorrect(loss_kind: str, alphas, resolution: int = 100) -> dict:
    """Loss along p1 = p2 = (1 - p0) / 2 for p0 = 1/res, ..., (res-1)/res.

    Returns ``{alpha: (p0, values)}``.
    """
    _check_kind(loss_kind)
    if resolution < 10:
        raise ValueError("resolution must be >= 10")
    p0 = np.arange(1, resolution) / resolution
    rest = (1.0 - p0) / 2.0
    curves = {}
    for alpha in alphas:
        GceConfig(alpha=alpha)  # validates alpha
        curves[alpha] = (p0, loss_values(loss_kind, alpha, p0, rest, rest))
    return curves


def profile_slope(loss_kind: str, alpha: float, p0: float, step: float = 1e-6) -> float:
    """Central-difference derivative of the equal-split profile with respect to p0."""
    pts = np.array([p0 - step, p0 + step])
    rest = (1.0 - pts) / 2.0
    lo, hi = loss_values(loss_kind, alpha, pts, rest, rest)
    return float((hi - lo) / (2.0 * step))


@dataclass
class ValleyCheck:
    loss_kind: str
    alpha: float
    t: np.ndarray                 # p1 = p2 = t, from the origin outward
    values: np.ndarray
    max_deviation: float          # max |value - value at origin|
    decreasing_toward_origin: bool

    @property
    def flat(self) -> bool:
        return self.max_deviation <= 1e-12


def valley_flatness_check(loss_kind: str, resolution: int = 201, alpha: float = 1.0 / 3.0) -> ValleyCheck:
    """Walk the X=Y diagonal from the origin (p0 = 1) to (0.5, 0.5) (p0 = 0)."""
    _check_kind(loss_kind)
    if resolution < 10:
        raise ValueError("resolution must be >= 10")
    t = np.linspace(0.0, 0.5, resolution)
    vals = loss_values(loss_kind, alpha, 1.0 - (t + t), t, t)
    return ValleyCheck(loss_kind, alpha, t, vals,
                       float(np.max(np.abs(vals - vals[0]))),
                       bool(np.all(np.diff(vals) > 0)))


def valley_points_at_minimum(sheet: LandscapeSheet, tolerance: float = 1e-9) -> bool:
    """True when every on-simplex diagonal grid point is within ``tolerance`` of the sheet minimum."""
    g = sheet.grid
    diag = np.eye(g.resolution, dtype=bool) & g.valid
    lo = np.nanmin(sheet.loss)
    return bool(np.all(sheet.loss[diag] <= lo + tolerance))
