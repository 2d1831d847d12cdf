"""LeNet-5 and MLP classifiers as pure functions of a parameter dict."""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

ARCHITECTURES = ("lenet5", "mlp")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    arch: str = "lenet5"
    input_shape: tuple = (1, 28, 28)
    num_classes: int = 10
    widths: tuple = field(default_factory=tuple)  # mlp hidden widths

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "widths", tuple(int(v) for v in self.widths))
        if self.arch not in ARCHITECTURES:
            raise ModelError(f"unsupported architecture {self.arch!r}")
        if self.num_classes < 2:
            raise ModelError("num_classes must be >= 2")
        if self.arch == "lenet5" and len(self.input_shape) != 3:
            raise ModelError("lenet5 needs a (C, H, W) input shape")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        return cls(arch=d["arch"], input_shape=tuple(d["input_shape"]),
                   num_classes=int(d["num_classes"]), widths=tuple(d.get("widths", ())))


def _lenet_flat_dim(spec: ModelSpec) -> int:
    _, h, w = spec.input_shape
    # conv5 pad2 keeps size, pool halves, conv5 valid shrinks by 4, pool halves
    h, w = h // 2, w // 2
    h, w = (h - 4) // 2, (w - 4) // 2
    if h < 1 or w < 1:
        raise ModelError(f"input {spec.input_shape} too small for lenet5")
    return 16 * h * w


def param_shapes(spec: ModelSpec) -> "OrderedDict[str, tuple]":
    shapes: OrderedDict = OrderedDict()
    if spec.arch == "lenet5":
        c = spec.input_shape[0]
        shapes["conv1.weight"] = (6, c, 5, 5)
        shapes["conv1.bias"] = (6,)
        shapes["conv2.weight"] = (16, 6, 5, 5)
        shapes["conv2.bias"] = (16,)
        dims = [_lenet_flat_dim(spec), 120, 84, spec.num_classes]
        names = ["fc1", "fc2", "fc3"]
    else:
        dims = [int(np.prod(spec.input_shape)), *spec.widths, spec.num_classes]
        names = [f"fc{i + 1}" for i in range(len(dims) - 1)]
    for name, fan_in, fan_out in zip(names, dims[:-1], dims[1:]):
        shapes[f"{name}.weight"] = (fan_out, fan_in)
        shapes[f"{name}.bias"] = (fan_out,)
    return shapes


def init(spec: ModelSpec, seed: int) -> "OrderedDict[str, Tensor]":
    """Fan-in scaled uniform weights in +-sqrt(6 / fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    params: OrderedDict = OrderedDict()
    for name, shape in param_shapes(spec).items():
        if name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


def _check_input(spec: ModelSpec, x: Tensor) -> None:
    if x.ndim != len(spec.input_shape) + 1 or tuple(x.shape[1:]) != spec.input_shape:
        raise ShapeError("model input", x.shape, ("N",) + spec.input_shape)


def penultimate_features(spec: ModelSpec, params, x) -> Tensor:
    """Activations feeding the final linear layer, shape N x F."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    _check_input(spec, x)
    n = x.shape[0]
    if spec.arch == "lenet5":
        h = T.maxpool2d(T.relu(T.conv2d(x, params["conv1.weight"], params["conv1.bias"], padding=2)))
        h = T.maxpool2d(T.relu(T.conv2d(h, params["conv2.weight"], params["conv2.bias"])))
        h = h.reshape(n, -1)
        h = T.relu(h @ params["fc1.weight"].T + params["fc1.bias"])
        return T.relu(h @ params["fc2.weight"].T + params["fc2.bias"])
    h = x.reshape(n, -1)
    hidden = [f"fc{i + 1}" for i in range(len(spec.widths))]
    for name in hidden:
        h = T.relu(h @ params[f"{name}.weight"].T + params[f"{name}.bias"])
    return h


def forward(spec: ModelSpec, params, x) -> Tensor:
    """Logits, shape N x K."""
    h = penultimate_features(spec, params, x)
    last = "fc3" if spec.arch == "lenet5" else f"fc{len(spec.widths) + 1}"
    return h @ params[f"{last}.weight"].T + params[f"{last}.bias"]


def frozen(params) -> "OrderedDict[str, Tensor]":
    """Same values, no grad tracking; for attacks that only need input gradients."""
    return OrderedDict((k, Tensor(v.data)) for k, v in params.items())


def predict(spec: ModelSpec, params, x: np.ndarray, batch_size: int = 1000) -> np.ndarray:
    out = []
    with T.no_grad():
        for i in range(0, len(x), batch_size):
            out.append(forward(spec, params, x[i:i + batch_size]).data.argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


# Binary container
#
#   magic      8 bytes  b"GCETNSR1"
#   header_len u32 LE   then header_len bytes of UTF-8 JSON (descriptor)
#   count      u32 LE   number of tensors
#   per tensor:
#     name_len u16 LE, name (UTF-8)
#     ndim     u8, then ndim x u32 LE extents
#     data     prod(extents) x float64 LE, row-major

MAGIC = b"GCETNSR1"


class ContainerError(ValueError):
    pass


def write_container(path, descriptor: Mapping, tensors: Mapping[str, np.ndarray]) -> None:
    header = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(header)), header, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_container(path):
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise ContainerError(f"{path}: bad magic")
    pos = 8

    def take(nbytes):
        nonlocal pos
        if pos + nbytes > len(buf):
            raise ContainerError(f"{path}: truncated")
        chunk = buf[pos:pos + nbytes]
        pos += nbytes
        return chunk

    (hlen,) = struct.unpack("<I", take(4))
    descriptor = json.loads(take(hlen).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    tensors: OrderedDict = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count_el = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(take(8 * count_el), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(buf):
        raise ContainerError(f"{path}: trailing bytes")
    return descriptor, tensors


def save_checkpoint(path, spec: ModelSpec, params, meta: Mapping | None = None) -> None:
    descriptor = {"kind": "checkpoint", "spec": json.loads(spec.to_json()), "meta": dict(meta or {})}
    write_container(path, descriptor, {k: v.data for k, v in params.items()})


def load_checkpoint(path):
    """Return ``(spec, params, meta)``."""
    descriptor, tensors = read_container(path)
    if descriptor.get("kind") != "checkpoint":
        raise ContainerError(f"{path}: not a checkpoint")
    spec = ModelSpec.from_dict(descriptor["spec"])
    expected = param_shapes(spec)
    if list(expected) != list(tensors) or any(tuple(tensors[k].shape) != s for k, s in expected.items()):
        raise ContainerError(f"{path}: tensors do not match spec {spec}")
    params = OrderedDict((k, Tensor(v, requires_grad=True)) for k, v in tensors.items())
    return spec, params, descriptor.get("meta", {})
