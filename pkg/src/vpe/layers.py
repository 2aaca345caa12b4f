"""Forward-only building blocks: submanifold sparse convolution and MLPs,
plus the binary weight container they are loaded from.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .core import InputError, NumericError, SiteIndex, check_features
from .parallel import map_row_chunks
from .voxel import neighbor_offsets

ACTIVATIONS = ("relu", "none")

WEIGHT_MAGIC = b"VPEW0001"


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _activate(x: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return relu(x)
    if activation == "none":
        return x
    raise InputError(f"unknown activation {activation!r}")


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Seeded uniform init in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``, float32-representable."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32).astype(np.float64)


@dataclass
class SubmanifoldKernel:
    """Weights of a submanifold convolution.

    ``weights[k]`` is the ``(in, out)`` matrix applied to the neighbour at
    ``neighbor_offsets(kernel, dims)[k]``.
    """

    dims: int
    kernel: int
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise InputError(f"kernel size must be odd, got {self.kernel}")
        if self.dims not in (2, 3):
            raise InputError(f"dims must be 2 or 3, got {self.dims}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        taps = self.kernel ** self.dims
        if self.weights.ndim != 3 or self.weights.shape[0] != taps:
            raise InputError(f"kernel weights must have shape ({taps}, in, out), got {self.weights.shape}")
        if self.bias.shape[0] != self.weights.shape[2]:
            raise InputError("bias length must equal out_channels")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise InputError("kernel weights must be finite")
        if self.activation not in ACTIVATIONS:
            raise InputError(f"unknown activation {self.activation!r}")

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[2]

    @classmethod
    def random(cls, dims, in_ch, out_ch, rng, kernel=3, activation="relu") -> "SubmanifoldKernel":
        taps = kernel ** dims
        fan_in = taps * in_ch
        return cls(dims, kernel, uniform_init(rng, (taps, in_ch, out_ch), fan_in),
                   uniform_init(rng, (out_ch,), fan_in), activation)

    @classmethod
    def identity(cls, dims, channels, kernel=3, activation="none") -> "SubmanifoldKernel":
        taps = kernel ** dims
        W = np.zeros((taps, channels, channels))
        W[taps // 2] = np.eye(channels)
        return cls(dims, kernel, W, np.zeros(channels), activation)


def submanifold_conv(sites: Union[SiteIndex, np.ndarray], features, k: SubmanifoldKernel) -> np.ndarray:
    """Submanifold sparse convolution over active integer sites.

    ``sites`` has ``k.dims`` columns, or ``k.dims + 1`` with a leading batch
    (camera) column that is never offset. Output rows align with input rows;
    no site outside the input set is ever produced.
    """
    index = sites if isinstance(sites, SiteIndex) else SiteIndex(sites)
    coords = index.sites
    n = len(index)
    F = check_features(features, rows=n, stage="submanifold_conv")
    if F.shape[1] != k.in_channels:
        raise InputError(f"submanifold_conv: features have {F.shape[1]} channels, kernel expects {k.in_channels}")
    extra = coords.shape[1] - k.dims if n else 0
    if n and extra not in (0, 1):
        raise InputError(f"sites have {coords.shape[1]} columns for a {k.dims}-D kernel")
    offsets = np.asarray(neighbor_offsets(k.kernel, k.dims), dtype=np.int64)
    if extra:
        offsets = np.column_stack([np.zeros(len(offsets), np.int64), offsets])

    def run(a: int, b: int) -> np.ndarray:
        out = np.broadcast_to(k.bias, (b - a, k.out_channels)).copy()
        local = coords[a:b]
        for t, off in enumerate(offsets):
            nbr = index.lookup(local + off)
            hit = nbr >= 0
            if hit.any():
                out[hit] += F[nbr[hit]] @ k.weights[t]
        return out

    if n == 0:
        return np.zeros((0, k.out_channels))
    out = np.concatenate(map_row_chunks(run, n), axis=0)
    out = _activate(out, k.activation)
    if not np.all(np.isfinite(out)):
        raise NumericError("submanifold_conv")
    return out


@dataclass
class MlpSpec:
    """A stack of dense layers, each ``act(x @ W + b)``."""

    weights: list
    biases: list
    activations: list = field(default_factory=list)

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64).reshape(-1) for b in self.biases]
        if not self.activations:
            self.activations = ["relu"] * len(self.weights)
        if not (len(self.weights) == len(self.biases) == len(self.activations)) or not self.weights:
            raise InputError("MLP needs matching, non-empty weight/bias/activation lists")
        for i, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if w.ndim != 2 or b.shape[0] != w.shape[1]:
                raise InputError(f"MLP layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise InputError(f"MLP layer {i}: width {w.shape[0]} does not chain from {self.weights[i - 1].shape[1]}")
            if act not in ACTIVATIONS:
                raise InputError(f"unknown activation {act!r}")

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def in_features(self) -> int:
        return self.widths[0]

    @property
    def out_features(self) -> int:
        return self.widths[-1]

    def __call__(self, x) -> np.ndarray:
        X = check_features(x, stage="mlp")
        if X.shape[1] != self.in_features:
            raise InputError(f"MLP expects {self.in_features} input channels, got {X.shape[1]}")

        def run(a: int, b: int) -> np.ndarray:
            h = X[a:b]
            for w, bias, act in zip(self.weights, self.biases, self.activations):
                h = _activate(h @ w + bias, act)
            return h

        if X.shape[0] == 0:
            return np.zeros((0, self.out_features))
        return np.concatenate(map_row_chunks(run, X.shape[0], min_chunk=16384), axis=0)

    @classmethod
    def random(cls, widths: Sequence[int], rng, activations: Optional[Sequence[str]] = None) -> "MlpSpec":
        ws, bs = [], []
        for fi, fo in zip(widths[:-1], widths[1:]):
            ws.append(uniform_init(rng, (fi, fo), fi))
            bs.append(uniform_init(rng, (fo,), fi))
        return cls(ws, bs, list(activations) if activations else [])

    @classmethod
    def identity(cls, width: int) -> "MlpSpec":
        return cls([np.eye(width)], [np.zeros(width)], ["none"])

    @classmethod
    def zeros(cls, fan_in: int, fan_out: int, activation: str = "none") -> "MlpSpec":
        return cls([np.zeros((fan_in, fan_out))], [np.zeros(fan_out)], [activation])

    def tensors(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.{i}.weight"] = w
            out[f"{prefix}.{i}.bias"] = b
        return out


def save_weights(path, tensors: dict[str, np.ndarray]) -> None:
    """Write tensors as ``VPEW0001`` + u64 header length + JSON header + float32 LE payload."""
    entries, blobs, offset = [], [], 0
    for name in tensors:
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"tensors": entries}, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_weights(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:8] != WEIGHT_MAGIC:
        raise InputError(f"{path}: bad magic {data[:8]!r}, expected {WEIGHT_MAGIC!r}")
    if len(data) < 16:
        raise InputError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<Q", data[8:16])
    if 16 + hlen > len(data):
        raise InputError(f"{path}: header length {hlen} exceeds file size {len(data)}")
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: unreadable header: {exc}") from None
    payload = memoryview(data)[16 + hlen:]
    out = {}
    for entry in header.get("tensors", []):
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = int(entry["offset"])
        end = start + 4 * count
        if start < 0 or end > len(payload):
            raise InputError(f"{path}: tensor {entry['name']!r} runs past end of file")
        arr = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape)
        out[entry["name"]] = arr.astype(np.float64)
    return out
