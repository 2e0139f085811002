"""Parameters, seeded randomness, the recurrent cell, Adam, and checkpoints."""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor, add, affine, concat, mul, sigmoid, slice_rows, tanh


def _key_part(k) -> int:
    """Spawn-key component: ints pass through, strings hash stably."""
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    return int(k)


class RngStream:
    """Counter-based random stream: fully determined by (seed, spawn key).

    Children derived through `child` are statistically independent of the
    parent and of each other, and recreating the same stream from the same
    seed and key always replays the same sequence.
    """

    __slots__ = ("seed", "key", "gen")

    def __init__(self, seed: int, key: tuple = ()):
        self.seed = int(seed)
        self.key = tuple(_key_part(k) for k in key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.gen = np.random.Generator(np.random.Philox(seq))

    def child(self, *key) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(key))

    # direct generator pass-throughs
    def random(self, size=None):
        return self.gen.random(size)

    def uniform(self, low, high, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size=size)

    def choice(self, a, size=None, replace=True):
        return self.gen.choice(a, size=size, replace=replace)

    def categorical(self, probs) -> int:
        """Sample one index from a probability vector."""
        u = self.gen.random()
        acc = 0.0
        for i, p in enumerate(probs):
            acc += p
            if u < acc:
                return i
        return len(probs) - 1


class Parameter:
    """A named learnable tensor."""

    __slots__ = ("name", "value")

    def __init__(self, name: str, data):
        self.name = name
        self.value = Tensor(np.array(data, dtype=np.float64), requires_grad=True)

    @property
    def data(self):
        return self.value.data

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.value.data.shape})"


def uniform_init(rng: RngStream, shape, fan_in: int) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization."""
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return rng.uniform(-bound, bound, size=shape)


class ParameterSet:
    """Ordered, uniquely named parameter collection."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, data) -> Parameter:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        p = Parameter(name, data)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params.keys())

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.value.grad = None

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.value.data for name, p in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Copy values in place; shapes and the name set must match exactly."""
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ContractError(f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in self._params.items():
            src = arrays[name]
            if src.shape != p.value.data.shape:
                raise DimensionError(f"parameter {name}: shape {src.shape} != {p.value.data.shape}")
            np.copyto(p.value.data, src)


def lstm_step(x: Tensor, h: Tensor, c: Tensor, w: Parameter, b: Parameter):
    """One LSTM cell update; gate order along the 4h axis is (i, f, g, o)."""
    hidden = h.data.shape[0]
    z = concat([x, h])
    gates = affine(z, w.value, b.value)
    i = sigmoid(slice_rows(gates, 0, hidden))
    f = sigmoid(slice_rows(gates, hidden, 2 * hidden))
    g = tanh(slice_rows(gates, 2 * hidden, 3 * hidden))
    o = sigmoid(slice_rows(gates, 3 * hidden, 4 * hidden))
    c_next = add(mul(f, c), mul(i, g))
    h_next = mul(o, tanh(c_next))
    return h_next, c_next


def init_lstm(params: ParameterSet, prefix: str, in_dim: int, hidden: int, rng: RngStream):
    """Allocate LSTM weights; forget-gate bias starts at +1 to ease retention."""
    w = params.add(f"{prefix}.w", uniform_init(rng, (in_dim + hidden, 4 * hidden), in_dim + hidden))
    bias = np.zeros(4 * hidden)
    bias[hidden:2 * hidden] = 1.0
    b = params.add(f"{prefix}.b", bias)
    return w, b


class AdamState:
    """First/second moment accumulators and the shared step counter."""

    def __init__(self, shapes: dict[str, tuple]):
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}
        self.step = 0


def adam_step(values: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Apply one bias-corrected Adam update in place to `values`."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        values[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# checkpoint container: versioned magic, JSON manifest, raw little-endian f64

_CKPT_MAGIC = b"GMCK0001"


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None,
                    adam: AdamState | None = None) -> None:
    """Write parameters (and optional optimizer state) to a binary file."""
    manifest = {
        "meta": meta or {},
        "params": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
        "adam": adam is not None,
        "adam_step": 0 if adam is None else adam.step,
    }
    blob = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
        if adam is not None:
            for k in arrays:
                fh.write(np.ascontiguousarray(adam.m[k], dtype="<f8").tobytes())
            for k in arrays:
                fh.write(np.ascontiguousarray(adam.v[k], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (arrays, meta, adam_state_or_None)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise ConfigError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (blob_len,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(blob_len).decode("utf-8"))

        def read_array(shape):
            n = int(np.prod(shape)) if shape else 1
            raw = fh.read(n * 8)
            if len(raw) != n * 8:
                raise ConfigError(f"{path}: truncated checkpoint payload")
            return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)

        arrays = {}
        for entry in manifest["params"]:
            arrays[entry["name"]] = read_array(tuple(entry["shape"]))
        adam = None
        if manifest.get("adam"):
            adam = AdamState({k: v.shape for k, v in arrays.items()})
            adam.step = int(manifest.get("adam_step", 0))
            for entry in manifest["params"]:
                adam.m[entry["name"]] = read_array(tuple(entry["shape"]))
            for entry in manifest["params"]:
                adam.v[entry["name"]] = read_array(tuple(entry["shape"]))
        tail = fh.read(1)
        if tail:
            raise ConfigError(f"{path}: trailing bytes after checkpoint payload")
    return arrays, manifest.get("meta", {}), adam
