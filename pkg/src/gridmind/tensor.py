"""Float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation computes its result eagerly with numpy and,
when a tape is active and an operand wants gradients, appends a backward
closure to that tape.  Replaying the tape in reverse order accumulates
gradients into ``.grad`` arrays.  Tapes nest per thread; constants (tensors
with ``requires_grad=False`` and no graph ancestry) are never recorded.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import ConfigError, ContractError, DimensionError

_TLS = threading.local()

_DEBUG = False


def set_debug_checks(on: bool) -> None:
    """Toggle finiteness validation of every op result (slow, for tests)."""
    global _DEBUG
    _DEBUG = bool(on)


def _stack() -> list:
    stack = getattr(_TLS, "stack", None)
    if stack is None:
        stack = []
        _TLS.stack = stack
    return stack


def _active_tape():
    stack = _stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense float64 array plus an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Copy of the value with no gradient requirement or tape ancestry."""
        return Tensor(self.data.copy(), requires_grad=False)

    def _add_grad(self, g) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
            if self.grad.shape != self.data.shape:
                self.grad = self.grad.reshape(self.data.shape)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of backward closures for one forward computation."""

    __slots__ = ("_entries",)

    def __init__(self):
        self._entries = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        top = _stack().pop()
        if top is not self:
            raise ContractError("tape context exited out of order")
        return False

    def __len__(self) -> int:
        return len(self._entries)

    def backward(self, root: Tensor) -> None:
        """Seed d(root)=1 and replay the tape in reverse.

        Gradients of leaf tensors (model parameters, constants) accumulate
        across repeated calls; gradients of interior results are reset per
        call so each replay contributes exactly one Jacobian.
        """
        if not isinstance(root, Tensor):
            raise ContractError("backward root must be a Tensor")
        if root.data.size != 1:
            raise ContractError(f"backward root must be scalar, got shape {root.data.shape}")
        produced = False
        for out, _ in self._entries:
            if out is root:
                produced = True
            out.grad = None
        if not produced:
            raise ContractError("backward root was not produced on this tape")
        root.grad = np.ones_like(root.data)
        for out, fn in reversed(self._entries):
            g = out.grad
            if g is not None:
                fn(g)


def backward(root: Tensor) -> None:
    """Run backward on the innermost active tape."""
    tape = _active_tape()
    if tape is None:
        raise ContractError("backward() called with no active tape")
    tape.backward(root)


def _make(data, requires_grad: bool) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        raise ContractError("non-finite value produced by a tensor op")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = requires_grad
    return out


def _record(out: Tensor, fn) -> None:
    if out.requires_grad:
        tape = _active_tape()
        if tape is not None:
            tape._entries.append((out, fn))


# ---------------------------------------------------------------------------
# linear algebra


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b).  x is (k,) or (m,k); w is (k,n); b, if given, is (n,)."""
    xd, wd = x.data, w.data
    if wd.ndim != 2 or xd.ndim not in (1, 2) or xd.shape[-1] != wd.shape[0]:
        raise DimensionError(f"affine shapes incompatible: x {xd.shape}, w {wd.shape}")
    out_data = xd @ wd
    if b is not None:
        if b.data.shape != (wd.shape[1],):
            raise DimensionError(f"affine bias {b.data.shape} does not match width {wd.shape[1]}")
        out_data = out_data + b.data
    rq = x.requires_grad or w.requires_grad or (b is not None and b.requires_grad)
    out = _make(out_data, rq)

    def bwd(g):
        if x.requires_grad:
            x._add_grad(g @ wd.T)
        if w.requires_grad:
            if xd.ndim == 1:
                w._add_grad(np.outer(xd, g))
            else:
                w._add_grad(xd.T @ g)
        if b is not None and b.requires_grad:
            b._add_grad(g if g.ndim == 1 else g.sum(axis=0))

    _record(out, bwd)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix (or vector-matrix) product without a bias term."""
    return affine(a, b, None)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def _binary_shapes(a: Tensor, b: Tensor, name: str):
    ad, bd = a.data, b.data
    if ad.shape == bd.shape:
        return None
    if ad.ndim == 2 and bd.ndim == 1 and ad.shape[1] == bd.shape[0]:
        return "rows"
    raise DimensionError(f"{name} shapes incompatible: {ad.shape} vs {bd.shape}")


def _binary(a: Tensor, b: Tensor, name: str, fwd, da, db) -> Tensor:
    mode = _binary_shapes(a, b, name)
    out = _make(fwd(a.data, b.data), a.requires_grad or b.requires_grad)

    def bwd(g):
        if a.requires_grad:
            a._add_grad(da(g, a.data, b.data))
        if b.requires_grad:
            gb = db(g, a.data, b.data)
            b._add_grad(gb.sum(axis=0) if mode == "rows" else gb)

    _record(out, bwd)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, "add", lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, "sub", lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, "mul", lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    out = _make(x.data * s, x.requires_grad)

    def bwd(g):
        if x.requires_grad:
            x._add_grad(g * s)

    _record(out, bwd)
    return out


def add_scalar(x: Tensor, s: float) -> Tensor:
    s = float(s)
    out = _make(x.data + s, x.requires_grad)

    def bwd(g):
        if x.requires_grad:
            x._add_grad(g)

    _record(out, bwd)
    return out


def square(x: Tensor) -> Tensor:
    xd = x.data
    out = _make(xd * xd, x.requires_grad)

    def bwd(g):
        if x.requires_grad:
            x._add_grad(g * (2.0 * xd))

    _record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# activations


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is taken as 0."""
    xd = x.data
    out = _make(np.maximum(xd, 0.0), x.requires_grad)

    def bwd(g):
        if x.requires_grad:
            x._add_grad(g * (xd > 0.0))

    _record(out, bwd)
    return out


def sigmoid(x: Tensor) -> Tensor:
    # tanh formulation stays finite for any float64 input
    sd = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    out = _make(sd, x.requires_grad)

    def bwd(g):
        if x.requires_grad:
            x._add_grad(g * sd * (1.0 - sd))

    _record(out, bwd)
    return out


def tanh(x: Tensor) -> Tensor:
    td = np.tanh(x.data)
    out = _make(td, x.requires_grad)

    def bwd(g):
        if x.requires_grad:
            x._add_grad(g * (1.0 - td * td))

    _record(out, bwd)
    return out


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis of a vector or of each matrix row."""
    xd = x.data
    if xd.ndim not in (1, 2):
        raise DimensionError(f"softmax_rows expects 1-D or 2-D input, got {xd.shape}")
    shifted = xd - xd.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    sd = e / e.sum(axis=-1, keepdims=True)
    out = _make(sd, x.requires_grad)

    def bwd(g):
        if x.requires_grad:
            inner = (g * sd).sum(axis=-1, keepdims=True)
            x._add_grad(sd * (g - inner))

    _record(out, bwd)
    return out


def log_softmax_rows(x: Tensor) -> Tensor:
    xd = x.data
    if xd.ndim not in (1, 2):
        raise DimensionError(f"log_softmax_rows expects 1-D or 2-D input, got {xd.shape}")
    shifted = xd - xd.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    ld = shifted - lse
    out = _make(ld, x.requires_grad)
    sd = np.exp(ld)

    def bwd(g):
        if x.requires_grad:
            x._add_grad(g - sd * g.sum(axis=-1, keepdims=True))

    _record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# shape manipulation and reductions


def reshape(x: Tensor, shape) -> Tensor:
    xd = x.data
    out = _make(xd.reshape(shape), x.requires_grad)

    def bwd(g):
        if x.requires_grad:
            x._add_grad(g.reshape(xd.shape))

    _record(out, bwd)
    return out


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (-1,))


def concat(parts) -> Tensor:
    """Concatenate 1-D tensors into one vector."""
    parts = list(parts)
    if not parts:
        raise DimensionError("concat of zero parts")
    for p in parts:
        if p.data.ndim != 1:
            raise DimensionError(f"concat expects 1-D parts, got {p.data.shape}")
    sizes = [p.data.shape[0] for p in parts]
    out = _make(np.concatenate([p.data for p in parts]), any(p.requires_grad for p in parts))

    def bwd(g):
        offset = 0
        for p, n in zip(parts, sizes):
            if p.requires_grad:
                p._add_grad(g[offset:offset + n])
            offset += n

    _record(out, bwd)
    return out


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice along the first axis."""
    xd = x.data
    if not (0 <= start <= stop <= xd.shape[0]):
        raise DimensionError(f"slice [{start}:{stop}] out of range for shape {xd.shape}")
    out = _make(xd[start:stop], x.requires_grad)

    def bwd(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(xd)
            x.grad[start:stop] += g

    _record(out, bwd)
    return out


def pick(x: Tensor, index: int) -> Tensor:
    """Select one element of a vector as a scalar tensor."""
    xd = x.data
    if xd.ndim != 1:
        raise DimensionError(f"pick expects a vector, got {xd.shape}")
    if not (0 <= index < xd.shape[0]):
        raise DimensionError(f"pick index {index} out of range for shape {xd.shape}")
    out = _make(xd[index].reshape(()).copy(), x.requires_grad)

    def bwd(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(xd)
            x.grad[index] += float(g)

    _record(out, bwd)
    return out


def reduce(x: Tensor, kind: str, axis: int | None = None) -> Tensor:
    """Sum or mean over one axis (or all elements when axis is None)."""
    if kind not in ("sum", "mean"):
        raise ConfigError(f"unknown reduction kind {kind!r}")
    xd = x.data
    if axis is None:
        out_data = xd.sum() if kind == "sum" else xd.mean()
        denom = xd.size
    else:
        if axis < 0 or axis >= xd.ndim:
            raise DimensionError(f"reduce axis {axis} invalid for shape {xd.shape}")
        out_data = xd.sum(axis=axis) if kind == "sum" else xd.mean(axis=axis)
        denom = xd.shape[axis]
    out = _make(np.asarray(out_data), x.requires_grad)

    def bwd(g):
        if not x.requires_grad:
            return
        if axis is None:
            gx = np.full_like(xd, float(g))
        else:
            gx = np.repeat(np.expand_dims(g, axis), xd.shape[axis], axis=axis)
        if kind == "mean":
            gx = gx / denom
        x._add_grad(gx)

    _record(out, bwd)
    return out


def sum_all(x: Tensor) -> Tensor:
    return reduce(x, "sum", axis=None)


# ---------------------------------------------------------------------------
# structured primitives used by the encoder blocks


def pointwise_conv(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """1x1 convolution over a (C_in, H, W) stack: every pixel gets w @ channels + b."""
    xd, wd, bd = x.data, w.data, b.data
    if xd.ndim != 3 or wd.ndim != 2 or wd.shape[1] != xd.shape[0]:
        raise DimensionError(f"pointwise_conv shapes incompatible: x {xd.shape}, w {wd.shape}")
    if bd.shape != (wd.shape[0],):
        raise DimensionError(f"pointwise_conv bias {bd.shape} does not match channels {wd.shape[0]}")
    c_in, h, wide = xd.shape
    x2 = xd.reshape(c_in, h * wide)
    out_data = (wd @ x2 + bd[:, None]).reshape(wd.shape[0], h, wide)
    rq = x.requires_grad or w.requires_grad or b.requires_grad
    out = _make(out_data, rq)

    def bwd(g):
        g2 = g.reshape(wd.shape[0], h * wide)
        if x.requires_grad:
            x._add_grad((wd.T @ g2).reshape(xd.shape))
        if w.requires_grad:
            w._add_grad(g2 @ x2.T)
        if b.requires_grad:
            b._add_grad(g2.sum(axis=1))

    _record(out, bwd)
    return out


def temporal_conv(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-padded 1-D convolution down the row axis of x (D, F) -> (D,).

    The kernel w (K, F) mixes all F features of K consecutive rows into one
    scalar per row; rows beyond either end count as zero.  K must be odd so
    the output stays aligned with the input rows.
    """
    xd, wd, bd = x.data, w.data, b.data
    if xd.ndim != 2 or wd.ndim != 2 or xd.shape[1] != wd.shape[1]:
        raise DimensionError(f"temporal_conv shapes incompatible: x {xd.shape}, w {wd.shape}")
    if bd.shape != (1,):
        raise DimensionError(f"temporal_conv bias must have shape (1,), got {bd.shape}")
    k = wd.shape[0]
    if k % 2 == 0:
        raise ConfigError(f"temporal_conv kernel size must be odd, got {k}")
    d = xd.shape[0]
    off = k // 2
    out_data = np.full(d, bd[0], dtype=np.float64)
    spans = []
    for u in range(k):
        s = u - off
        a = max(0, -s)
        c = min(d, d - s)
        spans.append((u, s, a, c))
        if a < c:
            out_data[a:c] += xd[a + s:c + s] @ wd[u]
    rq = x.requires_grad or w.requires_grad or b.requires_grad
    out = _make(out_data, rq)

    def bwd(g):
        for u, s, a, c in spans:
            if a >= c:
                continue
            if w.requires_grad:
                if w.grad is None:
                    w.grad = np.zeros_like(wd)
                w.grad[u] += g[a:c] @ xd[a + s:c + s]
            if x.requires_grad:
                if x.grad is None:
                    x.grad = np.zeros_like(xd)
                x.grad[a + s:c + s] += np.outer(g[a:c], wd[u])
        if b.requires_grad:
            b._add_grad(np.array([g.sum()]))

    _record(out, bwd)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize a vector to zero mean / unit variance, then scale and shift."""
    xd = x.data
    if xd.ndim != 1 or xd.shape[0] < 2:
        raise ContractError(f"layer_norm needs a vector of length >= 2, got shape {xd.shape}")
    if gain.data.shape != xd.shape or bias.data.shape != xd.shape:
        raise DimensionError(
            f"layer_norm parameter shapes {gain.data.shape}/{bias.data.shape} do not match input {xd.shape}")
    n = xd.shape[0]
    mu = xd.mean()
    var = ((xd - mu) ** 2).mean()
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = _make(gain.data * xhat + bias.data, x.requires_grad or gain.requires_grad or bias.requires_grad)

    def bwd(g):
        if gain.requires_grad:
            gain._add_grad(g * xhat)
        if bias.requires_grad:
            bias._add_grad(g)
        if x.requires_grad:
            gh = g * gain.data
            x._add_grad(inv * (gh - gh.mean() - xhat * (gh * xhat).mean()))

    _record(out, bwd)
    return out


def dropout(x: Tensor, rate: float, rng, train: bool) -> Tensor:
    """Inverted dropout; identity when train is False or rate is 0."""
    if not (0.0 <= rate < 1.0):
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out = _make(x.data * mask, x.requires_grad)

    def bwd(g):
        if x.requires_grad:
            x._add_grad(g * mask)

    _record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# gradient verification


def finite_diff_check(f, theta: Tensor, eps: float = 1e-5, samples: int | None = None, rng=None) -> float:
    """Compare tape gradients of scalar f() against central differences.

    f must be a deterministic closure over theta (and any other fixed
    tensors) returning a scalar Tensor.  Returns the worst relative error
    |analytic - numeric| / (|analytic| + 1e-8) over the checked coordinates;
    all coordinates are checked unless `samples` limits them to a random
    subset drawn from `rng`.
    """
    theta.grad = None
    with Tape() as tape:
        loss = f()
        tape.backward(loss)
    analytic = theta.grad.reshape(-1).copy() if theta.grad is not None else np.zeros(theta.data.size)
    theta.grad = None

    size = theta.data.size
    if samples is None or samples >= size:
        indices = range(size)
    else:
        if rng is None:
            raise ContractError("finite_diff_check needs an rng when sampling coordinates")
        indices = sorted(rng.choice(size, size=samples, replace=False).tolist())

    worst = 0.0
    for i in indices:
        idx = np.unravel_index(i, theta.data.shape)
        keep = theta.data[idx]
        theta.data[idx] = keep + eps
        fp = float(f().data)
        theta.data[idx] = keep - eps
        fm = float(f().data)
        theta.data[idx] = keep
        numeric = (fp - fm) / (2.0 * eps)
        err = abs(analytic[i] - numeric) / (abs(analytic[i]) + 1e-8)
        if err > worst:
            worst = err
    return worst
