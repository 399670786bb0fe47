"""Reverse-mode automatic differentiation over numpy float64 arrays.

The engine is deliberately small: it provides exactly the operations the
presence-detection network needs (elementwise arithmetic, matmul against 2-D
weight matrices, valid 1-D convolution, sigmoid/tanh/softmax, reductions,
concat/stack/slice plumbing, and inverted dropout). Every differentiable op
has a hand-written backward rule and is validated against central finite
differences in the test suite.

Gradients accumulate in-place into ``Tensor.grad`` buffers, so slice-style
ops scatter without allocating full-size temporaries. Recording is controlled
by a thread-local flag (`no_grad`); distinct graphs may live on distinct
threads, but a single backward pass is single-threaded.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import AutodiffError, StructuralError

_local = threading.local()


def _grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording inside the block (forward-only evaluation)."""
    prev = _grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


class Tensor:
    """An n-d float64 array participating in a reverse-mode gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_backward_done")

    def __init__(self, data, requires_grad: bool = False):
        if type(data) is np.ndarray and data.dtype == np.float64:
            arr = data
        else:
            arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._backward_done = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> "Tape":
        return backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


@dataclass
class Tape:
    """Topologically ordered op records of one backward pass (leaves first)."""

    nodes: list[Tensor]

    def __len__(self) -> int:
        return len(self.nodes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(p: Tensor, g: np.ndarray) -> None:
    """Accumulate a contribution the closure does NOT own (may alias g elsewhere)."""
    if not p.requires_grad:
        return
    if p.grad is None:
        p.grad = np.array(g, dtype=np.float64)  # own a copy; later contributions add in place
    else:
        p.grad += g


def _accum_new(p: Tensor, g: np.ndarray) -> None:
    """Accumulate a freshly allocated contribution (ownership transfers)."""
    if not p.requires_grad:
        return
    if p.grad is None:
        p.grad = g
    else:
        p.grad += g


def _grad_buffer(p: Tensor) -> np.ndarray | None:
    """Expose the grad accumulator for in-place scatter; None if grad unwanted."""
    if not p.requires_grad:
        return None
    if p.grad is None:
        p.grad = np.zeros_like(p.data)
    return p.grad


def _make(out_data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(out_data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_elementwise(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise StructuralError(f"{op}: incompatible shapes {a.data.shape} and {b.data.shape}")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("add", a, b)

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("sub", a, b)

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("mul", a, b)

    def bwd(g):
        if a.requires_grad:
            _accum_new(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum_new(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("div", a, b)

    def bwd(g):
        if a.requires_grad:
            _accum_new(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            _accum_new(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(a.data / b.data, (a, b), bwd)


def square(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum_new(a, 2.0 * a.data * g)

    return _make(a.data * a.data, (a,), bwd)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def bwd(g):
        _accum_new(a, g / (2.0 * out_data))

    return _make(out_data, (a,), bwd)


def log(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum_new(a, g / a.data)

    return _make(np.log(a.data), (a,), bwd)


def clamp_min(a, floor: float) -> Tensor:
    """Elementwise max(a, floor); gradient passes only where a > floor."""
    a = as_tensor(a)
    mask = a.data > floor

    def bwd(g):
        _accum_new(a, g * mask)

    return _make(np.maximum(a.data, floor), (a,), bwd)


# ---------------------------------------------------------------------------
# activations


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        _accum_new(a, g * y * (1.0 - y))

    return _make(y, (a,), bwd)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)

    def bwd(g):
        _accum_new(a, g * (1.0 - y * y))

    return _make(y, (a,), bwd)


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis` (max-subtracted)."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accum_new(a, (g - dot) * y)

    return _make(y, (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """a @ b with b a 2-D weight matrix; a may be 1-D, 2-D, or 3-D."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2:
        raise StructuralError(f"matmul: right operand must be 2-D, got {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise StructuralError(f"matmul: inner dims differ, {a.data.shape} @ {b.data.shape}")
    n, m = b.data.shape

    def bwd(g):
        if a.requires_grad:
            _accum_new(a, np.matmul(g, b.data.T))
        if b.requires_grad:
            _accum_new(b, a.data.reshape(-1, n).T @ g.reshape(-1, m))

    return _make(np.matmul(a.data, b.data), (a, b), bwd)


def conv1d(x, w) -> Tensor:
    """Valid 1-D convolution, stride 1; x: (L, C_in) or (B, L, C_in), w: (k, C_in, C_out)."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 3:
        raise StructuralError(f"conv1d: kernel must be (k, C_in, C_out), got {w.data.shape}")
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or xd.shape[2] != w.data.shape[1]:
        raise StructuralError(f"conv1d: input {x.data.shape} incompatible with kernel {w.data.shape}")
    k, c_in, c_out = w.data.shape
    l_out = xd.shape[1] - k + 1
    if l_out < 1:
        raise StructuralError(f"conv1d: input length {xd.shape[1]} shorter than kernel {k}")
    # windows: (B, L_out, k, C_in) contracted with (k, C_in, C_out)
    windows = np.lib.stride_tricks.sliding_window_view(xd, k, axis=1)  # (B, L_out, C_in, k)
    out = np.tensordot(windows, w.data, axes=([3, 2], [0, 1]))

    def bwd(g):
        gb = g[None] if squeeze else g
        if x.requires_grad:
            buf = _grad_buffer(x)
            tgt = buf[None] if squeeze else buf
            for j in range(k):
                tgt[:, j : j + l_out, :] += np.matmul(gb, w.data[j].T)
        if w.requires_grad:
            wbuf = _grad_buffer(w)
            for j in range(k):
                wbuf[j] += np.tensordot(xd[:, j : j + l_out, :], gb, axes=([0, 1], [0, 1]))

    return _make(out[0] if squeeze else out, (x, w), bwd)


# ---------------------------------------------------------------------------
# reductions


def _restore_axes(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, _restore_axes(g, a.data.shape, axis, keepdims))

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / out.size

    def bwd(g):
        _accum_new(a, _restore_axes(g, a.data.shape, axis, keepdims) / count)

    return _make(out, (a,), bwd)


# ---------------------------------------------------------------------------
# shape plumbing


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.data.shape

    def bwd(g):
        _accum(a, g.reshape(orig))

    return _make(a.data.reshape(shape), (a,), bwd)


def concat(parts: Iterable[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(p, g[tuple(idx)])

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, bwd)


def stack(parts: Iterable[Tensor], axis: int = 1) -> Tensor:
    parts = [as_tensor(p) for p in parts]

    def bwd(g):
        slabs = np.moveaxis(g, axis, 0)
        for p, gp in zip(parts, slabs):
            _accum(p, gp)

    return _make(np.stack([p.data for p in parts], axis=axis), parts, bwd)


def step(a, t: int) -> Tensor:
    """Select time step t from a (B, tau, F) tensor -> (B, F)."""
    a = as_tensor(a)

    def bwd(g):
        buf = _grad_buffer(a)
        if buf is not None:
            buf[:, t] += g

    return _make(a.data[:, t], (a,), bwd)


def repeat_steps(a, tau: int) -> Tensor:
    """Tile a (B, F) tensor along a new time axis -> (B, tau, F)."""
    a = as_tensor(a)
    out = np.broadcast_to(a.data[:, None, :], (a.data.shape[0], tau, a.data.shape[1])).copy()

    def bwd(g):
        _accum_new(a, g.sum(axis=1))

    return _make(out, (a,), bwd)


# ---------------------------------------------------------------------------
# regularization


def dropout(a, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: kept activations are scaled by 1/(1-rate) at train time."""
    if not 0.0 <= rate < 1.0:
        raise StructuralError(f"dropout: rate must be in [0, 1), got {rate}")
    a = as_tensor(a)
    if not train or rate == 0.0:
        return a
    if rng is None:
        raise StructuralError("dropout: train-time call requires an rng")
    keep = 1.0 - rate
    mask = (rng.random(a.data.shape, dtype=np.float32) >= rate) / keep

    def bwd(g):
        _accum_new(a, g * mask)

    return _make(a.data * mask, (a,), bwd)


# ---------------------------------------------------------------------------
# fused ops
#
# Single-record versions of common compositions. They change nothing
# semantically (each is grad-checked alongside the primitives) but keep the
# tape short on the recurrent hot path.

_ACT_FWD = {
    None: lambda z: z,
    "sigmoid": lambda z: 1.0 / (1.0 + np.exp(-z)),
    "tanh": np.tanh,
}
_ACT_BWD = {
    None: lambda y: 1.0,
    "sigmoid": lambda y: y * (1.0 - y),
    "tanh": lambda y: 1.0 - y * y,
}


def dense_act(x, w, b, act: str | None = None) -> Tensor:
    """act(x @ w + b) in one record; x may be 2-D or 3-D, w 2-D, b 1-D."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.shape[-1] != w.data.shape[0] or b.data.shape != (w.data.shape[1],):
        raise StructuralError(f"dense: shapes {x.data.shape} @ {w.data.shape} + {b.data.shape}")
    n, m = w.data.shape
    y = _ACT_FWD[act](np.matmul(x.data, w.data) + b.data)
    dact = _ACT_BWD[act]

    def bwd(g):
        dpre = g * dact(y) if act is not None else g
        if x.requires_grad:
            _accum_new(x, np.matmul(dpre, w.data.T))
        if w.requires_grad:
            _accum_new(w, x.data.reshape(-1, n).T @ dpre.reshape(-1, m))
        if b.requires_grad:
            _accum_new(b, dpre.reshape(-1, m).sum(axis=0))

    return _make(y, (x, w, b), bwd)


def rows(w, lo: int, hi: int) -> Tensor:
    """Row block w[lo:hi] of a 2-D parameter; backward scatters in place."""
    w = as_tensor(w)

    def bwd(g):
        buf = _grad_buffer(w)
        if buf is not None:
            buf[lo:hi] += g

    return _make(w.data[lo:hi], (w,), bwd)


def gru_gate(h, wh, xproj, t: int, b, act: str = "sigmoid") -> Tensor:
    """One recurrent gate: act(h @ wh + xproj[:, t] + b) in a single record.

    xproj holds the precomputed input-side projections for every time step,
    so the per-step work is only the (B, U) x (U, U) state product.
    """
    h, wh, xproj, b = as_tensor(h), as_tensor(wh), as_tensor(xproj), as_tensor(b)
    y = _ACT_FWD[act](np.matmul(h.data, wh.data) + xproj.data[:, t] + b.data)
    dact = _ACT_BWD[act]

    def bwd(g):
        dpre = g * dact(y)
        if h.requires_grad:
            _accum_new(h, np.matmul(dpre, wh.data.T))
        if wh.requires_grad:
            _accum_new(wh, h.data.T @ dpre)
        buf = _grad_buffer(xproj)
        if buf is not None:
            buf[:, t] += dpre
        if b.requires_grad:
            _accum_new(b, dpre.sum(axis=0))

    return _make(y, (h, wh, xproj, b), bwd)


def lerp(h, beta, cand) -> Tensor:
    """Gated state update (1 - beta) * h + beta * cand in one record."""
    h, beta, cand = as_tensor(h), as_tensor(beta), as_tensor(cand)
    out = h.data + beta.data * (cand.data - h.data)

    def bwd(g):
        if h.requires_grad:
            _accum_new(h, g * (1.0 - beta.data))
        if beta.requires_grad:
            _accum_new(beta, g * (cand.data - h.data))
        if cand.requires_grad:
            _accum_new(cand, g * beta.data)

    return _make(out, (h, beta, cand), bwd)


def conv1d_act(x, w, b, act: str | None = "tanh") -> Tensor:
    """act(conv1d(x, w) + b) fused into one record; x: (B, L, C_in)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    k, c_in, c_out = w.data.shape
    if xd.shape[2] != c_in or b.data.shape != (c_out,):
        raise StructuralError(f"conv1d: input {x.data.shape}, kernel {w.data.shape}, bias {b.data.shape}")
    l_out = xd.shape[1] - k + 1
    if l_out < 1:
        raise StructuralError(f"conv1d: input length {xd.shape[1]} shorter than kernel {k}")
    windows = np.lib.stride_tricks.sliding_window_view(xd, k, axis=1)  # (B, L_out, C_in, k)
    y = _ACT_FWD[act](np.tensordot(windows, w.data, axes=([3, 2], [0, 1])) + b.data)
    dact = _ACT_BWD[act]

    def bwd(g):
        gb = g[None] if squeeze else g
        dpre = gb * dact(y) if act is not None else gb
        if x.requires_grad:
            buf = _grad_buffer(x)
            tgt = buf[None] if squeeze else buf
            for j in range(k):
                tgt[:, j : j + l_out, :] += np.matmul(dpre, w.data[j].T)
        if w.requires_grad:
            wbuf = _grad_buffer(w)
            for j in range(k):
                wbuf[j] += np.tensordot(xd[:, j : j + l_out, :], dpre, axes=([0, 1], [0, 1]))
        if b.requires_grad:
            _accum_new(b, dpre.reshape(-1, c_out).sum(axis=0))

    return _make(y[0] if squeeze else y, (x, w, b), bwd)


def batch_norm_train(x, eps: float = 1e-5) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Normalize a (B, T, F) sequence per feature with batch statistics.

    Gradients flow through the mean and (biased) variance. Also returns the
    batch mean and variance so the caller can update running averages.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise StructuralError(f"batch_norm_train expects (B, T, F), got {x.data.shape}")
    axes = (0, 1)
    mu = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    yhat = (x.data - mu) * inv

    def bwd(g):
        if x.requires_grad:
            gm = g.mean(axis=axes)
            gy = (g * yhat).mean(axis=axes)
            _accum_new(x, (g - gm - yhat * gy) * inv)

    return _make(yhat, (x,), bwd), mu, var


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> Tape:
    """Backpropagate from a scalar; populates .grad on every reachable tensor."""
    if loss.data.size != 1:
        raise AutodiffError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise AutodiffError("backward: loss does not require grad (dead tape)")
    if loss._backward_done:
        raise AutodiffError("backward: already called on this loss; reset grads and rebuild the graph")

    # iterative post-order topological sort (graphs exceed recursion limits)
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    loss._backward_done = True
    return Tape(nodes=order)


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# verification oracle


def grad_check(f: Callable[[], Tensor], params, eps: float = 1e-5) -> float:
    """Compare tape gradients of the scalar f() against central finite differences.

    `f` must be deterministic across calls (re-seed any RNG it consumes).
    Returns the worst relative error, with denominator max(|a|, |fd|, 1e-8).
    """
    if isinstance(params, Tensor):
        params = [params]
    params = list(params)
    zero_grads(params)
    out = f()
    backward(out)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            gflat = ga.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = float(f().data)
                flat[i] = orig - eps
                fm = float(f().data)
                flat[i] = orig
                fd = (fp - fm) / (2.0 * eps)
                rel = abs(gflat[i] - fd) / max(abs(gflat[i]), abs(fd), 1e-8)
                worst = max(worst, rel)
    zero_grads(params)
    return worst
