"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

Define-by-run: every op appends a node to an implicit tape (the parent links
of the output tensor). Calling ``backward`` on a scalar walks the tape in
reverse topological order and accumulates gradients additively, so a tensor
consumed twice receives the sum of both contributions.

Design constraints: double precision only, row-major dense storage, no views
or strides, broadcasting limited to a 1-D vector over the last axis.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "add",
    "sub",
    "mul",
    "tanh",
    "sigmoid",
    "matmul",
    "softmax",
    "log_softmax",
    "concat",
    "slice1d",
    "slice_last",
    "affine",
    "lstm_preact",
    "reshape",
    "sum_all",
    "mean_over_spatial",
    "gather_rows",
    "lstm_fused",
    "backward",
    "grad_check",
    "GradCheckReport",
]

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / oracles)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense n-dimensional float64 value with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = ""

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, op={self._op!r})"


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.grad = np.zeros_like(out.data)
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


def _check_finite(data: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{op} produced non-finite values")
    return data


# ---------------------------------------------------------------------------
# elementwise ops (binary ops broadcast a 1-D vector over the last axis)

def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    if b.data.ndim == 1 and a.data.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return
    raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, target_shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == target_shape:
        return g
    # vector broadcast over last axis: sum out the leading axes
    return g.reshape(-1, target_shape[0]).sum(axis=0)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "add")
    data = a.data + b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _node(data, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "sub")
    data = a.data - b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, -_unbroadcast(g, b.shape))

    return _node(data, (a, b), bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "mul")
    data = a.data * b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _node(data, (a, b), bwd, "mul")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def bwd(g):
        _accum(x, g * (1.0 - t * t))

    return _node(t, (x,), bwd, "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # stable in both tails
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)

    def bwd(g):
        _accum(x, g * s * (1.0 - s))

    return _node(s, (x,), bwd, "sigmoid")


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. Either operand (not both) may be 1-D and is treated
    as a row/column vector with the singleton axis dropped from the result."""
    ad, bd = a.data, b.data
    if ad.ndim == 1 and bd.ndim == 2:
        if ad.shape[0] != bd.shape[0]:
            raise ValueError(f"matmul: inner extents differ, {ad.shape} vs {bd.shape}")
        data = ad @ bd

        def bwd(g):
            _accum(a, g @ bd.T)
            _accum(b, np.outer(ad, g))

    elif ad.ndim == 2 and bd.ndim == 1:
        if ad.shape[1] != bd.shape[0]:
            raise ValueError(f"matmul: inner extents differ, {ad.shape} vs {bd.shape}")
        data = ad @ bd

        def bwd(g):
            _accum(a, np.outer(g, bd))
            _accum(b, ad.T @ g)

    elif ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ValueError(f"matmul: inner extents differ, {ad.shape} vs {bd.shape}")
        data = ad @ bd

        def bwd(g):
            _accum(a, g @ bd.T)
            _accum(b, ad.T @ g)

    else:
        raise ValueError(f"matmul: unsupported ranks {ad.ndim} and {bd.ndim}")
    return _node(data, (a, b), bwd, "matmul")


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis, max-subtracted so inputs up to +-1e4 are safe."""
    if x.data.shape[-1] < 1:
        raise ValueError("softmax: last axis must have extent >= 1")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        inner = (g * s).sum(axis=-1, keepdims=True)
        _accum(x, s * (g - inner))

    return _node(_check_finite(s, "softmax"), (x,), bwd, "softmax")


def log_softmax(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    data = shifted - lse
    sm = np.exp(data)

    def bwd(g):
        _accum(x, g - sm * g.sum(axis=-1, keepdims=True))

    return _node(_check_finite(data, "log_softmax"), (x,), bwd, "log_softmax")


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ValueError("concat: empty part list")
    ndim = parts[0].data.ndim
    if not -ndim <= axis < ndim:
        raise ValueError(f"concat: axis {axis} out of range for rank {ndim}")
    axis = axis % ndim
    ref = list(parts[0].shape)
    for p in parts[1:]:
        other = list(p.shape)
        if len(other) != ndim or any(
            i != axis and other[i] != ref[i] for i in range(ndim)
        ):
            raise ValueError(f"concat: extent mismatch {parts[0].shape} vs {p.shape}")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * ndim
            idx[axis] = slice(lo, hi)
            _accum(p, g[tuple(idx)])

    return _node(data, tuple(parts), bwd, "concat")


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice along the last axis."""
    data = x.data[..., start:stop].copy()

    def bwd(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[..., start:stop] = g
            _accum(x, full)

    return _node(data, (x,), bwd, "slice_last")


def slice1d(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 1:
        raise ValueError(f"slice1d: expected 1-D tensor, got shape {x.shape}")
    return slice_last(x, start, stop)


def _matmul_grads(x: np.ndarray, w: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(dx, dw) for y = x @ w with x either 1-D or 2-D and w 2-D."""
    if x.ndim == 1:
        return g @ w.T, np.outer(x, g)
    return g @ w.T, x.T @ g


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b as one tape node; x may be a vector or a (B, d) batch."""
    if x.data.shape[-1] != w.shape[0]:
        raise ValueError(f"affine: inner extents differ, {x.shape} vs {w.shape}")
    data = x.data @ w.data + b.data

    def bwd(g):
        dx, dw = _matmul_grads(x.data, w.data, g)
        _accum(x, dx)
        _accum(w, dw)
        _accum(b, g if g.ndim == 1 else g.sum(axis=0))

    return _node(data, (x, w, b), bwd, "affine")


def lstm_preact(x: Tensor, w_x: Tensor, h: Tensor, w_h: Tensor, b: Tensor) -> Tensor:
    """x @ w_x + h @ w_h + b, fused (the per-step hot path of every model)."""
    if x.data.shape[-1] != w_x.shape[0] or h.data.shape[-1] != w_h.shape[0]:
        raise ValueError(
            f"lstm_preact: extents mismatch x{x.shape}*w{w_x.shape}, h{h.shape}*u{w_h.shape}"
        )
    data = x.data @ w_x.data + h.data @ w_h.data + b.data

    def bwd(g):
        dx, dwx = _matmul_grads(x.data, w_x.data, g)
        dh, dwh = _matmul_grads(h.data, w_h.data, g)
        _accum(x, dx)
        _accum(w_x, dwx)
        _accum(h, dh)
        _accum(w_h, dwh)
        _accum(b, g if g.ndim == 1 else g.sum(axis=0))

    return _node(data, (x, w_x, h, w_h, b), bwd, "lstm_preact")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = x.data.reshape(shape).copy()

    def bwd(g):
        _accum(x, g.reshape(x.shape))

    return _node(data, (x,), bwd, "reshape")


def sum_all(x: Tensor) -> Tensor:
    data = np.asarray(x.data.sum())

    def bwd(g):
        _accum(x, np.broadcast_to(g, x.shape).astype(np.float64))

    return _node(data, (x,), bwd, "sum_all")


def mean_over_spatial(grid: Tensor) -> Tensor:
    """Per-channel mean over all spatial cells of an HxWxC (or SxC) grid."""
    if grid.data.ndim < 2:
        raise ValueError(f"mean_over_spatial: need at least 2 axes, got {grid.shape}")
    cells = int(np.prod(grid.shape[:-1]))
    data = grid.data.reshape(cells, grid.shape[-1]).mean(axis=0)

    def bwd(g):
        _accum(grid, np.broadcast_to(g / cells, (cells, grid.shape[-1])).reshape(grid.shape))

    return _node(data, (grid,), bwd, "mean_over_spatial")


def gather_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    if table.data.ndim != 2:
        raise ValueError(f"gather_rows: table must be 2-D, got {table.shape}")
    n_rows = table.shape[0]
    ids = [int(i) for i in ids]
    for i in ids:
        if not 0 <= i < n_rows:
            raise IndexError(f"gather_rows: id {i} out of range for table with {n_rows} rows")
    data = table.data[ids].copy()

    def bwd(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, ids, g)
            _accum(table, full)

    return _node(data, (table,), bwd, "gather_rows")


def lstm_fused(z: Tensor, c_prev: Tensor) -> Tensor:
    """Fused LSTM gate block: z holds the pre-activations (i, f, o, g) stacked
    along one axis; returns [h', c'] concatenated. One tape node instead of
    the ~15 a primitive composition needs (hot path of every model here).
    The primitive composition lives in tests as the cross-checking oracle.
    Works on single vectors or (B, .) batches."""
    u = c_prev.shape[-1]
    if z.shape[-1] != 4 * u or z.data.ndim != c_prev.data.ndim:
        raise ValueError(f"lstm_fused: z shape {z.shape} does not match c shape {c_prev.shape}")
    zi, zf, zo, zg = (z.data[..., k * u:(k + 1) * u] for k in range(4))
    i, f, o = _sigmoid(zi), _sigmoid(zf), _sigmoid(zo)
    g_ = np.tanh(zg)
    c_new = f * c_prev.data + i * g_
    t = np.tanh(c_new)
    h_new = o * t
    data = np.concatenate([h_new, c_new], axis=-1)

    def bwd(g):
        gh, gc = g[..., :u], g[..., u:]
        dc = gc + gh * o * (1.0 - t * t)
        dz = np.concatenate([
            dc * g_ * i * (1.0 - i),
            dc * c_prev.data * f * (1.0 - f),
            gh * t * o * (1.0 - o),
            dc * i * (1.0 - g_ * g_),
        ], axis=-1)
        _accum(z, dz)
        _accum(c_prev, dc * f)

    return _node(data, (z, c_prev), bwd, "lstm_fused")


# ---------------------------------------------------------------------------
# backward pass and finite-difference checking

def backward(loss: Tensor) -> None:
    """Populate .grad on every tracked tensor reachable from a scalar loss."""
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


@dataclass
class GradCheckReport:
    tolerance: float
    max_errors: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for e in self.max_errors.values())

    @property
    def failures(self) -> dict[str, float]:
        return {k: v for k, v in self.max_errors.items() if v > self.tolerance}

    @property
    def worst(self) -> float:
        return max(self.max_errors.values()) if self.max_errors else 0.0


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients of loss_fn against central finite differences.

    loss_fn must rebuild the graph from the current parameter data on each
    call; params maps names to the tracked leaf tensors.
    """
    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    report = GradCheckReport(tolerance=tolerance)
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            num = np.zeros_like(flat)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + step
                up = float(loss_fn().data)
                flat[idx] = orig - step
                down = float(loss_fn().data)
                flat[idx] = orig
                num[idx] = (up - down) / (2.0 * step)
            a = analytic[name].reshape(-1)
            denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-6)
            report.max_errors[name] = float(np.max(np.abs(a - num) / denom)) if flat.size else 0.0
    return report
