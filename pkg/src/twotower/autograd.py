"""Minimal reverse-mode autodiff over dense float64 arrays.

Only the operators the two-tower network needs are provided. Every operator
records a :class:`Node` on its output when any input requires a gradient; the
ordered list of nodes reachable from a result is its :class:`GradGraph`.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import expit

_ids = itertools.count()
_state = threading.local()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operator."""


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording in the current thread."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """Dense float64 array with an optional recorded creator node."""

    __slots__ = ("data", "requires_grad", "grad", "id", "node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.id = next(_ids)
        self.node: Optional[Node] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(id={self.id}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    kwargs: Dict[str, Any]
    saved: Dict[str, Any] = field(default_factory=dict)


# name -> (forward(*arrays, **kw) -> (out, saved), backward(grad, arrays, saved, **kw) -> grads)
_OPS: Dict[str, Tuple[Callable, Callable]] = {}


def _apply(op: str, *inputs: Tensor, **kwargs) -> Tensor:
    fwd, _ = _OPS[op]
    out_data, saved = fwd(*(t.data for t in inputs), **kwargs)
    needs = _grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        out.node = Node(op, tuple(inputs), out, kwargs, saved)
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# --- convolution -----------------------------------------------------------


def _pad(x, p):
    if p == 0:
        return x
    N, C, H, W = x.shape
    out = np.zeros((N, C, H + 2 * p, W + 2 * p))
    out[:, :, p : p + H, p : p + W] = x
    return out


def _im2col(xp, k):
    """N x C x Hp x Wp -> N x (H'*W') x (C*k*k) patch matrix."""
    N, C, Hp, Wp = xp.shape
    Ho, Wo = Hp - k + 1, Wp - k + 1
    sN, sC, sH, sW = xp.strides
    view = as_strided(xp, (N, Ho, Wo, C, k, k), (sN, sH, sW, sC, sH, sW), writeable=False)
    return view.reshape(N, Ho * Wo, C * k * k), Ho, Wo


def _correlate(xp, w):
    """Valid cross-correlation of N x Cin x Hp x Wp with Cout x Cin x k x k."""
    cout, k = w.shape[0], w.shape[2]
    cols, Ho, Wo = _im2col(np.ascontiguousarray(xp), k)
    wm = w.reshape(cout, -1).T
    # per-sample products keep results independent of batch size
    out = np.empty((xp.shape[0], cout, Ho, Wo))
    for n in range(xp.shape[0]):
        out[n] = (cols[n] @ wm).T.reshape(cout, Ho, Wo)
    return out, cols


def _conv2d_forward(x, w, b, *, pad):
    out, _ = _correlate(_pad(x, pad), w)
    out += b[None, :, None, None]
    return out, {}


def _conv2d_backward(g, arrays, saved, *, pad):
    x, w, _ = arrays
    cout, cin, k, _ = w.shape
    H, W = x.shape[2:]
    cols, _, _ = _im2col(_pad(x, pad), k)
    gm = g.reshape(g.shape[0], cout, -1)
    gw = np.zeros((cout, cin * k * k))
    for n in range(g.shape[0]):
        gw += gm[n] @ cols[n]
    gb = g.sum(axis=(0, 2, 3))
    gx, _ = _correlate(_pad(g, k - 1), np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)))
    if pad:
        gx = np.ascontiguousarray(gx[:, :, pad : pad + H, pad : pad + W])
    return gx, gw.reshape(w.shape), gb


_OPS["conv2d"] = (_conv2d_forward, _conv2d_backward)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, pad: int = 0) -> Tensor:
    """Stride-1 2-D cross-correlation with zero padding.

    ``x`` is N x Cin x H x W, ``weight`` Cout x Cin x k x k, ``bias`` Cout.
    The output is N x Cout x (H + 2*pad - k + 1) x (W + 2*pad - k + 1).
    """
    if len(x.shape) != 4 or len(weight.shape) != 4:
        raise ShapeError(f"conv2d: expected 4-D input and weight, got {x.shape} and {weight.shape}")
    cout, cin, kh, kw = weight.shape
    if kh != kw or kh < 1:
        raise ShapeError(f"conv2d: square kernel required, got {kh}x{kw}")
    if x.shape[1] != cin:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels but weight {weight.shape} expects {cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {cout} output channels")
    if pad < 0 or min(x.shape[2:]) + 2 * pad < kh:
        raise ShapeError(f"conv2d: input {x.shape[2:]} with pad {pad} is smaller than kernel {kh}")
    return _apply("conv2d", x, weight, bias, pad=int(pad))


def _convt_forward(x, w, b):
    # padded output row 2*i + ky with ky = 2*q + a lands in block (i + q, a)
    N, _, H, W = x.shape
    cout = w.shape[1]
    t = np.tensordot(x, w.reshape(w.shape[0], cout, 2, 2, 2, 2), axes=([1], [0]))  # N,H,W,Co,q,a,r,b
    outp = np.zeros((N, cout, H + 1, 2, W + 1, 2))
    for q in range(2):
        for r in range(2):
            outp[:, :, q : q + H, :, r : r + W, :] += t[:, :, :, :, q, :, r, :].transpose(0, 3, 1, 4, 2, 5)
    out = outp.reshape(N, cout, 2 * H + 2, 2 * W + 2)[:, :, 1:-1, 1:-1] + b[None, :, None, None]
    return out, {}


def _convt_backward(g, arrays, saved):
    x, w, _ = arrays
    N, cin, H, W = x.shape
    cout = w.shape[1]
    gp = _pad(g, 1).reshape(N, cout, H + 1, 2, W + 1, 2)
    # taps[n, o, i, j, q, a, r, b] = padded grad at (2(i+q)+a, 2(j+r)+b)
    taps = np.empty((N, cout, H, W, 2, 2, 2, 2))
    for q in range(2):
        for r in range(2):
            taps[:, :, :, :, q, :, r, :] = gp[:, :, q : q + H, :, r : r + W, :].transpose(0, 1, 2, 4, 3, 5)
    taps = taps.reshape(N, cout, H, W, 16)
    wk = w.reshape(cin, cout, 16)
    gx = np.tensordot(taps, wk, axes=([1, 4], [1, 2])).transpose(0, 3, 1, 2)
    gw = np.tensordot(x, taps, axes=([0, 2, 3], [0, 2, 3])).reshape(w.shape)
    gb = g.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(gx), gw, gb


_OPS["conv_transpose2d"] = (_convt_forward, _convt_backward)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """4x4 transposed convolution, stride 2, padding 1: exact 2x upsampling.

    ``weight`` is Cin x Cout x 4 x 4.
    """
    if len(x.shape) != 4 or len(weight.shape) != 4:
        raise ShapeError(f"conv_transpose2d: expected 4-D input and weight, got {x.shape} and {weight.shape}")
    cin, cout, kh, kw = weight.shape
    if (kh, kw) != (4, 4):
        raise ShapeError(f"conv_transpose2d: kernel must be 4x4, got {kh}x{kw}")
    if x.shape[1] != cin:
        raise ShapeError(f"conv_transpose2d: input has {x.shape[1]} channels but weight {weight.shape} expects {cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv_transpose2d: bias shape {bias.shape} does not match {cout} output channels")
    return _apply("conv_transpose2d", x, weight, bias)


# --- pooling ---------------------------------------------------------------


def _windows(x):
    N, C, H, W = x.shape
    return x.reshape(N, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H // 2, W // 2, 4)


def _maxpool_forward(x):
    win = _windows(x)
    idx = win.argmax(axis=-1)  # first maximum in row-major window order
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, {"argmax": idx}


def _maxpool_backward(g, arrays, saved):
    (x,) = arrays
    N, C, H, W = x.shape
    g4 = np.zeros(g.shape + (4,))
    np.put_along_axis(g4, saved["argmax"][..., None], g[..., None], axis=-1)
    gx = g4.reshape(N, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H, W)
    return (gx,)


_OPS["maxpool2d"] = (_maxpool_forward, _maxpool_backward)


def maxpool2d(x: Tensor) -> Tuple[Tensor, np.ndarray]:
    """2x2 max-pool with stride 2.

    Returns the pooled tensor and the argmax index inside each window
    (0..3, row-major: ``divmod(index, 2)`` gives the (row, col) offset).
    Ties go to the first index.
    """
    if len(x.shape) != 4:
        raise ShapeError(f"maxpool2d: expected N x C x H x W, got {x.shape}")
    H, W = x.shape[2:]
    if H % 2 or W % 2:
        raise ShapeError(f"maxpool2d: spatial size must be even, got H={H}, W={W}")
    if _grad_enabled() and x.requires_grad:
        out = _apply("maxpool2d", x)
        return out, out.node.saved["argmax"]
    win = _windows(x.data)
    return Tensor(win.max(axis=-1)), win.argmax(axis=-1)


# --- elementwise -----------------------------------------------------------

_OPS["mul"] = (lambda a, b: (a * b, {}), lambda g, arrs, s: (g * arrs[1], g * arrs[0]))
_OPS["sub"] = (lambda a, b: (a - b, {}), lambda g, arrs, s: (g, -g))
_OPS["relu"] = (
    lambda x: (np.maximum(x, 0.0), {}),
    lambda g, arrs, s: (g * (arrs[0] > 0),),
)


def _sigmoid_forward(x):
    y = expit(x)
    return y, {"y": y}


_OPS["sigmoid"] = (_sigmoid_forward, lambda g, arrs, s: (g * s["y"] * (1.0 - s["y"]),))
_OPS["abs"] = (lambda x: (np.abs(x), {}), lambda g, arrs, s: (g * np.sign(arrs[0]),))
_OPS["sum"] = (
    lambda x: (np.array([x.sum()]), {}),
    lambda g, arrs, s: (np.full(arrs[0].shape, g[0]),),
)
_OPS["mean"] = (
    lambda x: (np.array([x.mean()]), {}),
    lambda g, arrs, s: (np.full(arrs[0].shape, g[0] / arrs[0].size),),
)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; the backward pass couples both operands."""
    _same_shape("mul", a, b)
    return _apply("mul", a, b)


elementwise_mul = mul


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _apply("sub", a, b)


def relu(x: Tensor) -> Tensor:
    return _apply("relu", x)


def sigmoid(x: Tensor) -> Tensor:
    return _apply("sigmoid", x)


def absolute(x: Tensor) -> Tensor:
    return _apply("abs", x)


def tsum(x: Tensor) -> Tensor:
    return _apply("sum", x)


def mean(x: Tensor) -> Tensor:
    return _apply("mean", x)


def _concat_forward(a, b):
    return np.concatenate([a, b], axis=1), {}


def _concat_backward(g, arrays, saved):
    ca = arrays[0].shape[1]
    return g[:, :ca], g[:, ca:]


_OPS["concat_channels"] = (_concat_forward, _concat_backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack ``b``'s channels after ``a``'s (axis 1)."""
    if len(a.shape) != 4 or len(b.shape) != 4:
        raise ShapeError(f"concat_channels: expected 4-D operands, got {a.shape} and {b.shape}")
    if (a.shape[0], *a.shape[2:]) != (b.shape[0], *b.shape[2:]):
        raise ShapeError(f"concat_channels: N/H/W mismatch {a.shape} vs {b.shape}")
    return _apply("concat_channels", a, b)


# --- graph and backward ----------------------------------------------------


class GradGraph:
    """Nodes reachable from a result, in forward (topological) order."""

    def __init__(self, nodes: List[Node]):
        self.nodes = nodes

    @classmethod
    def trace(cls, result: Tensor) -> "GradGraph":
        order: List[Node] = []
        seen = set()
        stack = [(result, False)]
        while stack:
            t, expanded = stack.pop()
            if t.node is None:
                continue
            if expanded:
                order.append(t.node)
                continue
            if t.id in seen:
                continue
            seen.add(t.id)
            stack.append((t, True))
            for inp in reversed(t.node.inputs):
                if inp.id not in seen:
                    stack.append((inp, False))
        return cls(order)

    def leaves(self) -> List[Tensor]:
        produced = {n.output.id for n in self.nodes}
        out, seen = [], set()
        for n in self.nodes:
            for t in n.inputs:
                if t.id not in produced and t.id not in seen:
                    seen.add(t.id)
                    out.append(t)
        return out

    def is_well_ordered(self) -> bool:
        known = {t.id for t in self.leaves()}
        for n in self.nodes:
            if any(t.id not in known for t in n.inputs):
                return False
            known.add(n.output.id)
        return True

    def replay(self) -> Dict[int, np.ndarray]:
        """Recompute every node's output from the leaves, in recorded order."""
        values = {t.id: t.data for t in self.leaves()}
        for n in self.nodes:
            fwd, _ = _OPS[n.op]
            values[n.output.id], _ = fwd(*(values[t.id] for t in n.inputs), **n.kwargs)
        return values


def backward(result: Tensor) -> Dict[int, np.ndarray]:
    """Backpropagate from a scalar result.

    Sets ``.grad`` on every leaf that requires a gradient and returns the map
    tensor id -> gradient for those leaves.
    """
    if result.data.size != 1:
        raise ShapeError(f"backward needs a scalar result, got shape {result.shape}")
    graph = GradGraph.trace(result)
    grads: Dict[int, np.ndarray] = {result.id: np.ones_like(result.data)}
    leaves: Dict[int, Tensor] = {}
    if result.node is None and result.requires_grad:
        leaves[result.id] = result
    for node in reversed(graph.nodes):
        g = grads.pop(node.output.id, None)
        if g is None:
            continue
        _, bwd = _OPS[node.op]
        in_grads = bwd(g, tuple(t.data for t in node.inputs), node.saved, **node.kwargs)
        for t, gi in zip(node.inputs, in_grads):
            if not t.requires_grad:
                continue
            if t.id in grads:
                grads[t.id] = grads[t.id] + gi
            else:
                grads[t.id] = gi
            if t.node is None:
                leaves[t.id] = t
    out = {}
    for tid, t in leaves.items():
        t.grad = grads[tid]
        out[tid] = grads[tid]
    return out
