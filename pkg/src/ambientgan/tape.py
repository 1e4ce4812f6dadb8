"""Define-by-run reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records every operation whose inputs carry a tape node while it
is active (``with Tape() as tape: ...``). Tensors created without
``requires_grad`` and without recorded ancestry are plain constants: ops on them
compute values and record nothing.

Numerically guarded ops: ``log`` raises :class:`DomainError` on non-positive
input; ``sigmoid`` is evaluated through ``tanh`` and ``log_sigmoid`` through
``logaddexp`` so neither overflows. No op calls ``exp`` directly.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

LEAKY_SLOPE = 0.2

_local = threading.local()


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


@dataclass
class _Node:
    kind: str
    inputs: tuple[int, ...]
    shape: tuple[int, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None


def active_tape() -> Tape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Append-only record of operations; one per training step."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> Tape:
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def _append(self, node: _Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def backward(self, root: Tensor) -> dict[int, np.ndarray]:
        """Return d(root)/d(node) for every node on this tape.

        Nodes that are not ancestors of ``root`` get zero gradients.
        """
        if root.tape is not self or root.node is None:
            raise ValueError("root is not recorded on this tape")
        if root.values.size != 1:
            raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
        grads: dict[int, np.ndarray] = {root.node: np.ones(root.shape)}
        for i in range(root.node, -1, -1):
            g = grads.get(i)
            node = self.nodes[i]
            if g is None or node.backward is None:
                continue
            input_grads = node.backward(g)
            for j, gj in zip(node.inputs, input_grads):
                if j < 0 or gj is None:
                    continue
                if j in grads:
                    grads[j] = grads[j] + gj
                else:
                    grads[j] = gj
        return {
            i: grads[i] if i in grads else np.zeros(node.shape)
            for i, node in enumerate(self.nodes)
        }


class Tensor:
    __slots__ = ("values", "node", "tape", "logit")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.node: int | None = None
        self.tape: Tape | None = None
        # set by sigmoid so losses can take logs through log_sigmoid
        self.logit: Tensor | None = None
        if requires_grad:
            tape = active_tape()
            if tape is None:
                raise RuntimeError("requires_grad=True needs an active Tape")
            self.tape = tape
            self.node = tape._append(_Node("leaf", (), self.values.shape, None))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, node={self.node})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(kind: str, values: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(values)
    tapes = {t.tape for t in inputs if t.node is not None}
    if not tapes:
        return out
    if len(tapes) > 1:
        raise RuntimeError("inputs recorded on different tapes")
    (tape,) = tapes
    ids = tuple(t.node if t.node is not None else -1 for t in inputs)
    out.tape = tape
    out.node = tape._append(_Node(kind, ids, out.values.shape, backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(kind: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


# elementwise binary -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _result("add", a.values + b.values, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _result("sub", a.values - b.values, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    av, bv = a.values, b.values

    def backward(g):
        return (_unbroadcast(g * bv, av.shape) if a.node is not None else None,
                _unbroadcast(g * av, bv.shape) if b.node is not None else None)

    return _result("mul", av * bv, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result("neg", -a.values, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules; both operands at least 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.values, b.values

    def backward(g):
        ga = gb = None
        if a.node is not None:
            ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)
        if b.node is not None:
            gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
        return ga, gb

    try:
        values = av @ bv
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    return _result("matmul", values, (a, b), backward)


# elementwise unary --------------------------------------------------------

def leaky_relu(x, slope: float = LEAKY_SLOPE) -> Tensor:
    x = as_tensor(x)
    scale = np.where(x.values > 0, 1.0, slope)
    return _result("leaky_relu", x.values * scale, (x,), lambda g: (g * scale,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = 0.5 * (1.0 + np.tanh(0.5 * x.values))
    out = _result("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))
    out.logit = x
    return out


def tanh(x) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.values)
    return _result("tanh", t, (x,), lambda g: (g * (1.0 - t * t),))


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.values <= 0) or np.any(np.isnan(x.values)):
        raise DomainError("log of non-positive value")
    xv = x.values
    return _result("log", np.log(xv), (x,), lambda g: (g / xv,))


def log_sigmoid(x) -> Tensor:
    """log(sigmoid(x)) = -softplus(-x), finite for every finite x."""
    x = as_tensor(x)
    xv = x.values
    s_neg = 0.5 * (1.0 - np.tanh(0.5 * xv))  # sigmoid(-x)
    return _result("log_sigmoid", -np.logaddexp(0.0, -xv), (x,), lambda g: (g * s_neg,))


# reductions and shape ops -------------------------------------------------

def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result("sum", x.values.sum(axis=axis), (x,), backward)


def mean(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    n = x.values.size if axis is None else x.shape[axis]
    shape = x.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _result("mean", x.values.mean(axis=axis), (x,), backward)


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        values = x.values.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _result("reshape", values, (x,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        values = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError:
        shapes = " and ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat: incompatible shapes {shapes}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result("concat", values, tensors,
                   lambda g: tuple(np.split(g, splits, axis=axis)))


def gather(x, index: np.ndarray) -> Tensor:
    """Row-wise gather on a 2-D tensor: ``out[b, j] = x[b, index[b, j]]``."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    if x.ndim != 2 or index.ndim != 2 or index.shape[0] != x.shape[0]:
        raise ShapeError(f"gather: incompatible shapes {x.shape} and {index.shape}")
    shape = x.shape
    rows = np.arange(shape[0])[:, None]

    def backward(g):
        gx = np.zeros(shape)
        np.add.at(gx, (rows, index), g)
        return (gx,)

    return _result("gather", x.values[rows, index], (x,), backward)


def pad2d(x, pad: int) -> Tensor:
    """Zero-pad the last two axes by ``pad`` on every side."""
    x = as_tensor(x)
    if pad == 0:
        return x
    width = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    return _result("pad2d", np.pad(x.values, width), (x,),
                   lambda g: (g[..., pad:-pad, pad:-pad],))


def correlate2d(x, kernel: np.ndarray) -> Tensor:
    """'Same' cross-correlation of a (batch, H, W) tensor with a fixed odd kernel."""
    x = as_tensor(x)
    kernel = np.asarray(kernel, dtype=np.float64)
    kh, kw = kernel.shape
    if x.ndim != 3 or kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"correlate2d: incompatible shapes {x.shape} and {kernel.shape}")
    _, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.values, ((0, 0), (ph, ph), (pw, pw)))
    out = np.zeros(x.shape)
    for u in range(kh):
        for v in range(kw):
            out += kernel[u, v] * xp[:, u:u + h, v:v + w]

    def backward(g):
        gp = np.zeros(xp.shape)
        for u in range(kh):
            for v in range(kw):
                gp[:, u:u + h, v:v + w] += kernel[u, v] * g
        return (gp[:, ph:ph + h, pw:pw + w],)

    return _result("correlate2d", out, (x,), backward)


def grid_sample(x, coords: np.ndarray) -> Tensor:
    """Bilinear sampling of a (batch, H, W) tensor with zero fill outside.

    ``coords`` has shape (batch, Ho, Wo, 2) holding (row, col) source positions
    in pixel units. Differentiable in ``x``; the coordinates are fixed.
    """
    x = as_tensor(x)
    coords = np.asarray(coords, dtype=np.float64)
    if x.ndim != 3 or coords.ndim != 4 or coords.shape[0] != x.shape[0] or coords.shape[-1] != 2:
        raise ShapeError(f"grid_sample: incompatible shapes {x.shape} and {coords.shape}")
    b, h, w = x.shape
    r, c = coords[..., 0], coords[..., 1]
    r0, c0 = np.floor(r), np.floor(c)
    fr, fc = r - r0, c - c0
    r0, c0 = r0.astype(np.intp), c0.astype(np.intp)
    base = (np.arange(b) * h * w)[:, None, None]
    idx, wts = [], []
    for dr, dc, wt in ((0, 0, (1 - fr) * (1 - fc)), (0, 1, (1 - fr) * fc),
                       (1, 0, fr * (1 - fc)), (1, 1, fr * fc)):
        rr, cc = r0 + dr, c0 + dc
        valid = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        idx.append(base + np.clip(rr, 0, h - 1) * w + np.clip(cc, 0, w - 1))
        wts.append(np.where(valid, wt, 0.0))
    flat = x.values.reshape(-1)
    out = wts[0] * flat[idx[0]]
    for k in range(1, 4):
        out = out + wts[k] * flat[idx[k]]
    size = flat.size

    def backward(g):
        gx = np.zeros(size)
        for k in range(4):
            gx += np.bincount(idx[k].ravel(), weights=(wts[k] * g).ravel(), minlength=size)
        return (gx.reshape(b, h, w),)

    return _result("grid_sample", out, (x,), backward)


OPS: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "neg": neg,
    "matmul": matmul,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "log": log,
    "log_sigmoid": log_sigmoid,
    "sum": sum,
    "mean": mean,
    "reshape": reshape,
    "concat": lambda *ts, axis=-1: concat(ts, axis=axis),
    "gather": gather,
    "pad2d": pad2d,
    "correlate2d": correlate2d,
    "grid_sample": grid_sample,
}


def op_forward(kind: str, inputs: Sequence, **params) -> Tensor:
    """Apply the op named ``kind``; ``params`` are its non-tensor arguments."""
    try:
        fn = OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **params)


def backward(root: Tensor) -> dict[int, np.ndarray]:
    if root.tape is None:
        raise ValueError("root is not recorded on any tape")
    return root.tape.backward(root)


def grad(root: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of scalar ``root`` with respect to each tensor in ``wrt``."""
    grads = backward(root)
    return [grads[t.node] if t.node is not None else np.zeros(t.shape) for t in wrt]
