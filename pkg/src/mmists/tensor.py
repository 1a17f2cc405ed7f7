"""Dense float64 tensors with tape-based reverse-mode differentiation.

The tape is define-by-run: ops executed while a ``Tape`` is active are
recorded and can be replayed backwards to accumulate gradients. Tensors
created outside a tape (or plain numpy arrays / floats passed to ops) are
treated as constants. Everything is float64 and row-major.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "AdamState",
    "adam_init",
    "adam_step",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "sin",
    "sigmoid",
    "relu",
    "reduce_sum",
    "reduce_mean",
    "concat",
    "narrow",
    "reshape",
    "swapaxes",
    "layer_norm",
    "softmax",
    "masked_softmax",
    "causal_conv1d",
    "bce_with_logits",
    "finite_difference_gradients",
    "relative_error",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


_TAPE_STACK: list["Tape"] = []


def _active_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """A dense float64 array, optionally tracked on the active tape."""

    __slots__ = ("data", "_tape", "_node")

    def __init__(self, data) -> None:
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must be >= 1, got {arr.shape}")
        self.data = arr
        self._tape: Tape | None = None
        self._node: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def node_id(self) -> int | None:
        """Node handle on the tape this tensor was last recorded on."""
        return self._node

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    # arithmetic sugar; scalars and ndarrays are treated as constants
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class _Node:
    op: str
    input_ids: tuple[int, ...]
    backward: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None


class Tape:
    """Ordered record of ops; replaying it backwards accumulates gradients.

    Node ids are topological by construction (inputs always precede their
    consumers), so one reverse sweep visits each node exactly once.
    """

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self.gradients: dict[int, np.ndarray] = {}

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def _ensure_leaf(self, t: Tensor) -> int:
        if t._tape is not self:
            t._tape = self
            t._node = len(self.nodes)
            self.nodes.append(_Node("leaf", (), None))
        assert t._node is not None
        return t._node

    def record(
        self,
        out: Tensor,
        inputs: Sequence[Tensor],
        backward: Callable[[np.ndarray], tuple[np.ndarray, ...]],
        op: str,
    ) -> None:
        ids = tuple(self._ensure_leaf(t) for t in inputs)
        out._tape = self
        out._node = len(self.nodes)
        self.nodes.append(_Node(op, ids, backward))

    def backward(self, loss: Tensor) -> None:
        """Populate ``gradients`` for every node contributing to ``loss``."""
        if loss.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        if loss._tape is not self or loss._node is None:
            raise ValueError("loss tensor was not recorded on this tape")
        self.gradients = {loss._node: np.ones_like(loss.data)}
        grads = self.gradients
        for node_id in range(loss._node, -1, -1):
            g = grads.get(node_id)
            if g is None:
                continue
            node = self.nodes[node_id]
            if node.backward is None:
                continue
            input_grads = node.backward(g)
            for in_id, ig in zip(node.input_ids, input_grads):
                if ig is None:
                    continue
                acc = grads.get(in_id)
                if acc is None:
                    grads[in_id] = ig.copy() if ig.base is not None or ig is g else ig
                else:
                    acc += ig

    def grad(self, t: Tensor) -> np.ndarray:
        """Gradient of the last backward() loss w.r.t. ``t`` (zeros if unused)."""
        if t._tape is self and t._node is not None and t._node in self.gradients:
            return self.gradients[t._node]
        return np.zeros_like(t.data)

    def grad_or_none(self, t: Tensor) -> np.ndarray | None:
        if t._tape is self and t._node is not None:
            return self.gradients.get(t._node)
        return None


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _as_const(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unary(x: Tensor, out_data: np.ndarray, backward, op: str) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None:
        tape.record(out, (x,), backward, op)
    return out


def _binary(a, b, forward, grad_a, grad_b, op: str) -> Tensor:
    a_t = isinstance(a, Tensor)
    b_t = isinstance(b, Tensor)
    av = a.data if a_t else _as_const(a)
    bv = b.data if b_t else _as_const(b)
    out = Tensor(forward(av, bv))
    tape = _active_tape()
    if tape is not None and (a_t or b_t):
        inputs = tuple(t for t, is_t in ((a, a_t), (b, b_t)) if is_t)

        def backward(g: np.ndarray):
            grads = []
            if a_t:
                grads.append(_reduce_to(grad_a(g, av, bv), av.shape))
            if b_t:
                grads.append(_reduce_to(grad_b(g, av, bv), bv.shape))
            return tuple(grads)

        tape.record(out, inputs, backward, op)
    return out


def add(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g, "add")


def sub(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g, "sub")


def mul(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x, "mul")


def neg(x: Tensor) -> Tensor:
    return _unary(x, -x.data, lambda g: (-g,), "neg")


def sin(x: Tensor) -> Tensor:
    xd = x.data
    return _unary(x, np.sin(xd), lambda g: (g * np.cos(xd),), "sin")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # piecewise form avoids overflow in exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _unary(x, s, lambda g: (g * s * (1.0 - s),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    xd = x.data
    return _unary(x, np.maximum(xd, 0.0), lambda g: (g * (xd > 0.0),), "relu")


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a_t = isinstance(a, Tensor)
    b_t = isinstance(b, Tensor)
    av = a.data if a_t else _as_const(a)
    bv = b.data if b_t else _as_const(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {av.shape} and {bv.shape}")
    if av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {av.shape} x {bv.shape}")
    out = Tensor(av @ bv)
    tape = _active_tape()
    if tape is not None and (a_t or b_t):
        inputs = tuple(t for t, is_t in ((a, a_t), (b, b_t)) if is_t)

        def backward(g: np.ndarray):
            grads = []
            if a_t:
                grads.append(_reduce_to(g @ np.swapaxes(bv, -1, -2), av.shape))
            if b_t:
                grads.append(_reduce_to(np.swapaxes(av, -1, -2) @ g, bv.shape))
            return tuple(grads)

        tape.record(out, inputs, backward, "matmul")
    return out


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    xshape = x.shape

    def backward(g: np.ndarray):
        if axis is None:
            return (np.broadcast_to(g, xshape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, xshape).copy(),)

    return _unary(x, np.sum(x.data, axis=axis, keepdims=keepdims), backward, "sum")


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    xshape = x.shape
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = 1
        for ax in axes:
            n *= xshape[ax]

    def backward(g: np.ndarray):
        if axis is None:
            return (np.broadcast_to(g / n, xshape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, xshape).copy(),)

    return _unary(x, np.mean(x.data, axis=axis, keepdims=keepdims), backward, "mean")


def concat(parts: Iterable[Tensor], axis: int = -1) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    datas = [p.data for p in parts]
    out = Tensor(np.concatenate(datas, axis=axis))
    tape = _active_tape()
    if tape is not None:
        sizes = [d.shape[axis] for d in datas]
        offsets = np.cumsum([0] + sizes)

        def backward(g: np.ndarray):
            return tuple(
                np.take(g, range(offsets[i], offsets[i + 1]), axis=axis) for i in range(len(sizes))
            )

        tape.record(out, parts, backward, "concat")
    return out


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    xshape = x.shape

    def backward(g: np.ndarray):
        full = np.zeros(xshape)
        full[idx] = g
        return (full,)

    return _unary(x, x.data[idx].copy(), backward, "narrow")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    xshape = x.shape
    return _unary(x, x.data.reshape(shape).copy(), lambda g: (g.reshape(xshape),), "reshape")


def swapaxes(x: Tensor, ax1: int, ax2: int) -> Tensor:
    return _unary(
        x,
        np.ascontiguousarray(np.swapaxes(x.data, ax1, ax2)),
        lambda g: (np.swapaxes(g, ax1, ax2),),
        "swapaxes",
    )


_LN_EPS = 1e-5


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then apply gain and bias."""
    xd = x.data
    d = xd.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}")
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (xd - mu) * inv
    out = Tensor(xhat * gain.data + bias.data)
    tape = _active_tape()
    if tape is not None:
        gd = gain.data

        def backward(g: np.ndarray):
            lead = tuple(range(g.ndim - 1))
            g_gain = (g * xhat).sum(axis=lead)
            g_bias = g.sum(axis=lead)
            gh = g * gd
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
            return gx, g_gain, g_bias

        tape.record(out, (x, gain, bias), backward, "layer_norm")
    return out


def masked_softmax(scores: Tensor, mask: np.ndarray | None) -> tuple[Tensor, np.ndarray]:
    """Softmax over the last axis with optional boolean validity mask.

    ``mask`` must broadcast to ``scores.shape``; False entries get weight 0.
    Rows with no valid entry come back all-zero and are flagged in the
    returned boolean ``degenerate`` array (shape = row shape).
    """
    sd = scores.data
    if mask is None:
        m = np.ones(sd.shape, dtype=bool)
    else:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), sd.shape)
    any_valid = m.any(axis=-1, keepdims=True)
    neg = np.where(m, sd, -np.inf)
    rowmax = np.where(any_valid, neg.max(axis=-1, keepdims=True, initial=-np.inf), 0.0)
    e = np.exp(np.where(m, sd - rowmax, -np.inf))
    denom = e.sum(axis=-1, keepdims=True)
    safe = np.where(any_valid, denom, 1.0)
    w = e / safe
    out = Tensor(w)
    tape = _active_tape()
    if tape is not None:
        wd = out.data

        def backward(g: np.ndarray):
            dot = (g * wd).sum(axis=-1, keepdims=True)
            return (wd * (g - dot),)

        tape.record(out, (scores,), backward, "masked_softmax")
    return out, ~any_valid[..., 0]


def softmax(scores: Tensor) -> Tensor:
    out, _ = masked_softmax(scores, None)
    return out


def causal_conv1d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """1-D convolution over time with left zero-padding of (k-1) rows.

    x: [T, c_in], kernel: [k, c_in, c_out], bias: [c_out]. Output row t
    depends only on input rows <= t.
    """
    xd, kd, bd = x.data, kernel.data, bias.data
    if xd.ndim != 2 or kd.ndim != 3 or xd.shape[1] != kd.shape[1]:
        raise ShapeError(f"conv expects x [T,c_in], kernel [k,c_in,c_out]; got {xd.shape}, {kd.shape}")
    steps, c_in = xd.shape
    k, _, c_out = kd.shape
    if bd.shape != (c_out,):
        raise ShapeError(f"bias must have shape ({c_out},), got {bd.shape}")
    padded = np.zeros((steps + k - 1, c_in))
    padded[k - 1 :] = xd
    out_data = np.broadcast_to(bd, (steps, c_out)).copy()
    for i in range(k):
        out_data += padded[i : i + steps] @ kd[i]
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None:

        def backward(g: np.ndarray):
            g_pad = np.zeros_like(padded)
            g_k = np.empty_like(kd)
            for i in range(k):
                g_pad[i : i + steps] += g @ kd[i].T
                g_k[i] = padded[i : i + steps].T @ g
            return g_pad[k - 1 :], g_k, g.sum(axis=0)

        tape.record(out, (x, kernel, bias), backward, "causal_conv1d")
    return out


def bce_with_logits(logits: Tensor, targets, pos_weight: float = 1.0) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logits) against {0,1} targets."""
    xd = logits.data
    y = np.broadcast_to(_as_const(targets), xd.shape)
    # stable: max(x,0) - x*y + log1p(exp(-|x|)), positives optionally reweighted
    base = np.maximum(xd, 0.0) - xd * y + np.log1p(np.exp(-np.abs(xd)))
    if pos_weight != 1.0:
        weight = np.where(y > 0.5, pos_weight, 1.0)
        base = base * weight
    out = Tensor(base.mean())
    tape = _active_tape()
    if tape is not None:
        n = xd.size
        s = _sigmoid(xd)

        def backward(g: np.ndarray):
            gx = (s - y) / n
            if pos_weight != 1.0:
                gx = gx * np.where(y > 0.5, pos_weight, 1.0)
            return (g * gx,)

        tape.record(out, (logits,), backward, "bce_with_logits")
    return out


@dataclass
class AdamState:
    """Per-parameter first/second moments plus hyperparameters."""

    lr: float = 4e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_init(params: dict[str, Tensor], lr: float = 4e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for name, p in params.items():
        state.first_moment[name] = np.zeros_like(p.data)
        state.second_moment[name] = np.zeros_like(p.data)
    return state


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    skip: set[str] | None = None,
) -> tuple[dict[str, Tensor], AdamState]:
    """One bias-corrected Adam update, in place; missing grads count as zero."""
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        if skip is not None and name in skip:
            continue
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def finite_difference_gradients(
    f: Callable[[], float],
    params: dict[str, Tensor],
    step: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Central-difference gradients of a re-runnable scalar function.

    ``f`` must recompute the loss from the current contents of ``params``;
    entries are perturbed in place and restored.
    """
    out: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f()
            flat[i] = orig - step
            lo = f()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
        out[name] = g
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Worst-case elementwise |a-b| / max(|a|, |b|, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
