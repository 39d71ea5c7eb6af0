"""Reverse-mode automatic differentiation on a define-by-run gradient tape.

Every value is a float64 numpy array wrapped in a :class:`Tensor`. Operations
executed while a :class:`GradientTape` is active append one node per output;
the topological order of the graph is exactly the append order, and
:meth:`GradientTape.backward` replays the nodes once in reverse. Tensors that
were never watched (and are not derived from watched tensors) act as
constants: no node is recorded for them and no gradient is accumulated.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "GradientTape",
    "matmul",
    "exp",
    "log",
    "sqrt",
    "softmax",
    "log_softmax",
    "logsumexp",
    "layer_norm",
    "gather_rows",
    "gather_cols",
    "transpose",
    "reshape",
    "concat",
    "slice_axis",
    "masked_fill",
    "dropout",
    "relu",
]

_ACTIVE: "GradientTape | None" = None


class Tensor:
    """A float64 ndarray plus an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "_tape_id")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._tape_id: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data)

    def detach(self) -> "Tensor":
        """A constant copy that shares no tape history."""
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    # Arithmetic: the right operand may be a Tensor, an ndarray or a scalar.
    def __add__(self, other):
        return _add(self, other)

    def __radd__(self, other):
        return _add(self, other)

    def __sub__(self, other):
        return _sub(self, other)

    def __rsub__(self, other):
        return _sub(_const(other), self)

    def __mul__(self, other):
        return _mul(self, other)

    def __rmul__(self, other):
        return _mul(self, other)

    def __truediv__(self, other):
        return _div(self, other)

    def __rtruediv__(self, other):
        return _div(_const(other), self)

    def __neg__(self):
        return _mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _reduce(self, axis, keepdims, mean=False)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _reduce(self, axis, keepdims, mean=True)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None) -> "Tensor":
        return transpose(self, axes)


class GradientTape:
    """Records operations for one forward pass and replays them backward.

    Rebuilt every training step. ``watch`` registers a leaf (parameter) and
    clears any stale gradient; operations on watched or derived tensors append
    nodes in execution order.
    """

    def __init__(self):
        # (tensor, parent tape ids, backward closure or None for leaves)
        self._nodes: list[tuple[Tensor, tuple[int, ...], object]] = []

    def __enter__(self) -> "GradientTape":
        global _ACTIVE
        if _ACTIVE is not None:
            raise RuntimeError("another GradientTape is already active")
        _ACTIVE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE
        _ACTIVE = None
        return False

    def watch(self, tensor: Tensor) -> None:
        tensor.grad = None
        tensor._tape_id = len(self._nodes)
        self._nodes.append((tensor, (), None))

    def _record(self, out: Tensor, parents: tuple[Tensor, ...], backward) -> None:
        ids = tuple(p._tape_id for p in parents if p._tape_id is not None)
        out._tape_id = len(self._nodes)
        self._nodes.append((out, ids, backward))

    @property
    def nodes(self):
        """Read-only view of (tensor, parent ids) pairs, in append order."""
        return [(t, ids) for t, ids, _ in self._nodes]

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(tensor) into .grad for every reachable node.

        The loss must be a scalar recorded on this tape. Nodes are visited
        exactly once, in reverse append order; nodes with no incoming
        gradient are skipped.
        """
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape_id is None or loss._tape_id >= len(self._nodes) or self._nodes[loss._tape_id][0] is not loss:
            raise ValueError("loss is not on this tape")
        loss.grad = np.ones_like(loss.data)
        for tensor, _ids, fn in reversed(self._nodes[: loss._tape_id + 1]):
            if fn is None or tensor.grad is None:
                continue
            fn(tensor.grad)


def _const(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _acc(t: Tensor, g: np.ndarray) -> None:
    if t._tape_id is None:
        return
    if t.grad is None:
        # copy: _unbroadcast may return g itself, which other closures mutate
        t.grad = _unbroadcast(g, t.data.shape).copy()
    else:
        t.grad += _unbroadcast(g, t.data.shape)


def _make(out_data, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(out_data)
    if _ACTIVE is not None and any(p._tape_id is not None for p in parents):
        _ACTIVE._record(out, parents, backward)
    return out


def _add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        out_data = a.data + b.data

        def backward(g):
            _acc(a, g)
            _acc(b, g)

        return _make(out_data, (a, b), backward)
    bv = np.asarray(b, dtype=np.float64)

    def backward(g):
        _acc(a, g)

    return _make(a.data + bv, (a,), backward)


def _sub(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        out_data = a.data - b.data

        def backward(g):
            _acc(a, g)
            _acc(b, -g)

        return _make(out_data, (a, b), backward)
    bv = np.asarray(b, dtype=np.float64)

    def backward(g):
        _acc(a, g)

    return _make(a.data - bv, (a,), backward)


def _mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        out_data = a.data * b.data

        def backward(g):
            _acc(a, g * b.data)
            _acc(b, g * a.data)

        return _make(out_data, (a, b), backward)
    bv = np.asarray(b, dtype=np.float64)

    def backward(g):
        _acc(a, g * bv)

    return _make(a.data * bv, (a,), backward)


def _div(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        out_data = a.data / b.data

        def backward(g):
            _acc(a, g / b.data)
            _acc(b, -g * a.data / (b.data * b.data))

        return _make(out_data, (a, b), backward)
    bv = np.asarray(b, dtype=np.float64)

    def backward(g):
        _acc(a, g / bv)

    return _make(a.data / bv, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy stacking rules (leading dims broadcast)."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs ndim >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        _acc(a, g @ np.swapaxes(b.data, -1, -2))
        _acc(b, np.swapaxes(a.data, -1, -2) @ g)

    return _make(out_data, (a, b), backward)


def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)

    def backward(g):
        _acc(x, g * out_data)

    return _make(out_data, (x,), backward)


def log(x: Tensor) -> Tensor:
    def backward(g):
        _acc(x, g / x.data)

    return _make(np.log(x.data), (x,), backward)


def sqrt(x: Tensor) -> Tensor:
    out_data = np.sqrt(x.data)

    def backward(g):
        _acc(x, g * 0.5 / out_data)

    return _make(out_data, (x,), backward)


def _reduce(x: Tensor, axis, keepdims: bool, mean: bool) -> Tensor:
    out_data = (np.mean if mean else np.sum)(x.data, axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else np.prod([x.data.shape[i] for i in np.atleast_1d(axis)])

    def backward(g):
        gg = np.asarray(g, dtype=np.float64)
        if not keepdims and axis is not None:
            gg = np.expand_dims(gg, axis)
        grad = np.broadcast_to(gg, x.data.shape)
        _acc(x, grad / count if mean else grad)

    return _make(out_data, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along one axis (max subtraction)."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _acc(x, out_data * (g - dot))

    return _make(out_data, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True)) + m
    out_data = x.data - lse
    soft = np.exp(out_data)

    def backward(g):
        _acc(x, g - soft * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (x,), backward)


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out_keep = np.log(s) + m
    out_data = out_keep if keepdims else np.squeeze(out_keep, axis=axis)
    soft = e / s

    def backward(g):
        gg = np.asarray(g, dtype=np.float64)
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        _acc(x, gg * soft)

    return _make(out_data, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale-shift.

    Population variance; eps sits inside the square root, so a constant row
    normalizes to exact zeros.
    """
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data

    def backward(g):
        _acc(gain, (g * xhat).reshape(-1, x.data.shape[-1]).sum(axis=0))
        _acc(bias, g.reshape(-1, x.data.shape[-1]).sum(axis=0))
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        _acc(x, inv * (dxhat - m1 - xhat * m2))

    return _make(out_data, (x, gain, bias), backward)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Select rows of a 2-D table; backward scatter-adds into the table."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError(f"gather_rows needs 1-D ids, got shape {idx.shape}")
    n = table.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        bad = idx[(idx < 0) | (idx >= n)][0]
        raise IndexError(f"row id {bad} outside [0, {n})")

    def backward(g):
        if table._tape_id is None:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, idx, g)

    return _make(table.data[idx], (table,), backward)


def gather_cols(x: Tensor, ids) -> Tensor:
    """Per-row column gather: out[b, j] = x[b, ids[b, j]].

    Accepts ids of shape [B] (returns [B]) or [B, m] (returns [B, m]).
    """
    idx = np.asarray(ids, dtype=np.int64)
    squeeze = idx.ndim == 1
    idx2 = idx[:, None] if squeeze else idx
    if x.ndim != 2 or idx2.shape[0] != x.shape[0]:
        raise ValueError(f"gather_cols shape mismatch: {x.shape} with ids {idx.shape}")
    n = x.shape[1]
    if idx2.size and (idx2.min() < 0 or idx2.max() >= n):
        bad = idx2[(idx2 < 0) | (idx2 >= n)][0]
        raise IndexError(f"column id {bad} outside [0, {n})")
    out_data = np.take_along_axis(x.data, idx2, axis=1)
    if squeeze:
        out_data = out_data[:, 0]

    def backward(g):
        if x._tape_id is None:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        gg = g[:, None] if squeeze else g
        rows = np.repeat(np.arange(idx2.shape[0]), idx2.shape[1])
        np.add.at(x.grad, (rows, idx2.ravel()), gg.ravel())

    return _make(out_data, (x,), backward)


def transpose(x: Tensor, axes=None) -> Tensor:
    def backward(g):
        inv = None if axes is None else np.argsort(axes)
        _acc(x, np.transpose(g, inv))

    return _make(np.transpose(x.data, axes), (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    def backward(g):
        _acc(x, g.reshape(x.data.shape))

    return _make(x.data.reshape(shape), (x,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    base = tensors[0].shape
    ax = axis % len(base)
    ref = base[:ax] + base[ax + 1 :]
    for t in tensors[1:]:
        other = t.shape
        if len(other) != len(base) or other[:ax] + other[ax + 1 :] != ref:
            raise ValueError(f"concat shape mismatch: {base} vs {other} on axis {axis}")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _acc(t, g[tuple(sl)])

    return _make(out_data, tuple(tensors), backward)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis; backward scatters into zeros."""
    dim = x.shape[axis]
    if not 0 <= start <= stop <= dim:
        raise ValueError(f"slice [{start}:{stop}] outside axis {axis} of length {dim}")
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, stop)
    key = tuple(sl)

    def backward(g):
        if x._tape_id is None:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[key] += g

    return _make(x.data[key], (x,), backward)


def masked_fill(x: Tensor, mask, value: float) -> Tensor:
    """Replace entries where mask is True; their gradient is zero."""
    m = np.broadcast_to(np.asarray(mask, dtype=bool), x.data.shape)
    out_data = np.where(m, np.float64(value), x.data)

    def backward(g):
        _acc(x, np.where(m, 0.0, g))

    return _make(out_data, (x,), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted-scaling dropout. Callers skip the call entirely in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return x * 1.0
    keep = rng.random(x.data.shape) >= p
    scale = 1.0 / (1.0 - p)

    def backward(g):
        _acc(x, g * keep * scale)

    return _make(x.data * keep * scale, (x,), backward)


def relu(x: Tensor) -> Tensor:
    # Composed: masked fill already has the exact ReLU subgradient.
    return masked_fill(x, x.data <= 0.0, 0.0)
