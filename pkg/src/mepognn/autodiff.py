"""Dense float64 arrays with tape-based reverse-mode differentiation.

A :class:`Tape` records every primitive applied to values that require a
gradient while it is active.  ``tape.backward(loss)`` replays the record in
reverse and accumulates gradients into the :class:`Parameter` leaves.  The
tape is rebuilt on every forward pass, so graphs whose length changes from
step to step (curriculum rollouts) need no special handling.

    with Tape() as tape:
        loss = ((w @ x) - y).abs().mean()
    tape.backward(loss)
    w.grad  # d loss / d w
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class ContractError(ValueError):
    """Raised when an operation is called outside its documented contract."""


class NumericDomainError(ArithmeticError):
    """Raised on non-finite values where finite ones are required."""


_ACTIVE: list["Tape"] = []


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=DTYPE)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array node.  Arithmetic on tensors is recorded on the active tape."""

    __array_priority__ = 1000
    __slots__ = ("value", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = _as_array(value)
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"<Tensor{tag} shape={self.shape} requires_grad={self.requires_grad}>"

    # operators -------------------------------------------------------------
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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def abs(self):
        return tabs(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


class Parameter(Tensor):
    """A trainable leaf with a persistent gradient buffer."""

    __slots__ = ("grad", "trainable")

    def __init__(self, value, name: str | None = None, trainable: bool = True):
        super().__init__(value, requires_grad=trainable, name=name)
        self.value = np.ascontiguousarray(self.value)
        self.trainable = trainable
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)


class Tape:
    """Ordered record of primitive operations for one forward pass."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor, params: Iterable[Parameter] | None = None) -> None:
        """Accumulate d(loss)/d(param) into ``param.grad`` for every leaf reached."""
        if not isinstance(loss, Tensor) or loss.value.size != 1:
            raise ContractError("backward needs a scalar loss tensor")
        if params is not None:
            for p in params:
                p.zero_grad()
        if not loss.requires_grad:
            return
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if isinstance(parent, Parameter):
                    parent.grad = parent.grad + pg
                elif id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg


def backward(loss: Tensor, params: Iterable[Parameter] | None = None, tape: Tape | None = None) -> None:
    """Replay ``tape`` (default: innermost active tape) backward from ``loss``."""
    if tape is None:
        if not _ACTIVE:
            raise ContractError("no tape recorded this loss")
        tape = _ACTIVE[-1]
    tape.backward(loss, params)


def tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(value: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    out = Tensor(value)
    if _ACTIVE and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = backward_fn
        _ACTIVE[-1].nodes.append(out)
    return out


# elementwise arithmetic ----------------------------------------------------

def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.value + b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.value - b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    av, bv = a.value, b.value
    return _record(av * bv, (a, b),
                   lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    av, bv = a.value, b.value
    out = av / bv
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g / bv, av.shape),
                              _unbroadcast(-g * out / bv, bv.shape)))


def tanh(x) -> Tensor:
    x = tensor(x)
    y = np.tanh(x.value)
    return _record(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x) -> Tensor:
    x = tensor(x)
    v = x.value
    # split by sign to avoid overflow in exp
    e = np.exp(-np.abs(v))
    y = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record(y, (x,), lambda g: (g * y * (1.0 - y),))


def softplus(x) -> Tensor:
    """log(1 + exp(x)), computed stably."""
    x = tensor(x)
    v = x.value
    y = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))
    e = np.exp(-np.abs(v))
    s = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record(y, (x,), lambda g: (g * s,))


def exp(x) -> Tensor:
    x = tensor(x)
    y = np.exp(x.value)
    return _record(y, (x,), lambda g: (g * y,))


def relu(x) -> Tensor:
    x = tensor(x)
    mask = x.value > 0
    return _record(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def tabs(x) -> Tensor:
    x = tensor(x)
    sign = np.sign(x.value)
    return _record(np.abs(x.value), (x,), lambda g: (g * sign,))


def minimum(a, b) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = tensor(a), tensor(b)
    take_a = a.value <= b.value
    out = np.where(take_a, a.value, b.value)
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g * take_a, a.shape),
                              _unbroadcast(g * ~take_a, b.shape)))


# reductions and shape ------------------------------------------------------

def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = tensor(x)
    shape = x.shape
    out = x.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(out, (x,), bw)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = tensor(x)
    if axis is None:
        count = x.value.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return tsum(x, axis, keepdims) * (1.0 / count)


def reshape(x, shape) -> Tensor:
    x = tensor(x)
    old = x.shape
    return _record(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes=None) -> Tensor:
    x = tensor(x)
    out = np.transpose(x.value, axes)
    inv = None if axes is None else np.argsort(axes)
    return _record(out, (x,), lambda g: (np.transpose(g, inv),))


def swapaxes(x, a1: int, a2: int) -> Tensor:
    x = tensor(x)
    return _record(np.swapaxes(x.value, a1, a2), (x,), lambda g: (np.swapaxes(g, a1, a2),))


def expand_dims(x, axis: int) -> Tensor:
    x = tensor(x)
    old = x.shape
    return _record(np.expand_dims(x.value, axis), (x,), lambda g: (g.reshape(old),))


def getitem(x, index) -> Tensor:
    x = tensor(x)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape, dtype=DTYPE)
        if _fancy(index):
            np.add.at(full, index, g)
        else:
            full[index] += g
        return (full,)

    return _record(x.value[index], (x,), bw)


def _fancy(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def concat(items: Sequence, axis: int = -1) -> Tensor:
    items = [tensor(t) for t in items]
    out = np.concatenate([t.value for t in items], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in items])[:-1]
    return _record(out, tuple(items), lambda g: tuple(np.split(g, sizes, axis=axis)))


def stack(items: Sequence, axis: int = 0) -> Tensor:
    items = [tensor(t) for t in items]
    out = np.stack([t.value for t in items], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(items)))

    return _record(out, tuple(items), bw)


# linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting (both operands rank >= 2)."""
    a, b = tensor(a), tensor(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2:
        raise ContractError("matmul operands must be at least rank 2")

    def bw(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _record(av @ bv, (a, b), bw)


def einsum(spec: str, a, b) -> Tensor:
    """Two-operand einsum.  Every input index must appear in the other operand or the output."""
    a, b = tensor(a), tensor(b)
    ins, out_sub = spec.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    for own, other in ((sa, sb), (sb, sa)):
        if any(c not in other and c not in out_sub for c in own):
            raise ContractError(f"einsum index summed within one operand: {spec}")
    av, bv = a.value, b.value
    return _record(np.einsum(spec, av, bv), (a, b),
                   lambda g: (np.einsum(f"{out_sub},{sb}->{sa}", g, bv),
                              np.einsum(f"{out_sub},{sa}->{sb}", g, av)))


def softmax(x, axis: int = -1) -> Tensor:
    x = tensor(x)
    v = x.value
    if not np.all(np.isfinite(v)):
        raise NumericDomainError("softmax input contains non-finite values")
    z = np.exp(v - v.max(axis=axis, keepdims=True))
    y = z / z.sum(axis=axis, keepdims=True)
    return _record(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def softmax_rows(m) -> Tensor:
    """Row-wise softmax of a rank-2 array."""
    m = tensor(m)
    if m.ndim != 2:
        raise ContractError(f"softmax_rows expects rank 2, got shape {m.shape}")
    return softmax(m, axis=1)


def conv1d(x, kernel, dilation: int = 1) -> Tensor:
    """Dilated causal convolution along the second-to-last axis, no padding.

    ``x`` is ``(..., T, C_in)`` and ``kernel`` is ``(K, C_in, C_out)``.  The
    output is ``(..., T - (K - 1) * dilation, C_out)`` where output step ``t``
    sees input steps ``t, t + d, ..., t + (K - 1) d``.
    """
    x, kernel = tensor(x), tensor(kernel)
    xv, wv = x.value, kernel.value
    k = wv.shape[0]
    t_in = xv.shape[-2]
    t_out = t_in - (k - 1) * dilation
    if t_out < 1:
        raise ContractError(f"sequence of length {t_in} too short for kernel {k} dilation {dilation}")
    out = xv[..., 0:t_out, :] @ wv[0]
    for j in range(1, k):
        s = j * dilation
        out = out + xv[..., s:s + t_out, :] @ wv[j]

    def bw(g):
        gx = np.zeros_like(xv)
        gw = np.empty_like(wv)
        flat_g = g.reshape(-1, g.shape[-1])
        for j in range(k):
            s = j * dilation
            gx[..., s:s + t_out, :] += g @ wv[j].T
            gw[j] = xv[..., s:s + t_out, :].reshape(-1, xv.shape[-1]).T @ flat_g
        return gx, gw

    return _record(out, (x, kernel), bw)


# gradient checking ---------------------------------------------------------

@dataclass
class GradCheckEntry:
    name: str
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: float
    failed: bool


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry] = field(default_factory=list)
    tol: float = 1e-4

    @property
    def ok(self) -> bool:
        return not any(e.failed for e in self.entries)

    @property
    def max_error(self) -> float:
        return max((e.rel_error for e in self.entries), default=0.0)

    def summary(self) -> str:
        lines = [f"{e.name:<28s} rel_err={e.rel_error:.3e} {'FAIL' if e.failed else 'ok'}"
                 for e in self.entries]
        return "\n".join(lines)


class NonDeterministicForward(RuntimeError):
    pass


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest elementwise deviation scaled by the block's gradient magnitude."""
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


def grad_check(forward: Callable[[], Tensor], params: Sequence[Parameter],
               step: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare tape gradients with central finite differences for each parameter block.

    ``forward`` must rebuild the scalar loss from the current parameter values
    and be deterministic; two evaluations that disagree bit-for-bit refuse the check.
    """
    first = forward().item()
    second = forward().item()
    if not (first == second or (math.isnan(first) and math.isnan(second))):
        raise NonDeterministicForward(
            f"forward returned {first!r} then {second!r}; seed all randomness before checking")

    with Tape() as tape:
        loss = forward()
    tape.backward(loss, params)
    report = GradCheckReport(tol=tol)
    for i, p in enumerate(params):
        analytic = p.grad.copy()
        numeric = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        num_flat = numeric.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = forward().item()
            flat[k] = orig - step
            down = forward().item()
            flat[k] = orig
            num_flat[k] = (up - down) / (2.0 * step)
        err = relative_error(analytic, numeric)
        report.entries.append(GradCheckEntry(p.name or f"param{i}", analytic, numeric, err, err > tol))
    return report
