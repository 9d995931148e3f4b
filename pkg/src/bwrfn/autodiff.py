"""Minimal tape-based reverse-mode autodiff over dense float64 tensors.

Tensors wrap numpy arrays. When a :class:`Tape` is active, every primitive
records its parents and a backward closure; :func:`backward` replays the
recording in reverse topological order and writes gradients into every
reachable :class:`Parameter`. One training step uses one tape; a tape is
confined to a single thread. Evaluation with no active tape traces nothing
and is safe to run in parallel.

Broadcasting is deliberately restricted:
  * scalars broadcast against anything;
  * a rank-1 vector of length F against a rank-4 (N, C, F, T) tensor is
    aligned to the frequency axis and expanded over N, C and T;
  * otherwise operands follow numpy's trailing-axis rule (size-1 axes
    stretch), which covers mean/variance subtraction with kept axes and
    bias addition.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError, UsageError

_state = threading.local()


def _active_tape():
    return getattr(_state, "tape", None)


class Tape:
    """Recording context for one differentiation pass."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        if _active_tape() is not None:
            raise UsageError("a tape is already active on this thread")
        _state.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _state.tape = None
        return False

    def clear(self):
        for t in self.nodes:
            t._parents = ()
            t._bwd = None
        self.nodes.clear()


class Tensor:
    """Dense float64 array, immutable by convention."""

    __slots__ = ("data", "_parents", "_bwd")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self._parents: tuple[Tensor, ...] = ()
        self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # -- operator sugar --------------------------------------------------
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

    def __pow__(self, p):
        return pow_scalar(self, p)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Named leaf tensor with a gradient buffer.

    ``decay`` marks whether the optimizer applies weight decay; variational
    posterior parameters opt out (their prior lives in the KL term).
    """

    __slots__ = ("name", "grad", "decay")

    def __init__(self, data, name: str, decay: bool = True):
        super().__init__(np.array(data, dtype=np.float64))
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.decay = decay

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, parents: tuple[Tensor, ...], bwd) -> Tensor:
    tape = _active_tape()
    if tape is not None:
        out._parents = parents
        out._bwd = bwd
        tape.nodes.append(out)
    return out


def _align(b_data: np.ndarray, a_shape: tuple[int, ...]):
    """Resolve the restricted broadcast of ``b`` against shape ``a_shape``.

    Returns (effective b array, restore) where restore maps a gradient of
    shape ``a_shape`` back to ``b``'s original shape.
    """
    b_shape = b_data.shape
    if b_shape == a_shape:
        return b_data, lambda g: g
    if b_data.ndim == 0:
        return b_data, lambda g: np.asarray(g.sum())
    if len(a_shape) == 4 and b_data.ndim == 1 and b_shape[0] == a_shape[2]:
        # per-frequency vector over (N, C, F, T)
        eff = b_data.reshape(1, 1, -1, 1)
        return eff, lambda g: g.sum(axis=(0, 1, 3))
    if b_data.ndim <= len(a_shape):
        pad = (1,) * (len(a_shape) - b_data.ndim) + b_shape
        ok = all(p == s or p == 1 for p, s in zip(pad, a_shape))
        if ok:
            eff = b_data.reshape(pad)
            axes = tuple(i for i, p in enumerate(pad) if p == 1 and a_shape[i] != 1)

            def restore(g, axes=axes, pad=pad, b_shape=b_shape):
                if axes:
                    g = g.sum(axis=axes, keepdims=True)
                return g.reshape(b_shape)

            return eff, restore
    raise ShapeError(f"cannot broadcast shape {b_shape} against {a_shape}")


def _identity(g):
    return g


def _binary(a, b, fwd, bwd_a, bwd_b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.data.shape == b.data.shape:
        out_shape = a.data.shape
        a_eff, restore_a = a.data, _identity
        b_eff, restore_b = b.data, _identity
    else:
        try:
            out_shape = a.data.shape
            a_eff, restore_a = a.data, _identity
            b_eff, restore_b = _align(b.data, out_shape)
        except ShapeError:
            out_shape = b.data.shape
            a_eff, restore_a = _align(a.data, out_shape)
            b_eff, restore_b = b.data, _identity
    ax = np.broadcast_to(a_eff, out_shape)
    bx = np.broadcast_to(b_eff, out_shape)
    out = Tensor(fwd(ax, bx))
    bwd = lambda g: (restore_a(bwd_a(g, ax, bx)), restore_b(bwd_b(g, ax, bx)))
    return _record(out, (a, b), bwd)


def add(a, b) -> Tensor:
    return _binary(a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary(
        a,
        b,
        np.divide,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
    )


def pow_scalar(a, p: float) -> Tensor:
    a = _as_tensor(a)
    p = float(p)
    out = Tensor(a.data**p)
    return _record(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.exp(a.data))
    return _record(out, (a,), lambda g: (g * out.data,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.sqrt(a.data))
    return _record(out, (a,), lambda g: (g * 0.5 / out.data,))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # numerically stable logistic
    s = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-a.data)),
                 np.exp(np.clip(a.data, None, 0)) / (1.0 + np.exp(np.clip(a.data, None, 0))))
    out = Tensor(s)
    return _record(out, (a,), lambda g: (g * s * (1.0 - s),))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0
    return _record(out, (a,), lambda g: (g * mask,))


def _check_axes(a: Tensor, axes):
    if axes is None:
        axes = tuple(range(a.data.ndim))
    axes = tuple(sorted(int(ax) for ax in axes))
    for ax in axes:
        if ax < 0 or ax >= a.data.ndim:
            raise ShapeError(f"axis {ax} invalid for rank {a.data.ndim}")
    count = int(np.prod([a.data.shape[ax] for ax in axes])) if axes else 0
    if count == 0:
        raise DomainError("reduction over an empty extent")
    return axes, count


def reduce_sum(a, axes=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes, _ = _check_axes(a, axes)
    out = Tensor(a.data.sum(axis=axes, keepdims=keepdims))

    def bwd(g):
        gk = g if keepdims else np.expand_dims(g, axes)
        return (np.broadcast_to(gk, a.data.shape).copy(),)

    return _record(out, (a,), bwd)


def reduce_mean(a, axes=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes, count = _check_axes(a, axes)
    out = Tensor(a.data.mean(axis=axes, keepdims=keepdims))

    def bwd(g):
        gk = g if keepdims else np.expand_dims(g, axes)
        return (np.broadcast_to(gk / count, a.data.shape).copy(),)

    return _record(out, (a,), bwd)


def reduce_var(a, axes=None, keepdims: bool = False) -> Tensor:
    """Population variance (divide by the count, not count - 1)."""
    a = _as_tensor(a)
    _check_axes(a, axes)
    centered = sub(a, reduce_mean(a, axes, keepdims=True))
    return reduce_mean(mul(centered, centered), axes, keepdims=keepdims)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.data.shape),))


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis; backward scatters into zeros."""
    a = _as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(a.data[idx].copy())

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _record(out, (a,), bwd)


def matmul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects two rank-2 tensors")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data)
    return _record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv2d(x, kernels, stride=1, padding=0) -> Tensor:
    """Cross-correlation of (N, C, F, T) input with (C_out, C, kF, kT) kernels."""
    x = _as_tensor(x)
    k = _as_tensor(kernels)
    if x.data.ndim != 4 or k.data.ndim != 4:
        raise ShapeError("conv2d expects rank-4 input and kernels")
    if x.data.shape[1] != k.data.shape[1]:
        raise ShapeError(
            f"channel mismatch: input has {x.data.shape[1]}, kernels expect {k.data.shape[1]}"
        )
    sF, sT = _pair(stride)
    pF, pT = _pair(padding)
    n, c, f, t = x.data.shape
    co, _, kf, kt = k.data.shape
    of = (f + 2 * pF - kf) // sF + 1
    ot = (t + 2 * pT - kt) // sT + 1
    if of < 1 or ot < 1:
        raise ShapeError("kernel does not fit padded input")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pF, pF), (pT, pT)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kf, kt), axis=(2, 3))
    win = win[:, :, ::sF, ::sT]  # (N, C, oF, oT, kF, kT)
    out = np.tensordot(win, k.data, axes=([1, 4, 5], [1, 2, 3]))  # (N, oF, oT, Cout)
    out = Tensor(np.ascontiguousarray(out.transpose(0, 3, 1, 2)))

    def bwd(g):
        gk = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # (Cout, C, kF, kT)
        gxp = np.zeros_like(xp)
        # scatter g * kernels back onto the padded input, one tap at a time
        contrib = np.einsum("noij,ochw->ncijhw", g, k.data)
        for h in range(kf):
            for w in range(kt):
                gxp[:, :, h : h + of * sF : sF, w : w + ot * sT : sT] += contrib[
                    :, :, :, :, h, w
                ]
        gx = gxp[:, :, pF : pF + f, pT : pT + t]
        return (gx, gk)

    return _record(out, (x, k), bwd)


def cross_entropy_with_logits(logits, labels) -> Tensor:
    """Mean softmax cross-entropy over the batch. ``labels`` are int class ids."""
    from .errors import DataError

    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.ndim != 1 or labels.shape[0] != logits.data.shape[0]:
        raise ShapeError("expected (N, S) logits and (N,) labels")
    n, s = logits.data.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= s:
        raise DataError(f"label out of range [0, {s})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float((lse - z[np.arange(n), labels]).mean())
    out = Tensor(loss)

    def bwd(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(n), labels] -= 1.0
        return (g * p / n,)

    return _record(out, (logits,), bwd)


def backward(loss: Tensor) -> None:
    """Accumulate d loss / d p into ``p.grad`` for every reachable Parameter.

    The active (or recorded) tape is cleared afterward; gradients overwrite
    any previous contents of ``.grad``.
    """
    if loss.data.shape != ():
        raise UsageError("backward expects a scalar loss")
    if loss._bwd is None and not isinstance(loss, Parameter):
        raise UsageError("backward on an untraced tensor")
    # reverse topological order via iterative DFS
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None or node._bwd is None:
            if isinstance(node, Parameter) and g is not None:
                node.grad = np.asarray(g, dtype=np.float64).reshape(node.data.shape)
            continue
        parent_grads = node._bwd(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None:
                continue
            acc = grads.get(id(p))
            grads[id(p)] = pg if acc is None else acc + pg
        if isinstance(node, Parameter):
            node.grad = np.asarray(g, dtype=np.float64).reshape(node.data.shape)
    tape = _active_tape()
    if tape is not None:
        tape.clear()


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    worst_index: tuple
    analytic: float
    numeric: float
    finite: bool = True


@dataclass
class GradCheckReport:
    checks: list[ParamCheck] = field(default_factory=list)

    def max_error(self) -> float:
        return max((c.max_rel_err for c in self.checks), default=0.0)

    def passed(self, tol: float) -> bool:
        return all(c.finite and c.max_rel_err <= tol for c in self.checks)

    def lines(self, tol: float) -> list[str]:
        out = []
        for c in self.checks:
            status = "PASS" if (c.finite and c.max_rel_err <= tol) else "FAIL"
            out.append(
                f"{status}\t{c.name}\tmax_rel_err={c.max_rel_err:.3e}\t"
                f"worst={c.worst_index}\tanalytic={c.analytic:.9g}\tnumeric={c.numeric:.9g}"
            )
        return out


def gradcheck(f, params, h: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f()`` against central differences.

    ``f`` must be deterministic (stochastic layers run in fixed-noise mode).
    Relative error per coordinate is |analytic - numeric| /
    max(|analytic|, |numeric|, 1e-8). Non-finite values are reported, not
    raised.
    """
    params = list(params)
    for p in params:
        p.grad = np.zeros_like(p.data)
    with Tape():
        loss = f()
        backward(loss)
    analytic = {p.name: p.grad.copy() for p in params}

    report = GradCheckReport()
    for p in params:
        an = analytic[p.name]
        max_err = 0.0
        worst = ((), 0.0, 0.0)
        finite = bool(np.all(np.isfinite(an)))
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            a = float(an.reshape(-1)[i])
            if not (math.isfinite(num) and math.isfinite(a)):
                finite = False
                worst = (np.unravel_index(i, p.data.shape), a, num)
                max_err = float("inf")
                break
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            if err > max_err:
                max_err = err
                worst = (np.unravel_index(i, p.data.shape), a, num)
        report.checks.append(
            ParamCheck(
                name=p.name,
                max_rel_err=max_err,
                worst_index=worst[0],
                analytic=worst[1],
                numeric=worst[2],
                finite=finite,
            )
        )
    return report
