"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` when at
least one input requires a gradient. Outside a tape every op is a plain
numpy computation, which keeps evaluation cheap.

    >>> w = Parameter(np.ones((2, 2)))
    >>> with Tape() as tape:
    ...     loss = sum_over_axes(matmul(w, Tensor(np.eye(2))))
    >>> tape.backward(loss)[w]
    array([[1., 1.],
           [1., 1.]])
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "ContractError",
    "NumericError",
    "Tensor",
    "Parameter",
    "Tape",
    "backward",
    "matmul",
    "channel_mix",
    "conv2d",
    "max_pool_over_axis",
    "reciprocal",
    "max_pool2d",
    "mean_pool_over_axes",
    "sum_over_axes",
    "add",
    "sub",
    "mul",
    "scale",
    "leaky_relu",
    "relu",
    "sqrt",
    "softmax",
    "log_softmax",
    "concat",
    "broadcast_repeat",
    "reshape",
    "transpose",
    "take",
    "detach",
    "numeric_gradient",
]


class DimensionError(ValueError):
    """Shapes do not satisfy an operation's contract."""


class ContractError(ValueError):
    """A precondition other than shape agreement was violated."""


class NumericError(FloatingPointError):
    """An operation produced NaN or Inf."""


_ids = itertools.count()


class Tensor:
    """Immutable n-d array of float64 values.

    ``requires_grad`` marks leaves whose gradient is wanted; op outputs
    inherit it when any input has it and a tape is recording.
    """

    __slots__ = ("_data", "requires_grad", "name", "id")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, name or "tensor")
        arr.flags.writeable = False
        self._data = arr
        self.requires_grad = requires_grad
        self.name = name
        self.id = next(_ids)

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        t._data = arr
        t.requires_grad = requires_grad
        t.name = None
        t.id = next(_ids)
        return t

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def numpy(self) -> np.ndarray:
        return np.array(self._data)

    def item(self) -> float:
        if self._data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self._data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Trainable leaf. The only tensor kind whose values may be replaced."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)

    def assign(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.shape:
            raise DimensionError(f"cannot assign {values.shape} into parameter {self.name} {self.shape}")
        _check_finite(values, self.name or "parameter")
        arr = np.array(values)
        arr.flags.writeable = False
        self._data = arr


@dataclass
class TapeNode:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_active: list["Tape"] = []


class Tape:
    """Ordered record of differentiable ops executed inside a ``with`` block."""

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __enter__(self) -> "Tape":
        _active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active.remove(self)

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        return backward(self, loss)


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse sweep over ``tape``; returns gradients for every leaf that requires one.

    Each node is visited once, newest first. Leaves that the loss does not
    depend on get no entry.
    """
    if loss.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.id: np.ones(loss.shape)}
    produced = {node.output.id for node in tape.nodes}
    leaves: dict[int, Tensor] = {}
    if loss.requires_grad and loss.id not in produced:
        leaves[loss.id] = loss
    for node in reversed(tape.nodes):
        g = grads.pop(node.output.id, None)
        if g is None:
            continue
        for inp, ig in zip(node.inputs, node.backward(g)):
            if ig is None or not inp.requires_grad:
                continue
            if inp.id not in produced:
                leaves[inp.id] = inp
            if inp.id in grads:
                grads[inp.id] = grads[inp.id] + ig
            else:
                grads[inp.id] = ig
    return {leaves[i]: grads[i] for i in leaves if i in grads}


def _check_finite(arr: np.ndarray, what: str) -> None:
    # a NaN or inf anywhere makes the sum non-finite; cheaper than a full isfinite mask
    if not np.isfinite(arr.sum()) and not np.isfinite(arr).all():
        raise NumericError(f"non-finite values in {what}")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, inputs: tuple[Tensor, ...], out: np.ndarray, bwd) -> Tensor:
    out = np.asarray(out)
    _check_finite(out, op)
    out.flags.writeable = False
    if _active and any(t.requires_grad for t in inputs):
        result = Tensor._wrap(out, requires_grad=True)
        _active[-1].nodes.append(TapeNode(op, inputs, result, bwd))
        return result
    return Tensor._wrap(out)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ (use broadcast_repeat)")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def scale(x: Tensor, c: float) -> Tensor:
    return _emit("scale", (x,), x.data * c, lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _emit("matmul", (a, b), ad @ bd, lambda g: (g @ bd.T, ad.T @ g))


def channel_mix(x: Tensor, w: Tensor) -> Tensor:
    """Per-position linear map over axis 1: ``(B, C_in, ...)`` with ``w`` (C_out, C_in)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim < 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"channel_mix: cannot apply {w.shape} to {x.shape}")
    B, C = x.shape[:2]
    rest = x.shape[2:]
    xd = x.data.reshape(B, C, -1)
    wd = w.data
    out = np.matmul(wd, xd).reshape((B, wd.shape[0]) + rest)

    def bwd(g):
        g3 = np.ascontiguousarray(g).reshape(B, wd.shape[0], -1)
        dw = np.tensordot(g3, xd, axes=([0, 2], [0, 2]))
        dx = np.matmul(wd.T, g3).reshape(x.shape) if x.requires_grad else None
        return dx, dw

    return _emit("channel_mix", (x, w), out, bwd)


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _conv_columns(x: Tensor, kernel: Tensor, xd: np.ndarray, ph: int, batched: bool) -> Tensor:
    """Stride-1 ``kh x 1`` convolution as one batched matmul per kernel row.

    Shifting along H keeps each (H, W) slab contiguous, so no patch copies are needed.
    """
    B, C, H, W = xd.shape
    O, _, kh, _ = kernel.shape
    wd = np.ascontiguousarray(kernel.data[:, :, :, 0].transpose(2, 0, 1))  # (kh, O, C)
    Ho = H + 2 * ph - kh + 1
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (0, 0))) if ph else xd
    out = np.zeros((B, O, Ho * W))
    for t in range(kh):
        out += np.matmul(wd[t], xp[:, :, t:t + Ho].reshape(B, C, Ho * W))
    out = out.reshape(B, O, Ho, W)

    def bwd(g):
        gb = np.ascontiguousarray(g if batched else g[None]).reshape(B, O, Ho * W)
        dw = np.empty(kernel.shape)
        for t in range(kh):
            sl = xp[:, :, t:t + Ho].reshape(B, C, Ho * W)
            dw[:, :, t, 0] = np.matmul(gb, sl.transpose(0, 2, 1)).sum(axis=0)
        if not x.requires_grad:
            return None, dw
        back = np.matmul(wd.transpose(0, 2, 1).reshape(kh * C, O), gb).reshape(B, kh, C, Ho, W)
        dxp = np.zeros(xp.shape)
        for t in range(kh):
            dxp[:, :, t:t + Ho] += back[:, t]
        dx = dxp[:, :, ph:ph + H]
        return (dx if batched else dx[0]), dw

    return _emit("conv2d", (x, kernel), out if batched else out[0], bwd)


def conv2d(x: Tensor, kernel: Tensor, stride=1, pad=0) -> Tensor:
    """Cross-correlation of ``C_in x H x W`` (or batched ``B x C_in x H x W``) input.

    ``stride`` and ``pad`` take an int or an ``(h, w)`` pair; padding is zeros.
    """
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    batched = x.ndim == 4
    if x.ndim not in (3, 4) or kernel.ndim != 4:
        raise DimensionError(f"conv2d: bad ranks {x.shape}, {kernel.shape}")
    xd = x.data if batched else x.data[None]
    wd = kernel.data
    B, C, H, W = xd.shape
    O, Ci, kh, kw = wd.shape
    if Ci != C:
        raise DimensionError(f"conv2d: input has {C} channels, kernel expects {Ci}")
    Hp, Wp = H + 2 * ph, W + 2 * pw
    if kh > Hp or kw > Wp:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    if (Hp - kh) % sh or (Wp - kw) % sw:
        raise DimensionError(f"conv2d: non-integral output size for {Hp}x{Wp}, kernel {kh}x{kw}, stride {sh}x{sw}")
    Ho, Wo = (Hp - kh) // sh + 1, (Wp - kw) // sw + 1
    if kw == 1 and pw == 0 and sh == sw == 1:
        return _conv_columns(x, kernel, xd, ph, batched)
    # im2col with rows ordered (kh, kw, C) and columns (B, Ho, Wo)
    xc = xd.transpose(1, 0, 2, 3)
    if ph or pw:
        xc = np.pad(xc, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((kh, kw, C, B, Ho, Wo))
    for i in range(kh):
        for j in range(kw):
            cols[i, j] = xc[:, :, i:i + sh * (Ho - 1) + 1:sh, j:j + sw * (Wo - 1) + 1:sw]
    cols = cols.reshape(kh * kw * C, B * Ho * Wo)
    w2 = wd.transpose(0, 2, 3, 1).reshape(O, kh * kw * C)
    out = (w2 @ cols).reshape(O, B, Ho, Wo).transpose(1, 0, 2, 3)
    out = np.ascontiguousarray(out) if batched else out[0]

    def bwd(g):
        gb = g if batched else g[None]
        g2 = np.ascontiguousarray(gb.transpose(1, 0, 2, 3)).reshape(O, B * Ho * Wo)
        dw = (g2 @ cols.T).reshape(O, kh, kw, C).transpose(0, 3, 1, 2)
        if not x.requires_grad:
            return None, dw
        dcols = (w2.T @ g2).reshape(kh, kw, C, B, Ho, Wo)
        dxc = np.zeros((C, B, Hp, Wp))
        for i in range(kh):
            for j in range(kw):
                dxc[:, :, i:i + sh * (Ho - 1) + 1:sh, j:j + sw * (Wo - 1) + 1:sw] += dcols[i, j]
        dx = dxc[:, :, ph:ph + H, pw:pw + W].transpose(1, 0, 2, 3)
        return (dx if batched else dx[0]), dw

    return _emit("conv2d", (x, kernel), out, bwd)


def _axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


def max_pool_over_axis(x: Tensor, axis: int) -> Tensor:
    """Max over one axis (removed). Gradient goes to the lowest-index maximum."""
    axis = _axis(x, axis)
    if x.shape[axis] == 0:
        raise DimensionError("max pool over empty axis")
    idx = np.argmax(x.data, axis=axis)
    idx = np.expand_dims(idx, axis)
    out = np.take_along_axis(x.data, idx, axis=axis).squeeze(axis)
    shape = x.shape

    def bwd(g):
        pos = np.arange(shape[axis]).reshape((-1,) + (1,) * (len(shape) - axis - 1))
        return (np.where(pos == idx, np.expand_dims(g, axis), 0.0),)

    return _emit("max_pool", (x,), out, bwd)


def max_pool2d(x: Tensor, factor: int = 2) -> Tensor:
    """Non-overlapping ``factor x factor`` max pooling over the last two axes.

    Window cells are scanned row-major; gradient goes to the first maximum.
    """
    *lead, H, W = x.shape
    if H % factor or W % factor:
        raise DimensionError(f"max_pool2d: {H}x{W} not divisible by {factor}")
    xd = x.data
    if not x.requires_grad:
        best = xd.reshape(tuple(lead) + (H // factor, factor, W // factor, factor)).max(axis=(-3, -1))
        return _emit("max_pool2d", (x,), best, lambda g: (None,))
    best = xd[..., 0::factor, 0::factor]
    choice = np.zeros(best.shape, dtype=np.int8)
    for c in range(1, factor * factor):
        cand = xd[..., c // factor::factor, c % factor::factor]
        better = cand > best
        best = np.where(better, cand, best)
        choice[better] = c
    shape = x.shape

    def bwd(g):
        gx = np.zeros(shape)
        for c in range(factor * factor):
            gx[..., c // factor::factor, c % factor::factor] = np.where(choice == c, g, 0.0)
        return (gx,)

    return _emit("max_pool2d", (x,), np.array(best), bwd)


def _axes(x: Tensor, axes) -> tuple[int, ...]:
    if isinstance(axes, int):
        axes = (axes,)
    out = tuple(sorted({_axis(x, a) for a in axes}))
    for a in out:
        if x.shape[a] == 0:
            raise DimensionError("pooling over empty axis")
    return out


def sum_over_axes(x: Tensor, axes=None) -> Tensor:
    axes = tuple(range(x.ndim)) if axes is None else _axes(x, axes)
    shape = x.shape
    out = x.data.sum(axis=axes)
    return _emit("sum", (x,), np.asarray(out), lambda g: (np.broadcast_to(np.expand_dims(g, axes), shape),))


def mean_pool_over_axes(x: Tensor, axes=None) -> Tensor:
    axes = tuple(range(x.ndim)) if axes is None else _axes(x, axes)
    shape = x.shape
    count = int(np.prod([shape[a] for a in axes]))
    out = x.data.mean(axis=axes)
    return _emit("mean", (x,), np.asarray(out),
                 lambda g: (np.broadcast_to(np.expand_dims(g, axes) / count, shape),))


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    if not 0 <= slope <= 1:
        raise ContractError("leaky_relu slope must lie in [0, 1]")
    factor = np.where(x.data > 0, 1.0, slope)
    return _emit("leaky_relu", (x,), x.data * factor, lambda g: (g * factor,))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _emit("relu", (x,), np.where(pos, x.data, 0.0), lambda g: (np.where(pos, g, 0.0),))


def sqrt(x: Tensor) -> Tensor:
    """Square root; the gradient at exactly zero is taken as zero."""
    if (x.data < 0).any():
        raise NumericError("sqrt of negative value")
    out = np.sqrt(x.data)
    safe = np.where(out > 0, out, 1.0)
    return _emit("sqrt", (x,), out, lambda g: (np.where(out > 0, g / (2 * safe), 0.0),))


def reciprocal(x: Tensor) -> Tensor:
    if (x.data == 0).any():
        raise NumericError("reciprocal of zero")
    out = 1.0 / x.data
    return _emit("reciprocal", (x,), out, lambda g: (-g * out * out,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _axis(x, axis)
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)
    return _emit("softmax", (x,), y, lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _axis(x, axis)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    p = np.exp(y)
    return _emit("log_softmax", (x,), y, lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise DimensionError("concat of nothing")
    axis = _axis(tensors[0], axis)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise DimensionError(f"concat: incompatible shapes {ref} and {t.shape} on axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _emit("concat", tensors, out, lambda g: tuple(np.split(g, bounds, axis=axis)))


def broadcast_repeat(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Repeat size-1 axes of ``x`` to reach ``shape``; ranks must match."""
    shape = tuple(int(s) for s in shape)
    if len(shape) != x.ndim or any(a != 1 and a != b for a, b in zip(x.shape, shape)):
        raise DimensionError(f"broadcast_repeat: cannot repeat {x.shape} to {shape}")
    axes = tuple(i for i, (a, b) in enumerate(zip(x.shape, shape)) if a == 1 and b != 1)
    out = np.broadcast_to(x.data, shape)
    return _emit("broadcast", (x,), out, lambda g: (g.sum(axis=axes, keepdims=True),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"reshape: {x.shape} -> {shape}")
    old = x.shape
    return _emit("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose: bad permutation {axes} for rank {x.ndim}")
    inv = tuple(np.argsort(axes))
    return _emit("transpose", (x,), x.data.transpose(axes), lambda g: (g.transpose(inv),))


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate gradient."""
    axis = _axis(x, axis)
    idx = np.asarray(indices, dtype=np.intp)
    shape = x.shape

    def bwd(g):
        gx = np.zeros(shape)
        np.add.at(gx, (slice(None),) * axis + (idx,), g)
        return (gx,)

    return _emit("take", (x,), np.take(x.data, idx, axis=axis), bwd)


def detach(x: Tensor) -> Tensor:
    return Tensor._wrap(x.data)


def numeric_gradient(f: Callable[[], Tensor], param: Parameter, eps: float = 1e-5,
                     indices: Sequence[tuple[int, ...]] | None = None) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. entries of ``param``.

    With ``indices`` only those entries are probed; the rest of the result is NaN.
    """
    base = param.data.copy()
    out = np.full(base.shape, np.nan)
    todo = list(np.ndindex(base.shape)) if indices is None else [tuple(i) for i in indices]
    try:
        for ix in todo:
            bumped = base.copy()
            bumped[ix] = base[ix] + eps
            param.assign(bumped)
            fp = f().item()
            bumped[ix] = base[ix] - eps
            param.assign(bumped)
            fm = f().item()
            out[ix] = (fp - fm) / (2 * eps)
    finally:
        param.assign(base)
    return out
