"""Differentiable operations over :class:`pyramidqa.tensor.Tensor`.

Every function computes its result eagerly with numpy (or a kernel
backend) and, when a tape is active and the output needs gradients,
records a closure implementing the exact reverse rule.  Elementwise
binary ops follow numpy broadcasting; their backward pass sums gradient
contributions over broadcast axes so shapes always round-trip.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError
from .tensor import Node, Tensor, active_tape

# Optional observer invoked with every softmax output (used by tests and
# diagnostics to audit row-stochasticity without touching call sites).
softmax_observer = None


def _as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b):
    """Coerce a binary op's operands, matching plain scalars to the
    tensor operand's dtype so float32 graphs stay float32."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, _as_tensor(b, a.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return _as_tensor(a, b.dtype), b
    return _as_tensor(a), _as_tensor(b)


def _record(op, inputs, out, backward_fn):
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.append(Node(op, inputs, out, backward_fn))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad)
    ash, bsh = a.data.shape, b.data.shape

    def bwd(g):
        return (_unbroadcast(g, ash) if a.requires_grad else None,
                _unbroadcast(g, bsh) if b.requires_grad else None)

    _record("add", (a, b), out, bwd)
    return out


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = Tensor(a.data - b.data, a.requires_grad or b.requires_grad)
    ash, bsh = a.data.shape, b.data.shape

    def bwd(g):
        return (_unbroadcast(g, ash) if a.requires_grad else None,
                _unbroadcast(-g, bsh) if b.requires_grad else None)

    _record("sub", (a, b), out, bwd)
    return out


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad)
    ad, bd = a.data, b.data

    def bwd(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    _record("mul", (a, b), out, bwd)
    return out


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(-a.data, a.requires_grad)
    _record("neg", (a,), out, lambda g: (-g,))
    return out


def scale(a, s: float) -> Tensor:
    """Multiply by a python scalar (recorded like any other op)."""
    a = _as_tensor(a)
    s = float(s)
    out = Tensor(a.data * np.asarray(s, dtype=a.dtype), a.requires_grad)
    _record("scale", (a,), out, lambda g: (g * np.asarray(s, dtype=g.dtype),))
    return out


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data), a.requires_grad or b.requires_grad)
    ad, bd = a.data, b.data

    def bwd(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, bd.swapaxes(-1, -2)), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(ad.swapaxes(-1, -2), g), bd.shape)
        return ga, gb

    _record("matmul", (a, b), out, bwd)
    return out


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    out = Tensor(a.data.reshape(shape), a.requires_grad)
    src = a.data.shape
    _record("reshape", (a,), out, lambda g: (g.reshape(src),))
    return out


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = Tensor(a.data.transpose(axes), a.requires_grad)
    _record("transpose", (a,), out, lambda g: (g.transpose(inverse),))
    return out


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice ``[start, start+length)`` along ``axis``."""
    a = _as_tensor(a)
    if start < 0 or start + length > a.shape[axis]:
        raise DimensionError(f"narrow [{start}:{start + length}) exceeds axis {axis} of {a.shape}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = Tensor(np.ascontiguousarray(a.data[index]), a.requires_grad)
    src_shape = a.data.shape

    def bwd(g):
        gx = np.zeros(src_shape, dtype=g.dtype)
        gx[index] = g
        return (gx,)

    _record("narrow", (a,), out, bwd)
    return out


def concat(parts: Sequence, axis: int) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    out = Tensor(out_data, any(p.requires_grad for p in parts))
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple(piece if p.requires_grad else None for piece, p in zip(pieces, parts))

    _record("concat", tuple(parts), out, bwd)
    return out


# ---------------------------------------------------------------------------
# reductions


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.sum(), a.requires_grad)
    shape, dtype = a.data.shape, a.data.dtype

    def bwd(g):
        return (np.broadcast_to(g.astype(dtype), shape).copy(),)

    _record("sum_all", (a,), out, bwd)
    return out


def sum_axis(a, axis: int, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), a.requires_grad)
    shape = a.data.shape

    def bwd(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    _record("sum_axis", (a,), out, bwd)
    return out


def mean_axis(a, axis: int, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.shape[axis]
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims), a.requires_grad)
    shape = a.data.shape

    def bwd(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return ((np.broadcast_to(gg, shape) / n).astype(g.dtype),)

    _record("mean_axis", (a,), out, bwd)
    return out


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def elu(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    neg_part = np.expm1(np.minimum(x, 0))
    out_data = np.where(x > 0, x, neg_part.astype(x.dtype))
    out = Tensor(out_data, a.requires_grad)

    def bwd(g):
        return (g * np.where(x > 0, np.ones((), dtype=x.dtype), (neg_part + 1).astype(x.dtype)),)

    _record("elu", (a,), out, bwd)
    return out


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor(y, a.requires_grad)
    _record("tanh", (a,), out, lambda g: (g * (1 - y * y),))
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x)))).astype(x.dtype)
    out = Tensor(y, a.requires_grad)
    _record("sigmoid", (a,), out, lambda g: (g * y * (1 - y),))
    return out


def maximum0(a) -> Tensor:
    """Hinge rectifier max(x, 0); subgradient at the kink is zero."""
    a = _as_tensor(a)
    x = a.data
    out = Tensor(np.maximum(x, 0), a.requires_grad)
    _record("maximum0", (a,), out, lambda g: (g * (x > 0),))
    return out


def rsqrt(a) -> Tensor:
    a = _as_tensor(a)
    y = 1.0 / np.sqrt(a.data)
    out = Tensor(y.astype(a.dtype), a.requires_grad)

    def bwd(g):
        return (g * (-0.5) * y * y * y,)

    _record("rsqrt", (a,), out, bwd)
    return out


# ---------------------------------------------------------------------------
# normalizations


def softmax_last(a) -> Tensor:
    """Numerically stable softmax over the last axis."""
    a = _as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y.astype(x.dtype), a.requires_grad)
    if softmax_observer is not None:
        softmax_observer(out.data)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - dot) * y,)

    _record("softmax_last", (a,), out, bwd)
    return out


def log_softmax_last(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    ls = shifted - lse
    out = Tensor(ls.astype(x.dtype), a.requires_grad)

    def bwd(g):
        return (g - np.exp(ls) * g.sum(axis=-1, keepdims=True),)

    _record("log_softmax_last", (a,), out, bwd)
    return out


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    if a.shape[-1] != gain.shape[-1] or a.shape[-1] != bias.shape[-1]:
        raise DimensionError(
            f"layer_norm feature extent mismatch: x {a.shape}, gain {gain.shape}, bias {bias.shape}")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = Tensor((y * gain.data + bias.data).astype(x.dtype),
                 a.requires_grad or gain.requires_grad or bias.requires_grad)
    gd = gain.data
    n = x.shape[-1]

    def bwd(g):
        red = tuple(range(g.ndim - 1))
        ggain = (g * y).sum(axis=red) if gain.requires_grad else None
        gbias = g.sum(axis=red) if bias.requires_grad else None
        gx = None
        if a.requires_grad:
            dy = g * gd
            gx = inv * (dy - dy.mean(axis=-1, keepdims=True)
                        - y * (dy * y).mean(axis=-1, keepdims=True))
            gx = gx.astype(g.dtype)
        return gx, ggain, gbias

    _record("layer_norm", (a, gain, bias), out, bwd)
    return out


# ---------------------------------------------------------------------------
# lookups


def embedding(table, ids: np.ndarray) -> Tensor:
    """Row lookup: ``out[..., :] = table[ids[...], :]``."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if ids.min(initial=0) < 0 or (ids.size and ids.max() >= table.shape[0]):
        raise DimensionError(f"token id out of range for table with {table.shape[0]} rows")
    out = Tensor(table.data[ids], table.requires_grad)
    tshape = table.data.shape

    def bwd(g):
        gt = np.zeros(tshape, dtype=g.dtype)
        np.add.at(gt, ids.ravel(), g.reshape(-1, tshape[-1]))
        return (gt,)

    _record("embedding", (table,), out, bwd)
    return out


def gather_last(a, idx: np.ndarray) -> Tensor:
    """Pick one entry per row of a (rows, classes) matrix."""
    a = _as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"gather_last expects a rank-2 tensor, got {a.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(a.shape[0])
    out = Tensor(a.data[rows, idx], a.requires_grad)
    shape = a.data.shape

    def bwd(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[rows, idx] = g
        return (gx,)

    _record("gather_last", (a,), out, bwd)
    return out


# ---------------------------------------------------------------------------
# structured ops backed by the kernel layer


def max_pool(a, axes: Sequence[int], window: int) -> Tensor:
    """Non-overlapping max pooling with one shared window over ``axes``.

    Each listed axis must be divisible by ``window``; its extent shrinks
    by that factor.  Ties inside a window route the gradient to the first
    flat index, mirroring ``argmax``.
    """
    a = _as_tensor(a)
    axes = sorted(int(ax) for ax in axes)
    window = int(window)
    if window < 1:
        raise DimensionError(f"pooling window must be positive, got {window}")
    if len(set(axes)) != len(axes):
        raise DimensionError(f"duplicate pooling axes {axes}")
    for ax in axes:
        if not 0 <= ax < a.ndim:
            raise DimensionError(f"pooling axis {ax} out of range for shape {a.shape}")
        if a.shape[ax] % window:
            raise DimensionError(
                f"axis {ax} extent {a.shape[ax]} not divisible by window {window}")
    if window == 1 or not axes:
        return a

    src_shape = a.data.shape
    # Split every pooled axis into (blocks, window), move the window axes
    # last, and flatten to a (rows, window**k) matrix for the kernel.
    expanded = []
    keep_order = []
    win_order = []
    pos = 0
    for i, extent in enumerate(src_shape):
        if i in axes:
            expanded.extend([extent // window, window])
            keep_order.append(pos)
            win_order.append(pos + 1)
            pos += 2
        else:
            expanded.append(extent)
            keep_order.append(pos)
            pos += 1
    perm = tuple(keep_order + win_order)
    out_shape = tuple(s // window if i in axes else s for i, s in enumerate(src_shape))
    win_elems = window ** len(axes)

    blocked = a.data.reshape(expanded).transpose(perm).reshape(-1, win_elems)
    vals, idx = kernels.pool_max_fwd(np.ascontiguousarray(blocked))
    out = Tensor(vals.reshape(out_shape), a.requires_grad)

    trans_shape = tuple(expanded[p] for p in perm)
    inv_perm = tuple(np.argsort(perm))

    def bwd(g):
        gx = kernels.pool_max_bwd(g.reshape(-1), idx, win_elems)
        return (gx.reshape(trans_shape).transpose(inv_perm).reshape(src_shape),)

    _record("max_pool", (a,), out, bwd)
    return out


def conv3d(a, w, stride=(1, 1, 1)) -> Tensor:
    """3-D convolution over (B, T, H, W, C) with odd kernels, same padding.

    ``stride`` is (temporal, spatial, spatial); both spatial strides must
    agree.  Padding is ``k // 2`` per axis so unit strides preserve
    extents.
    """
    a, w = _as_tensor(a), _as_tensor(w)
    if a.ndim != 5 or w.ndim != 5:
        raise DimensionError(f"conv3d expects rank-5 operands, got {a.shape} and {w.shape}")
    kt, kh, kw, ci, co = w.shape
    if a.shape[-1] != ci:
        raise DimensionError(f"conv3d channel mismatch: input {a.shape[-1]}, kernel {ci}")
    if kt % 2 == 0 or kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv3d kernel extents must be odd, got {(kt, kh, kw)}")
    st, sh, sw = stride
    if sh != sw:
        raise DimensionError(f"conv3d spatial strides must match, got {stride}")
    pads = ((0, 0), (kt // 2, kt // 2), (kh // 2, kh // 2), (kw // 2, kw // 2), (0, 0))
    xp = np.pad(a.data, pads)
    out_data = kernels.conv3d_fwd(xp, w.data, st, sh)
    out = Tensor(out_data, a.requires_grad or w.requires_grad)
    wd = w.data

    def bwd(g):
        gxp, gw = kernels.conv3d_bwd(xp, wd, np.ascontiguousarray(g), st, sh)
        gx = gxp[:, kt // 2 : xp.shape[1] - kt // 2,
                 kh // 2 : xp.shape[2] - kh // 2,
                 kw // 2 : xp.shape[3] - kw // 2, :]
        return (np.ascontiguousarray(gx) if a.requires_grad else None,
                gw if w.requires_grad else None)

    _record("conv3d", (a, w), out, bwd)
    return out


def upsample_double(a, axes: Sequence[int]) -> Tensor:
    """Nearest-neighbour 2x upsampling along ``axes``."""
    a = _as_tensor(a)
    data = a.data
    for ax in axes:
        data = np.repeat(data, 2, axis=ax)
    out = Tensor(data, a.requires_grad)
    axes = tuple(axes)

    def bwd(g):
        for ax in axes:
            shape = g.shape[:ax] + (g.shape[ax] // 2, 2) + g.shape[ax + 1 :]
            g = g.reshape(shape).sum(axis=ax + 1)
        return (g,)

    _record("upsample_double", (a,), out, bwd)
    return out


# ---------------------------------------------------------------------------
# helpers


def attention_scale(d_model: int, head_width: int, mode: str) -> float:
    """Score divisor: full model width by default, per-head width optionally."""
    if mode == "full":
        return math.sqrt(d_model)
    if mode == "head":
        return math.sqrt(head_width)
    raise ContractError(f"unknown attention scale mode {mode!r}")
