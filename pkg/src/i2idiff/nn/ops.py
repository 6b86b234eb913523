"""Differentiable ops used by the denoiser and feature extractor.

Every function takes and returns :class:`Tensor` and registers an exact
backward closure on the tape. Convolution lowers to im2col + GEMM through the
active kernel backend; both backends produce bit-identical arrays, so model
outputs do not depend on whether the compiled extension is present.
"""

from __future__ import annotations

import numpy as np

from . import backend
from .autodiff import Tensor, as_tensor, result

# ---------------------------------------------------------------------------
# elementwise and broadcasting helpers


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    # python scalars stay weak so they don't promote float32 graphs
    if isinstance(b, (int, float)) and not isinstance(b, bool):
        a = as_tensor(a)

        def backward_s(g):
            if a.requires_grad:
                a.accumulate_grad(g)

        return result(a.data + b, (a,), backward_s)
    if isinstance(a, (int, float)) and not isinstance(a, bool):
        return add(b, a)
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return result(out, (a, b), backward)


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)) and not isinstance(b, bool):
        a = as_tensor(a)

        def backward_s(g):
            if a.requires_grad:
                a.accumulate_grad(g * b)

        return result(a.data * b, (a,), backward_s)
    if isinstance(a, (int, float)) and not isinstance(a, bool):
        return mul(b, a)
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return result(out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(-g)

    return result(-a.data, (a,), backward)


def sub(a, b) -> Tensor:
    if isinstance(b, (int, float)) and not isinstance(b, bool):
        return add(a, -b)
    return add(a, neg(b))


def square(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * (2.0 * a.data))

    return result(a.data * a.data, (a,), backward)


def absolute(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * np.sign(a.data))

    return result(np.abs(a.data), (a,), backward)


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * s

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * (s * (1.0 + a.data * (1.0 - s))))

    return result(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.data.size
    else:
        ax = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.data.shape[i] for i in ax]))

    def backward(g):
        if not a.requires_grad:
            return
        gg = np.asarray(g)
        if not keepdims and axis is not None:
            ax = (axis,) if isinstance(axis, int) else tuple(axis)
            gg = np.expand_dims(gg, ax)
        a.accumulate_grad(np.broadcast_to(gg, a.data.shape) / count)

    return result(out, (a,), backward)


def total_sum(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(np.broadcast_to(np.asarray(g), a.data.shape).copy())

    return result(a.data.sum(), (a,), backward)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.data.shape))

    return result(a.data.reshape(shape), (a,), backward)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g.transpose(inv))

    return result(a.data.transpose(axes), (a,), backward)


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(int(lo), int(hi))
                t.accumulate_grad(g[tuple(idx)])

    return result(out, tensors, backward)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            a.accumulate_grad(full)

    return result(a.data[idx].copy(), (a,), backward)


def split(a, sizes, axis: int) -> list[Tensor]:
    bounds = np.cumsum([0] + list(sizes))
    return [slice_axis(a, axis, int(lo), int(hi))
            for lo, hi in zip(bounds[:-1], bounds[1:])]


def upsample_nearest2(a) -> Tensor:
    """Nearest-neighbour 2x upsampling of (B, C, H, W)."""
    a = as_tensor(a)
    out = a.data.repeat(2, axis=-2).repeat(2, axis=-1)

    def backward(g):
        if a.requires_grad:
            b, c, h2, w2 = g.shape
            a.accumulate_grad(
                g.reshape(b, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)))

    return result(out, (a,), backward)


# ---------------------------------------------------------------------------
# matmul / linear


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a.accumulate_grad(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b.accumulate_grad(_unbroadcast(gb, b.data.shape))

    return result(out, (a, b), backward)


def linear(x, w, b=None) -> Tensor:
    """``x @ w.T + b`` with x (..., K), w (N, K), b (N,)."""
    x, w = as_tensor(x), as_tensor(w)
    out = np.matmul(x.data, w.data.T)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.matmul(g, w.data))
        if w.requires_grad:
            gm = g.reshape(-1, g.shape[-1])
            xm = x.data.reshape(-1, x.data.shape[-1])
            w.accumulate_grad(gm.T @ xm)
        if b is not None and b.requires_grad:
            b.accumulate_grad(g.reshape(-1, g.shape[-1]).sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return result(out, parents, backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * y).sum(axis=axis, keepdims=True)
            a.accumulate_grad(y * (g - dot))

    return result(y, (a,), backward)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    n = logits.data.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + logits.data.max(axis=1)
    picked = logits.data[np.arange(n), labels]
    out = np.asarray((lse - picked).mean())

    def backward(g):
        if logits.requires_grad:
            p = np.exp(shifted)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(n), labels] -= 1.0
            logits.accumulate_grad(np.asarray(g) * p / n)

    return result(out, (logits,), backward)


# ---------------------------------------------------------------------------
# convolution and normalization


def _pad_input(x: np.ndarray, py: int, px: int, mode: str) -> np.ndarray:
    if py == 0 and px == 0:
        return x
    spec = ((0, 0), (0, 0), (py, py), (px, px))
    if mode == "zeros":
        return np.pad(x, spec)
    if mode == "circular":
        return np.pad(x, spec, mode="wrap")
    raise ValueError(f"unknown padding mode {mode!r}")


def _unpad_grad(gxp: np.ndarray, h: int, w: int, py: int, px: int,
                mode: str) -> np.ndarray:
    if py == 0 and px == 0:
        return gxp
    if mode == "zeros":
        return gxp[:, :, py:py + h, px:px + w]
    hp, wp = gxp.shape[-2:]
    gx = np.zeros(gxp.shape[:2] + (h, w), dtype=gxp.dtype)
    iy = (np.arange(hp) - py) % h
    ix = (np.arange(wp) - px) % w
    np.add.at(gx, (slice(None), slice(None), iy[:, None], ix[None, :]), gxp)
    return gx


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0,
           dilation: int = 1, padding_mode: str = "zeros") -> Tensor:
    """2-d convolution (cross-correlation) on NCHW input via im2col + GEMM."""
    x, w = as_tensor(x), as_tensor(w)
    cout, cin, kh, kw = w.data.shape
    bsz, cin_x, h, win = x.data.shape
    if cin_x != cin:
        raise ValueError(f"conv2d channel mismatch: {cin_x} vs {cin}")
    xp = np.ascontiguousarray(_pad_input(x.data, padding, padding, padding_mode))
    hp, wp = xp.shape[-2:]
    cols = backend.im2col(xp, kh, kw, stride, stride, dilation, dilation)
    ho = (hp - (dilation * (kh - 1) + 1)) // stride + 1
    wo = (wp - (dilation * (kw - 1) + 1)) // stride + 1
    wmat = w.data.reshape(cout, cin * kh * kw)
    out = np.matmul(wmat, cols).reshape(bsz, cout, ho, wo)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[None, :, None, None]

    def backward(g):
        gmat = g.reshape(bsz, cout, ho * wo)
        if w.requires_grad:
            gw = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0)
            w.accumulate_grad(gw.reshape(w.data.shape))
        if b is not None and b.requires_grad:
            b.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, gmat)
            gxp = backend.col2im(np.ascontiguousarray(gcols), cin, hp, wp,
                                 kh, kw, stride, stride, dilation, dilation)
            x.accumulate_grad(_unpad_grad(gxp, h, win, padding, padding,
                                          padding_mode))

    parents = (x, w) if b is None else (x, w, b)
    return result(out, parents, backward)


def group_norm(x, weight, bias, groups: int, eps: float = 1e-5) -> Tensor:
    """GroupNorm over (B, C, H, W) with per-channel affine."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    bsz, c, h, w = x.data.shape
    if c % groups:
        raise ValueError(f"channels {c} not divisible by groups {groups}")
    xg = x.data.reshape(bsz, groups, -1)
    m = xg.mean(axis=2, keepdims=True)
    v = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(v + eps)
    xhat = ((xg - m) * inv).reshape(bsz, c, h, w)
    out = xhat * weight.data[None, :, None, None] + bias.data[None, :, None, None]

    def backward(g):
        if weight.requires_grad:
            weight.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)))
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            ghat = (g * weight.data[None, :, None, None]).reshape(bsz, groups, -1)
            xh = xhat.reshape(bsz, groups, -1)
            n = xh.shape[2]
            s1 = ghat.sum(axis=2, keepdims=True)
            s2 = (ghat * xh).sum(axis=2, keepdims=True)
            gx = inv / n * (n * ghat - s1 - xh * s2)
            x.accumulate_grad(gx.reshape(x.data.shape))

    return result(out, (x, weight, bias), backward)


# operator sugar so model code reads naturally
Tensor.__add__ = add
Tensor.__radd__ = add
Tensor.__mul__ = mul
Tensor.__rmul__ = mul
Tensor.__sub__ = sub
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__neg__ = neg
