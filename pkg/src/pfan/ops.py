"""Spatial operators on (N, C, H, W) tensors, all recorded on the active tape."""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import fft as _fft
from . import kernels
from .tensor import ShapeError, Tensor, make_op, note_branch, reshape, take


# ------------------------------------------------------------------ convolution


def _im2col(xp: np.ndarray, K: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> (N, C*K*K, ho*wo); tap order matches weight.reshape."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, K, K, ho, wo), dtype=xp.dtype)
    for i in range(K):
        for j in range(K):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(n, c * K * K, ho * wo)


def _col2im(gcols: np.ndarray, shape: tuple, K: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c, hp, wp = shape
    g = gcols.reshape(n, c, K, K, ho, wo)
    out = np.zeros(shape, dtype=gcols.dtype)
    for i in range(K):
        for j in range(K):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += g[:, :, i, j]
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: Optional[int] = None) -> Tensor:
    """Zero-padded 2-D cross-correlation.

    ``weight`` is (out, in, K, K); ``padding`` defaults to (K-1)/2.
    """
    n, c, h, w = x.dims
    co, ci, K, K2 = weight.dims
    if ci != c or K != K2:
        raise ShapeError(f"conv2d: input {x.dims} incompatible with kernel {weight.dims}")
    p = (K - 1) // 2 if padding is None else padding
    ho = (h + 2 * p - K) // stride + 1
    wo = (w + 2 * p - K) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    cols = _im2col(xp, K, stride, ho, wo)
    w2 = weight.data.reshape(co, -1)
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.data.reshape(1, co, 1)
    out = out.reshape(n, co, ho, wo)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        g2 = g.reshape(n, co, ho * wo)
        gw = None
        if weight.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.dims)
        gx = None
        if x.requires_grad:
            gxp = _col2im(np.matmul(w2.T, g2), xp.shape, K, stride, ho, wo)
            gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=(0, 2))

    return make_op(out, parents, back)


def deform_conv(x: Tensor, weight: Tensor, bias: Optional[Tensor], offset: Tensor,
                mask: Tensor, groups: int = 1) -> Tensor:
    """Modulated deformable convolution (stride 1, same padding).

    out(p) = sum_taps w_tap * m(p, tap) * bilinear(x, p + tap + o(p, tap)).
    Samples falling outside the image read zero.
    """
    n, c, h, w = x.dims
    co, ci, K, _ = weight.dims
    T = K * K
    if ci != c:
        raise ShapeError(f"deform_conv: input {x.dims} incompatible with kernel {weight.dims}")
    if c % groups:
        raise ShapeError(f"deform_conv: {groups} groups do not divide {c} channels")
    if offset.dims != (n, 2 * groups * T, h, w):
        raise ShapeError(f"deform_conv: offset dims {offset.dims}, expected {(n, 2 * groups * T, h, w)}")
    if mask.dims != (n, groups * T, h, w):
        raise ShapeError(f"deform_conv: mask dims {mask.dims}, expected {(n, groups * T, h, w)}")

    note_branch(np.floor(offset.data))
    cols = kernels.sample(x.data, offset.data, mask.data, K, groups)
    cols2 = cols.reshape(n, c * T, h * w)
    w2 = weight.data.reshape(co, c * T)
    out = np.matmul(w2, cols2)
    if bias is not None:
        out += bias.data.reshape(1, co, 1)
    out = out.reshape(n, co, h, w)
    parents = (x, weight, offset, mask) if bias is None else (x, weight, offset, mask, bias)

    def back(g):
        g2 = g.reshape(n, co, h * w)
        gw = (np.matmul(g2, cols2.transpose(0, 2, 1)).sum(axis=0).reshape(weight.dims)
              if weight.requires_grad else None)
        gx = goff = gmask = None
        if x.requires_grad or offset.requires_grad or mask.requires_grad:
            gcols = np.matmul(w2.T, g2).reshape(n, c, T, h, w)
            gx, goff, gmask = kernels.sample_backward(x.data, offset.data, mask.data, gcols, K, groups)
        grads = (gx, gw, goff, gmask)
        if bias is not None:
            grads += (g2.sum(axis=(0, 2)),)
        return grads

    return make_op(out, parents, back)


# ------------------------------------------------------------------ pooling / resampling


def _require_even(x: Tensor, name: str) -> None:
    h, w = x.dims[2:]
    if h % 2 or w % 2:
        raise ShapeError(f"{name}: needs even spatial extents, got {x.dims}")


def max_pool_2x2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; ties route the gradient to the first element."""
    _require_even(x, "max_pool_2x2")
    n, c, h, w = x.dims
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    note_branch(arg)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (gb.reshape(n, c, h, w),)

    return make_op(out, (x,), back)


def _down2(a: np.ndarray) -> np.ndarray:
    n, c, h, w = a.shape
    return a.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def _up2_axis(a: np.ndarray, axis: int) -> np.ndarray:
    # half-pixel centres: out[2j] = .75 a[j] + .25 a[j-1], out[2j+1] = .75 a[j] + .25 a[j+1]
    a = np.moveaxis(a, axis, -1)
    prev = np.concatenate([a[..., :1], a[..., :-1]], axis=-1)
    nxt = np.concatenate([a[..., 1:], a[..., -1:]], axis=-1)
    out = np.empty(a.shape[:-1] + (2 * a.shape[-1],), dtype=a.dtype)
    q = a.dtype.type(0.25)
    out[..., 0::2] = a - q * (a - prev)
    out[..., 1::2] = a - q * (a - nxt)
    return np.moveaxis(out, -1, axis)


def _up2_axis_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    g = np.moveaxis(g, axis, -1)
    even, odd = g[..., 0::2], g[..., 1::2]
    q = g.dtype.type(0.25)
    out = (1 - q) * (even + odd)
    # even outputs pull .25 from the previous input, odd from the next (edges clamp)
    out[..., :-1] += q * even[..., 1:]
    out[..., 0] += q * even[..., 0]
    out[..., 1:] += q * odd[..., :-1]
    out[..., -1] += q * odd[..., -1]
    return np.moveaxis(out, -1, axis)


def down2(x: Tensor) -> Tensor:
    """Bilinear downsampling by 2 with half-pixel centres (a 2x2 block mean)."""
    _require_even(x, "down2")
    q = x.dtype.type(0.25)

    def back(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * q,)

    return make_op(_down2(x.data), (x,), back)


def up2(x: Tensor) -> Tensor:
    """Bilinear upsampling by 2, half-pixel centres, edge samples clamped."""

    def back(g):
        return (_up2_axis_adjoint(_up2_axis_adjoint(g, 3), 2),)

    return make_op(_up2_axis(_up2_axis(x.data, 2), 3), (x,), back)


def bilinear_resample(x: Tensor, factor: str) -> Tensor:
    if factor == "down2":
        return down2(x)
    if factor == "up2":
        return up2(x)
    raise ValueError(f"unknown resampling factor {factor!r}")


# ------------------------------------------------------------------ pointwise / spectral


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign to avoid overflow in exp
    e = np.exp(-np.abs(d))
    s = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(d.dtype)
    return make_op(s, (x,), lambda g: (g * s * (1 - s),))


def fft2(x: Tensor) -> tuple:
    """Unnormalised 2-D DFT per channel, returned as (real, imag) tensors."""
    spec = _fft.fft2(x.data.astype(np.float64))
    dtype = x.dtype
    re = spec.real.astype(dtype)
    im = spec.imag.astype(dtype)
    both = make_op(np.stack([re, im]), (x,), lambda g: (
        _fft.adjoint_fft2(g[0].astype(np.float64) + 1j * g[1].astype(np.float64)).real.astype(dtype),))
    return (reshape(take(both, 0, 1, 0), re.shape), reshape(take(both, 1, 2, 0), im.shape))
