"""Hot loops of the modulated deformable convolution.

Two interchangeable implementations of each kernel live here: a numba
``@njit`` version and a vectorised pure-numpy version. ``PFAN_NO_NUMBA=1``
(or numba being unavailable) selects the numpy path at import time. Both
produce the same values; summation order differs, so results agree to
rounding, not bitwise.

Layouts (G deformable groups, kernel K, T = K*K taps):
    x       (N, C, H, W)
    offset  (N, 2*G*T, H, W)   channel g*2T + 2t + 0 -> dy, + 1 -> dx
    mask    (N, G*T, H, W)     channel g*T + t
    cols    (N, C, T, H, W)    mask * bilinear sample of x
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("PFAN_NO_NUMBA", "0") in ("", "0")


# ------------------------------------------------------------------ numpy path


def _positions(offset, K, G):
    n, _, h, w = offset.shape
    t = K * K
    pad = K // 2
    off = offset.reshape(n, G, t, 2, h, w)
    taps = np.arange(t)
    ky = (taps // K - pad).reshape(1, 1, t, 1, 1)
    kx = (taps % K - pad).reshape(1, 1, t, 1, 1)
    gy = np.arange(h).reshape(1, 1, 1, h, 1)
    gx = np.arange(w).reshape(1, 1, 1, 1, w)
    py = off[:, :, :, 0] + (gy + ky)
    px = off[:, :, :, 1] + (gx + kx)
    return py, px


def _corners(py, px, H, W, dtype):
    y0 = np.floor(py)
    x0 = np.floor(px)
    ly = (py - y0).astype(dtype)
    lx = (px - x0).astype(dtype)
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    out = []
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        yy = y0 + dy
        xx = x0 + dx
        valid = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
        idx = np.where(valid, yy * W + xx, 0)
        out.append((idx, valid))
    return out, ly, lx


def _gather(x, G, idx, valid):
    """Values of x at flat spatial ``idx`` (N, G, T, H, W) -> (N, C, T, H, W)."""
    n, c, h, w = x.shape
    cg = c // G
    flat = x.reshape(n, G, cg, h * w)
    _, _, t, ho, wo = idx.shape
    ii = np.broadcast_to(idx.reshape(n, G, 1, t * ho * wo), (n, G, cg, t * ho * wo))
    v = np.take_along_axis(flat, ii, axis=3).reshape(n, G, cg, t, ho, wo)
    v = v * valid.reshape(n, G, 1, t, ho, wo)
    return v.reshape(n, c, t, ho, wo)


def _expand(a, G, cg):
    n, _, t, h, w = a.shape
    return np.broadcast_to(a.reshape(n, G, 1, t, h, w), (n, G, cg, t, h, w)).reshape(n, G * cg, t, h, w)


def sample_numpy(x, offset, mask, K, G):
    n, c, H, W = x.shape
    cg = c // G
    py, px = _positions(offset, K, G)
    corners, ly, lx = _corners(py, px, H, W, x.dtype)
    wts = ((1 - ly) * (1 - lx), (1 - ly) * lx, ly * (1 - lx), ly * lx)
    acc = None
    for (idx, valid), wt in zip(corners, wts):
        v = _gather(x, G, idx, valid) * _expand(wt, G, cg)
        acc = v if acc is None else acc + v
    t = K * K
    m = _expand(mask.reshape(n, G, t, *mask.shape[2:]), G, cg)
    return (acc * m).astype(x.dtype, copy=False)


def sample_backward_numpy(x, offset, mask, gcols, K, G):
    n, c, H, W = x.shape
    cg = c // G
    t = K * K
    ho, wo = offset.shape[2:]
    py, px = _positions(offset, K, G)
    corners, ly, lx = _corners(py, px, H, W, x.dtype)
    vals = [_gather(x, G, idx, valid) for idx, valid in corners]
    m5 = mask.reshape(n, G, t, ho, wo)
    mexp = _expand(m5, G, cg)
    lyx = _expand(ly, G, cg)
    lxx = _expand(lx, G, cg)
    v00, v01, v10, v11 = vals
    sampled = (1 - lyx) * ((1 - lxx) * v00 + lxx * v01) + lyx * ((1 - lxx) * v10 + lxx * v11)
    dsy = (1 - lxx) * (v10 - v00) + lxx * (v11 - v01)
    dsx = (1 - lyx) * (v01 - v00) + lyx * (v11 - v10)

    def group_sum(a):
        return a.reshape(n, G, cg, t, ho, wo).sum(axis=2)

    gmask = group_sum(gcols * sampled).reshape(n, G * t, ho, wo)
    gm = gcols * mexp
    goff = np.empty((n, G, t, 2, ho, wo), dtype=x.dtype)
    goff[:, :, :, 0] = group_sum(gm * dsy)
    goff[:, :, :, 1] = group_sum(gm * dsx)

    gx = np.zeros(n * c * H * W, dtype=np.float64)
    base = (np.arange(n * c) * (H * W)).reshape(n, G, cg, 1, 1, 1)
    wts = ((1 - ly) * (1 - lx), (1 - ly) * lx, ly * (1 - lx), ly * lx)
    gm6 = gm.reshape(n, G, cg, t, ho, wo)
    for (idx, valid), wt in zip(corners, wts):
        contrib = gm6 * (wt * valid).reshape(n, G, 1, t, ho, wo)
        flat_idx = base + idx.reshape(n, G, 1, t, ho, wo)
        gx += np.bincount(
            np.broadcast_to(flat_idx, contrib.shape).ravel(),
            weights=contrib.ravel(),
            minlength=gx.size,
        )
    return (
        gx.reshape(n, c, H, W).astype(x.dtype),
        goff.reshape(n, 2 * G * t, ho, wo),
        gmask.astype(x.dtype, copy=False),
    )


# ------------------------------------------------------------------ numba path

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _sample_nb(x, offset, mask, K, G, cols):
        n_, c_, H, W = x.shape
        ho, wo = offset.shape[2], offset.shape[3]
        t_ = K * K
        pad = K // 2
        cg = c_ // G
        for n in range(n_):
            for g in range(G):
                for t in range(t_):
                    ky = t // K - pad
                    kx = t % K - pad
                    for i in range(ho):
                        for j in range(wo):
                            py = i + ky + offset[n, g * 2 * t_ + 2 * t, i, j]
                            px = j + kx + offset[n, g * 2 * t_ + 2 * t + 1, i, j]
                            m = mask[n, g * t_ + t, i, j]
                            fy = np.floor(py)
                            fx = np.floor(px)
                            ly = py - fy
                            lx = px - fx
                            y0 = int(fy)
                            x0 = int(fx)
                            w00 = (1 - ly) * (1 - lx)
                            w01 = (1 - ly) * lx
                            w10 = ly * (1 - lx)
                            w11 = ly * lx
                            in_y0 = 0 <= y0 < H
                            in_y1 = 0 <= y0 + 1 < H
                            in_x0 = 0 <= x0 < W
                            in_x1 = 0 <= x0 + 1 < W
                            for cc in range(cg):
                                c = g * cg + cc
                                v = 0.0
                                if in_y0 and in_x0:
                                    v += w00 * x[n, c, y0, x0]
                                if in_y0 and in_x1:
                                    v += w01 * x[n, c, y0, x0 + 1]
                                if in_y1 and in_x0:
                                    v += w10 * x[n, c, y0 + 1, x0]
                                if in_y1 and in_x1:
                                    v += w11 * x[n, c, y0 + 1, x0 + 1]
                                cols[n, c, t, i, j] = m * v

    @numba.njit(cache=True)
    def _sample_backward_nb(x, offset, mask, gcols, K, G, gx, goff, gmask):
        n_, c_, H, W = x.shape
        ho, wo = offset.shape[2], offset.shape[3]
        t_ = K * K
        pad = K // 2
        cg = c_ // G
        for n in range(n_):
            for g in range(G):
                for t in range(t_):
                    ky = t // K - pad
                    kx = t % K - pad
                    for i in range(ho):
                        for j in range(wo):
                            py = i + ky + offset[n, g * 2 * t_ + 2 * t, i, j]
                            px = j + kx + offset[n, g * 2 * t_ + 2 * t + 1, i, j]
                            m = mask[n, g * t_ + t, i, j]
                            fy = np.floor(py)
                            fx = np.floor(px)
                            ly = py - fy
                            lx = px - fx
                            y0 = int(fy)
                            x0 = int(fx)
                            in_y0 = 0 <= y0 < H
                            in_y1 = 0 <= y0 + 1 < H
                            in_x0 = 0 <= x0 < W
                            in_x1 = 0 <= x0 + 1 < W
                            acc_m = 0.0
                            acc_y = 0.0
                            acc_x = 0.0
                            for cc in range(cg):
                                c = g * cg + cc
                                gc = gcols[n, c, t, i, j]
                                if gc == 0.0:
                                    continue
                                v00 = x[n, c, y0, x0] if (in_y0 and in_x0) else 0.0
                                v01 = x[n, c, y0, x0 + 1] if (in_y0 and in_x1) else 0.0
                                v10 = x[n, c, y0 + 1, x0] if (in_y1 and in_x0) else 0.0
                                v11 = x[n, c, y0 + 1, x0 + 1] if (in_y1 and in_x1) else 0.0
                                top = (1 - lx) * v00 + lx * v01
                                bot = (1 - lx) * v10 + lx * v11
                                acc_m += gc * ((1 - ly) * top + ly * bot)
                                gm = gc * m
                                acc_y += gm * (bot - top)
                                acc_x += gm * ((1 - ly) * (v01 - v00) + ly * (v11 - v10))
                                if in_y0 and in_x0:
                                    gx[n, c, y0, x0] += gm * (1 - ly) * (1 - lx)
                                if in_y0 and in_x1:
                                    gx[n, c, y0, x0 + 1] += gm * (1 - ly) * lx
                                if in_y1 and in_x0:
                                    gx[n, c, y0 + 1, x0] += gm * ly * (1 - lx)
                                if in_y1 and in_x1:
                                    gx[n, c, y0 + 1, x0 + 1] += gm * ly * lx
                            gmask[n, g * t_ + t, i, j] = acc_m
                            goff[n, g * 2 * t_ + 2 * t, i, j] = acc_y
                            goff[n, g * 2 * t_ + 2 * t + 1, i, j] = acc_x


def sample_numba(x, offset, mask, K, G):
    n, c = x.shape[:2]
    ho, wo = offset.shape[2:]
    cols = np.empty((n, c, K * K, ho, wo), dtype=x.dtype)
    _sample_nb(
        np.ascontiguousarray(x),
        np.ascontiguousarray(offset, dtype=x.dtype),
        np.ascontiguousarray(mask, dtype=x.dtype),
        K, G, cols,
    )
    return cols


def sample_backward_numba(x, offset, mask, gcols, K, G):
    gx = np.zeros(x.shape, dtype=x.dtype)
    goff = np.empty(offset.shape, dtype=x.dtype)
    gmask = np.empty(mask.shape, dtype=x.dtype)
    _sample_backward_nb(
        np.ascontiguousarray(x),
        np.ascontiguousarray(offset, dtype=x.dtype),
        np.ascontiguousarray(mask, dtype=x.dtype),
        np.ascontiguousarray(gcols, dtype=x.dtype),
        K, G, gx, goff, gmask,
    )
    return gx, goff, gmask


if USE_NUMBA:
    sample, sample_backward = sample_numba, sample_backward_numba
else:
    sample, sample_backward = sample_numpy, sample_backward_numpy
