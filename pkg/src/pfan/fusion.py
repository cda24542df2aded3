"""Temporal-spatial attention fusion and the coarse-to-fine pyramid decoder."""

from __future__ import annotations

import numpy as np

from . import ops
from .nn import Conv2d, Module, ResStack
from .tensor import (
    ShapeError,
    Tensor,
    concat,
    concat_channels,
    leaky_relu,
    reduce_sum,
    split,
)


class TSAFusion(Module):
    """Fuse the 2N+1 aligned features of one level into ``c`` channels.

    Temporal attention weights every frame by the sigmoid of its per-pixel
    embedding correlation with the target; spatial attention is a single
    down/up branch whose sigmoid output gates the fused feature.
    """

    def __init__(self, c: int, frames: int, rng: np.random.Generator):
        self.frames = frames
        self.embed_target = Conv2d(c, c, 3, rng=rng)
        self.embed_frame = Conv2d(c, c, 3, rng=rng)
        self.fuse = Conv2d(frames * c, c, 1, rng=rng)
        self.spatial_in = Conv2d(frames * c, c, 1, rng=rng)
        self.spatial_mid = Conv2d(c, c, 3, rng=rng)
        self.spatial_out = Conv2d(c, c, 1, rng=rng)

    def temporal_weights(self, feats: list, target: int) -> list:
        batch = feats[0].dims[0]
        emb_t = self.embed_target(feats[target])
        embs = split(self.embed_frame(concat(feats, axis=0)), [batch] * len(feats), axis=0)
        return [ops.sigmoid(reduce_sum(e * emb_t, axis=1, keepdims=True)) for e in embs]

    def forward(self, feats: list, target: int | None = None) -> Tensor:
        if len(feats) != self.frames:
            raise ShapeError(f"expected {self.frames} frames, got {len(feats)}")
        dims = feats[0].dims
        for f in feats[1:]:
            if f.dims != dims:
                raise ShapeError(f"frame features differ: {dims} vs {f.dims}")
        t = len(feats) // 2 if target is None else target
        weights = self.temporal_weights(feats, t)
        stacked = concat_channels([f * w for f, w in zip(feats, weights)])
        fused = leaky_relu(self.fuse(stacked))
        att = leaky_relu(self.spatial_in(stacked))
        att = leaky_relu(self.spatial_mid(ops.down2(att)))
        gate = ops.sigmoid(self.spatial_out(ops.up2(att)))
        return fused * gate


class PyramidDecoder(Module):
    """Decode fused features coarsest-first; every level emits an RGB image.

    D^K = dec_K(U^K); D^k = dec_k([U^k, up2(D^(k+1))]); S^k = head_k(D^k)
    (+ B^k when ``residual``).
    """

    def __init__(self, widths, blocks: int, rng: np.random.Generator, residual: bool = True):
        K = len(widths)
        self.residual = residual
        self.decoders = [
            ResStack(widths[k] + (widths[k + 1] if k < K - 1 else 0), widths[k], blocks, rng)
            for k in range(K)
        ]
        init = "zero" if residual else "he"
        self.heads = [Conv2d(widths[k], 3, 3, rng=rng, init=init) for k in range(K)]

    def forward(self, fused: list, images: list | None = None):
        K = len(self.decoders)
        decoded = [None] * K
        out = [None] * K
        for k in range(K - 1, -1, -1):
            if k == K - 1:
                d = self.decoders[k](fused[k])
            else:
                d = self.decoders[k](concat_channels([fused[k], ops.up2(decoded[k + 1])]))
            decoded[k] = d
            s = self.heads[k](d)
            if self.residual:
                s = s + images[k]
            out[k] = s
        return out, decoded
