"""Blurry-image pyramid and encoded feature pyramid.

Level 1 is the full resolution, level K the coarsest. Each level halves the
spatial extents of the previous one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .nn import Conv2d, Module, ResStack
from .tensor import ContractError, ShapeError, Tensor, concat_channels, relu


@dataclass
class PyramidConfig:
    levels: int = 3
    widths: tuple = (16, 24, 32)
    blocks: int = 6
    sdd: bool = True

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.levels not in (2, 3, 4):
            raise ValueError(f"pyramid levels must be 2, 3 or 4, got {self.levels}")
        if len(self.widths) < self.levels:
            raise ValueError(f"need {self.levels} channel widths, got {self.widths}")
        self.widths = self.widths[: self.levels]
        if any(w <= 0 for w in self.widths):
            raise ValueError("channel widths must be positive")


@dataclass
class FramePyramid:
    """Per-frame multi-scale bundle; index 0 holds level 1 (finest)."""

    images: list = field(default_factory=list)
    shallow: list = field(default_factory=list)
    features: list = field(default_factory=list)


def check_divisible(h: int, w: int, levels: int) -> None:
    f = 2 ** (levels - 1)
    if h % f or w % f:
        raise ShapeError(f"frame extents {h}x{w} not divisible by {f} for {levels} levels")


def build_image_pyramid(frame: Tensor, levels: int) -> list:
    check_divisible(frame.dims[2], frame.dims[3], levels)
    out = [frame]
    for _ in range(levels - 1):
        out.append(ops.down2(out[-1]))
    return out


class ShallowExtractor(Module):
    """Three conv + ReLU layers mapping an RGB image to ``c`` channels."""

    def __init__(self, c: int, rng: np.random.Generator, cin: int = 3):
        self.convs = [Conv2d(cin, c, 3, rng=rng), Conv2d(c, c, 3, rng=rng), Conv2d(c, c, 3, rng=rng)]

    def forward(self, image: Tensor) -> Tensor:
        y = image
        for conv in self.convs:
            y = relu(conv(y))
        return y


class SDD(Module):
    """Structure-to-detail downsampling: 2x2 max pool plus a stride-2 convolution."""

    def __init__(self, c: int, rng: np.random.Generator):
        self.detail = Conv2d(c, c, 3, stride=2, rng=rng)

    def forward(self, f: Tensor) -> Tensor:
        return ops.max_pool_2x2(f) + self.detail(f)


class StridedDown(Module):
    """Ablation stand-in for SDD: a single stride-2 convolution."""

    def __init__(self, c: int, rng: np.random.Generator):
        self.conv = Conv2d(c, c, 3, stride=2, rng=rng)

    def forward(self, f: Tensor) -> Tensor:
        return self.conv(f)


class Encoder(Module):
    """Feature encoder of one level; levels >= 2 also take the downsized finer feature."""

    def __init__(self, c: int, c_prev: int | None, blocks: int, rng: np.random.Generator, sdd: bool = True):
        self.has_down = c_prev is not None
        if self.has_down:
            self.down = SDD(c_prev, rng) if sdd else StridedDown(c_prev, rng)
            self.raise_channels = Conv2d(c_prev, c, 3, rng=rng)
        self.body = ResStack(2 * c if self.has_down else c, c, blocks, rng)

    def downsize(self, finer: Tensor) -> Tensor:
        return self.raise_channels(self.down(finer))

    def forward(self, shallow: Tensor, finer: Tensor | None = None) -> Tensor:
        if self.has_down:
            if finer is None:
                raise ContractError("encoder above level 1 needs the finer-level feature")
            return self.body(concat_channels([shallow, self.downsize(finer)]))
        return self.body(shallow)


class PyramidExtractor(Module):
    def __init__(self, cfg: PyramidConfig, rng: np.random.Generator):
        self.cfg = cfg
        w = cfg.widths
        self.shallow = [ShallowExtractor(w[k], rng) for k in range(cfg.levels)]
        self.encoders = [
            Encoder(w[k], w[k - 1] if k else None, cfg.blocks, rng, sdd=cfg.sdd)
            for k in range(cfg.levels)
        ]

    def forward(self, frame: Tensor) -> FramePyramid:
        pyr = FramePyramid(images=build_image_pyramid(frame, self.cfg.levels))
        finer = None
        for k in range(self.cfg.levels):
            e = self.shallow[k](pyr.images[k])
            f = self.encoders[k](e, finer)
            pyr.shallow.append(e)
            pyr.features.append(f)
            finer = f
        return pyr
