"""Cascade guided deformable alignment and its ablation variants.

Per reference frame r and target frame t, alignment runs coarsest level first:

* coarsest level: offsets/masks come straight from the concatenated features
  and the reference feature is warped by a deformable convolution;
* finer levels: the coarser offsets are upsampled and doubled, the coarser
  masks upsampled, and both pre-align the reference feature. A residual offset
  and a fresh mask are then estimated from the target and pre-aligned features,
  and the *original* reference feature is warped with the refined offsets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import ops
from .nn import Conv2d, Module, param
from .tensor import (
    ContractError,
    ShapeError,
    Tensor,
    clip,
    concat,
    concat_channels,
    relu,
    repeat_batch,
    scale,
    split,
)


class AlignVariant(str, Enum):
    CGDA = "cgda"
    THREE_DCN = "3dcn"
    NO_ALIGN = "none"
    SIMPLIFIED_PCD = "pcd"  # optional baseline, not a faithful PCD


@dataclass
class AlignmentResult:
    """Per-level tensors, index 0 = level 1. Guidance entries are None at the coarsest level."""

    offsets: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    guide_offsets: list = field(default_factory=list)
    guide_masks: list = field(default_factory=list)
    prealigned: list = field(default_factory=list)
    aligned: list = field(default_factory=list)


class ConvHead(Module):
    """Two 3x3 convolutions with a ReLU between; the last one starts at zero."""

    def __init__(self, cin: int, hidden: int, cout: int, rng: np.random.Generator):
        self.conv1 = Conv2d(cin, hidden, 3, rng=rng)
        self.conv2 = Conv2d(hidden, cout, 3, init="zero")

    def forward(self, x: Tensor) -> Tensor:
        return self.conv2(relu(self.conv1(x)))


class AlignLevel(Module):
    def __init__(self, c: int, rng: np.random.Generator, kernel: int = 3, groups: int = 1,
                 extra_in: int = 0):
        taps = kernel * kernel
        self.kernel = kernel
        self.groups = groups
        self.offset_net = ConvHead(2 * c + extra_in, c, 2 * groups * taps, rng)
        self.mask_net = ConvHead(2 * c + extra_in, c, groups * taps, rng)
        std = np.sqrt(2.0 / (c * taps))
        self.dcn_weight = param(rng.normal(0.0, std, size=(c, c, kernel, kernel)))
        self.dcn_bias = param(np.zeros(c))


class CascadeAligner(Module):
    """Pyramid alignment with one set of weights per level (not shared across levels)."""

    def __init__(self, widths, rng: np.random.Generator, variant=AlignVariant.CGDA,
                 kernel: int = 3, groups: int = 1, clamp: bool = True):
        self.variant = AlignVariant(variant)
        self.levels_count = len(widths)
        self.clamp = clamp
        self.unit_mask = False  # test hook: bypass the sigmoid and use m == 1
        taps = kernel * kernel
        self.levels = []
        if self.variant is not AlignVariant.NO_ALIGN:
            for k, c in enumerate(widths):
                extra = 0
                if self.variant is AlignVariant.SIMPLIFIED_PCD and k < len(widths) - 1:
                    extra = 2 * groups * taps
                self.levels.append(AlignLevel(c, rng, kernel, groups, extra_in=extra))

    # -- building blocks

    def _mask(self, lvl: AlignLevel, feat: Tensor) -> Tensor:
        logits = lvl.mask_net(feat)
        if self.unit_mask:
            return Tensor(np.ones(logits.dims, dtype=logits.dtype))
        return ops.sigmoid(logits)

    def warp(self, k: int, fr: Tensor, offset: Tensor, mask: Tensor) -> Tensor:
        lvl = self.levels[k]
        if self.clamp:
            limit = fr.dims[3] / 2.0
            offset = clip(offset, -limit, limit)
        return ops.deform_conv(fr, lvl.dcn_weight, lvl.dcn_bias, offset, mask, groups=lvl.groups)

    def estimate_coarse(self, ft: Tensor, fr: Tensor, k: int | None = None):
        """Offsets, masks and aligned feature without guidance (coarsest level)."""
        if ft.dims != fr.dims:
            raise ShapeError(f"target {ft.dims} and reference {fr.dims} features differ")
        k = self.levels_count - 1 if k is None else k
        lvl = self.levels[k]
        both = concat_channels([ft, fr])
        o = lvl.offset_net(both)
        m = self._mask(lvl, both)
        return o, m, self.warp(k, fr, o, m)

    @staticmethod
    def upsample_guidance(o_coarse: Tensor, m_coarse: Tensor):
        """Offsets are doubled because pixel units double with resolution; masks are not."""
        return scale(ops.up2(o_coarse), 2.0), ops.up2(m_coarse)

    def refine_level(self, ft: Tensor, fr: Tensor, o_guide: Tensor, m_guide: Tensor, k: int):
        if o_guide.dims[2:] != ft.dims[2:] or ft.dims != fr.dims:
            raise ShapeError(f"guidance {o_guide.dims} does not match level features {ft.dims}")
        lvl = self.levels[k]
        pre = self.warp(k, fr, o_guide, m_guide)
        both = concat_channels([ft, pre])
        o = o_guide + lvl.offset_net(both)
        m = self._mask(lvl, both)
        # warp the original reference feature, not the pre-aligned one
        return o, m, pre, self.warp(k, fr, o, m)

    # -- full pyramid

    def forward(self, ft_levels: list, fr_levels: list) -> AlignmentResult:
        K = self.levels_count
        res = AlignmentResult(
            offsets=[None] * K, masks=[None] * K, guide_offsets=[None] * K,
            guide_masks=[None] * K, prealigned=[None] * K, aligned=[None] * K,
        )
        if self.variant is AlignVariant.NO_ALIGN:
            res.aligned = list(fr_levels)
            return res
        for k in range(K - 1, -1, -1):
            ft, fr = ft_levels[k], fr_levels[k]
            if self.variant is AlignVariant.THREE_DCN or k == K - 1:
                o, m, fhat = self.estimate_coarse(ft, fr, k)
            elif self.variant is AlignVariant.CGDA:
                og, mg = self.upsample_guidance(res.offsets[k + 1], res.masks[k + 1])
                o, m, pre, fhat = self.refine_level(ft, fr, og, mg, k)
                res.guide_offsets[k], res.guide_masks[k], res.prealigned[k] = og, mg, pre
            else:
                # offsets from features plus upsampled coarse offsets; no pre-alignment
                og, _ = self.upsample_guidance(res.offsets[k + 1], res.masks[k + 1])
                lvl = self.levels[k]
                both = concat_channels([ft, fr, og])
                o = lvl.offset_net(both)
                m = self._mask(lvl, both)
                fhat = self.warp(k, fr, o, m)
            res.offsets[k], res.masks[k], res.aligned[k] = o, m, fhat
        return res


def align_window(aligner: CascadeAligner, pyramids: list, target: int | None = None):
    """Align every frame of a 2N+1 window to the target.

    Returns ``(aligned, result)`` where ``aligned[i][k]`` is the level-k feature
    of window frame i (the target's own features pass through unchanged) and
    ``result`` holds the batched alignment tensors, references stacked along the
    batch axis in window order.
    """
    n_frames = len(pyramids)
    if n_frames % 2 == 0:
        raise ContractError(f"window must hold an odd number of frames, got {n_frames}")
    t = n_frames // 2 if target is None else target
    refs = [i for i in range(n_frames) if i != t]
    levels = len(pyramids[t].features)
    aligned = [list(p.features) if i == t else [None] * levels for i, p in enumerate(pyramids)]
    if not refs:
        return aligned, None
    batch = pyramids[t].features[0].dims[0]
    ft = [repeat_batch(pyramids[t].features[k], len(refs)) for k in range(levels)]
    fr = [concat([pyramids[i].features[k] for i in refs], axis=0) for k in range(levels)]
    result = aligner(ft, fr)
    for k in range(levels):
        for i, part in zip(refs, split(result.aligned[k], [batch] * len(refs), axis=0)):
            aligned[i][k] = part
    return aligned, result
