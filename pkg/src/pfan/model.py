"""The full network: extract -> align -> fuse -> decode."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .align import AlignmentResult, AlignVariant, CascadeAligner, align_window
from .fusion import PyramidDecoder, TSAFusion
from .nn import Module
from .pyramid import FramePyramid, PyramidConfig, PyramidExtractor
from .tensor import ContractError, Tensor, concat, no_grad, split


@dataclass
class ModelConfig:
    levels: int = 3
    widths: tuple = (16, 24, 32)
    blocks: int = 6
    radius: int = 1
    variant: str = "cgda"
    sdd: bool = True
    residual_output: bool = True
    groups: int = 1
    clamp_offsets: bool = True

    @property
    def frames(self) -> int:
        return 2 * self.radius + 1


@dataclass
class ModelOutput:
    images: list                      # restored image per level, index 0 = finest
    pyramids: list                    # FramePyramid per window frame
    alignment: AlignmentResult | None
    fused: list = field(default_factory=list)
    decoded: list = field(default_factory=list)


class PFAN(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        pcfg = PyramidConfig(levels=cfg.levels, widths=cfg.widths, blocks=cfg.blocks, sdd=cfg.sdd)
        widths = pcfg.widths
        self.extractor = PyramidExtractor(pcfg, rng)
        self.aligner = CascadeAligner(widths, rng, variant=cfg.variant, groups=cfg.groups,
                                      clamp=cfg.clamp_offsets)
        self.fusions = [TSAFusion(c, cfg.frames, rng) for c in widths]
        self.decoder = PyramidDecoder(widths, cfg.blocks, rng, residual=cfg.residual_output)

    def extract(self, frames: list) -> list:
        """Run the extractor once on the whole window stacked along the batch axis."""
        batch = frames[0].dims[0]
        joint = self.extractor(concat(frames, axis=0))
        sizes = [batch] * len(frames)
        per_frame = [FramePyramid() for _ in frames]
        for attr in ("images", "shallow", "features"):
            for level in getattr(joint, attr):
                for pyr, part in zip(per_frame, split(level, sizes, axis=0)):
                    getattr(pyr, attr).append(part)
        return per_frame

    def forward(self, frames: list) -> ModelOutput:
        if len(frames) != self.cfg.frames:
            raise ContractError(f"model expects {self.cfg.frames} frames, got {len(frames)}")
        t = len(frames) // 2
        pyramids = self.extract(frames)
        aligned, result = align_window(self.aligner, pyramids, t)
        fused = [
            self.fusions[k]([aligned[i][k] for i in range(len(frames))], t)
            for k in range(self.cfg.levels)
        ]
        images, decoded = self.decoder(fused, pyramids[t].images)
        return ModelOutput(images=images, pyramids=pyramids, alignment=result,
                           fused=fused, decoded=decoded)


def restore(model: PFAN, window: np.ndarray) -> np.ndarray:
    """Restore the centre frame of a (2N+1, 3, H, W) window; returns (3, H, W)."""
    dtype = model.parameters()[0].dtype
    with no_grad():
        frames = [Tensor(np.asarray(f[None], dtype=dtype)) for f in window]
        out = model(frames)
    return out.images[0].data[0]
