"""Alignment probe: end-point error of the learned offsets on pure translations.

The extractor and cascade aligner are trained with a self-supervised
photometric objective: at every level the reference image is warped by the
centre-tap offsets and compared with the target image. Ground-truth motion is
only used to score the result.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .data import Dataset, augment
from .model import PFAN, ModelConfig
from .optim import AdamState, adam_step, clip_grad_norm
from .tensor import GradientTape, Tensor, absolute, add, backward, no_grad, reduce_mean, scale, take

BORDER = 4


@dataclass
class ProbeReport:
    rows: list = field(default_factory=list)      # (clip, level, mean EPE, max EPE)
    losses: list = field(default_factory=list)

    def level_mean(self, level: int) -> float:
        vals = [m for _, k, m, _ in self.rows if k == level]
        return float(np.mean(vals)) if vals else float("nan")

    def text(self) -> str:
        lines = [f"{'clip':<12}{'level':>6}{'mean EPE':>10}{'max EPE':>10}"]
        lines += [f"{c:<12}{k:>6d}{m:>10.4f}{x:>10.4f}" for c, k, m, x in self.rows]
        return "\n".join(lines)


def centre_offset(offset: Tensor, kernel: int = 3) -> Tensor:
    """(dy, dx) of the centre tap of deformable group 0."""
    c = (kernel * kernel) // 2
    return take(offset, 2 * c, 2 * c + 2, axis=1)


def shift_image(img: Tensor, flow: Tensor) -> Tensor:
    """Bilinear sample of ``img`` at p + flow(p), zero outside."""
    n, c = img.dims[:2]
    eye = Tensor(np.eye(c, dtype=img.dtype).reshape(c, c, 1, 1))
    ones = Tensor(np.ones((n, 1) + img.dims[2:], dtype=img.dtype))
    return ops.deform_conv(img, eye, None, flow, ones)


def _interior(x: Tensor, margin: int) -> Tensor:
    h, w = x.dims[2:]
    return take(take(x, margin, h - margin, axis=2), margin, w - margin, axis=3)


def photometric_loss(model: PFAN, target: Tensor, reference: Tensor) -> tuple:
    pyr = model.extract([target, reference])
    res = model.aligner([p for p in pyr[0].features], [p for p in pyr[1].features])
    total = None
    for k, o in enumerate(res.offsets):
        warped = shift_image(pyr[1].images[k], centre_offset(o))
        margin = max(1, BORDER >> k)
        term = reduce_mean(absolute(_interior(warped - pyr[0].images[k], margin)),
                           axis=(0, 1, 2, 3), keepdims=True)
        total = term if total is None else add(total, term)
    return total, res


def probe_model(seed: int = 0, widths=(16, 24, 32), blocks: int = 2) -> PFAN:
    return PFAN(ModelConfig(levels=len(widths), widths=tuple(widths), blocks=blocks, radius=1), seed=seed)


def train_probe(model: PFAN, dataset: Dataset, iterations: int = 1000, lr: float = 1e-3,
                batch: int = 2, crop: int = 32, seed: int = 0, log=None) -> list:
    """Photometric training of extractor + aligner on (t, t-1) pairs."""
    rng = np.random.default_rng(seed)
    windows = dataset.windows(1)
    params = {n: p for n, p in model.named_parameters() if n.startswith(("extractor.", "aligner."))}
    state = AdamState(lr=lr)
    losses = []
    for it in range(iterations):
        picks = [dataset.sample(*windows[int(i)], 1) for i in rng.integers(0, len(windows), size=batch)]
        picks = [augment(s, rng, crop) for s in picks] if crop else picks
        tgt = Tensor(np.stack([s.blurry[1] for s in picks]))
        ref = Tensor(np.stack([s.blurry[0] for s in picks]))
        with GradientTape() as tape:
            loss, _ = photometric_loss(model, tgt, ref)
        grads = backward(tape, loss)
        g = {n: grads.get(p, np.zeros(p.dims)) for n, p in params.items()}
        clip_grad_norm(g, 10.0)
        adam_step(params, g, state)
        losses.append(loss.item())
        if log and (it % 50 == 0 or it == iterations - 1):
            log(f"probe iter {it:4d}  photometric loss {losses[-1]:.5f}")
    return losses


def level_flow(flow: np.ndarray, levels: int) -> list:
    """Ground-truth displacement per level: block mean, then halved per level."""
    out = [flow]
    for _ in range(levels - 1):
        c, h, w = out[-1].shape
        out.append(out[-1].reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4)) / 2.0)
    return out


def epe(estimate: np.ndarray, truth: np.ndarray, border: int) -> np.ndarray:
    err = np.hypot(estimate[0] - truth[0], estimate[1] - truth[1])
    if border:
        err = err[border:-border, border:-border]
    return err


def measure(model: PFAN | None, dataset: Dataset, levels: int = 3) -> ProbeReport:
    """Per clip and level EPE of the centre-tap offsets for the (t, t-1) pair.

    ``model=None`` scores the zero-offset baseline.
    """
    report = ProbeReport()
    per_clip: dict = {}
    for ci, t in dataset.windows(1):
        s = dataset.sample(ci, t, 1)
        truth = level_flow(s.flow.astype(np.float64), levels)
        if model is None:
            est = [np.zeros_like(f) for f in truth]
        else:
            with no_grad():
                _, res = photometric_loss(model, Tensor(s.blurry[1][None]), Tensor(s.blurry[0][None]))
            est = [centre_offset(o).data[0].astype(np.float64) for o in res.offsets]
        for k in range(levels):
            per_clip.setdefault((s.clip, k + 1), []).append(epe(est[k], truth[k], max(1, BORDER >> k)))
    for (clip, k), errs in per_clip.items():
        e = np.concatenate([x.ravel() for x in errs])
        report.rows.append((clip, k, float(e.mean()), float(e.max())))
    return report
