"""Multi-scale reconstruction losses and image-quality metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import ops
from .tensor import ContractError, ShapeError, Tensor, absolute, add, reduce_sum, scale, sub

PSNR_CAP = 100.0

# supervision types: which pyramid levels carry a reconstruction loss
SUPERVISION_TYPES = {"I": (1,), "II": (1, 3), "III": (1, 2), "IV": (1, 2, 3)}


@dataclass
class LossConfig:
    level_weights: tuple = (1.0, 1.0, 1.0, 1.0)
    freq_weight: float = 0.1
    supervised: tuple = (1, 2, 3)   # 1-based pyramid levels that contribute

    def __post_init__(self):
        if any(w < 0 for w in self.level_weights):
            raise ValueError("level weights must be non-negative")
        if 1 not in self.supervised:
            raise ValueError("level 1 must always be supervised")

    @classmethod
    def for_type(cls, kind: str, levels: int = 3, **kw) -> "LossConfig":
        """Supervision mask of a named type; levels beyond the pyramid are dropped
        and, for K=4, type IV supervises every level."""
        mask = SUPERVISION_TYPES[kind]
        if kind == "IV":
            mask = tuple(range(1, levels + 1))
        return cls(supervised=tuple(k for k in mask if k <= levels), **kw)


def _check(pred: list, target: list) -> None:
    if len(pred) != len(target):
        raise ShapeError(f"{len(pred)} predicted levels vs {len(target)} targets")
    for p, t in zip(pred, target):
        if p.dims != t.dims:
            raise ShapeError(f"level dims differ: {p.dims} vs {t.dims}")


def _l1(x: Tensor) -> Tensor:
    return reduce_sum(absolute(x), axis=tuple(range(x.data.ndim)), keepdims=True)


def content_loss(pred: list, target: list, cfg: LossConfig) -> Tensor:
    """sum_k W^k / (c h w) * ||S_hat^k - S^k||_1, averaged over the batch."""
    _check(pred, target)
    total = None
    for k in cfg.supervised:
        if k > len(pred):
            continue
        p, t = pred[k - 1], target[k - 1]
        term = scale(_l1(sub(p, t)), cfg.level_weights[k - 1] / p.data.size)
        total = term if total is None else add(total, term)
    return total


def frequency_loss(pred: list, target: list, cfg: LossConfig) -> Tensor:
    """sum_k 1/(c h w) * (|Re| + |Im|) of the spectrum difference, batch-averaged.

    The spectrum of the difference is used; by linearity it equals the
    difference of the spectra.
    """
    _check(pred, target)
    total = None
    for k in cfg.supervised:
        if k > len(pred):
            continue
        p, t = pred[k - 1], target[k - 1]
        re, im = ops.fft2(sub(p, t))
        term = scale(add(_l1(re), _l1(im)), 1.0 / p.data.size)
        total = term if total is None else add(total, term)
    return total


def total_loss(pred: list, target: list, cfg: LossConfig) -> Tensor:
    loss = content_loss(pred, target, cfg)
    if cfg.freq_weight:
        loss = add(loss, scale(frequency_loss(pred, target, cfg), cfg.freq_weight))
    return loss


# ------------------------------------------------------------------ metrics


def quantize8(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1], scale to 255, round half up."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr: dims differ {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def capped(value: float, cap: float = PSNR_CAP) -> float:
    return min(value, cap)


@lru_cache(maxsize=None)
def _gauss(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = len(g)
    h, w = img.shape
    rows = sum(g[i] * img[i:h - n + 1 + i] for i in range(n))
    return sum(g[j] * rows[:, j:w - n + 1 + j] for j in range(n))


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0, window: int = 11,
         sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Gaussian-window structural similarity, averaged over valid windows and channels.

    Accepts (H, W) or (C, H, W) arrays.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim: dims differ {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < window:
        raise ContractError(f"image {a.shape[-2:]} smaller than the {window}x{window} window")
    g = _gauss(window, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    scores = []
    for x, y in zip(a, b):
        mx, my = _filter_valid(x, g), _filter_valid(y, g)
        sxx = _filter_valid(x * x, g) - mx * mx
        syy = _filter_valid(y * y, g) - my * my
        sxy = _filter_valid(x * y, g) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))
