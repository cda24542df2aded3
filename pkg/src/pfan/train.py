"""Experiment configuration, the training loop and evaluation."""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import checkpoint
from .data import ClipSample, Dataset, augment, write_ppm
from .losses import LossConfig, capped, psnr, quantize8, ssim, total_loss
from .model import PFAN, ModelConfig, restore
from .optim import AdamState, adam_step, clip_grad_norm, step_lr
from .tensor import ContractError, GradientTape, Tensor, backward


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    levels: int = 3
    widths: tuple = (16, 24, 32)
    blocks: int = 6
    radius: int = 1
    variant: str = "cgda"
    sdd: bool = True
    supervision: str = "IV"
    residual_output: bool = True
    freq_weight: float = 0.1
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_period: int = 500
    iterations: int = 2000
    batch: int = 2
    crop: int = 32
    clip_norm: float = 10.0
    seed: int = 0
    deterministic: bool = True
    checkpoint_every: int = 0
    log_every: int = 50

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)

    def level_widths(self) -> tuple:
        """Widths truncated to the pyramid depth; missing coarse levels get +8 channels each."""
        w = list(self.widths[:self.levels])
        while len(w) < self.levels:
            w.append(w[-1] + 8)
        return tuple(w)

    def model_config(self) -> ModelConfig:
        return ModelConfig(levels=self.levels, widths=self.level_widths(), blocks=self.blocks,
                           radius=self.radius, variant=self.variant, sdd=self.sdd,
                           residual_output=self.residual_output)

    def loss_config(self) -> LossConfig:
        return LossConfig.for_type(self.supervision, self.levels, freq_weight=self.freq_weight)

    def replace(self, **changes) -> "ExperimentConfig":
        d = asdict(self)
        d.update(changes)
        return ExperimentConfig(**d)

    # -- flat key=value text form

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in sorted(asdict(self).items()))

    def config_hash(self) -> str:
        """Hash of the sorted key=value form; insensitive to field order."""
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_mapping(cls, values: dict, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        base = base or cls()
        types = {f.name: f.type for f in fields(cls)}
        changes = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            changes[key] = _parse(raw, getattr(base, key)) if isinstance(raw, str) else raw
        return base.replace(**changes)

    @classmethod
    def from_text(cls, text: str, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
        return cls.from_mapping(values, base)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())


def _fmt(v) -> str:
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def _parse(raw: str, like):
    if isinstance(like, bool):
        low = raw.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {raw!r}")
        return low in ("true", "1", "yes")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, tuple):
        return tuple(int(x) for x in raw.split(",") if x.strip())
    return raw


# ------------------------------------------------------------------ reports


@dataclass
class RunReport:
    config_hash: str = ""
    seed: int = 0
    losses: list = field(default_factory=list)          # (iteration, loss)
    evals: list = field(default_factory=list)           # (iteration, psnr, ssim)
    frames: list = field(default_factory=list)          # (frame id, psnr, ssim)
    baseline: tuple = ()                                # identity (psnr, ssim)
    epe: list = field(default_factory=list)             # (level, mean, max)
    wall_clock: float = 0.0
    aborted: str = ""

    @property
    def psnr(self) -> float:
        return self.evals[-1][1] if self.evals else float("nan")

    @property
    def ssim(self) -> float:
        return self.evals[-1][2] if self.evals else float("nan")

    def delimited(self) -> str:
        rows = [f"# config {self.config_hash} seed {self.seed}"]
        rows += [f"loss\t{i}\t{v:.8g}" for i, v in self.losses]
        rows += [f"eval\t{i}\t{p:.4f}\t{s:.5f}" for i, p, s in self.evals]
        rows += [f"frame\t{f}\t{p:.4f}\t{s:.5f}" for f, p, s in self.frames]
        if self.baseline:
            rows.append(f"baseline\tidentity\t{self.baseline[0]:.4f}\t{self.baseline[1]:.5f}")
        rows += [f"epe\t{k}\t{m:.4f}\t{x:.4f}" for k, m, x in self.epe]
        return "\n".join(rows) + "\n"

    def summary(self) -> str:
        lines = [f"config {self.config_hash}  seed {self.seed}  wall {self.wall_clock:.1f}s"]
        if self.losses:
            lines.append(f"loss {self.losses[0][1]:.5f} -> {self.losses[-1][1]:.5f} "
                         f"over {self.losses[-1][0] + 1} iterations")
        if self.evals:
            lines.append(f"PSNR {self.psnr:.3f} dB  SSIM {self.ssim:.4f}")
        if self.baseline:
            lines.append(f"identity baseline PSNR {self.baseline[0]:.3f} dB  SSIM {self.baseline[1]:.4f}")
        for k, m, x in self.epe:
            lines.append(f"level {k} EPE mean {m:.3f} max {x:.3f}")
        if self.aborted:
            lines.append(f"aborted: {self.aborted}")
        return "\n".join(lines)


# ------------------------------------------------------------------ batches


def sharp_levels(sharp: np.ndarray, levels: int) -> list:
    """(B, 3, H, W) sharp frames -> per-level block-mean pyramid."""
    out = [sharp]
    for _ in range(levels - 1):
        b, c, h, w = out[-1].shape
        out.append(out[-1].reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5)))
    return out


def collate(samples: list, dtype=np.float32):
    """Stack samples into per-frame input tensors and the per-level target pyramid."""
    frames = [Tensor(np.stack([s.blurry[i] for s in samples]).astype(dtype))
              for i in range(len(samples[0].blurry))]
    sharp = np.stack([s.sharp for s in samples]).astype(dtype)
    return frames, sharp


def draw_batch(dataset: Dataset, windows: list, rng: np.random.Generator, cfg: ExperimentConfig):
    picks = rng.integers(0, len(windows), size=cfg.batch)
    samples = []
    for p in picks:
        ci, t = windows[int(p)]
        s = dataset.sample(ci, t, cfg.radius)
        if cfg.crop:
            s = augment(s, rng, cfg.crop)
        samples.append(s)
    return samples


def _limit_threads(deterministic: bool):
    if not deterministic:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(1)


# ------------------------------------------------------------------ training


def train_step(model: PFAN, samples: list, cfg: ExperimentConfig, state: AdamState,
               loss_cfg: LossConfig, iteration: int) -> float:
    frames, sharp = collate(samples, model.parameters()[0].dtype)
    targets = [Tensor(s) for s in sharp_levels(sharp, cfg.levels)]
    params = dict(model.named_parameters())
    with GradientTape() as tape:
        out = model(frames)
        loss = total_loss(out.images, targets, loss_cfg)
    value = loss.item()
    if not math.isfinite(value):
        tape.release()
        return value
    leaf_grads = backward(tape, loss)
    grads = {name: leaf_grads.get(p, np.zeros(p.dims)) for name, p in params.items()}
    if cfg.clip_norm:
        clip_grad_norm(grads, cfg.clip_norm)
    state.lr = step_lr(cfg.lr, iteration, cfg.lr_period)
    adam_step(params, grads, state)
    return value


def train(cfg: ExperimentConfig, dataset: Dataset, out_dir=None, model: PFAN | None = None,
          log=None, eval_set: Dataset | None = None, eval_every: int = 0) -> tuple:
    """Train ``cfg.iterations`` steps; returns (model, RunReport).

    A non-finite loss aborts the run with :class:`TrainingDiverged`; the model
    is rolled back to the last finite parameters, which are also written to
    ``out_dir`` when given.
    """
    start = time.perf_counter()
    limiter = _limit_threads(cfg.deterministic)
    try:
        model = model or PFAN(cfg.model_config(), seed=cfg.seed)
        report = RunReport(config_hash=cfg.config_hash(), seed=cfg.seed)
        windows = dataset.windows(cfg.radius)
        if not windows:
            raise ContractError("dataset has no windows for this temporal radius")
        rng = np.random.default_rng(cfg.seed + 1_000_003)
        state = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
        loss_cfg = cfg.loss_config()
        out_dir = Path(out_dir) if out_dir else None
        if out_dir:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "config.txt").write_text(cfg.to_text())
        for it in range(cfg.iterations):
            last_good = model.state_dict()
            samples = draw_batch(dataset, windows, rng, cfg)
            value = train_step(model, samples, cfg, state, loss_cfg, it)
            if not math.isfinite(value):
                model.load_state_dict(last_good)
                report.aborted = f"non-finite loss at iteration {it}"
                if out_dir:
                    checkpoint.save(out_dir / "model.ckpt", last_good)
                raise TrainingDiverged(report.aborted)
            report.losses.append((it, value))
            if out_dir and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                checkpoint.save(out_dir / "model.ckpt", model.state_dict())
            if log and cfg.log_every and (it % cfg.log_every == 0 or it == cfg.iterations - 1):
                log(f"iter {it:5d}  loss {value:.5f}  lr {state.lr:.2e}")
            if eval_set is not None and eval_every and (it + 1) % eval_every == 0:
                r = evaluate(model, eval_set, cfg.radius)
                report.evals.append((it, r.psnr, r.ssim))
                if log:
                    log(f"iter {it:5d}  eval PSNR {r.psnr:.3f}  SSIM {r.ssim:.4f}")
        report.wall_clock = time.perf_counter() - start
        if out_dir:
            checkpoint.save(out_dir / "model.ckpt", model.state_dict())
            (out_dir / "report.tsv").write_text(report.delimited())
        return model, report
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


# ------------------------------------------------------------------ evaluation


def evaluate(model: PFAN | None, dataset: Dataset, radius: int = 1, out_dir=None,
             identity: bool = False) -> RunReport:
    """Mean PSNR/SSIM over every valid target frame on 8-bit quantised images.

    ``identity`` evaluates the pass-through baseline (output = centre blurry
    frame); ``out_dir`` receives the restored frames as PPM.
    """
    report = RunReport()
    scores = []
    for ci, t in dataset.windows(radius):
        s: ClipSample = dataset.sample(ci, t, radius)
        pred = s.blurry[radius] if identity or model is None else restore(model, s.blurry)
        q_pred = quantize8(pred).astype(np.float64) / 255.0
        q_true = quantize8(s.sharp).astype(np.float64) / 255.0
        p = capped(psnr(q_pred, q_true))
        ss = ssim(q_pred, q_true)
        frame_id = f"{s.clip}/{t:04d}"
        report.frames.append((frame_id, p, ss))
        scores.append((p, ss))
        if out_dir:
            d = Path(out_dir) / s.clip
            d.mkdir(parents=True, exist_ok=True)
            write_ppm(d / f"restored_{t:04d}.ppm", pred)
    if scores:
        arr = np.array(scores)
        report.evals.append((0, float(arr[:, 0].mean()), float(arr[:, 1].mean())))
    return report


def evaluate_with_baseline(model: PFAN, dataset: Dataset, radius: int = 1, out_dir=None) -> RunReport:
    report = evaluate(model, dataset, radius, out_dir)
    base = evaluate(None, dataset, radius, identity=True)
    report.baseline = (base.psnr, base.ssim)
    return report


def load_model(cfg: ExperimentConfig, path) -> PFAN:
    model = PFAN(cfg.model_config(), seed=cfg.seed)
    model.load_state_dict(checkpoint.load(path))
    return model
