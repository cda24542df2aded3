"""Ablation suites: each variant differs from the base configuration in one field.

Every variant is trained once per seed on the same data with the same seed
schedule and scored by mean held-out PSNR. Published reference PSNRs (GoPro,
full scale) are printed next to the desk-scale numbers for context only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .train import ExperimentConfig, evaluate, train

# label, config changes, published reference PSNR (dB)
SUITES = {
    "supervision": [
        ("I", {"supervision": "I"}, 32.21),
        ("II", {"supervision": "II"}, 32.57),
        ("III", {"supervision": "III"}, 32.62),
        ("IV", {"supervision": "IV"}, 32.74),
    ],
    "alignment": [
        ("no-align", {"variant": "none"}, 31.93),
        ("3-DCN", {"variant": "3dcn"}, 32.26),
        ("CGDA", {"variant": "cgda"}, 32.74),
    ],
    "levels": [
        ("K=2", {"levels": 2}, 30.92),
        ("K=3", {"levels": 3}, 32.74),
        ("K=4", {"levels": 4}, 33.01),
    ],
    "sdd": [
        ("stride-2 conv", {"sdd": False}, 32.64),
        ("SDD", {"sdd": True}, 32.74),
    ],
}

# optional simplified pyramid-cascade baseline for the alignment suite
PCD_ROW = ("PCD (simplified)", {"variant": "pcd"}, 32.56)

# (better, worse, strict): the better variant's mean must not fall below the worse one's.
# Non-strict orderings pass unless the reversal is significant.
ORDERINGS = {
    "supervision": ("IV", "I", True),
    "alignment": ("CGDA", "no-align", True),
    "levels": ("K=3", "K=2", True),
    "sdd": ("SDD", "stride-2 conv", False),
}


@dataclass
class AblationRow:
    label: str
    psnrs: list
    published: float

    @property
    def mean(self) -> float:
        return float(np.mean(self.psnrs))

    @property
    def spread(self) -> float:
        return float(np.max(self.psnrs) - np.min(self.psnrs))

    @property
    def std(self) -> float:
        return float(np.std(self.psnrs, ddof=1)) if len(self.psnrs) > 1 else 0.0


@dataclass
class AblationTable:
    suite: str
    rows: list = field(default_factory=list)
    verdict: str = ""
    passed: bool = True

    def row(self, label: str) -> AblationRow:
        return next(r for r in self.rows if r.label == label)

    def text(self) -> str:
        lines = [f"suite {self.suite}",
                 f"{'variant':<18}{'mean PSNR':>10}{'range':>8}{'seeds':>7}{'published':>10}"]
        for r in self.rows:
            lines.append(f"{r.label:<18}{r.mean:>10.3f}{r.spread:>8.3f}{len(r.psnrs):>7d}{r.published:>10.2f}")
        lines.append(f"verdict: {self.verdict}")
        return "\n".join(lines)

    def delimited(self) -> str:
        out = []
        for r in self.rows:
            scores = ",".join(f"{p:.4f}" for p in r.psnrs)
            out.append(f"{self.suite}\t{r.label}\t{r.mean:.4f}\t{r.spread:.4f}\t{scores}\t{r.published:.2f}")
        return "\n".join(out) + "\n"


def ordering_labels(suite: str) -> tuple:
    """The two rows the suite's verdict compares."""
    return ORDERINGS[suite][:2]


def judge(suite: str, table: AblationTable) -> tuple:
    """Ordering verdict for a suite; returns (verdict text, passed)."""
    better, worse, strict = ORDERINGS[suite]
    a, b = table.row(better), table.row(worse)
    diff = a.mean - b.mean
    if strict:
        ok = diff >= 0
        word = "holds" if ok else "violated"
        return f"{better} >= {worse}: {word} ({diff:+.3f} dB)", ok
    # significant reversal: worse variant ahead by more than two standard errors
    se = float(np.sqrt(a.std ** 2 / len(a.psnrs) + b.std ** 2 / len(b.psnrs)))
    if diff >= 0:
        return f"{better} >= {worse}: holds ({diff:+.3f} dB)", True
    if -diff <= 2 * se:
        return f"{better} vs {worse}: inconclusive ({diff:+.3f} dB, 2 SE = {2 * se:.3f})", True
    return f"{better} vs {worse}: significant reversal ({diff:+.3f} dB, 2 SE = {2 * se:.3f})", False


def run_ablation(suite: str, base: ExperimentConfig, train_set: Dataset, eval_set: Dataset,
                 seeds=(0, 1, 2), include_pcd: bool = False, cache: dict | None = None,
                 log=None, labels=None) -> AblationTable:
    """Train and score every variant of ``suite`` for each seed.

    ``cache`` maps (config hash) -> PSNR and lets suites share runs, e.g. the
    base configuration that appears in every suite. ``labels`` restricts the
    rows to a subset (the ordering pair must be included).
    """
    if suite not in SUITES:
        raise KeyError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    cache = {} if cache is None else cache
    variants = list(SUITES[suite]) + ([PCD_ROW] if include_pcd and suite == "alignment" else [])
    if labels is not None:
        variants = [v for v in variants if v[0] in labels]
    table = AblationTable(suite)
    for label, changes, published in variants:
        scores = []
        for seed in seeds:
            cfg = base.replace(seed=seed, **changes)
            key = cfg.config_hash()
            if key not in cache:
                model, _ = train(cfg, train_set)
                cache[key] = evaluate(model, eval_set, cfg.radius).psnr
                if log:
                    log(f"{suite:<12} {label:<18} seed {seed}  PSNR {cache[key]:.3f}")
            scores.append(cache[key])
        table.rows.append(AblationRow(label, scores, published))
    table.verdict, table.passed = judge(suite, table)
    return table
