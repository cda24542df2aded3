"""Command-line entry point: synth, train, eval, ablate, gradcheck, align-probe."""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import gradcheck
from .ablation import SUITES, run_ablation
from .data import from_clips, read_dataset, write_dataset
from .synth import random_scene, render_clip
from .train import ExperimentConfig, evaluate_with_baseline, load_model, train


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    defaults = ExperimentConfig()
    for f in fields(ExperimentConfig):
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", default=None,
                       metavar=type(getattr(defaults, f.name)).__name__.upper())


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return ExperimentConfig.from_mapping(overrides, cfg)


def _split(ds, held_out: int):
    n = len(ds)
    if held_out <= 0 or held_out >= n:
        raise SystemExit(f"held-out clip count must be in 1..{n - 1}")
    return ds.subset(range(n - held_out)), ds.subset(range(n - held_out, n))


def cmd_synth(args) -> int:
    rng = np.random.default_rng(args.seed)
    clips = []
    for i in range(args.clips):
        spec = random_scene(rng, height=args.size, width=args.size, frames=args.frames,
                            exposures=args.exposures, pure_translation=args.translation)
        clips.append(render_clip(spec))
    write_dataset(clips, args.out, radius=args.radius, exposures=args.exposures)
    print(f"wrote {len(clips)} clips of {args.frames} frames to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    tr, te = _split(read_dataset(args.data), args.held_out)
    model, report = train(cfg, tr, out_dir=args.out, log=print)
    ev = evaluate_with_baseline(model, te, cfg.radius)
    report.evals, report.frames, report.baseline = ev.evals, ev.frames, ev.baseline
    out = Path(args.out)
    (out / "report.tsv").write_text(report.delimited())
    (out / "summary.txt").write_text(report.summary() + "\n")
    print(report.summary())
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    ds = read_dataset(args.data)
    model = load_model(cfg, args.checkpoint)
    report = evaluate_with_baseline(model, ds, cfg.radius, out_dir=args.frames_out)
    if args.report:
        Path(args.report).write_text(report.delimited())
    print(report.summary())
    if args.require_gain is not None:
        gain = report.psnr - report.baseline[0]
        ok = gain >= args.require_gain
        print(f"PSNR gain {gain:+.3f} dB (required {args.require_gain:+.3f}): {'PASS' if ok else 'FAIL'}")
        return 0 if ok else 1
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    tr, te = _split(read_dataset(args.data), args.held_out)
    suites = list(SUITES) if args.suite == "all" else [args.suite]
    seeds = tuple(range(args.seeds))
    cache: dict = {}
    failed = False
    rows = []
    for suite in suites:
        table = run_ablation(suite, cfg, tr, te, seeds=seeds, include_pcd=args.pcd, cache=cache, log=print)
        print(table.text())
        rows.append(table.delimited())
        failed |= not table.passed
    if args.report:
        Path(args.report).write_text("".join(rows))
    return 1 if failed else 0


def cmd_gradcheck(args) -> int:
    results = gradcheck.run(args.scope, seed=args.seed)
    for r in results:
        print("\n".join(r.lines()))
    return 0 if all(r.passed for r in results) else 1


def cmd_align_probe(args) -> int:
    from . import probe

    ds = read_dataset(args.data) if args.data else from_clips(
        [render_clip(random_scene(np.random.default_rng(args.seed + i), pure_translation=True))
         for i in range(args.clips)])
    tr, te = _split(ds, args.held_out)
    base = probe.measure(None, te)
    model = probe.probe_model(seed=args.seed)
    probe.train_probe(model, tr, iterations=args.iterations, lr=args.lr, crop=args.crop,
                      seed=args.seed, log=print)
    trained = probe.measure(model, te)
    print(trained.text())
    b, t = base.level_mean(1), trained.level_mean(1)
    ok = t <= 0.5 * b
    print(f"level-1 mean EPE: zero-offset {b:.4f}  trained {t:.4f}  "
          f"reduction {100 * (1 - t / b):.1f}% (required 50%): {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pfan", description="Pyramid feature alignment deblurring, desk scale")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic blurry/sharp dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, default=40)
    p.add_argument("--frames", type=int, default=12)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--exposures", type=int, default=8)
    p.add_argument("--radius", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--translation", action="store_true", help="pure global translation clips")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a dataset, evaluate on its last clips")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--held-out", type=int, default=8)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint against the identity baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frames-out", help="directory for restored PPM frames")
    p.add_argument("--report", help="delimited per-frame report file")
    p.add_argument("--require-gain", type=float, help="fail unless PSNR gain (dB) reaches this")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run ablation suites and ordering verdicts")
    p.add_argument("--data", required=True)
    p.add_argument("--suite", choices=list(SUITES) + ["all"], default="all")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--held-out", type=int, default=8)
    p.add_argument("--pcd", action="store_true", help="add the simplified PCD row")
    p.add_argument("--report")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--scope", default="all",
                   help="an op name, 'ops', 'model' or 'all'; ops: " + ", ".join(gradcheck.OP_SCOPES))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("align-probe", help="end-point error of learned offsets on translations")
    p.add_argument("--data", help="pure-translation dataset (rendered on the fly when omitted)")
    p.add_argument("--clips", type=int, default=12)
    p.add_argument("--held-out", type=int, default=4)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--crop", type=int, default=32, help="training crop size; 0 for whole frames")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_align_probe)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
