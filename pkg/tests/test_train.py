import importlib

import numpy as np
import pytest

from pfan import checkpoint
from pfan.checkpoint import CheckpointError
from pfan.data import from_clips
from pfan.losses import PSNR_CAP, capped, psnr, quantize8
from pfan.model import PFAN
from pfan.synth import SceneSpec, Sprite, random_scene, render_clip
from pfan.tensor import Tensor
from pfan.train import (
    ExperimentConfig,
    RunReport,
    TrainingDiverged,
    evaluate,
    evaluate_with_baseline,
    load_model,
    sharp_levels,
    train,
)

train_mod = importlib.import_module("pfan.train")

TINY = ExperimentConfig(widths=(4, 6, 8), blocks=1, iterations=10, batch=1, crop=16, log_every=0)


@pytest.fixture(scope="module")
def dataset():
    rng = np.random.default_rng(11)
    return from_clips([render_clip(random_scene(rng, height=16, width=16, frames=4, exposures=4))
                       for _ in range(2)])


# ---------------------------------------------------------------- config


def test_defaults_follow_the_desk_protocol():
    cfg = ExperimentConfig()
    assert (cfg.levels, cfg.widths, cfg.radius, cfg.variant, cfg.supervision) == (3, (16, 24, 32), 1, "cgda", "IV")
    assert (cfg.lr, cfg.beta1, cfg.beta2, cfg.eps) == (1e-4, 0.9, 0.999, 1e-8)
    assert cfg.lr_period == 500 and cfg.batch == 2 and cfg.clip_norm == 10.0


def test_config_hash_ignores_line_order():
    text = TINY.to_text()
    lines = text.splitlines()
    shuffled = "\n".join(reversed(lines)) + "\n# trailing comment\n"
    assert ExperimentConfig.from_text(shuffled).config_hash() == TINY.config_hash()
    assert ExperimentConfig.from_text(text) == TINY


def test_config_hash_changes_with_values():
    assert TINY.replace(seed=1).config_hash() != TINY.config_hash()


def test_config_parsing():
    cfg = ExperimentConfig.from_text("widths = 8,12\nlevels = 2\nsdd = false\nlr = 3e-4\nvariant = none\n")
    assert cfg.widths == (8, 12) and cfg.levels == 2 and cfg.sdd is False
    assert cfg.lr == 3e-4 and cfg.variant == "none"
    with pytest.raises(ValueError):
        ExperimentConfig.from_text("colour = red\n")
    with pytest.raises(ValueError):
        ExperimentConfig.from_text("sdd = maybe\n")
    with pytest.raises(ValueError, match="line 2"):
        ExperimentConfig.from_text("levels = 3\nnonsense\n")


def test_supervision_types_and_variants_map():
    assert ExperimentConfig(supervision="II").loss_config().supervised == (1, 3)
    assert ExperimentConfig(supervision="III").loss_config().supervised == (1, 2)
    assert ExperimentConfig(levels=2, supervision="IV").loss_config().supervised == (1, 2)
    assert ExperimentConfig(variant="3dcn").model_config().variant == "3dcn"


def test_level_widths_extend_for_deeper_pyramids():
    assert ExperimentConfig(levels=2).level_widths() == (16, 24)
    assert ExperimentConfig(levels=4).level_widths() == (16, 24, 32, 40)


def test_report_formats():
    rep = RunReport(config_hash="abc", seed=3, losses=[(0, 0.5), (1, 0.25)], evals=[(1, 30.0, 0.9)],
                    frames=[("clip_0000/0001", 30.0, 0.9)], baseline=(28.0, 0.8), epe=[(1, 0.5, 2.0)])
    text = rep.delimited()
    assert text.splitlines()[0] == "# config abc seed 3"
    assert "loss\t1\t0.25" in text and "baseline\tidentity\t28.0000\t0.80000" in text
    assert "PSNR 30.000 dB" in rep.summary()


# ---------------------------------------------------------------- training


def test_zero_iterations_keep_initialisation(dataset, tmp_path):
    cfg = TINY.replace(iterations=0)
    model, report = train(cfg, dataset, out_dir=tmp_path)
    init = PFAN(cfg.model_config(), seed=cfg.seed).state_dict()
    saved = checkpoint.load(tmp_path / "model.ckpt")
    assert report.losses == []
    for name, value in init.items():
        np.testing.assert_array_equal(saved[name], value)
    assert (tmp_path / "config.txt").read_text() == cfg.to_text()


def test_same_seed_gives_bitwise_identical_runs(dataset):
    a_model, a = train(TINY, dataset)
    b_model, b = train(TINY, dataset)
    assert [v for _, v in a.losses] == [v for _, v in b.losses]
    sa, sb = a_model.state_dict(), b_model.state_dict()
    assert all(sa[k].tobytes() == sb[k].tobytes() for k in sa)
    assert [i for i, _ in a.losses] == list(range(10))


def test_different_seed_changes_the_trace(dataset):
    _, a = train(TINY.replace(iterations=3), dataset)
    _, b = train(TINY.replace(iterations=3, seed=1), dataset)
    assert [v for _, v in a.losses] != [v for _, v in b.losses]


def test_type_i_training_leaves_coarse_heads_untouched(dataset):
    cfg = TINY.replace(iterations=3, supervision="I")
    init = PFAN(cfg.model_config(), seed=cfg.seed).state_dict()
    model, _ = train(cfg, dataset)
    state = model.state_dict()
    for k in (1, 2):
        for part in ("weight", "bias"):
            name = f"decoder.heads.{k}.{part}"
            np.testing.assert_array_equal(state[name], init[name])
    assert np.abs(state["decoder.heads.0.weight"] - init["decoder.heads.0.weight"]).max() > 0


def test_overfit_single_window():
    spec = SceneSpec(height=16, width=16, frames=3, exposures=6, texture_contrast=0.35)
    spec.camera = [(1.5, 2.0)] * 3
    spec.sprites = [Sprite("disc", 6, 8, 8, vx=-2.0, color=(0.9, 0.2, 0.1))]
    ds = from_clips([render_clip(spec)])
    assert ds.windows(1) == [(0, 1)]
    cfg = TINY.replace(widths=(8, 12, 16), iterations=500, crop=0, lr=1e-3, lr_period=10_000)
    _, report = train(cfg, ds)
    first, last = report.losses[0][1], report.losses[-1][1]
    assert last < 0.1 * first


def test_divergence_rolls_back_and_saves_last_finite_state(dataset, tmp_path, monkeypatch):
    good_model, _ = train(TINY.replace(iterations=2), dataset)
    real = train_mod.total_loss
    calls = {"n": 0}

    def flaky(pred, target, cfg):
        calls["n"] += 1
        loss = real(pred, target, cfg)
        if calls["n"] == 3:
            return loss * Tensor(np.full(loss.dims, np.nan, dtype=loss.dtype))
        return loss

    monkeypatch.setattr(train_mod, "total_loss", flaky)
    model = PFAN(TINY.model_config(), seed=TINY.seed)
    with pytest.raises(TrainingDiverged, match="iteration 2"):
        train(TINY.replace(iterations=5), dataset, out_dir=tmp_path, model=model)
    saved = checkpoint.load(tmp_path / "model.ckpt")
    for name, value in good_model.state_dict().items():
        np.testing.assert_array_equal(model.state_dict()[name], value)
        np.testing.assert_array_equal(saved[name], value)


def test_periodic_checkpoints(dataset, tmp_path):
    model, report = train(TINY.replace(iterations=4, checkpoint_every=2), dataset, out_dir=tmp_path)
    assert (tmp_path / "model.ckpt").exists()
    assert (tmp_path / "report.tsv").read_text().count("loss\t") == 4


def test_eval_during_training(dataset):
    _, report = train(TINY.replace(iterations=4), dataset, eval_set=dataset, eval_every=2)
    assert [i for i, _, _ in report.evals] == [1, 3]


# ---------------------------------------------------------------- evaluation


def test_identity_baseline_reproduces_blurry_psnr(dataset):
    rep = evaluate(None, dataset, identity=True)
    direct = []
    for ci, t in dataset.windows(1):
        c = dataset.clips[ci]
        a = quantize8(c.blurry[t]) / 255.0
        b = quantize8(c.sharp[t]) / 255.0
        direct.append(capped(psnr(a, b)))
    assert rep.psnr == pytest.approx(np.mean(direct), abs=1e-12)
    assert len(rep.frames) == len(dataset.windows(1))


def test_static_clip_identity_is_capped():
    spec = SceneSpec(height=16, width=16, frames=3)
    spec.sprites = [Sprite("square", 5, 8, 8)]
    rep = evaluate(None, from_clips([render_clip(spec)]), identity=True)
    assert rep.psnr == PSNR_CAP


def test_checkpoint_round_trip_reproduces_metrics(dataset, tmp_path):
    model, _ = train(TINY.replace(iterations=3), dataset, out_dir=tmp_path)
    before = evaluate(model, dataset)
    loaded = load_model(TINY.replace(iterations=3), tmp_path / "model.ckpt")
    after = evaluate(loaded, dataset)
    assert before.frames == after.frames


def test_incompatible_checkpoint_lists_offenders(dataset, tmp_path):
    train(TINY.replace(iterations=0), dataset, out_dir=tmp_path)
    with pytest.raises(CheckpointError, match=r"decoder\.heads\.2\.weight: checkpoint \(3, 8, 3, 3\) vs model \(3, 10, 3, 3\)"):
        load_model(TINY.replace(widths=(4, 6, 10)), tmp_path / "model.ckpt")
    with pytest.raises(CheckpointError, match="missing"):
        load_model(TINY.replace(levels=3, widths=(4, 6, 8), blocks=2), tmp_path / "model.ckpt")


def test_evaluation_writes_restored_frames(dataset, tmp_path):
    model = PFAN(TINY.model_config(), seed=0)
    rep = evaluate_with_baseline(model, dataset, out_dir=tmp_path)
    assert len(list(tmp_path.glob("clip_*/restored_*.ppm"))) == len(dataset.windows(1))
    # untrained residual model is the identity
    assert rep.psnr == pytest.approx(rep.baseline[0])


def test_sharp_levels_are_block_means():
    x = np.arange(2 * 3 * 4 * 4, dtype=np.float64).reshape(2, 3, 4, 4)
    lv = sharp_levels(x, 3)
    assert [a.shape for a in lv] == [(2, 3, 4, 4), (2, 3, 2, 2), (2, 3, 1, 1)]
    np.testing.assert_allclose(lv[2][..., 0, 0], x.mean(axis=(2, 3)))
