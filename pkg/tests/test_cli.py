import pytest

from pfan.cli import _config, build_parser, main
from pfan.data import read_dataset
from pfan.train import ExperimentConfig

TINY_FLAGS = ["--widths", "4,6,8", "--blocks", "1", "--batch", "1", "--crop", "16", "--log-every", "0"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(root), "--clips", "3", "--frames", "4", "--size", "16",
                 "--exposures", "3", "--seed", "2"]) == 0
    return root


def test_synth_writes_a_readable_dataset(data_dir):
    ds = read_dataset(data_dir)
    assert len(ds) == 3 and ds.exposures == 3
    assert ds.clips[0].blurry.shape == (4, 3, 16, 16)


def test_flags_override_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("levels = 2\nlr = 0.001\nseed = 4\n")
    args = build_parser().parse_args(["train", "--data", "d", "--out", "o", "--config", str(path), "--seed", "9"])
    cfg = _config(args)
    assert cfg == ExperimentConfig(levels=2, lr=0.001, seed=9)


def test_train_then_eval(data_dir, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--data", str(data_dir), "--out", str(out), "--held-out", "1",
                 "--iterations", "2"] + TINY_FLAGS) == 0
    for name in ("config.txt", "model.ckpt", "report.tsv", "summary.txt"):
        assert (out / name).exists()
    assert "identity baseline" in capsys.readouterr().out

    report = tmp_path / "eval.tsv"
    frames = tmp_path / "frames"
    code = main(["eval", "--data", str(data_dir), "--checkpoint", str(out / "model.ckpt"),
                 "--config", str(out / "config.txt"), "--report", str(report), "--frames-out", str(frames)])
    assert code == 0
    assert report.read_text().count("frame\t") == 3 * 2
    assert len(list(frames.glob("*/restored_*.ppm"))) == 6


def test_eval_exit_code_follows_required_gain(data_dir, tmp_path):
    out = tmp_path / "run"
    main(["train", "--data", str(data_dir), "--out", str(out), "--held-out", "1", "--iterations", "0"] + TINY_FLAGS)
    common = ["eval", "--data", str(data_dir), "--checkpoint", str(out / "model.ckpt"),
              "--config", str(out / "config.txt")]
    # an untrained residual model is the identity: zero gain
    assert main(common + ["--require-gain", "0"]) == 0
    assert main(common + ["--require-gain", "2"]) == 1


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--scope", "up2"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_ablate_command(data_dir, tmp_path, capsys):
    report = tmp_path / "ablation.tsv"
    code = main(["ablate", "--data", str(data_dir), "--suite", "sdd", "--seeds", "2", "--held-out", "1",
                 "--iterations", "1", "--report", str(report)] + TINY_FLAGS)
    text = capsys.readouterr().out
    assert "suite sdd" in text and "verdict:" in text
    assert code == (0 if ("holds" in text or "inconclusive" in text) else 1)
    assert report.read_text().count("sdd\t") == 2


def test_align_probe_command(tmp_path, capsys):
    root = tmp_path / "translation"
    main(["synth", "--out", str(root), "--clips", "2", "--frames", "3", "--size", "16", "--translation"])
    code = main(["align-probe", "--data", str(root), "--held-out", "1", "--iterations", "1", "--crop", "16"])
    text = capsys.readouterr().out
    assert "level-1 mean EPE" in text
    assert code in (0, 1)


def test_unknown_config_key_is_rejected(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("colour = blue\n")
    args = build_parser().parse_args(["train", "--data", "d", "--out", "o", "--config", str(path)])
    with pytest.raises(ValueError, match="colour"):
        _config(args)
