import json

import numpy as np
import pytest
from typer.testing import CliRunner

from perceptual_dehaze.cli import app
from perceptual_dehaze.models.network import init_params, save_checkpoint
from perceptual_dehaze.utils.image import load_image, save_image

runner = CliRunner()


@pytest.fixture
def checkpoint(tmp_path):
    params = init_params(seed=0)
    params.layers[-1].biases[...] = 0.8
    return save_checkpoint(params, tmp_path / "model.npz")


def test_help_lists_commands():
    result = runner.invoke(app, ["--help"])
    assert result.exit_code == 0
    for command in ("synthesize", "train", "dehaze", "eval", "gradcheck", "sweep"):
        assert command in result.output


def test_train_help_shows_options():
    result = runner.invoke(app, ["train", "--help"])
    assert result.exit_code == 0
    assert "--epochs" in result.output
    assert "--luminance" in result.output


def test_synthesize(tmp_path):
    out = tmp_path / "data"
    result = runner.invoke(
        app,
        ["synthesize", "--n-train", "2", "--n-val", "1", "--n-test", "1", "--patch-size", "32", "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    for split, n in (("train", 2), ("val", 1), ("test", 1)):
        lines = (out / f"{split}.txt").read_text().splitlines()
        assert len([line for line in lines if line and not line.startswith("#")]) == n


def test_synthesize_rejects_bad_range(tmp_path):
    result = runner.invoke(app, ["synthesize", "--beta-range", "1.6,0.4", "--out", str(tmp_path / "data")])
    assert result.exit_code == 1
    assert "beta_range" in result.output


def test_missing_config_file(tmp_path):
    result = runner.invoke(app, ["synthesize", "--config", str(tmp_path / "none.conf")])
    assert result.exit_code == 1
    assert "not found" in result.output


def test_train_needs_a_readable_manifest(tmp_path):
    result = runner.invoke(
        app, ["train", "--train-manifest", str(tmp_path / "missing.txt"), "--out", str(tmp_path / "run")]
    )
    assert result.exit_code == 1
    assert "Error" in result.output


def test_train_then_eval(tiny_dataset, tmp_path):
    train_manifest, val_manifest, test_manifest = tiny_dataset
    run = tmp_path / "run"
    result = runner.invoke(
        app,
        [
            "train",
            "--train-manifest", str(train_manifest),
            "--val-manifest", str(val_manifest),
            "--epochs", "1",
            "--batch-size", "2",
            "--out", str(run),
        ],
    )
    assert result.exit_code == 0, result.output
    assert "Final train loss" in result.output
    assert (run / "config.json").exists()
    last = run / "checkpoints" / "last.npz"
    assert last.exists()

    report_dir = tmp_path / "eval"
    result = runner.invoke(
        app, ["eval", "--checkpoint", str(last), "--manifest", str(test_manifest), "--out", str(report_dir)]
    )
    assert result.exit_code == 0, result.output
    assert "mean_psnr_db=" in result.output
    assert (report_dir / "report.csv").read_text().startswith("image_id,psnr_db,ssim")
    assert (report_dir / "report.json").exists()


def test_eval_needs_checkpoint_and_manifest(tiny_dataset):
    result = runner.invoke(app, ["eval", "--manifest", str(tiny_dataset[2])])
    assert result.exit_code == 1


@pytest.mark.parametrize("shape", [(20, 24, 3), (20, 24)])
def test_dehaze_keeps_dimensions(checkpoint, tmp_path, rng, shape):
    source = tmp_path / "hazy.png"
    save_image(rng.uniform(size=shape), source)
    target = tmp_path / "out" / "clear.png"
    result = runner.invoke(app, ["dehaze", str(source), str(target), "--checkpoint", str(checkpoint)])
    assert result.exit_code == 0, result.output
    assert result.output == ""
    assert np.asarray(load_image(target)).shape == np.asarray(load_image(source)).shape


def test_dehaze_rejects_corrupt_checkpoint(tmp_path, rng):
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"not a checkpoint")
    source = tmp_path / "hazy.png"
    save_image(rng.uniform(size=(8, 8, 3)), source)
    result = runner.invoke(app, ["dehaze", str(source), str(tmp_path / "out.png"), "--checkpoint", str(bad)])
    assert result.exit_code == 1
    assert "Error" in result.output
    assert not (tmp_path / "out.png").exists()


def test_gradcheck_passes():
    result = runner.invoke(app, ["gradcheck", "L2"])
    assert result.exit_code == 0, result.output
    assert "pass" in result.output
    assert "FAIL" not in result.output


def test_gradcheck_unknown_loss():
    result = runner.invoke(app, ["gradcheck", "L3"])
    assert result.exit_code == 2


def test_sweep_rejects_non_numeric_alphas(tiny_dataset):
    train_manifest, val_manifest, _ = tiny_dataset
    result = runner.invoke(
        app,
        ["sweep", "--alphas", "0.1,high", "--train-manifest", str(train_manifest), "--val-manifest", str(val_manifest)],
    )
    assert result.exit_code == 1


def test_sweep_needs_mix_loss(tiny_dataset, tmp_path):
    train_manifest, val_manifest, _ = tiny_dataset
    result = runner.invoke(
        app,
        [
            "sweep",
            "--alphas", "0.5",
            "--train-manifest", str(train_manifest),
            "--val-manifest", str(val_manifest),
            "--loss", "L2",
            "--out", str(tmp_path / "sweep"),
        ],
    )
    assert result.exit_code == 1
    assert "mix loss" in result.output


def test_sweep_writes_table(tiny_dataset, tmp_path):
    train_manifest, val_manifest, _ = tiny_dataset
    out = tmp_path / "sweep"
    config = tmp_path / "sweep.conf"
    config.write_text("loss = MSSSIM_L2\nsigmas = 0.5,1,2\n")
    result = runner.invoke(
        app,
        [
            "sweep",
            "--alphas", "0,1",
            "--config", str(config),
            "--train-manifest", str(train_manifest),
            "--val-manifest", str(val_manifest),
            "--epochs", "1",
            "--out", str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "alpha,psnr_db,ssim"
    assert len(lines) == 3


def test_dehaze_reads_checkpoint_from_config(checkpoint, tmp_path, rng):
    source = tmp_path / "hazy.png"
    save_image(rng.uniform(size=(20, 20, 3)), source)
    config = tmp_path / "dehaze.conf"
    config.write_text(f"checkpoint = {checkpoint}\n")
    target = tmp_path / "clear.png"
    result = runner.invoke(app, ["dehaze", str(source), str(target), "--config", str(config), "--seed", "3"])
    assert result.exit_code == 0, result.output
    assert target.exists()


def test_dehaze_needs_a_checkpoint(tmp_path, rng):
    source = tmp_path / "hazy.png"
    save_image(rng.uniform(size=(8, 8, 3)), source)
    result = runner.invoke(app, ["dehaze", str(source), str(tmp_path / "out.png")])
    assert result.exit_code == 1
    assert "checkpoint is required" in result.output


def test_train_passes_optimizer_and_loss_flags(tiny_dataset, tmp_path):
    train_manifest, _, _ = tiny_dataset
    run = tmp_path / "run"
    result = runner.invoke(
        app,
        [
            "train",
            "--train-manifest", str(train_manifest),
            "--epochs", "1",
            "--batch-size", "3",
            "--momentum", "0.5",
            "--weight-decay", "0",
            "--c1", "0.02",
            "--c2", "0.04",
            "--init-std", "0.02",
            "--unscaled-pixel-grads",
            "--out", str(run),
        ],
    )
    assert result.exit_code == 0, result.output
    saved = json.loads((run / "config.json").read_text())
    assert saved["momentum"] == 0.5
    assert saved["weight_decay"] == 0.0
    assert saved["c1"] == 0.02
    assert saved["c2"] == 0.04
    assert saved["init_std"] == 0.02
    assert saved["unscaled_pixel_grads"] is True


def test_train_help_lists_every_optimizer_flag():
    result = runner.invoke(app, ["train", "--help"], env={"COLUMNS": "200"})
    assert result.exit_code == 0
    for flag in ("--momentum", "--weight-decay", "--c1", "--c2", "--init-std", "--unscaled-pixel-grads"):
        assert flag in result.output


def test_gradcheck_takes_seed_and_config(tmp_path):
    config = tmp_path / "check.conf"
    config.write_text("seed = 4\n")
    result = runner.invoke(app, ["gradcheck", "L2", "--config", str(config)])
    assert result.exit_code == 0, result.output
    result = runner.invoke(app, ["gradcheck", "L2", "--seed", "9"])
    assert result.exit_code == 0, result.output
    assert "FAIL" not in result.output


def _run_everything(root):
    data = root / "data"
    result = runner.invoke(
        app,
        [
            "synthesize", "--seed", "7", "--threads", "1",
            "--n-train", "2", "--n-val", "1", "--n-test", "1", "--patch-size", "32",
            "--out", str(data),
        ],
    )
    assert result.exit_code == 0, result.output
    result = runner.invoke(
        app,
        [
            "train", "--seed", "7", "--threads", "1",
            "--train-manifest", str(data / "train.txt"),
            "--val-manifest", str(data / "val.txt"),
            "--epochs", "2",
            "--batch-size", "2",
            "--out", str(root / "run"),
        ],
    )
    assert result.exit_code == 0, result.output
    return sorted(path.relative_to(root) for path in root.rglob("*") if path.is_file())


def test_same_seed_reproduces_every_output(tmp_path):
    first = _run_everything(tmp_path / "first")
    second = _run_everything(tmp_path / "second")
    assert first == second
    assert any(path.suffix == ".png" for path in first)
    assert any(path.suffix == ".npz" for path in first)

    for relative in first:
        a, b = tmp_path / "first" / relative, tmp_path / "second" / relative
        if relative.name == "config.json":
            # holds the absolute manifest paths
            continue
        if relative.suffix == ".npz":
            with np.load(a) as left, np.load(b) as right:
                assert sorted(left.files) == sorted(right.files)
                for key in left.files:
                    assert np.array_equal(left[key], right[key]), f"{relative}:{key}"
        else:
            assert a.read_bytes() == b.read_bytes(), relative
