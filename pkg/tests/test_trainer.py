import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from perceptual_dehaze.models.network import ParamGrads, init_params, load_checkpoint
from perceptual_dehaze.models.schemas import DatasetSpec, DepthKind, FineTuneConfig, LossKind, LossSpec, TrainConfig
from perceptual_dehaze.services.dataset import Sample, build_dataset, load_samples
from perceptual_dehaze.services.metrics import evaluate_samples
from perceptual_dehaze.services.trainer import (
    OptimState,
    Trainer,
    TrainingAborted,
    alpha_sweep,
    clip_gradients,
    sgd_step,
    train,
)

# 32x32 tiny-dataset images need Gaussian scales whose windows fit
SMALL_SIGMAS = [0.5, 1.0, 2.0]


def _filled(params, value):
    grads = ParamGrads.zeros_like(params)
    for a in grads.arrays():
        a[...] = value
    return grads


def _random_grads(params, rng, norm):
    grads = ParamGrads.zeros_like(params)
    for a in grads.arrays():
        a[...] = rng.standard_normal(a.shape)
    return grads.scaled(norm / grads.global_norm())


def _flat(grads):
    return np.concatenate([a.ravel() for a in grads.arrays()])


def test_clip_leaves_small_gradients_alone(rng):
    grads = _random_grads(init_params(), rng, 0.05)
    assert clip_gradients(grads, 0.1) is grads


@pytest.mark.parametrize("norm", [2.0, 1e6])
def test_clip_scales_to_threshold_and_keeps_direction(rng, norm):
    grads = _random_grads(init_params(), rng, norm)
    clipped = clip_gradients(grads, 0.1)
    assert clipped.global_norm() <= 0.1 + 1e-9
    assert clipped.global_norm() == pytest.approx(0.1, abs=1e-9)
    a, b = _flat(grads), _flat(clipped)
    assert np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)) == pytest.approx(1.0, abs=1e-12)


def test_clip_value_mode(rng):
    grads = _random_grads(init_params(), rng, 50.0)
    clipped = clip_gradients(grads, 0.1, mode="value")
    assert np.abs(_flat(clipped)).max() <= 0.1


def test_clip_rejects_non_finite():
    grads = ParamGrads.zeros_like(init_params())
    grads.weights[2][0, 0, 0, 0] = np.nan
    with pytest.raises(TrainingAborted, match="Non-finite"):
        clip_gradients(grads, 0.1)


def test_plain_sgd_without_momentum_or_decay():
    params = init_params(seed=1)
    grads = _filled(params, 0.3)
    config = TrainConfig(base_lr=0.5, momentum=0.0, weight_decay=0.0, clip_norm=1e9)
    new, state = sgd_step(params, grads, OptimState.zeros_like(params), config)
    for old, updated in zip(params.weights, new.weights):
        assert_allclose(updated, old - 0.15, atol=1e-15)
    assert state.iteration == 1


def test_momentum_keeps_moving_with_zero_gradient():
    params = init_params(seed=1)
    config = TrainConfig(momentum=0.9, weight_decay=0.0, clip_norm=1e9)
    state = OptimState.zeros_like(params)
    state.velocity_biases = [np.full_like(b, 0.2) for b in params.biases]
    new, _ = sgd_step(params, ParamGrads.zeros_like(params), state, config)
    for old, updated in zip(params.biases, new.biases):
        assert_allclose(updated, old + 0.9 * 0.2)


def test_sgd_matches_scalar_recurrence():
    params = init_params()
    for layer in params.layers:
        layer.weights[...] = 0.7
        layer.biases[...] = 0.3
    config = TrainConfig(base_lr=0.05, momentum=0.9, weight_decay=0.01, clip_norm=1e9)
    state = OptimState.zeros_like(params)

    w, b, vw, vb = 0.7, 0.3, 0.0, 0.0
    for _ in range(10):
        # gradient of the quadratic 0.5 * p^2 is p itself
        grads = ParamGrads([np.full_like(x, w) for x in params.weights], [np.full_like(x, b) for x in params.biases])
        params, state = sgd_step(params, grads, state, config)
        vw = 0.9 * vw - 0.05 * (w + 0.01 * w)
        vb = 0.9 * vb - 0.05 * b
        w, b = w + vw, b + vb
        for layer in params.layers:
            assert_allclose(layer.weights, w, rtol=0, atol=1e-12)
            assert_allclose(layer.biases, b, rtol=0, atol=1e-12)
    assert state.iteration == 10


def test_weight_decay_skips_biases():
    params = init_params()
    for layer in params.layers:
        layer.weights[...] = 2.0
        layer.biases[...] = 5.0
    config = TrainConfig(base_lr=0.1, momentum=0.0, weight_decay=0.5, clip_norm=1e9)
    new, _ = sgd_step(params, ParamGrads.zeros_like(params), OptimState.zeros_like(params), config)
    for layer in new.layers:
        assert_array_equal(layer.biases, 5.0)
        assert_allclose(layer.weights, 2.0 - 0.1 * 0.5 * 2.0)


def test_sgd_rejects_mismatched_shapes():
    params = init_params()
    grads = ParamGrads.zeros_like(params)
    grads.weights[0] = np.zeros((3, 3, 3, 3))
    with pytest.raises(ValueError, match="shapes"):
        sgd_step(params, grads, OptimState.zeros_like(params), TrainConfig())


def test_default_config_clips_each_component():
    config = TrainConfig()
    assert config.clip_mode == "value"
    assert config.clip_norm == 0.1
    assert config.base_lr == 0.01
    assert config.init_std == 0.01


def test_value_clipping_bounds_every_step_component(rng):
    params = init_params()
    grads = _random_grads(params, rng, 50.0)
    config = TrainConfig(momentum=0.0, weight_decay=0.0)
    new, _ = sgd_step(params, grads, OptimState.zeros_like(params), config)
    steps = np.concatenate([(b - a).ravel() for a, b in zip(params.weights, new.weights)])
    assert np.abs(steps).max() <= 0.01 * 0.1 + 1e-15


@pytest.mark.parametrize(
    "kind",
    [
        LossKind.L2,
        pytest.param(LossKind.L1, marks=pytest.mark.slow),
        pytest.param(LossKind.MSSSIM_L2, marks=pytest.mark.slow),
        pytest.param(LossKind.MSSSIM_L1, marks=pytest.mark.slow),
    ],
)
def test_overfits_one_sample_from_default_init(kind, mild_sample):
    config = TrainConfig(epochs=200, batch_size=1, log_every=1, loss=LossSpec(kind=kind))
    _, history = Trainer(config).fit([mild_sample])
    initial = history.points[0].loss
    final = history.epochs[-1].train_loss
    assert len(history.points) == 200
    assert final < 0.2 * initial


def test_training_is_deterministic_across_threads(tiny_dataset):
    train_manifest, val_manifest, _ = tiny_dataset
    config = TrainConfig(
        epochs=2, batch_size=2, log_every=1, seed=3, loss=LossSpec(kind=LossKind.MSSSIM_L2, sigmas=SMALL_SIGMAS)
    )
    p1, h1 = train(train_manifest, val_manifest, config, threads=1)
    p2, h2 = train(train_manifest, val_manifest, config, threads=3)
    assert h1 == h2
    for a, b in zip(p1.layers, p2.layers):
        assert_array_equal(a.weights, b.weights)


def test_history_logging_schedule(tiny_dataset):
    train_manifest, _, _ = tiny_dataset
    config = TrainConfig(epochs=4, batch_size=1, log_every=5)
    _, history = train(train_manifest, None, config)
    # 3 samples per epoch at batch size 1 gives 12 iterations
    assert [p.iteration for p in history.points] == [1, 5, 10]
    assert [e.epoch for e in history.epochs] == [1, 2, 3, 4]
    assert all(e.val_ssim is None for e in history.epochs)


def test_run_directory_contents(tiny_dataset, tmp_path):
    train_manifest, val_manifest, _ = tiny_dataset
    out = tmp_path / "run"
    config = TrainConfig(epochs=2, batch_size=2)
    params, history = train(train_manifest, val_manifest, config, out_dir=out)

    names = {p.name for p in (out / "checkpoints").iterdir()}
    assert names == {"epoch_001.npz", "epoch_002.npz", "last.npz", "best.npz"}
    assert (out / "history.csv").read_text().splitlines()[0] == "iteration,loss"
    assert (out / "epochs.csv").read_text().splitlines()[0] == "epoch,train_loss,val_psnr_db,val_ssim"

    last, meta = load_checkpoint(out / "checkpoints" / "last.npz")
    assert meta.epoch == 2
    assert meta.train_loss == history.epochs[-1].train_loss
    for a, b in zip(params.layers, last.layers):
        assert_array_equal(a.weights, b.weights)

    best_ssim = max(e.val_ssim for e in history.epochs)
    _, best_meta = load_checkpoint(out / "checkpoints" / "best.npz")
    assert best_meta.val_ssim == best_ssim


def test_checkpoint_reproduces_validation_metrics(tiny_dataset, tmp_path):
    train_manifest, val_manifest, _ = tiny_dataset
    out = tmp_path / "run"
    params, history = train(train_manifest, val_manifest, TrainConfig(epochs=1), out_dir=out)
    loaded, _ = load_checkpoint(out / "checkpoints" / "last.npz")
    samples = load_samples(val_manifest)
    assert evaluate_samples(loaded, samples).model_dump() == evaluate_samples(params, samples).model_dump()


def test_fine_tune_starts_where_checkpoint_ended(mild_sample, tmp_path):
    base = TrainConfig(epochs=3, batch_size=1, log_every=1, loss=LossSpec(kind=LossKind.L2))
    Trainer(base, out_dir=tmp_path / "base").fit([mild_sample])
    checkpoint = tmp_path / "base" / "checkpoints" / "last.npz"
    _, meta = load_checkpoint(checkpoint)

    tuned = base.model_copy(update={"fine_tune": FineTuneConfig(init_checkpoint=checkpoint)})
    _, history = Trainer(tuned).fit([mild_sample])
    assert history.points[0].loss == meta.train_loss


def test_fine_tune_uses_its_own_hyperparameters():
    config = TrainConfig(base_lr=0.01, batch_size=8, fine_tune=FineTuneConfig())
    assert config.lr == 0.002
    assert config.effective_batch_size == 16


def test_non_finite_loss_aborts_with_last_checkpoint(mild_sample, tmp_path):
    config = TrainConfig(epochs=3, batch_size=1)
    trainer = Trainer(config, out_dir=tmp_path / "run")
    trainer.fit([mild_sample])

    broken = Sample("nan", mild_sample.clean, np.full_like(mild_sample.hazy, np.nan))
    with pytest.raises(TrainingAborted) as excinfo:
        trainer.fit([broken])
    assert excinfo.value.last_checkpoint == tmp_path / "run" / "checkpoints" / "last.npz"
    assert "last.npz" in str(excinfo.value)


def test_empty_training_set_is_rejected():
    with pytest.raises(ValueError, match="empty"):
        Trainer(TrainConfig()).fit([])


def test_alpha_sweep_table(tiny_dataset, tmp_path):
    train_manifest, val_manifest, _ = tiny_dataset
    config = TrainConfig(epochs=1, loss=LossSpec(kind=LossKind.MSSSIM_L2, sigmas=SMALL_SIGMAS))
    rows = alpha_sweep(train_manifest, val_manifest, config, [0.9, 0.1, 0.5], out_dir=tmp_path / "sweep")
    assert [r.alpha for r in rows] == [0.1, 0.5, 0.9]
    assert all(math.isfinite(r.psnr_db) and math.isfinite(r.ssim) for r in rows)
    assert (tmp_path / "sweep" / "alpha_0.5" / "checkpoints" / "last.npz").exists()


def test_alpha_one_sweep_equals_pure_msssim_run(tiny_dataset):
    train_manifest, val_manifest, _ = tiny_dataset
    mix = TrainConfig(epochs=1, loss=LossSpec(kind=LossKind.MSSSIM_L1, sigmas=SMALL_SIGMAS))
    [row] = alpha_sweep(train_manifest, val_manifest, mix, [1.0])

    pure = TrainConfig(
        epochs=1, loss=LossSpec(kind=LossKind.MSSSIM, sigmas=SMALL_SIGMAS), fine_tune=FineTuneConfig()
    )
    params, _ = train(train_manifest, val_manifest, pure)
    report = evaluate_samples(params, load_samples(val_manifest))
    assert row.psnr_db == report.mean_psnr_db
    assert row.ssim == report.mean_ssim


def test_alpha_sweep_needs_mix_loss(tiny_dataset):
    train_manifest, val_manifest, _ = tiny_dataset
    with pytest.raises(ValueError, match="mix loss"):
        alpha_sweep(train_manifest, val_manifest, TrainConfig(), [0.5])


@pytest.mark.slow
def test_mix_loss_matches_l2_and_beats_haze(tmp_path):
    spec = DatasetSpec(
        n_train=16,
        n_val=4,
        n_test=8,
        beta_range=[0.8, 1.2],
        a_range=[0.9, 1.0],
        depth_kinds=[DepthKind.SMOOTH_NOISE],
        d_max=1.0,
        seed=0,
    )
    train_manifest, val_manifest, test_manifest = build_dataset(spec, tmp_path / "data")
    test_samples = load_samples(test_manifest)

    reports = {}
    for kind in (LossKind.L2, LossKind.MSSSIM_L2):
        config = TrainConfig(epochs=100, batch_size=4, seed=0, loss=LossSpec(kind=kind))
        params, _ = train(train_manifest, val_manifest, config)
        reports[kind] = evaluate_samples(params, test_samples)

    baseline, mixed = reports[LossKind.L2], reports[LossKind.MSSSIM_L2]
    assert mixed.mean_ssim >= baseline.mean_ssim - 0.005
    for report in (baseline, mixed):
        assert report.mean_psnr_db >= report.mean_hazy_psnr_db + 2.0
