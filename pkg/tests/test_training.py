import numpy as np
import pytest

from latentmorph.checkpoint import to_bytes
from latentmorph.errors import ConfigError, TrainingDiverged
from latentmorph.targets import eight_gaussians, sample_mixture
from latentmorph.training import METRIC_FIELDS, Adam, TrainConfig, baseline_config, init_checkpoint, train, write_metrics

DATA = sample_mixture(eight_gaussians(), 300, 0)


def small(**kw):
    base = dict(iterations=3, batch_size=16, morph_steps=2)
    base.update(kw)
    return TrainConfig(**base)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=1)
    with pytest.raises(ConfigError):
        TrainConfig(kernel_lr=0)
    with pytest.raises(ConfigError):
        TrainConfig(alpha=-1)
    with pytest.raises(ConfigError):
        TrainConfig(kernel_loss="wgan")
    with pytest.raises(ConfigError):
        TrainConfig(kernel_divergence="tv")


def test_zero_iterations_returns_init():
    cfg = TrainConfig(iterations=0)
    res = train(cfg, DATA)
    assert res.metrics == [] and res.checkpoint.equals(init_checkpoint(cfg))


def test_deterministic_metrics(tmp_path):
    a = train(small(), DATA)
    b = train(small(), DATA)
    write_metrics(a.metrics, tmp_path / "a.csv")
    write_metrics(b.metrics, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert to_bytes(a.checkpoint) == to_bytes(b.checkpoint)
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == ",".join(METRIC_FIELDS) and len(lines) == 4
    assert lines[1].endswith(",")  # wallclock left blank unless timing is on


def test_training_changes_both_nets():
    cfg = small()
    res = train(cfg, DATA)
    init = init_checkpoint(cfg)
    assert not res.checkpoint.generator.equals(init.generator)
    assert not res.checkpoint.features.equals(init.features)
    assert res.checkpoint.metadata["iterations"] == 3


@pytest.mark.parametrize(
    "overrides",
    [
        dict(kernel_loss="mmd_critic", morph_steps=0),
        dict(kernel_loss="divergence"),
        dict(generator_loss="nll"),
        dict(kernel_divergence="js", morph_functional="js"),
        dict(kernel_divergence="sh", morph_functional="sh"),
        dict(morph_functional="langevin"),
    ],
)
def test_variants_run(overrides):
    res = train(small(**overrides), DATA)
    assert len(res.metrics) == 3
    for row in res.metrics:
        assert np.isfinite(row["mmd2"]) and np.isfinite(row["gen_grad_norm"])


def test_beta_alpha_zero_only_shape_term_moves_kernel():
    cfg = small(alpha=0.0, beta=0.0, iterations=1, morph_steps=0)
    res = train(cfg, DATA)
    assert res.metrics[0]["kl_grad_norm"] == 0.0
    assert not res.checkpoint.features.equals(init_checkpoint(cfg).features)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts_with_last_good_checkpoint():
    cfg = small(iterations=5, kernel_lr=1e300, generator_lr=1e300)
    with pytest.raises(TrainingDiverged) as info:
        train(cfg, DATA)
    exc = info.value
    assert exc.iteration >= 1
    assert np.all(np.isfinite(exc.checkpoint.features.flat()))
    assert exc.checkpoint.metadata["iterations"] == exc.iteration - 1


def test_dataset_smaller_than_batch():
    with pytest.raises(ConfigError):
        train(small(batch_size=64), DATA[:10])


def test_adam_first_step_is_lr_sign():
    opt = Adam(0.1)
    layers = [[np.zeros((2, 2)), np.zeros(2)]]
    grads = [[np.array([[1.0, -2.0], [3.0, 0.5]]), np.array([-1.0, 4.0])]]
    out = opt.step(layers, grads)
    assert np.allclose(out[0][0], -0.1 * np.sign(grads[0][0]), atol=1e-8)
    assert np.allclose(out[0][1], -0.1 * np.sign(grads[0][1]), atol=1e-8)


def test_baseline_config_has_no_kde_and_no_morphing():
    cfg = baseline_config(seed=3, iterations=2, batch_size=16)
    assert cfg.kernel_loss != "fp" and cfg.morph_steps == 0 and cfg.generator_loss == "mmd"
    assert cfg.seed == 3
    res = train(cfg, DATA)
    assert all(np.isnan(row["loss_kde"]) for row in res.metrics)
