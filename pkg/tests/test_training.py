import numpy as np
import pytest

from e2ekws.errors import ConfigError, InvalidArgumentError, TrainingDivergedError
from e2ekws.frontend import ContextConfig
from e2ekws.labeling import LabeledSequence
from e2ekws.topology import Model, ModelConfig, softmax, svdf
from e2ekws.training import (SGD, TrainConfig, ce_loss, sgd_step, train, train_one_stage,
                             train_two_stage)


def tiny_config(features=3):
    return ModelConfig("t", ContextConfig(0, 0, 1), (svdf(4, 2), softmax(2)), features=features)


def tiny_data(n=6, length=12, features=3, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        x = rng.normal(size=(length, features)).astype(np.float32)
        y = (x[:, 0] > 0).astype(np.int64)
        out.append(LabeledSequence(x, y, f"s{k}"))
    return out


@pytest.mark.parametrize("output, c, expected", [
    ([0.5, 0.5], 1, np.log(2)), ([0.0, 1.0], 1, 0.0), ([0.9, 0.1], 1, np.log(10))])
def test_ce_loss_examples(output, c, expected):
    assert ce_loss(output, c) == pytest.approx(expected)


def test_ce_loss_floor_and_errors():
    assert np.isfinite(ce_loss([1.0, 0.0], 1))
    with pytest.raises(InvalidArgumentError):
        ce_loss([0.5, 0.5], 2)
    with pytest.raises(InvalidArgumentError):
        ce_loss([0.5, 0.6], 0)


def one_param_model():
    cfg = ModelConfig("o", ContextConfig(0, 0, 1), (softmax(2, bias=False),), features=1)
    model = Model(cfg, np.float64, seed=0)
    model.params[:] = 1.0
    return model


def test_sgd_step_examples():
    model = one_param_model()
    sgd_step(model, np.full(2, 2.0), TrainConfig(learning_rate=0.0))
    assert np.all(model.params == 1.0)
    sgd_step(model, np.array([2.0, 0.0]), TrainConfig(learning_rate=0.1, clip_norm=0))
    assert model.params[0] == pytest.approx(0.8) and model.params[1] == 1.0


def test_momentum_accumulates_and_clip_bounds():
    model = one_param_model()
    opt = SGD(model, TrainConfig(learning_rate=1.0, momentum=0.5, clip_norm=0))
    opt.step(np.array([1.0, 0.0]))
    opt.step(np.array([1.0, 0.0]))
    assert model.params[0] == pytest.approx(1.0 - 1.0 - 1.5)
    clipped = SGD(model, TrainConfig(clip_norm=5.0)).effective_grad(np.array([30.0, 40.0]))
    np.testing.assert_allclose(clipped, [3.0, 4.0])


def test_frozen_params_never_move():
    model = one_param_model()
    model.frozen[0] = True
    sgd_step(model, np.ones(2), TrainConfig(learning_rate=0.5))
    assert model.params[0] == 1.0 and model.params[1] != 1.0


def test_training_reduces_loss_and_is_deterministic():
    cfg = TrainConfig(learning_rate=0.05, epochs=15, batch_size=2, seed=4)
    m1, r1 = train_one_stage(tiny_config(), tiny_data(), cfg)
    m2, r2 = train_one_stage(tiny_config(), tiny_data(), cfg)
    assert r1.epoch_losses[-1] < r1.epoch_losses[0]
    assert r1.checksum == r2.checksum and r1.epoch_losses == r2.epoch_losses
    assert np.array_equal(m1.params, m2.params)


def test_target_loss_stops_early():
    _, report = train_one_stage(tiny_config(), tiny_data(),
                                TrainConfig(learning_rate=0.05, epochs=50, target_loss=10.0))
    assert len(report.epoch_losses) == 1


def test_divergence_raises_with_report():
    model = Model(tiny_config(), seed=0)
    with pytest.raises(TrainingDivergedError) as info:
        train(model, tiny_data(), TrainConfig(learning_rate=1e30, clip_norm=0, epochs=5))
    assert info.value.report.steps >= 1


def test_dataset_checks():
    model = Model(tiny_config(), seed=0)
    with pytest.raises(InvalidArgumentError):
        train(model, [], TrainConfig())
    with pytest.raises(ConfigError):
        train(model, tiny_data(features=5), TrainConfig())
    bad = [LabeledSequence(np.zeros((3, 3), np.float32), [0, 1, 2])]
    with pytest.raises(ConfigError):
        train(model, bad, TrainConfig())


def test_two_stage_needs_intermediate_softmax():
    with pytest.raises(ConfigError):
        train_two_stage(tiny_config(), tiny_data(), tiny_data(), TrainConfig(), TrainConfig())


def test_train_config_validation_and_text():
    for bad in (dict(learning_rate=-1), dict(adaptation_rate=2), dict(recipe="x"),
                dict(batch_size=0), dict(momentum=1.0)):
        with pytest.raises(InvalidArgumentError):
            TrainConfig(**bad)
    cfg = TrainConfig(learning_rate=0.3, truncate=4, encoder_init="enc.kws")
    assert TrainConfig.from_text(cfg.to_text()) == cfg
    with pytest.raises(ConfigError):
        TrainConfig.from_text('{"lr": 1}')


def test_checkpointing(tmp_path):
    path = tmp_path / "ck.kws"
    train_one_stage(tiny_config(), tiny_data(), TrainConfig(epochs=2, checkpoint_every=1,
                                                            checkpoint_path=str(path)))
    assert path.exists()
