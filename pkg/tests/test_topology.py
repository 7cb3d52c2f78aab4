import struct

import numpy as np
import pytest

from e2ekws.errors import ConfigError, InvalidArgumentError, ModelFormatError, UnsupportedVersionError
from e2ekws.frontend import ContextConfig
from e2ekws.topology import (BUILTIN_NAMES, LayerSpec, Model, ModelConfig, baseline_config,
                             builtin_config, count_macs, count_params, dense, e2e_config,
                             load_model, model_from_bytes, model_to_bytes, receptive_field,
                             save_model, softmax, svdf)


def test_e2e_40k_geometry():
    cfg = builtin_config("E2E_40K")
    first = cfg.layers[0]
    assert (first.kind, first.size, first.memory) == ("svdf", 96, 8)
    assert [s.size for s in cfg.layers if s.kind == "bottleneck"] == [32, 32, 32]
    assert cfg.num_classes == 2 and cfg.input_dim == 120


def test_318k_shares_the_small_layers_with_700k():
    big, mid = builtin_config("E2E_700K"), builtin_config("E2E_318K")
    assert big.layers[big.encoder_boundary:] == mid.layers[mid.encoder_boundary:]


def test_baseline_geometry():
    cfg = builtin_config("Baseline_1850K")
    assert cfg.num_classes == 9
    assert cfg.input_dim == 1640 and cfg.context == ContextConfig(30, 10, 3)


def test_unknown_config():
    with pytest.raises(InvalidArgumentError):
        builtin_config("E2E_1M")


def test_count_trivial_dense():
    cfg = ModelConfig("d", ContextConfig(0, 0, 1), (softmax(3),), features=2)
    assert count_params(cfg) == 9
    no_bias = ModelConfig("d", ContextConfig(0, 0, 1), (softmax(3, bias=False),), features=2)
    assert count_macs(no_bias) == 6


def test_exact_counts_from_geometry():
    # first svdf 96*(120+8)+96, bottleneck 32*96+32, svdf 96*(32+8)+96 ...
    assert count_params(builtin_config("E2E_40K")) == 41858
    assert count_macs(builtin_config("E2E_700K"), "per_10ms_frame") == 366112
    with pytest.raises(InvalidArgumentError):
        count_macs(builtin_config("E2E_40K"), "per_second")


@pytest.mark.parametrize("memories, steps", [((4, 4, 4), 9), ((1,), 0)])
def test_receptive_field_uniform(memories, steps):
    layers = tuple(svdf(3, t) for t in memories) + (softmax(2),)
    assert receptive_field(ModelConfig("r", ContextConfig(0, 0, 1), layers, features=3)).steps == steps


def test_receptive_field_e2e():
    rf = receptive_field(builtin_config("E2E_40K"))
    assert rf.steps == 121 and rf.ms == 2420


def test_config_validation():
    ctx = ContextConfig(0, 0, 1)
    with pytest.raises(ConfigError):
        ModelConfig("x", ctx, (svdf(3, 2),))
    with pytest.raises(ConfigError):
        ModelConfig("x", ctx, (svdf(3, 2), softmax(3), softmax(2)))
    with pytest.raises(ConfigError):
        LayerSpec("lstm", 3)
    with pytest.raises(ConfigError):
        ModelConfig.from_text("{not json")


def test_config_text_roundtrip():
    for name in BUILTIN_NAMES:
        cfg = builtin_config(name)
        assert ModelConfig.from_text(cfg.to_text()) == cfg
    cfg = e2e_config("i", 16, 8, intermediate_softmax=True)
    assert ModelConfig.from_text(cfg.to_text()) == cfg
    assert cfg.encoder_config().layers[-1].kind == "softmax"


def test_intermediate_softmax_adds_encoder_head():
    plain = builtin_config("E2E_40K")
    headed = builtin_config("E2E_40K", intermediate_softmax=True)
    assert count_params(headed) == count_params(plain) + 96 * 9 + 9 + 32 * 9 - 32 * 96
    assert headed.layers[headed.encoder_boundary - 1].size == 9


def test_save_load_roundtrip(tmp_path):
    model = Model(builtin_config("E2E_40K"), seed=3)
    model.freeze_encoder(True)
    a, b = tmp_path / "a.kws", tmp_path / "b.kws"
    save_model(model, a)
    loaded = load_model(a)
    save_model(loaded, b)
    assert a.read_bytes() == b.read_bytes()
    assert np.array_equal(loaded.params, model.params)
    assert np.array_equal(loaded.frozen, model.frozen)
    assert loaded.checksum() == model.checksum()


def test_truncated_and_corrupt_files():
    data = model_to_bytes(Model(baseline_config("b", filters=2, hidden=4, hidden_layers=1), seed=0))
    for cut in (3, 40, len(data) - 1):
        with pytest.raises(ModelFormatError, match="offset"):
            model_from_bytes(data[:cut])
    flipped = bytearray(data)
    flipped[-10] ^= 0xFF
    with pytest.raises(ModelFormatError):
        model_from_bytes(bytes(flipped))
    with pytest.raises(ModelFormatError):
        model_from_bytes(b"XXXXXX" + data[6:])


def test_version_mismatch():
    data = bytearray(model_to_bytes(Model(builtin_config("E2E_40K"), seed=0)))
    struct.pack_into("<H", data, 6, 99)
    with pytest.raises(UnsupportedVersionError):
        model_from_bytes(bytes(data))


def test_params_share_flat_store():
    model = Model(ModelConfig("s", ContextConfig(0, 0, 1), (dense(3), softmax(2)), features=2),
                  seed=0)
    model.params[:] = 0.0
    assert np.all(model.layers[0].weights == 0)
    model.layers[1].bias[:] = 7.0
    assert model.params[-1] == 7.0


def test_copy_layers_checks_geometry():
    a = Model(builtin_config("E2E_40K"), seed=0)
    b = Model(builtin_config("E2E_318K"), seed=0)
    with pytest.raises(ConfigError):
        a.copy_layers_from(b, 1)
