from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from collidenet.config import ExperimentConfig, TrainConfig, apply_overrides, dumps, load, loads
from collidenet.errors import ConfigError


def test_round_trip_defaults():
    cfg = ExperimentConfig()
    assert loads(dumps(cfg)) == cfg


@given(st.floats(1e-9, 1.0), st.integers(1, 64), st.booleans(), st.integers(1, 4))
def test_round_trip_overrides(lr, batch, trend, scales):
    cfg = apply_overrides(ExperimentConfig(), {
        "train.lr": repr(lr), "train.batch_size": str(batch), "toggles.trend": str(trend).lower(),
        "temporal.num_scales": str(scales),
    })
    assert cfg.train.lr == lr and cfg.model.toggles.trend is trend
    assert loads(dumps(cfg)) == cfg
    assert loads(dumps(cfg)).fingerprint() == cfg.fingerprint()


def test_dump_is_sorted_and_complete():
    lines = dumps(ExperimentConfig()).splitlines()
    assert lines == sorted(lines)
    keys = {line.split(" = ")[0] for line in lines}
    assert {"train.lr", "toggles.ms", "model.head_hidden", "data.num_videos", "spatial.embed_dim"} <= keys


@pytest.mark.parametrize("text", [
    "train.lrr = 0.1", "nosuch.lr = 0.1", "train = 3", "lr = 0.1", "train.lr 0.1",
    "train.batch_size = 1.5", "toggles.trend = maybe", "train.lr = fast",
])
def test_bad_lines_are_errors(text):
    with pytest.raises(ConfigError):
        loads(text)


def test_duplicate_keys_rejected():
    with pytest.raises(ConfigError):
        loads("train.lr = 0.1\ntrain.lr = 0.2\n")


def test_comments_and_blank_lines(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# header\n\ntrain.max_epochs = 7   # short run\ntemporal.decoder_window = none\n")
    cfg = load(path)
    assert cfg.train.max_epochs == 7 and cfg.model.temporal.decoder_window is None


def test_fingerprint_changes_with_content():
    a = ExperimentConfig()
    assert a.fingerprint() == ExperimentConfig().fingerprint()
    assert a.fingerprint() != apply_overrides(a, {"train.lr": "0.5"}).fingerprint()


@pytest.mark.parametrize("kw", [
    {"plateau_patience": 0}, {"max_epochs": 5, "early_stop_patience": 5}, {"optimizer": "rmsprop"},
    {"lr": -1.0}, {"batch_size": 0}, {"workers": 0},
])
def test_train_validation(kw):
    with pytest.raises(ConfigError):
        replace(TrainConfig(), **kw).validate()


def test_zero_epochs_is_valid():
    replace(TrainConfig(), max_epochs=0).validate()


def test_experiment_validation_checks_clip_length():
    cfg = apply_overrides(ExperimentConfig(), {"data.fps": "20"})
    with pytest.raises(ConfigError):
        cfg.validate()
    ExperimentConfig().validate()
