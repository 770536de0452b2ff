import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


TINY_OVERRIDES = {
    "data.num_videos": "8", "data.image_size": "16", "data.fps": "8", "data.duration": "2.0",
    "data.toc_min": "0.5", "data.toc_max": "2.0", "data.focal_px": "8.0",
    "spatial.image_size": "16", "spatial.num_stages": "2", "spatial.base_width": "8",
    "spatial.embed_dim": "16", "spatial.head_dim": "4",
    "temporal.seq_len": "8", "temporal.num_heads": "2", "temporal.ff_dim": "16", "temporal.num_scales": "2",
    "temporal.window": "3", "temporal.projector_hidden": "8",
    "model.head_hidden": "8", "model.head_dropout": "0.0",
    "train.max_epochs": "3", "train.plateau_patience": "1", "train.early_stop_patience": "2",
    "train.batch_size": "4",
}


def tiny_config(**extra):
    from collidenet.config import ExperimentConfig, apply_overrides

    return apply_overrides(ExperimentConfig(), {**TINY_OVERRIDES, **extra})


@pytest.fixture(scope="session")
def tiny_dataset():
    from collidenet.datagen import make_dataset

    return make_dataset(tiny_config().data, 0)
