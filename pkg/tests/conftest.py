import pytest

from tripletkb import (
    Dataset,
    Stage,
    SynthSpec,
    generate_synthetic,
    train_stage,
)
from tripletkb.trainer import desk_config, desk_dims


def tiny_spec(**overrides) -> SynthSpec:
    defaults = dict(classes=5, per_class=20, noise_scale=0.1, seed=7,
                    num_objects=4, feature_dim=24)
    defaults.update(overrides)
    return SynthSpec(**defaults)


@pytest.fixture(scope="session")
def tiny_dataset() -> Dataset:
    return generate_synthetic(tiny_spec())


@pytest.fixture(scope="session")
def tiny_checkpoint(tiny_dataset):
    """One small trained checkpoint shared by downstream-module tests."""
    config = desk_config(Stage.PRETRAIN, epochs=4, seed=11)
    ckpt, log = train_stage(tiny_dataset, None, config,
                            dims=desk_dims(tiny_dataset.meta.feature_dim))
    assert len(log) == 4
    return ckpt


@pytest.fixture
def rng_seeded():
    from tripletkb.numerics import Rng
    return Rng(1234)
