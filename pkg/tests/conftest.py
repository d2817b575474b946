import pytest

from ditskip.backbone import ModelConfig, init_model_weights
from ditskip.linalg import make_rng
from ditskip.scheduler import build_schedule, uniform_plan


@pytest.fixture
def rng():
    return make_rng(20240)


@pytest.fixture
def tiny_model():
    config = ModelConfig(num_layers=2, num_patches=4, hidden_dim=6, train_steps=200,
                         num_classes=3, spectral_clip=0.4, logit_cap=60.0)
    return init_model_weights(config, seed=11)


@pytest.fixture
def gentle_schedule():
    return build_schedule(200, 1e-4, 2e-3)


@pytest.fixture
def short_plan():
    return uniform_plan(200, 5, guidance=1.5)


def random_batch(model, batch, seed=0):
    r = make_rng(seed, 0xBEEF)
    shape = (model.config.num_patches, model.config.hidden_dim)
    z = [r.standard_normal(shape) for _ in range(batch)]
    labels = [int(c) for c in r.integers(0, model.config.num_classes, size=batch)]
    return z, labels
