import numpy as np
import pytest

from distillkit.data import synth_corpus
from distillkit.model import ModelConfig, build_model


def toy_config(d=16, layers=2, name="toy"):
    return ModelConfig(name, layers, d, 2 * d, 2, pos_conv_groups=min(16, d))


@pytest.fixture
def toy16():
    return build_model(toy_config(16), seed=11)


@pytest.fixture(scope="session")
def short_corpus():
    return synth_corpus(5, 6, 0.05, 0.12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

