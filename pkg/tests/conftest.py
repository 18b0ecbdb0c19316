import numpy as np
import pytest

from tinyfuse import dataio, runtime

import helpers


@pytest.fixture(scope="session")
def tiny_dataset():
    return dataio.generate(helpers.tiny_task(), seed=11)


@pytest.fixture(scope="session")
def tiny_graph(tiny_dataset):
    return helpers.tiny_fused_graph(tiny_dataset.spec)


@pytest.fixture(scope="session")
def tiny_trained(tiny_dataset, tiny_graph):
    model = runtime.init_model(tiny_graph, seed=3)
    return runtime.train(model, tiny_dataset, runtime.TrainConfig(epochs=3, seed=3)).model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
