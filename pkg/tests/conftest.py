import numpy as np
import pytest

from crac.datagen import PRESETS, generate


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate(PRESETS["tiny"])


@pytest.fixture(scope="session")
def tiny_path(tmp_path_factory, tiny_dataset):
    from crac.datagen import write_dataset

    path = tmp_path_factory.mktemp("data") / "tiny.crsd"
    write_dataset(tiny_dataset, path)
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
