import numpy as np
import pytest

from pmt import datagen, models

SMALL_IDS = list(range(8))


@pytest.fixture(scope="session")
def small_data():
    images, labels = datagen.render_set(SMALL_IDS, range(20))
    return images, labels


@pytest.fixture(scope="session")
def small_recognizer(small_data):
    """8 identities x 20 renders, default hyperparameters."""
    images, labels = small_data
    return models.train_recognizer(models.recognizer_spec(len(SMALL_IDS)), images, labels)


@pytest.fixture(scope="session")
def small_shallow(small_recognizer):
    return models.split_model(small_recognizer, models.DEFAULT_SPLIT).shallow


@pytest.fixture
def face():
    return datagen.render_face(datagen.gen_identity(3), 1000)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
