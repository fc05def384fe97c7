"""Session-wide fixtures for the full rendered corpus.

Building the 600-object corpus, the visual-word dictionary, and the feature
matrix takes on the order of a minute, so they are computed once per test
session and shared by every module that needs real data.
"""

import numpy as np
import pytest


@pytest.fixture(scope="session")
def corpus600():
    from lexiground.vision import build_dataset

    return build_dataset(600, 0)


@pytest.fixture(scope="session")
def word_dictionary():
    from lexiground.vision import build_dictionary, dictionary_seed_images

    return build_dictionary(dictionary_seed_images())


@pytest.fixture(scope="session")
def features600(corpus600, word_dictionary):
    from lexiground.vision import extract_features

    return np.array(
        [extract_features(obj.image, word_dictionary) for obj in corpus600]
    )


@pytest.fixture(scope="session")
def truths600(corpus600):
    from lexiground.experiment import object_truth

    return [object_truth(obj) for obj in corpus600]
