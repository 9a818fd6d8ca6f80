import numpy as np
import pytest

from netinv.data import SynthSpec, synth_dataset
from netinv.models import Classifier, ClassifierSpec
from netinv.training import accuracy, train_classifier


@pytest.fixture(scope="session")
def bars_data():
    spec = SynthSpec(family="bars", classes=3, size=12, noise=0.1, seed=42)
    return synth_dataset(spec, 600, 300)


@pytest.fixture(scope="session")
def trained_mlp(bars_data):
    """3-class MLP on synthetic bars; downstream tests need >= 95% held out."""
    train, test = bars_data
    clf = Classifier(ClassifierSpec(kind="mlp", in_shape=(1, 12, 12), classes=3),
                     rng=np.random.default_rng(7))
    train_classifier(clf, train.images, train.labels, epochs=15,
                     rng=np.random.default_rng(8))
    assert accuracy(clf, test.images, test.labels) >= 0.95
    return clf
