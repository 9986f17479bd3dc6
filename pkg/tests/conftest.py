import time

import numpy as np
import pytest

from segqc.masks import LabelMask
from segqc.model import TrainConfig, split_dataset, train
from segqc.synth import synth_generate

# Desk-scale overfit protocol shared by the model tests and the acceptance suite.
OVERFIT_DATA = dict(n=8, size=64, seed=7)
OVERFIT_TRAIN = TrainConfig(epochs=300, lr=1e-3, batch_size=2, seed=0)

_criteria = []


@pytest.fixture(scope="session")
def overfit_run():
    """``(masks, result, training masks, training seconds)``."""
    t0 = time.perf_counter()
    masks = synth_generate(**OVERFIT_DATA)
    result = train(masks, OVERFIT_TRAIN)
    train_idx, _ = split_dataset(len(masks), OVERFIT_TRAIN.split_ratio,
                                 np.random.default_rng(OVERFIT_TRAIN.seed))
    return masks, result, [masks[i] for i in train_idx], time.perf_counter() - t0


@pytest.fixture
def criterion_log():
    """Collects one pass/fail line per acceptance criterion for the summary."""
    return _criteria


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for line in _criteria:
            terminalreporter.write_line(line)


def random_mask(rng, shape, n_classes=4, density=None):
    if density is None:
        labels = rng.integers(0, n_classes, shape)
    else:
        labels = np.where(rng.random(shape) < density, rng.integers(1, n_classes, shape), 0)
    return LabelMask(labels)
