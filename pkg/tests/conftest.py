import numpy as np
import pytest

import conceptproto as cp
from conceptproto.nncore import BN_EPS, MlpParams


# One human-readable pass/fail line per acceptance criterion, shown in the
# terminal summary so the verdicts survive pytest's output capture.
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def synth_default():
    """Default planted-block task: dataset, concepts, truth, splits."""
    return cp.make_synthetic(cp.SyntheticSpec(seed=7))


@pytest.fixture(scope="session")
def synth_splits(synth_default):
    ds, cs, truth, splits = synth_default
    train_ds, val_ds, test_ds = cp.split_dataset(ds, splits)
    return train_ds, val_ds, test_ds


def identity_params(dim, dropout=0.0):
    """Backbone that is the identity map on nonnegative inputs in EVAL mode.

    Running variance is set to 1 - eps so the normalization factor is exactly 1.
    """
    return MlpParams(
        w1=np.eye(dim),
        b1=np.zeros(dim),
        bn_gamma=np.ones(dim),
        bn_beta=np.zeros(dim),
        bn_running_mean=np.zeros(dim),
        bn_running_var=np.full(dim, 1.0 - BN_EPS),
        w2=np.eye(dim),
        b2=np.zeros(dim),
        dropout_rate=dropout,
    )
