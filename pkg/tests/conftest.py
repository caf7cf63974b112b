import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from adjointnet.model import AdjointForecaster  # noqa: E402

ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail=""):
    ACCEPTANCE_LINES[number] = f"CRITERION {number}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()


@pytest.fixture
def record():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


def tiny_model(**overrides):
    params = dict(
        lookback=6, horizon=4, lstm_hidden=3, lstm_layers=2, main_widths=(5, 4), anc_widths=(3,),
        dropout=0.1, epochs=0, combiner_epochs=0, batch_size=8, random_state=0,
    )
    params.update(overrides)
    return AdjointForecaster(**params)


@pytest.fixture
def built_tiny():
    """Untrained tiny model with 2 main features and (4, 2) ancillary windows."""
    return tiny_model().build(2, (4, 2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
