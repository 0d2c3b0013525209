import numpy as np
import pytest

from multav.data import DatasetSpec, generate
from multav.experiment import fit_clean


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def default_data():
    spec = DatasetSpec()
    train, test = generate(spec)
    return spec, train, test


@pytest.fixture(scope="session")
def trained_model(default_data):
    """Clean-trained default network (a few seconds); treat as read-only."""
    spec, train, _ = default_data
    model, _ = fit_clean(train, spec.video_shape, spec.num_classes, seed=0)
    model.requires_grad_(False)
    return model


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Append (criterion, passed, detail) rows; echoed in the terminal summary."""
    return request.config.stash.setdefault(_ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, config):
    rows = config.stash.get(_ACCEPTANCE_KEY, [])
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(rows):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
