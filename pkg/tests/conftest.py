import numpy as np
import pytest

from dfkd.config import DatasetConfig, TeacherConfig
from dfkd.data import shapes_split
from dfkd.train import train_teacher


@pytest.fixture(scope="session")
def small_shapes():
    cfg = DatasetConfig(train_count=400, test_count=200, seed=3)
    return shapes_split(cfg, "train"), shapes_split(cfg, "test")


@pytest.fixture(scope="session")
def small_teacher(small_shapes):
    """A quickly trained shapes teacher; tests must copy it before mutating."""
    model, _ = train_teacher(small_shapes[0], TeacherConfig(epochs=4, seed=3))
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, text, elapsed = RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} [{elapsed:.1f}s] {text}")
