import numpy as np
import pytest

from svpcf.data import Dataset
from svpcf.synthetic import generate_synthetic

ACCEPTANCE = {}


def make_dataset(users, items, ratings=None, timestamps=None):
    """Small hand-written dataset; ids are the stringified indices."""
    users = np.asarray(users)
    items = np.asarray(items)
    return Dataset.from_arrays(users, items, ratings, timestamps)


@pytest.fixture(scope="session")
def synth_small():
    return generate_synthetic(users=200, items=80, interactions=3000, seed=3)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, line = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {key:>2}. {line}")
