import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(autouse=True)
def single_thread(monkeypatch):
    """Scans and ensembles run serially unless a test asks otherwise."""
    monkeypatch.setenv("DIFFPASS_THREADS", "1")
