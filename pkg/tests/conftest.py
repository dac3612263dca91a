import numpy as np
import pytest

from ctgarma.signals import CleanSignal


def make_signal(values, valid=None, quality=None):
    """CleanSignal from raw values; NaNs are invalid unless a mask is given."""
    x = np.asarray(values, dtype=float)
    if valid is None:
        valid = np.isfinite(x)
    valid = np.asarray(valid, dtype=bool)
    x = np.where(valid, x, np.nan)
    if quality is None:
        quality = float(valid.mean())
    return CleanSignal(x, valid, quality)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_cohort():
    from ctgarma.ingest import synth_cohort

    return synth_cohort(12, seed=4, prevalence=0.4, excluded_frac=0.1, duration_s=1500.0)


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory, small_cohort):
    from ctgarma.ingest import write_dataset

    return write_dataset(small_cohort, tmp_path_factory.mktemp("data"))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
