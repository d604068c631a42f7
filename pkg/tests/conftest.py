import numpy as np
import pytest

from vcm.model import LongitudinalDataset, SubjectRecord, auto_model_spec

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.line(line)


def random_dataset(rng, n=5, p=2, ni_range=(4, 8), covariate_shift=0.5):
    """Small generic longitudinal dataset with well-spread covariates."""
    subjects = []
    for i in range(n):
        ni = int(rng.integers(*ni_range))
        t = np.sort(rng.uniform(0.0, 1.0, ni))
        x = rng.normal(covariate_shift, 1.0, (ni, p))
        y = rng.normal(0.0, 1.0, ni)
        subjects.append(SubjectRecord(id=str(i), times=t, responses=y, covariates=x))
    return LongitudinalDataset(subjects=tuple(subjects), p=p)


@pytest.fixture
def small_data():
    return random_dataset(np.random.default_rng(11))


@pytest.fixture
def small_spec(small_data):
    return auto_model_spec(small_data, order=1, num_basis=3, t_range=(0.0, 1.0))
