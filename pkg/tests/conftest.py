import numpy as np
import pytest

from dpborrow.data import BinomialSummary, Dataset, Study, StudyRole

AS_CASE1_HISTORICAL = [
    (23, 107), (12, 44), (19, 51), (9, 39), (39, 139), (6, 20), (9, 78), (10, 35)
]


def binomial_dataset(historical, cc, ct=None, meta=None):
    studies = [
        Study(f"H{i + 1}", StudyRole.HISTORICAL, BinomialSummary(n, y))
        for i, (y, n) in enumerate(historical)
    ]
    studies.append(Study("CC", StudyRole.CURRENT_CONTROL, BinomialSummary(cc[1], cc[0])))
    if ct is not None:
        studies.append(Study("CT", StudyRole.CURRENT_TREATMENT, BinomialSummary(ct[1], ct[0])))
    return Dataset("binomial", tuple(studies), meta=meta or {})


@pytest.fixture(scope="session")
def as_case1():
    """Ankylosing spondylitis example, original counts."""
    return binomial_dataset(AS_CASE1_HISTORICAL, cc=(1, 6), ct=(14, 23))


@pytest.fixture(scope="session")
def as_case2():
    """Same trial with study 3's responses raised to 31 (a conflicting control)."""
    historical = list(AS_CASE1_HISTORICAL)
    historical[2] = (31, 51)
    return binomial_dataset(historical, cc=(1, 6), ct=(14, 23))


def batch_se(draws, n_batches=50):
    """Batch-means standard error, robust to chain autocorrelation."""
    draws = np.asarray(draws, dtype=float)
    usable = (draws.size // n_batches) * n_batches
    means = draws[:usable].reshape(n_batches, -1).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))
