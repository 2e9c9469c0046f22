import numpy as np
import pytest
import scipy.sparse as sp


def random_spd(d, rng, cond=50.0):
    """Dense SPD matrix with log-uniform spectrum in ``[1, cond]``."""
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = np.exp(rng.uniform(0.0, np.log(cond), size=d))
    return (Q * lam) @ Q.T


def random_sparse_spd(d, rng, density=0.2):
    """Diagonally dominant sparse SPD matrix."""
    B = sp.random(d, d, density=density / 2, random_state=rng, data_rvs=rng.standard_normal).toarray()
    S = B + B.T
    S += np.diag(np.abs(S).sum(axis=1) + 1.0)
    return sp.csr_matrix(S)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


#: One line per acceptance criterion, filled by test_acceptance.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
