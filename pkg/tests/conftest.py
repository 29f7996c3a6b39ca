import sys

import numpy as np
import pytest

from stochpnp.fidelity import least_squares
from stochpnp.operators import SparseOperator, partition_rows, sampler_rng


def random_fidelity(n, d, K=1, eps=0.0, seed=0, weights=False):
    """Least-squares (or weighted) fidelity on a dense Gaussian operator."""
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, d))
    b = rng.standard_normal(n)
    part = partition_rows(n, K, sampler_rng(seed), "shuffled")
    fid = least_squares(SparseOperator(M), b, part, eps)
    if weights:
        from stochpnp.fidelity import pwls
        fid = pwls(SparseOperator(M), b, rng.uniform(0.2, 1.0, n), part, eps)
    return fid


def scaled_identity_fidelity(d, hess, K=1, b=None):
    """``f(x) = hess/2 ||x - b||^2`` split into K blocks (Hessian ``hess * I``)."""
    op = SparseOperator(np.sqrt(hess * d) * np.eye(d))
    b = np.zeros(d) if b is None else b
    return least_squares(op, np.sqrt(hess * d) * b, partition_rows(d, K, strategy="strided"))


@pytest.fixture
def rfid():
    return random_fidelity


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
