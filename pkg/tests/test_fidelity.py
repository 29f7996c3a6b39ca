import numpy as np
import pytest
import scipy.sparse as sp

from stochpnp.fidelity import Fidelity, least_squares, pwls
from stochpnp.operators import SparseOperator, partition_rows, sampler_rng


def instance(n, d, K=1, kind="ls", eps=0.0, seed=0, strategy="shuffled"):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, d))
    b = rng.standard_normal(n)
    part = partition_rows(n, K, sampler_rng(seed), strategy)
    op = SparseOperator(M)
    if kind == "ls":
        w = np.ones(n)
        fid = least_squares(op, b, part, eps)
    else:
        w = rng.uniform(0.1, 1.0, n)
        fid = pwls(op, b, w, part, eps)
    return fid, M, b, w


def dense_value(M, b, w, eps, x):
    r = M @ x - b
    return 0.5 / len(b) * np.sum(w * r * r) + 0.5 * eps * x @ x


def test_value_examples():
    fid = least_squares(SparseOperator.identity(2), np.ones(2))
    assert fid.value(np.ones(2)) == 0.0
    fid = least_squares(SparseOperator([[2.0]]), np.zeros(1))
    assert fid.value(np.ones(1)) == 2.0
    np.testing.assert_array_equal(fid.grad(np.ones(1)), [4.0])


@pytest.mark.parametrize("kind", ["ls", "pwls"])
def test_value_matches_dense(kind):
    fid, M, b, w = instance(20, 12, K=3, kind=kind, eps=0.3)
    x = np.random.default_rng(1).standard_normal(12)
    ref = dense_value(M, b, w, 0.3, x)
    assert abs(fid.value(x) - ref) <= 1e-12 * abs(ref)


def test_value_is_mean_of_block_values():
    fid, *_ = instance(23, 7, K=5, kind="pwls", eps=0.1)
    rng = np.random.default_rng(2)
    for _ in range(10):
        x = rng.standard_normal(7)
        blocks = np.mean([fid.block_value(x, k) for k in range(fid.K)])
        assert abs(blocks - fid.value(x)) <= 1e-12 * abs(fid.value(x))


def test_nonfinite_value_raises():
    fid, *_ = instance(5, 3)
    with pytest.raises(FloatingPointError):
        fid.value(np.array([1e200, 1e200, 1e200]))
    with pytest.raises(ValueError):
        fid.grad(np.ones(4))


def test_gradient_zero_at_solution():
    rng = np.random.default_rng(3)
    M = rng.standard_normal((15, 6))
    xs = rng.standard_normal(6)
    fid = least_squares(SparseOperator(M), M @ xs)
    assert np.linalg.norm(fid.grad(xs)) <= 1e-10


@pytest.mark.parametrize("kind", ["ls", "pwls"])
def test_gradient_finite_differences(kind):
    fid, *_ = instance(15, 8, kind=kind, eps=0.2, seed=4)
    rng = np.random.default_rng(5)
    h = 1e-5
    for _ in range(5):
        x = rng.standard_normal(8)
        fd = np.array([(fid.value(x + h * e) - fid.value(x - h * e)) / (2 * h) for e in np.eye(8)])
        g = fid.grad(x)
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(g)


def test_single_block_minibatch_equals_full():
    fid, *_ = instance(20, 6, K=1, kind="pwls", eps=0.4)
    x = np.random.default_rng(6).standard_normal(6)
    assert np.array_equal(fid.grad_minibatch(x, 0), fid.grad(x))


@pytest.mark.parametrize("K", [1, 3, 10])
def test_minibatch_unbiased(K):
    fid, *_ = instance(37, 9, K=K, kind="pwls", eps=0.05, seed=K)
    x = np.random.default_rng(7).standard_normal(9)
    mean = np.mean([fid.grad_minibatch(x, k) for k in range(K)], axis=0)
    g = fid.grad(x)
    assert np.linalg.norm(mean - g) <= 1e-12 * max(np.linalg.norm(g), 1.0)


def test_block_gradient_matches_dense_block_oracle():
    fid, M, b, w = instance(20, 6, K=4, kind="pwls", eps=0.1, seed=8)
    x = np.random.default_rng(9).standard_normal(6)
    for k, blk in enumerate(fid.partition.blocks):
        Mk, bk, wk = M[blk], b[blk], w[blk]
        ref = (fid.K / fid.n) * Mk.T @ (wk * (Mk @ x - bk)) + 0.1 * x
        assert np.linalg.norm(fid.grad_minibatch(x, k) - ref) <= 1e-12 * np.linalg.norm(ref)
    with pytest.raises(IndexError):
        fid.grad_minibatch(x, 4)


def test_constants_identity():
    n = 5
    fid = least_squares(SparseOperator.identity(n), np.zeros(n))
    lam_min, lam_full, lam_block = fid.hessian_bounds()
    assert lam_min == pytest.approx(1 / n) and lam_block == pytest.approx(1 / n)
    mu, L = fid.constants()
    # no-half curvature convention: half the Hessian eigenvalues
    assert mu == pytest.approx(0.5 / n) and L == pytest.approx(0.5 / n)


def test_ridge_shift():
    fid, *_ = instance(30, 6, K=3, seed=10)
    ridged = fid.with_ridge(0.5)
    for a, b in zip(fid.hessian_bounds(), ridged.hessian_bounds()):
        assert b - a == pytest.approx(0.5, abs=1e-12)
    (mu0, L0), (mu1, L1) = fid.constants(), ridged.constants()
    assert mu1 - mu0 == pytest.approx(0.25, abs=1e-12)
    assert L1 - L0 == pytest.approx(0.25, abs=1e-12)


def test_constants_vs_dense_eigensolver():
    fid, M, b, w = instance(40, 8, K=4, kind="pwls", seed=11)
    H = M.T @ (w[:, None] * M) / 40
    ev = np.linalg.eigvalsh(H)
    block = max(np.linalg.eigvalsh((4 / 40) * M[blk].T @ (w[blk, None] * M[blk]))[-1]
                for blk in fid.partition.blocks)
    mu, L = fid.constants()
    assert mu == pytest.approx(ev[0] / 2, rel=1e-3)
    assert L == pytest.approx(block / 2, rel=1e-3)
    assert fid.lipschitz_full() == pytest.approx(ev[-1], rel=1e-3)
    assert L >= mu


def test_rank_deficient_gives_zero_mu():
    fid, *_ = instance(4, 8, seed=12)
    assert fid.mu == 0.0
    assert fid.with_ridge(0.2).mu == pytest.approx(0.1)


def test_power_iteration_path_for_large_d():
    d = 2100
    diag = np.ones(d)
    diag[::3] = 3.0  # the strided block 0 holds every row of the top eigenvalue
    fid = least_squares(SparseOperator(sp.diags(diag)), np.zeros(d),
                        partition_rows(d, 3, strategy="strided"))
    lam_min, lam_full, lam_block = fid.hessian_bounds()
    assert lam_min == 0.0
    assert lam_full == pytest.approx(9.0 / d, rel=1e-3)
    assert lam_block == pytest.approx(3 * 9.0 / d, rel=1e-3)


def test_convexity_and_curvature_inequalities():
    fid, *_ = instance(30, 6, K=3, kind="pwls", eps=0.05, seed=13)
    mu, L = fid.constants()
    rng = np.random.default_rng(14)
    for _ in range(50):
        x, y = rng.standard_normal(6), rng.standard_normal(6)
        assert fid.value(0.5 * x + 0.5 * y) <= 0.5 * fid.value(x) + 0.5 * fid.value(y) + 1e-12
        gap = fid.value(x) - fid.value(y) - fid.grad(y) @ (x - y)
        assert gap >= mu * np.sum((x - y) ** 2) * (1 - 1e-9)
        for k in range(fid.K):
            bgap = fid.block_value(x, k) - fid.block_value(y, k) - fid.grad_minibatch(y, k) @ (x - y)
            assert bgap <= L * np.sum((x - y) ** 2) * (1 + 1e-9)


def test_scaled_fidelity():
    fid, *_ = instance(12, 4, K=2, kind="pwls", eps=0.1, seed=15)
    s = fid.scaled(3.0)
    x = np.random.default_rng(16).standard_normal(4)
    assert s.value(x) == pytest.approx(3.0 * fid.value(x), rel=1e-12)
    np.testing.assert_allclose(s.grad(x), 3.0 * fid.grad(x), rtol=1e-12)
    np.testing.assert_allclose(s.hessian_bounds(), 3.0 * np.array(fid.hessian_bounds()), rtol=1e-10)


def test_validation():
    op = SparseOperator.identity(3)
    with pytest.raises(ValueError):
        Fidelity(op, np.zeros(2))
    with pytest.raises(ValueError):
        Fidelity(op, np.zeros(3), weights=-np.ones(3))
    with pytest.raises(ValueError):
        Fidelity(op, np.zeros(3), ridge_eps=-1.0)
    with pytest.raises(ValueError):
        Fidelity(op, np.zeros(3), partition=partition_rows(4, 2))
