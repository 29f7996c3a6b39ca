import numpy as np
import pytest

from stochpnp.denoisers import Blend, GaussianBlur
from stochpnp.diagnostics import (compute_diagnostics, estimate_theorem1_bounds,
                                  prox_gradient_variance)
from stochpnp.operators import sampler_rng
from stochpnp.schedules import Schedule, contraction_factor
from stochpnp.solvers import SolverState, prox_exact, run_pnp_admm, run_stochastic_pnp_admm

from conftest import random_fidelity


def test_exact_solve_gives_zero_errors():
    fid = random_fidelity(60, 16, K=4, eps=0.1, seed=0)
    D = Blend.with_beta(GaussianBlur(4), 0.5)
    st = run_pnp_admm(fid, D, 2.0, np.zeros(16), 30, prox_tol=1e-13)
    diag = compute_diagnostics(fid, D, 2.0, st, 0.5)
    assert diag.prox_error <= 1e-10
    assert diag.eps_norm <= 1e-10
    assert diag.sigma_k_sq > 0
    assert diag.delta_theoretical == pytest.approx(contraction_factor(0.5, 2.0, fid.mu))
    assert diag.bound_holds


def test_single_block_variance_vanishes_at_prox():
    fid = random_fidelity(30, 8, K=1, seed=1)
    z = np.random.default_rng(2).standard_normal(8)
    y = prox_exact(fid, 1.5, z, 1e-13)
    assert prox_gradient_variance(fid, 1.5, y, z) <= 1e-20


def test_variance_is_mean_over_blocks():
    fid = random_fidelity(30, 8, K=3, seed=3)
    rng = np.random.default_rng(4)
    y, z = rng.standard_normal(8), rng.standard_normal(8)
    ref = np.mean([np.sum((1.2 * fid.grad_minibatch(y, q) + y - z) ** 2) for q in range(3)])
    assert prox_gradient_variance(fid, 1.2, y, z) == pytest.approx(ref, rel=1e-12)


def test_amplification_bound_on_random_runs():
    D = Blend.with_beta(GaussianBlur(4), 0.4)
    for seed in range(10):
        fid = random_fidelity(40, 16, K=4, eps=0.2, seed=seed)
        sched = Schedule.constant(1.5, 0.02, 5, momentum="zero")
        packs = []
        run_stochastic_pnp_admm(fid, D, sched, np.zeros(16), np.zeros(16), 5, sampler_rng(seed),
                                callback=lambda s: packs.append(
                                    compute_diagnostics(fid, D, 1.5, s, 0.4)))
        assert all(p.bound_holds for p in packs)
        assert all(p.xi_k >= 0 and p.sigma_k_sq >= 0 for p in packs)


def test_requires_completed_step():
    fid = random_fidelity(10, 4, seed=5)
    st = SolverState(z=np.zeros(4), x=np.zeros(4), y=np.zeros(4), v_prev=np.zeros(4), K=1)
    with pytest.raises(ValueError):
        compute_diagnostics(fid, Blend(GaussianBlur(2), 0.1), 1.0, st, 0.1)


def test_theorem1_bound_estimates():
    fid = random_fidelity(30, 8, K=3, seed=6)
    z0 = np.random.default_rng(7).standard_normal(8)
    s, xi = estimate_theorem1_bounds(fid, 1.0, z0, z0, safety=4.0)
    y = prox_exact(fid, 1.0, z0, 1e-12)
    assert s == pytest.approx(4 * prox_gradient_variance(fid, 1.0, y, z0))
    assert xi == pytest.approx(4 * np.sum((y - z0) ** 2))
