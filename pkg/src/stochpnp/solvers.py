"""Plug-and-play solvers.

All solvers share :class:`SolverState`, whose ``history`` holds one
:class:`IterationRecord` per (outer) iteration.  Gradient work is counted in
block evaluations, so ``grad_block_evals / K`` is the number of data passes.

* :func:`run_pnp_admm` -- Douglas-Rachford form of PnP-ADMM with an exact
  (CG) proximal step.
* :func:`run_stochastic_pnp_admm` -- the proximal step is replaced by a
  momentum SGD inner loop on ``(1/K) sum_q [tau f_q(x) + 1/2 ||x - z||^2]``
  and the denoiser runs once per outer iteration.
* :func:`run_pnp_sgd` / :func:`run_pnp_fista` -- forward-backward PnP with
  minibatch or full gradients and one denoiser call per iteration.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .operators import BlockSampler
from .schedules import fista_momentum

__all__ = [
    "ProxError",
    "DivergenceError",
    "IterationRecord",
    "SolverState",
    "prox_exact",
    "dr_operator",
    "inner_sgd",
    "run_pnp_admm",
    "run_stochastic_pnp_admm",
    "run_pnp_sgd",
    "run_pnp_fista",
    "METRIC_COLUMNS",
]

METRIC_COLUMNS = ("outer_iter", "inner_iters_used", "fp_residual", "err_to_truth_log10",
                  "grad_block_evals_cum", "denoiser_calls_cum", "wall_ms_cum")


class ProxError(RuntimeError):
    """CG did not reach the requested tolerance; carries the best iterate."""

    def __init__(self, message, x, residual):
        super().__init__(message)
        self.x = x
        self.residual = residual


class DivergenceError(RuntimeError):
    """An iterate blew up; ``state`` holds the run up to the failure."""

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


@dataclass
class IterationRecord:
    outer_iter: int
    inner_iters_used: int
    fp_residual: float
    err_to_truth_log10: float
    grad_block_evals_cum: int
    denoiser_calls_cum: int
    wall_ms_cum: float

    def row(self):
        return [getattr(self, c) for c in METRIC_COLUMNS]


@dataclass
class SolverState:
    """Iterates and counters of a running solver.

    ``z`` is the splitting variable, ``x`` the latest denoiser output and
    ``y`` the current inner (or gradient-step) iterate.  For the ADMM
    family ``z_prev``, ``y_start`` and ``y_end`` keep the quantities of the
    last outer step: the ``z`` it started from, the inner loop's starting
    point and its final iterate.
    """

    z: np.ndarray
    x: np.ndarray
    y: np.ndarray
    v_prev: np.ndarray
    K: int
    k: int = 0
    grad_block_evals: int = 0
    denoiser_calls: int = 0
    wall_ms: float = 0.0
    z_prev: np.ndarray | None = None
    y_start: np.ndarray | None = None
    y_end: np.ndarray | None = None
    history: list = field(default_factory=list)

    @property
    def datapasses(self):
        return self.grad_block_evals / self.K

    def series(self, name):
        return np.array([getattr(r, name) for r in self.history])

    def write_csv(self, path, timing=True):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(METRIC_COLUMNS)
            for r in self.history:
                row = r.row()
                if not timing:
                    row[-1] = 0.0
                w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _log10_err(x, x_true):
    if x_true is None:
        return float("nan")
    e = float(np.linalg.norm(x - x_true))
    return math.log10(e) if e > 0 else float("-inf")


class _Clock:
    def __init__(self, state):
        self.state = state
        self.t0 = time.perf_counter() - state.wall_ms / 1000.0

    def __call__(self):
        return (time.perf_counter() - self.t0) * 1000.0


def _record(state, clock, inner, fp_res, x_true):
    state.wall_ms = clock()
    state.history.append(IterationRecord(
        state.k, int(inner), float(fp_res), _log10_err(state.x, x_true),
        state.grad_block_evals, state.denoiser_calls, state.wall_ms))


# -- proximal step and DR operator -----------------------------------------------


def prox_exact(fid, tau, z, tol=1e-10, x0=None, maxiter=None):
    """``argmin_x 1/2 ||x - z||^2 + tau f(x)`` by conjugate gradients.

    Solves ``(I + tau H) x = z + (tau/n) A^T W b`` with ``H`` the Hessian
    of ``f`` until the residual (the gradient of the prox objective) is at
    most ``tol * ||z||`` (``tol`` when ``z = 0``).
    """
    return _prox_cg(fid, tau, z, tol, x0, maxiter)[0]


def _prox_cg(fid, tau, z, tol, x0=None, maxiter=None):
    if not tau > 0:
        raise ValueError("tau must be positive")
    if not tol > 0:
        raise ValueError("tol must be positive")
    z = np.asarray(z, dtype=np.float64)
    d = fid.d
    shift = 1.0 + tau * fid.ridge_eps
    calls = [0]

    def matvec(v):
        calls[0] += 1
        return shift * v + tau * fid.normal_matvec(v)

    op = spla.LinearOperator((d, d), matvec=matvec, dtype=np.float64)
    rhs = z + tau * (fid.op.matrix.T @ (fid.weights * fid.target)) / fid.n
    nz = float(np.linalg.norm(z))
    atol = tol * (nz if nz > 0 else 1.0)
    x0 = z if x0 is None else x0
    maxiter = maxiter or 10 * d + 100
    x, _ = spla.cg(op, rhs, x0=x0, rtol=0.0, atol=atol, maxiter=maxiter)
    res = float(np.linalg.norm(matvec(x) - rhs))
    if res > atol:
        # cg stops on its recursive residual; restart once from x
        x, _ = spla.cg(op, rhs, x0=x, rtol=0.0, atol=atol, maxiter=maxiter)
        res = float(np.linalg.norm(matvec(x) - rhs))
        if res > atol:
            raise ProxError(f"CG stalled at residual {res:.3e} > {atol:.3e}", x, res)
    return x, calls[0]


def dr_operator(fid, denoiser, tau, z, tol=1e-10):
    """``T(z) = z + D(2 prox(z) - z) - prox(z)``, i.e. ``1/2 I + 1/2 (2D - I)(2 prox - I)``."""
    y = prox_exact(fid, tau, z, tol)
    return z + denoiser(2.0 * y - z) - y


# -- ADMM family --------------------------------------------------------------------


def run_pnp_admm(fid, denoiser, tau, z0, outer_iters, x_true=None, tol=None,
                 prox_tol=1e-10, callback=None):
    """Fixed-point iteration ``z <- T(z)`` with an exact proximal step."""
    if outer_iters < 1:
        raise ValueError("outer_iters must be >= 1")
    z = np.array(z0, dtype=np.float64)
    state = SolverState(z=z, x=z.copy(), y=z.copy(), v_prev=z.copy(), K=fid.K)
    clock = _Clock(state)
    for _ in range(outer_iters):
        state.k += 1
        y, matvecs = _prox_cg(fid, tau, state.z, prox_tol, x0=state.y)
        state.grad_block_evals += matvecs * fid.K
        x_new = denoiser(2.0 * y - state.z)
        state.denoiser_calls += 1
        z_new = state.z + x_new - y
        res = float(np.linalg.norm(z_new - state.z))
        state.z_prev, state.y_start, state.y_end = state.z, state.y, y
        state.z, state.x, state.y = z_new, x_new, y
        _record(state, clock, 0, res, x_true)
        if callback is not None:
            callback(state)
        if tol is not None and res < tol:
            break
    return state


def inner_sgd(fid, tau, z, y0, eta, n_iters, sampler, momentum_at=lambda j: 0.0,
              limit=np.inf):
    """Momentum SGD on the prox objective ``(1/K) sum_q [tau f_q(x) + 1/2 ||x - z||^2]``.

    Returns the final iterate ``y_N``.  Raises ``FloatingPointError`` when
    ``||y||`` exceeds ``limit``.
    """
    y = np.array(y0, dtype=np.float64)
    v_prev = y.copy()
    for j in range(1, n_iters + 1):
        q = sampler()
        g = tau * fid.grad_minibatch(y, q) + y - z
        v = y - eta * g
        a = momentum_at(j)
        y = v + a * (v - v_prev) if a else v
        v_prev = v
        ny = float(np.linalg.norm(y))
        if not ny <= limit:
            raise FloatingPointError(f"inner iterate norm {ny:.3e} exceeds guard at j={j}")
    return y


def run_stochastic_pnp_admm(fid, denoiser, schedule, z0, y00, outer_iters, rng,
                            x_true=None, tol=None, replace=True, callback=None):
    """Stochastic PnP-ADMM.

    Each outer iteration runs ``N_k`` inner steps

        v_j = y_{j-1} - eta_k [tau grad f_{S_j}(y_{j-1}) + y_{j-1} - z]
        y_j = v_j + alpha_j (v_j - v_{j-1}),     v_0 = y_0,

    then ``x <- D(2 y_N - z)``, ``z <- z + x - y_N`` and warm-starts the
    next inner loop at ``y_0 = x``.
    """
    if outer_iters < 1:
        raise ValueError("outer_iters must be >= 1")
    tau = schedule.tau
    z = np.array(z0, dtype=np.float64)
    y = np.array(y00, dtype=np.float64)
    state = SolverState(z=z, x=y.copy(), y=y, v_prev=y.copy(), K=fid.K)
    sampler = BlockSampler(fid.K, rng, replace=replace)
    limit = 1e6 * float(np.linalg.norm(z0)) + 1e6
    clock = _Clock(state)
    for _ in range(outer_iters):
        state.k += 1
        k = state.k
        eta, n_inner = schedule.step_size(k), schedule.inner_iters(k)
        try:
            y_n = inner_sgd(fid, tau, state.z, state.y, eta, n_inner, sampler,
                            schedule.momentum_at, limit)
        except FloatingPointError as exc:
            raise DivergenceError(f"outer iteration {k}: {exc}", state) from exc
        state.grad_block_evals += n_inner
        x_new = denoiser(2.0 * y_n - state.z)
        state.denoiser_calls += 1
        z_new = state.z + x_new - y_n
        res = float(np.linalg.norm(z_new - state.z))
        state.z_prev, state.y_start, state.y_end = state.z, state.y, y_n
        state.z, state.x = z_new, x_new
        state.y = x_new.copy()
        state.v_prev = state.y
        _record(state, clock, n_inner, res, x_true)
        if callback is not None:
            callback(state)
        if tol is not None and res < tol:
            break
    return state


# -- forward-backward family ------------------------------------------------------


def _momentum_rule(rule):
    if callable(rule):
        return rule
    if rule == "fista":
        return fista_momentum
    if rule in ("zero", None):
        return lambda k: 0.0
    raise ValueError(f"unknown momentum rule {rule!r}")


def _forward_backward(fid, denoiser, eta, z0, iters, grad_fn, block_cost, momentum,
                      x_true, tol, callback):
    if not eta >= 0:
        raise ValueError("eta must be >= 0")
    alpha = _momentum_rule(momentum)
    z = np.array(z0, dtype=np.float64)
    state = SolverState(z=z, x=z.copy(), y=z.copy(), v_prev=z.copy(), K=fid.K)
    limit = 1e6 * float(np.linalg.norm(z0)) + 1e6
    clock = _Clock(state)
    for _ in range(iters):
        state.k += 1
        k = state.k
        g = grad_fn(state.z)
        state.grad_block_evals += block_cost
        state.y = state.z - eta * g
        x_new = denoiser(state.y)
        state.denoiser_calls += 1
        res = float(np.linalg.norm(x_new - state.x))
        z_new = x_new + alpha(k) * (x_new - state.x)
        state.z_prev = state.z
        state.x, state.z = x_new, z_new
        nz = float(np.linalg.norm(z_new))
        if not nz <= limit:
            raise DivergenceError(f"iteration {k}: iterate norm {nz:.3e} exceeds guard", state)
        _record(state, clock, 1, res, x_true)
        if callback is not None:
            callback(state)
        if tol is not None and res < tol:
            break
    return state


def run_pnp_sgd(fid, denoiser, eta, momentum, z0, iters, rng, x_true=None, tol=None,
                replace=True, callback=None):
    """PnP-SGD: ``x_k = D(z_{k-1} - eta grad f_{S_k}(z_{k-1}))``, ``z_k = x_k + alpha_k (x_k - x_{k-1})``."""
    sampler = BlockSampler(fid.K, rng, replace=replace)
    return _forward_backward(fid, denoiser, eta, z0, iters,
                             lambda z: fid.grad_minibatch(z, sampler()), 1, momentum,
                             x_true, tol, callback)


def run_pnp_fista(fid, denoiser, eta, z0, iters, x_true=None, tol=None, callback=None):
    """PnP-FISTA: full gradients and momentum ``(k - 1)/(k + 3)``."""
    return _forward_backward(fid, denoiser, eta, z0, iters, fid.grad, fid.K, "fista",
                             x_true, tol, callback)
