"""Convergence diagnostics for the inexact Douglas-Rachford recursion.

Given the state right after an outer step of the stochastic solver, the
exact proximal point ``y* = prox(z_prev)`` is recomputed so that the
realised inner-loop error, the induced perturbation of ``T`` and the
variance and distance quantities entering the inner-loop schedule can be
measured.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedules import contraction_factor
from .solvers import prox_exact

__all__ = ["DiagnosticPack", "compute_diagnostics", "prox_gradient_variance",
           "estimate_theorem1_bounds"]


@dataclass(frozen=True)
class DiagnosticPack:
    sigma_k_sq: float
    xi_k: float
    prox_error: float
    delta_theoretical: float
    eps_norm: float
    eps_bound: float

    @property
    def bound_holds(self):
        # the (3 + 2 beta) amplification bound, with a rounding allowance
        return self.eps_norm <= self.eps_bound * (1.0 + 1e-9) + 1e-12


def prox_gradient_variance(fid, tau, y_star, z):
    """Mean over all blocks of ``||tau grad f_q(y*) + y* - z||^2``."""
    base = y_star - z
    return float(np.mean([np.sum((tau * fid.grad_minibatch(y_star, q) + base) ** 2)
                          for q in range(fid.K)]))


def compute_diagnostics(fid, denoiser, tau, state, beta, prox_tol=1e-12):
    """Diagnostics of the outer step that produced ``state``.

    Requires ``state.z_prev``, ``state.y_start`` and ``state.y_end`` as
    filled in by the ADMM-family solvers.
    """
    if state.z_prev is None:
        raise ValueError("state has no completed outer step")
    z = state.z_prev
    y_star = prox_exact(fid, tau, z, prox_tol)
    t_z = z + denoiser(2.0 * y_star - z) - y_star
    u = float(np.linalg.norm(state.y_end - y_star))
    mu = fid.constants()[0]
    return DiagnosticPack(
        sigma_k_sq=prox_gradient_variance(fid, tau, y_star, z),
        xi_k=float(np.sum((y_star - state.y_start) ** 2)),
        prox_error=u,
        delta_theoretical=contraction_factor(beta, tau, mu),
        eps_norm=float(np.linalg.norm(state.z - t_z)),
        eps_bound=(3.0 + 2.0 * beta) * u,
    )


def estimate_theorem1_bounds(fid, tau, z0, x0, safety=4.0, prox_tol=1e-12):
    """Heuristic ``(sigma^2, xi)`` bounds measured at the starting point.

    Both are the values at ``z0`` (``xi`` against the inner starting point
    ``x0``) inflated by ``safety``.
    """
    y_star = prox_exact(fid, tau, z0, prox_tol)
    sigma_sq = prox_gradient_variance(fid, tau, y_star, z0)
    xi = float(np.sum((y_star - x0) ** 2))
    return safety * sigma_sq, safety * xi
