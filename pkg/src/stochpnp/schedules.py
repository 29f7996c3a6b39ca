"""Parameter schedules for the stochastic PnP-ADMM inner loop.

A :class:`Schedule` answers three questions for outer iteration ``k``
(1-based) and inner iteration ``j`` (1-based): the inner step size, the
number of inner iterations, and the momentum weight.  Two families exist:

* ``constant`` rules with FISTA-type momentum ``(j - 1)/(j + 3)``, the
  practical setting;
* ``theorem1`` rules with zero momentum, ``eta_k = mu0 / (2 mu0 L0 + 2 k sigma^2)``
  and ``N_k = ceil(2 ln(max(k xi, e)) (L0/mu0 + k sigma^2 / mu0^2))``,
  for which the fixed-point residual is guaranteed to vanish.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "Schedule",
    "ScheduleError",
    "contraction_factor",
    "min_tau",
    "make_theorem1_schedule",
    "lemma1_parameters",
    "fista_momentum",
]


class ScheduleError(ValueError):
    """A requested schedule violates its convergence conditions."""


def fista_momentum(j):
    return (j - 1.0) / (j + 3.0)


def min_tau(beta):
    """Lower bound on ``tau`` for the contraction to hold: ``1 / (1 + beta - 2 beta^2)``."""
    return 1.0 / (1.0 + beta - 2.0 * beta * beta)


def contraction_factor(beta, tau, mu):
    """Lipschitz constant ``delta`` of the Douglas-Rachford operator.

    ``(1 + beta + beta tau mu + 2 beta^2 tau mu) / (1 + tau mu + 2 beta tau mu)``
    """
    tm = tau * mu
    return (1.0 + beta + beta * tm + 2.0 * beta * beta * tm) / (1.0 + tm + 2.0 * beta * tm)


@dataclass(frozen=True)
class Schedule:
    tau: float
    eta_rule: str = "constant"
    eta: float = 0.0
    inner_rule: str = "constant"
    inner_iters_const: int = 1
    momentum: str = "fista"
    mu0: float = float("nan")
    L0: float = float("nan")
    sigma_sq_bound: float = float("nan")
    xi_bound: float = float("nan")

    def __post_init__(self):
        if not self.tau > 0:
            raise ScheduleError("tau must be positive")
        if self.eta_rule not in ("constant", "theorem1"):
            raise ScheduleError(f"unknown eta rule {self.eta_rule!r}")
        if self.inner_rule not in ("constant", "theorem1"):
            raise ScheduleError(f"unknown inner-iteration rule {self.inner_rule!r}")
        if self.momentum not in ("zero", "fista"):
            raise ScheduleError(f"unknown momentum rule {self.momentum!r}")
        if self.eta_rule == "constant" and self.eta < 0:
            raise ScheduleError("eta must be >= 0")
        if self.inner_rule == "constant" and self.inner_iters_const < 1:
            raise ScheduleError("inner iteration count must be >= 1")

    @classmethod
    def constant(cls, tau, eta, inner_iters, momentum="fista"):
        return cls(tau=tau, eta=eta, inner_iters_const=int(inner_iters), momentum=momentum)

    @classmethod
    def theorem1(cls, tau, mu0, L0, sigma_sq, xi):
        return cls(tau=tau, eta_rule="theorem1", inner_rule="theorem1", momentum="zero",
                   mu0=mu0, L0=L0, sigma_sq_bound=sigma_sq, xi_bound=xi)

    def step_size(self, k):
        if self.eta_rule == "constant":
            return self.eta
        return self.mu0 / (2.0 * self.mu0 * self.L0 + 2.0 * k * self.sigma_sq_bound)

    def inner_iters(self, k):
        if self.inner_rule == "constant":
            return self.inner_iters_const
        log_term = math.log(max(k * self.xi_bound, math.e))
        n = 2.0 * log_term * (self.L0 / self.mu0 + k * self.sigma_sq_bound / self.mu0 ** 2)
        return max(1, math.ceil(n))

    def momentum_at(self, j):
        return 0.0 if self.momentum == "zero" else fista_momentum(j)

    def describe(self):
        return {
            "tau": self.tau, "eta_rule": self.eta_rule, "eta": self.eta,
            "inner_rule": self.inner_rule, "inner_iters": self.inner_iters_const,
            "momentum": self.momentum, "mu0": self.mu0, "L0": self.L0,
            "sigma_sq_bound": self.sigma_sq_bound, "xi_bound": self.xi_bound,
        }


def make_theorem1_schedule(fid, beta, tau, sigma_bound, xi_bound):
    """Validated ``theorem1`` schedule for ``fid``.

    ``sigma_bound`` is the bound on the inner-loop gradient variance
    ``sigma^2`` (already squared); ``xi_bound`` bounds the squared
    warm-start distance.  Raises :class:`ScheduleError` naming each violated
    condition.
    """
    mu, L = fid.constants()
    problems = []
    if not beta < 1:
        problems.append(f"beta < 1 required, got beta={beta}")
    elif not tau > min_tau(beta):
        problems.append(f"tau > 1/(1+beta-2beta^2) = {min_tau(beta):.6g} required, got tau={tau}")
    if not mu > 0:
        problems.append("fidelity is not strongly convex (mu = 0)")
    if not problems:
        # the tau bound above is sufficient for delta < 1 only when mu >= 1
        delta = contraction_factor(beta, tau, mu)
        if not delta < 1:
            problems.append(f"contraction factor delta = {delta:.6g} must be < 1 "
                            f"(tau mu > beta/(1+beta-2beta^2) = {beta * min_tau(beta):.6g}, "
                            f"got tau mu = {tau * mu:.6g})")
    if problems:
        raise ScheduleError("; ".join(problems))
    return Schedule.theorem1(tau, tau * mu + 1.0, tau * L + 1.0, sigma_bound, xi_bound)


def lemma1_parameters(mu0, L0, sigma_sq, xi, eps):
    """Inner step size and iteration count reaching ``E||y_N - prox||^2 <= eps``.

    Returns ``(eta, N)`` with ``eta = mu0 eps / (2 eps mu0 L0 + 2 sigma^2)`` and
    ``N = ceil(2 ln(xi / eps) (L0/mu0 + sigma^2 / (mu0^2 eps)))``, floored at 1.
    """
    eta = mu0 * eps / (2.0 * eps * mu0 * L0 + 2.0 * sigma_sq)
    log_term = math.log(xi / eps) if xi > eps else 0.0
    n = 2.0 * log_term * (L0 / mu0 + sigma_sq / (mu0 ** 2 * eps))
    return eta, max(1, math.ceil(n))
