"""Quadratic data-fidelity terms with minibatch structure.

The weighted least-squares family

    f(x) = 1/(2n) sum_i w_i (a_i . x - b_i)^2 + eps/2 ||x||^2

covers plain least squares (``w = 1``) and PWLS for low-dose CT.  The
minibatch term of block ``I_k`` is scaled by ``K/n`` so that
``f = (1/K) sum_k f_{I_k}`` holds exactly for any block sizes.

Curvature constants follow the no-half convention

    f(x) - f(y) - <grad f(y), x - y> >= mu ||x - y||^2,

so ``mu`` and ``L`` are half the extreme Hessian eigenvalues.  The
Hessian eigenvalues themselves are available from
:meth:`Fidelity.hessian_bounds`.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .operators import Partition, SparseOperator, partition_rows, sampler_rng

__all__ = ["Fidelity", "least_squares", "pwls"]

# dense eigensolves are used below this dimension, power iteration above it
_DENSE_LIMIT = 2048


class Fidelity:
    """Weighted least-squares data term bound to an operator and a partition.

    Parameters
    ----------
    op : SparseOperator
    target : array_like, shape (n,)
        ``b`` for least squares, the log-sinogram for PWLS.
    weights : array_like, shape (n,), optional
        Nonnegative per-row weights; all ones when omitted.
    partition : Partition, optional
        Minibatch blocks; a single block when omitted.
    ridge_eps : float
        Coefficient of the ``eps/2 ||x||^2`` term.
    kind : str
        Label, ``"least_squares"`` or ``"pwls"``.
    """

    def __init__(self, op, target, weights=None, partition=None, ridge_eps=0.0,
                 kind="least_squares"):
        n, d = op.shape
        target = np.asarray(target, dtype=np.float64)
        if target.shape != (n,):
            raise ValueError(f"target must have length {n}")
        if weights is None:
            weights = np.ones(n)
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (n,) or np.any(weights < 0):
            raise ValueError("weights must be a nonnegative vector of length n")
        if partition is None:
            partition = partition_rows(n, 1)
        if partition.n != n:
            raise ValueError("partition does not match operator rows")
        if ridge_eps < 0:
            raise ValueError("ridge_eps must be >= 0")
        self.kind = kind
        self.op = op
        self.target = target
        self.weights = weights
        self.partition = partition
        self.ridge_eps = float(ridge_eps)
        self.n, self.d = n, d
        self.K = partition.K
        # per-block CSR copies so a minibatch gradient costs O(nnz / K)
        self._blocks = [op.matrix[np.asarray(b)] for b in partition.blocks]
        self._block_T = [B.T.tocsr() for B in self._blocks]
        self._block_b = [target[b] for b in partition.blocks]
        self._block_w = [weights[b] for b in partition.blocks]
        self._AT = op.matrix.T.tocsr()
        self._hessian = None

    def with_partition(self, partition):
        return Fidelity(self.op, self.target, self.weights, partition,
                        self.ridge_eps, self.kind)

    def scaled(self, factor):
        """The same term multiplied by ``factor`` (operator and target scaled by its root)."""
        r = float(np.sqrt(factor))
        return Fidelity(self.op.scaled(r), r * self.target, self.weights, self.partition,
                        factor * self.ridge_eps, self.kind)

    def with_ridge(self, ridge_eps):
        return Fidelity(self.op, self.target, self.weights, self.partition,
                        ridge_eps, self.kind)

    # -- values and gradients -------------------------------------------------

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.d,):
            raise ValueError(f"expected vector of length {self.d}, got shape {x.shape}")
        return x

    def value(self, x):
        x = self._check(x)
        with np.errstate(over="ignore", invalid="ignore"):
            r = self.op.matrix @ x - self.target
            val = (0.5 / self.n * float(np.dot(self.weights * r, r))
                   + 0.5 * self.ridge_eps * float(x @ x))
        if not np.isfinite(val):
            raise FloatingPointError("non-finite fidelity value")
        return val

    def grad(self, x):
        x = self._check(x)
        r = self.op.matrix @ x - self.target
        g = self._AT @ (self.weights * r) / self.n
        if self.ridge_eps:
            g += self.ridge_eps * x
        return g

    def block_value(self, x, k):
        x = self._check(x)
        r = self._blocks[k] @ x - self._block_b[k]
        return (0.5 * self.K / self.n * float(np.dot(self._block_w[k] * r, r))
                + 0.5 * self.ridge_eps * float(x @ x))

    def grad_minibatch(self, x, k):
        """Gradient of ``f_{I_k}``; the mean over all blocks equals :meth:`grad`."""
        if not 0 <= k < self.K:
            raise IndexError(f"block {k} out of range for K={self.K}")
        x = self._check(x)
        r = self._blocks[k] @ x - self._block_b[k]
        g = self._block_T[k] @ (self._block_w[k] * r) / self.n * self.K
        if self.ridge_eps:
            g += self.ridge_eps * x
        return g

    # -- curvature ------------------------------------------------------------

    def normal_matvec(self, x):
        """``(1/n) A^T W A x`` (data part of the Hessian, no ridge)."""
        return self._AT @ (self.weights * (self.op.matrix @ x)) / self.n

    def _block_normal_matvec(self, v, k):
        return self._block_T[k] @ (self._block_w[k] * (self._blocks[k] @ v)) * (self.K / self.n)

    def _block_normal(self, k):
        B = self._blocks[k]
        return (self.K / self.n) * (self._block_T[k] @ sp.diags(self._block_w[k]) @ B)

    def hessian_bounds(self, power_iters=200):
        """Return ``(lambda_min, lambda_max_full, lambda_max_block)`` of the Hessians.

        ``lambda_min`` is exact for small ``d`` and the lower bound ``eps``
        otherwise (or whenever ``A^T W A`` is rank deficient).  All values
        include the ridge.
        """
        if self._hessian is not None:
            return self._hessian
        eps = self.ridge_eps
        rank_deficient = np.count_nonzero(self.weights) < self.d
        if self.d <= _DENSE_LIMIT:
            H = (self._AT @ sp.diags(self.weights) @ self.op.matrix).toarray() / self.n
            ev = np.linalg.eigvalsh(H)
            lam_min = float(ev[0])
            if rank_deficient or lam_min <= 1e-12 * max(float(ev[-1]), 1.0):
                lam_min = 0.0
            lam_full = float(ev[-1])
            lam_block = max(float(np.linalg.eigvalsh(self._block_normal(k).toarray())[-1])
                            for k in range(self.K))
        else:
            lam_min = 0.0
            lam_full = _power_sym(self.normal_matvec, self.d, power_iters)
            lam_block = max(_power_sym(lambda v, k=k: self._block_normal_matvec(v, k), self.d,
                                       power_iters)
                            for k in range(self.K))
        self._hessian = (lam_min + eps, lam_full + eps, lam_block + eps)
        return self._hessian

    def constants(self):
        """Return ``(mu, L_minibatch)`` in the no-half curvature convention.

        ``mu == 0`` means no strong convexity could be certified; the
        theoretical schedules refuse such a fidelity.
        """
        lam_min, _, lam_block = self.hessian_bounds()
        return 0.5 * lam_min, 0.5 * lam_block

    @property
    def mu(self):
        return self.constants()[0]

    @property
    def L_minibatch(self):
        return self.constants()[1]

    def lipschitz_full(self):
        """Lipschitz constant of ``grad f`` (largest Hessian eigenvalue)."""
        return self.hessian_bounds()[1]

    def lipschitz_block(self):
        """Largest Lipschitz constant of the block gradients."""
        return self.hessian_bounds()[2]

    def __repr__(self):
        return (f"Fidelity(kind={self.kind!r}, n={self.n}, d={self.d}, K={self.K}, "
                f"ridge_eps={self.ridge_eps})")


def _power_sym(matvec, d, iters, seed=0):
    v = sampler_rng(seed).standard_normal(d)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = matvec(v)
        lam = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    return lam


def least_squares(op, b, partition=None, ridge_eps=0.0):
    return Fidelity(op, b, None, partition, ridge_eps, kind="least_squares")


def pwls(op, log_sino, weights, partition=None, ridge_eps=0.0):
    return Fidelity(op, log_sino, weights, partition, ridge_eps, kind="pwls")
