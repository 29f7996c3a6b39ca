"""Sparse forward operators with row-partitioned minibatch views.

The forward model ``A`` is stored once as a CSR matrix.  Minibatch
structure is described by a :class:`Partition` of the row indices, and all
randomness (partition shuffling, minibatch sampling, noise) flows through
Philox generators created with :func:`sampler_rng` so that a seed fixes the
sample sequence on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "SparseOperator",
    "Partition",
    "BlockSampler",
    "sampler_rng",
    "partition_rows",
    "estimate_operator_norm_sq",
]


def sampler_rng(seed):
    """Return a counter-based generator (Philox) for ``seed``.

    Philox output depends only on the key and counter, so identical seeds
    give identical streams regardless of platform or threading.
    """
    return np.random.Generator(np.random.Philox(int(seed) & (2**64 - 1)))


class SparseOperator:
    """Immutable sparse linear operator ``A`` of shape ``(n, d)``.

    Parameters
    ----------
    matrix : scipy.sparse matrix or array_like
        The matrix entries.  Duplicate ``(row, col)`` pairs are summed.
    """

    def __init__(self, matrix):
        csr = sp.csr_matrix(matrix, dtype=np.float64, copy=True)
        csr.sum_duplicates()
        csr.sort_indices()
        csr.data.setflags(write=False)
        self._csr = csr
        self._csc = None
        self.row_norms_sq = np.asarray(csr.multiply(csr).sum(axis=1)).ravel()
        self.row_norms_sq.setflags(write=False)

    @classmethod
    def from_triplets(cls, n, d, rows, cols, values):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if rows.size and (rows.min() < 0 or rows.max() >= n):
            raise ValueError("row index out of range")
        if cols.size and (cols.min() < 0 or cols.max() >= d):
            raise ValueError("column index out of range")
        return cls(sp.coo_matrix((values, (rows, cols)), shape=(n, d)))

    @classmethod
    def identity(cls, n):
        return cls(sp.identity(n, format="csr"))

    @property
    def shape(self):
        return self._csr.shape

    @property
    def rows(self):
        return self._csr.shape[0]

    @property
    def cols(self):
        return self._csr.shape[1]

    @property
    def nnz(self):
        return self._csr.nnz

    @property
    def matrix(self):
        """The underlying CSR matrix (read-only data buffer)."""
        return self._csr

    def triplets(self):
        coo = self._csr.tocoo()
        return coo.row, coo.col, coo.data

    def apply(self, x):
        """Return ``A @ x``."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.cols,):
            raise ValueError(f"expected vector of length {self.cols}, got shape {x.shape}")
        return self._csr @ x

    def apply_adjoint(self, r):
        """Return ``A.T @ r``."""
        r = np.asarray(r, dtype=np.float64)
        if r.shape != (self.rows,):
            raise ValueError(f"expected vector of length {self.rows}, got shape {r.shape}")
        if self._csc is None:
            self._csc = self._csr.tocsc()
        return self._csc.T @ r

    def row_block(self, rows):
        """Return the sub-operator made of the given rows (in the given order)."""
        rows = np.asarray(rows, dtype=np.int64)
        return SparseOperator(self._csr[rows])

    def scaled(self, factor):
        return SparseOperator(self._csr * float(factor))

    def todense(self):
        return self._csr.toarray()

    def __repr__(self):
        return f"SparseOperator(shape={self.shape}, nnz={self.nnz})"

    # plain-text triplet format: "n d nnz" header then "row col value" lines
    def save(self, path):
        r, c, v = self.triplets()
        with open(path, "w") as fh:
            fh.write(f"{self.rows} {self.cols} {self.nnz}\n")
            for i, j, a in zip(r, c, v):
                fh.write(f"{int(i)} {int(j)} {float(a)!r}\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            header = fh.readline().split()
            if len(header) != 3:
                raise ValueError("malformed triplet header, expected 'n d nnz'")
            n, d, nnz = (int(t) for t in header)
            body = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
        if body.shape[0] != nnz:
            raise ValueError(f"header declares {nnz} entries, found {body.shape[0]}")
        return cls.from_triplets(n, d, body[:, 0].astype(np.int64),
                                 body[:, 1].astype(np.int64), body[:, 2])


@dataclass(frozen=True)
class Partition:
    """Disjoint cover ``{I_1, ..., I_K}`` of the row indices ``[n]``."""

    n: int
    blocks: tuple = field(repr=False)

    def __post_init__(self):
        if len(self.blocks) == 0:
            raise ValueError("partition needs at least one block")
        seen = np.zeros(self.n, dtype=np.int64)
        for b in self.blocks:
            if len(b) == 0:
                raise ValueError("empty block in partition")
            np.add.at(seen, np.asarray(b), 1)
        if np.any(seen != 1):
            raise ValueError("blocks must be disjoint and cover [n]")
        for b in self.blocks:
            b.setflags(write=False)

    @property
    def K(self):
        return len(self.blocks)

    @property
    def m(self):
        return self.n // self.K

    @property
    def sizes(self):
        return [len(b) for b in self.blocks]

    def __len__(self):
        return self.K

    def __getitem__(self, k):
        return self.blocks[k]


def partition_rows(n, K, rng=None, strategy="contiguous"):
    """Split ``range(n)`` into ``K`` non-empty disjoint blocks.

    ``contiguous`` uses runs of ``n // K`` rows with the remainder appended
    to the last block, ``strided`` puts row ``i`` in block ``i % K`` and
    ``shuffled`` applies the contiguous split to a seeded permutation.
    """
    n, K = int(n), int(K)
    if K < 1 or K > n:
        raise ValueError(f"need 1 <= K <= n, got K={K}, n={n}")
    if strategy == "strided":
        blocks = [np.arange(k, n, K, dtype=np.int64) for k in range(K)]
        return Partition(n, tuple(blocks))
    if strategy == "contiguous":
        order = np.arange(n, dtype=np.int64)
    elif strategy == "shuffled":
        if rng is None:
            raise ValueError("shuffled partition needs an rng")
        order = rng.permutation(n).astype(np.int64)
    else:
        raise ValueError(f"unknown partition strategy {strategy!r}")
    m = n // K
    cuts = [k * m for k in range(K)] + [n]
    blocks = [np.sort(order[cuts[k]:cuts[k + 1]]) for k in range(K)]
    return Partition(n, tuple(blocks))


class BlockSampler:
    """Draws minibatch indices in ``range(K)``.

    With replacement (the default) every draw is uniform and independent.
    Without replacement the blocks are visited in a fresh random order each
    epoch of ``K`` draws.
    """

    def __init__(self, K, rng, replace=True):
        self.K = int(K)
        self.rng = rng
        self.replace = replace
        self._epoch = []

    def __call__(self):
        if self.replace:
            return int(self.rng.integers(self.K))
        if not self._epoch:
            self._epoch = list(self.rng.permutation(self.K)[::-1])
        return int(self._epoch.pop())


def estimate_operator_norm_sq(op, iters=100, rng=None):
    """Power-iteration estimate of ``||A||_2^2``.

    Returns the Rayleigh quotient of ``A^T A`` at the final iterate.  For a
    fixed starting vector this is nondecreasing in ``iters``.  A zero
    operator gives 0.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if rng is None:
        rng = sampler_rng(0)
    v = rng.standard_normal(op.cols)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        Av = op.apply(v)
        est = float(Av @ Av)
        w = op.apply_adjoint(Av)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    return est
