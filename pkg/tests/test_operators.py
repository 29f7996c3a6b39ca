import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from stochpnp.operators import (BlockSampler, Partition, SparseOperator,
                                estimate_operator_norm_sq, partition_rows, sampler_rng)


def random_operator(n, d, density=0.4, seed=0):
    rng = np.random.default_rng(seed)
    M = sp.random(n, d, density=density, random_state=rng, format="coo")
    return SparseOperator(M), M.toarray()


def test_apply_identity():
    op = SparseOperator.identity(3)
    np.testing.assert_array_equal(op.apply(np.array([1.0, 2.0, 3.0])), [1, 2, 3])
    np.testing.assert_array_equal(SparseOperator.identity(2).apply_adjoint(np.array([4.0, 5.0])), [4, 5])


def test_apply_hand_sum():
    op = SparseOperator([[2.0, 3.0]])
    np.testing.assert_array_equal(op.apply(np.ones(2)), [5.0])
    np.testing.assert_array_equal(op.apply_adjoint(np.array([1.0])), [2.0, 3.0])


def test_apply_matches_dense():
    op, M = random_operator(20, 10)
    x = np.random.default_rng(1).standard_normal(10)
    ref = M @ x
    assert np.linalg.norm(op.apply(x) - ref) <= 1e-12 * np.linalg.norm(ref)


def test_adjoint_identity_random_pairs():
    op, _ = random_operator(20, 10, seed=3)
    rng = np.random.default_rng(4)
    for _ in range(100):
        x, r = rng.standard_normal(10), rng.standard_normal(20)
        Ax = op.apply(x)
        lhs, rhs = Ax @ r, x @ op.apply_adjoint(r)
        assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(Ax) * np.linalg.norm(r)


def test_dimension_mismatch():
    op = SparseOperator.identity(3)
    with pytest.raises(ValueError):
        op.apply(np.ones(4))
    with pytest.raises(ValueError):
        op.apply_adjoint(np.ones(2))


def test_duplicates_summed_and_row_norms():
    op = SparseOperator.from_triplets(2, 3, [0, 0, 1], [1, 1, 2], [1.0, 2.0, -4.0])
    assert op.nnz == 2
    np.testing.assert_allclose(op.todense(), [[0, 3, 0], [0, 0, -4]])
    np.testing.assert_allclose(op.row_norms_sq, [9.0, 16.0], rtol=1e-12)
    with pytest.raises(ValueError):
        SparseOperator.from_triplets(2, 2, [2], [0], [1.0])


def test_row_norms_cache_random():
    op, M = random_operator(15, 7, seed=9)
    np.testing.assert_allclose(op.row_norms_sq, (M ** 2).sum(axis=1), rtol=1e-12)


def test_triplet_roundtrip(tmp_path):
    op, M = random_operator(12, 5, seed=5)
    path = tmp_path / "A.txt"
    op.save(path)
    header = path.read_text().splitlines()[0].split()
    assert header == ["12", "5", str(op.nnz)]
    back = SparseOperator.load(path)
    np.testing.assert_array_equal(back.todense(), M)


def test_partition_contiguous_and_strided():
    p = partition_rows(4, 2, strategy="contiguous")
    assert [list(b) for b in p.blocks] == [[0, 1], [2, 3]]
    p = partition_rows(4, 2, strategy="strided")
    assert [list(b) for b in p.blocks] == [[0, 2], [1, 3]]


def test_partition_shuffled_cover():
    p = partition_rows(10, 3, sampler_rng(7), "shuffled")
    assert sorted(p.sizes) == [3, 3, 4]
    allrows = np.concatenate(p.blocks)
    assert sorted(allrows) == list(range(10))


def test_partition_errors():
    with pytest.raises(ValueError):
        partition_rows(3, 4)
    with pytest.raises(ValueError):
        partition_rows(3, 0)
    with pytest.raises(ValueError):
        Partition(3, (np.array([0, 1]), np.array([1, 2])))


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 60), data=st.data(),
       strategy=st.sampled_from(["contiguous", "strided", "shuffled"]))
def test_partition_cover_property(n, data, strategy):
    K = data.draw(st.integers(1, n))
    p = partition_rows(n, K, sampler_rng(n * 31 + K), strategy)
    assert p.K == K
    assert sum(p.sizes) == n
    assert min(p.sizes) >= 1
    np.testing.assert_array_equal(np.sort(np.concatenate(p.blocks)), np.arange(n))


def test_row_blocks_reassemble():
    op, M = random_operator(17, 6, seed=11)
    p = partition_rows(17, 4, sampler_rng(2), "shuffled")
    stacked = np.vstack([op.row_block(b).todense() for b in p.blocks])
    order = np.concatenate(p.blocks)
    rebuilt = np.empty_like(M)
    rebuilt[order] = stacked
    np.testing.assert_array_equal(rebuilt, M)


def test_rng_determinism():
    a = sampler_rng(123).integers(0, 1 << 30, size=50)
    b = sampler_rng(123).integers(0, 1 << 30, size=50)
    assert a.tobytes() == b.tobytes()
    s1, s2 = BlockSampler(10, sampler_rng(5)), BlockSampler(10, sampler_rng(5))
    assert [s1() for _ in range(30)] == [s2() for _ in range(30)]


def test_sampler_without_replacement_epochs():
    s = BlockSampler(5, sampler_rng(1), replace=False)
    for _ in range(4):
        assert sorted(s() for _ in range(5)) == list(range(5))


def test_norm_estimates():
    assert estimate_operator_norm_sq(SparseOperator.identity(5), 10) == pytest.approx(1.0, abs=1e-6)
    diag = SparseOperator(sp.diags([1.0, 2.0, 3.0]))
    assert estimate_operator_norm_sq(diag, 50) == pytest.approx(9.0, abs=1e-6)
    assert estimate_operator_norm_sq(SparseOperator(sp.csr_matrix((4, 3))), 5) == 0.0
    with pytest.raises(ValueError):
        estimate_operator_norm_sq(diag, 0)


def test_norm_estimate_vs_svd_and_monotone():
    op, M = random_operator(30, 20, seed=21)
    ref = np.linalg.svd(M, compute_uv=False)[0] ** 2
    assert estimate_operator_norm_sq(op, 300, sampler_rng(0)) == pytest.approx(ref, rel=1e-4)
    ests = [estimate_operator_norm_sq(op, it, sampler_rng(0)) for it in range(1, 30)]
    assert all(b >= a * (1 - 1e-12) for a, b in zip(ests, ests[1:]))
