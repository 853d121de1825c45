"""Signed block-model sampling and the expected normalized operator."""

import numpy as np
import pytest
from fractions import Fraction

from heterognn.csbm import (
    CsbmParams,
    expected_operator,
    mean_abs_degree,
    sample_csbm,
    signed_normalize,
)


def params(**kw):
    base = dict(n_nodes=60, n_classes=3, p=0.5, q=0.2,
                class_means=[[-1.0], [0.0], [1.0]], seed=0)
    base.update(kw)
    return CsbmParams(**base)


def test_rejects_uneven_class_blocks():
    with pytest.raises(ValueError):
        params(n_nodes=61)


def test_rejects_bad_probability():
    with pytest.raises(ValueError):
        params(p=1.5)


def test_empty_graph_when_p_q_zero():
    s = sample_csbm(params(p=0.0, q=0.0, n_nodes=300))
    assert s.adjacency.nnz == 0
    # features still cluster around the class means within 3 standard errors
    for c in range(3):
        block = s.features[s.labels == c, 0]
        se = block.std(ddof=1) / np.sqrt(len(block))
        assert abs(block.mean() - [-1.0, 0.0, 1.0][c]) < 3 * se


def test_two_positive_cliques():
    s = sample_csbm(CsbmParams(10, 2, p=1.0, q=0.0, class_means=[[0.0], [1.0]]))
    a = s.adjacency.toarray()
    same = s.labels[:, None] == s.labels[None, :]
    expected = np.where(same, 1.0, 0.0)
    np.fill_diagonal(expected, 0.0)
    np.testing.assert_array_equal(a, expected)


def test_adjacency_symmetric_bit_exact():
    s = sample_csbm(params(seed=5))
    diff = (s.adjacency - s.adjacency.T).tocsr()
    assert diff.nnz == 0


def test_signs_follow_classes():
    s = sample_csbm(params(seed=6))
    coo = s.adjacency.tocoo()
    same = s.labels[coo.row] == s.labels[coo.col]
    assert (coo.data[same] == 1.0).all()
    assert (coo.data[~same] == -1.0).all()


def test_deterministic_per_seed():
    a, b = sample_csbm(params(seed=7)), sample_csbm(params(seed=7))
    assert (a.adjacency != b.adjacency).nnz == 0
    np.testing.assert_array_equal(a.features, b.features)


def test_mean_abs_degree_matches_expectation():
    # 20 seeds at simulation scale; expectation (N/C-1)p + (C-1)(N/C)q ~ 23
    p = params(n_nodes=3000, p=0.003, q=0.01)
    exact = (p.block_size - 1) * p.p + 2 * p.block_size * p.q
    assert exact == pytest.approx(23, abs=0.01)
    degs = []
    for seed in range(20):
        s = sample_csbm(params(n_nodes=3000, p=0.003, q=0.01, seed=seed))
        degs.append(s.abs_degree.mean())
    assert abs(np.mean(degs) - exact) / exact < 0.10


def test_single_negative_edge_normalizes_to_minus_one():
    # two classes of one node each: the only possible edge is the cross pair
    s = sample_csbm(CsbmParams(2, 2, p=0.0, q=1.0, class_means=[[0.0], [0.0]]))
    P, kept = signed_normalize(s)
    assert kept.tolist() == [0, 1]
    np.testing.assert_allclose(P.toarray(), [[0.0, -1.0], [-1.0, 0.0]])


def test_positive_pair_normalizes_to_unit():
    s = sample_csbm(CsbmParams(4, 2, p=1.0, q=0.0, class_means=[[0.0], [0.0]]))
    P, kept = signed_normalize(s)
    # two disjoint positive pairs, each edge becomes exactly +1/sqrt(1*1)
    arr = P.toarray()
    np.testing.assert_allclose(arr[0, 1], 1.0)
    np.testing.assert_allclose(arr[2, 3], 1.0)


def test_isolated_nodes_dropped_with_warning():
    s = sample_csbm(params(p=0.0, q=0.0, n_nodes=6))
    s.adjacency = s.adjacency.tolil()
    s.adjacency[0, 1] = 1.0
    s.adjacency[1, 0] = 1.0
    s.adjacency = s.adjacency.tocsr()
    s.abs_degree = np.asarray(abs(s.adjacency).sum(axis=1)).ravel()
    with pytest.warns(UserWarning, match="isolated"):
        P, kept = signed_normalize(s)
    assert kept.tolist() == [0, 1]
    assert P.shape == (2, 2)


def _power_iteration_norm(P, iters=200, seed=0):
    """Spectral norm oracle for a symmetric operator."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=P.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = P @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        lam, v = norm, w / norm
    return lam


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_normalized_operator_norm_at_most_one(seed):
    s = sample_csbm(params(n_nodes=120, p=0.2, q=0.1, seed=seed))
    P, _ = signed_normalize(s)
    assert _power_iteration_norm(P) <= 1.0 + 1e-9


def test_expected_operator_symmetric_when_p_equals_q():
    block = expected_operator(params(p=0.3, q=0.3, n_classes=2, n_nodes=60,
                                     class_means=[[0.0], [1.0]]))
    assert block[0, 0] == pytest.approx(-block[0, 1])


def test_expected_operator_frozen_values():
    # d-bar = 1000 * (0.003 + 2*0.01) = 23
    p = params(n_nodes=3000, p=0.003, q=0.01)
    assert mean_abs_degree(p) == pytest.approx(23.0, rel=1e-12)
    block = expected_operator(p)
    intra = float(Fraction(3, 1000) / 23)
    inter = -float(Fraction(1, 100) / 23)
    np.testing.assert_allclose(np.diag(block), intra, rtol=1e-12)
    assert block[0, 1] == pytest.approx(inter, rel=1e-12)
    assert intra == pytest.approx(1.304e-4, abs=1e-7)
    assert inter == pytest.approx(-4.348e-4, abs=1e-7)


def test_expected_operator_reproduces_recursion_coefficients():
    # applying the block pattern to a class-indicator vector and scaling by
    # the block size must give p/(p+(C-1)q) on the diagonal and -q/(...) off it
    p = params(n_nodes=3000, p=0.003, q=0.01)
    block = expected_operator(p) * p.block_size
    den = p.p + (p.n_classes - 1) * p.q
    np.testing.assert_allclose(np.diag(block), p.p / den, rtol=1e-12)
    off = block[~np.eye(3, dtype=bool)]
    np.testing.assert_allclose(off, -p.q / den, rtol=1e-12)


def test_expected_operator_degenerate():
    with pytest.raises(ValueError):
        expected_operator(params(p=0.0, q=0.0))


def test_flat_mean_vector_accepted_for_1d_features():
    cp = CsbmParams(30, 3, 0.1, 0.1, class_means=[-0.5, 0.0, 0.5])
    assert cp.class_means.shape == (3, 1)
