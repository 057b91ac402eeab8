"""Minibatch OT tests: brute-force assignment oracle, marginal laws, sampling."""

from itertools import permutations

import numpy as np
import pytest

from compflow import ot


def brute_force_cost(cost):
    """Minimal transport cost over all k! permutations, scaled by 1/k."""
    k = cost.shape[0]
    best = min(sum(cost[i, p[i]] for i in range(k)) for p in permutations(range(k)))
    return best / k


def test_cost_matrix_1d():
    assert ot.cost_matrix([[0.0]], [[3.0]])[0, 0] == 9.0


def test_cost_matrix_identical_sets_zero_diagonal():
    x = np.random.default_rng(0).standard_normal((5, 3))
    c = ot.cost_matrix(x, x)
    assert np.array_equal(np.diag(c), np.zeros(5))


def test_cost_matrix_3_4_5():
    assert ot.cost_matrix([[0.0, 0.0]], [[3.0, 4.0]])[0, 0] == 25.0


def test_cost_matrix_transpose_symmetry():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((6, 4))
    y = rng.standard_normal((6, 4))
    assert np.array_equal(ot.cost_matrix(x, y).T, ot.cost_matrix(y, x))


def test_cost_matrix_dimension_mismatch():
    with pytest.raises(ValueError):
        ot.cost_matrix(np.zeros((2, 3)), np.zeros((2, 4)))


def test_augmented_cost_identical_triples_zero():
    rng = np.random.default_rng(2)
    s, a, sp = rng.standard_normal((4, 2)), rng.standard_normal((4, 2)), rng.standard_normal((4, 2))
    c = ot.augmented_cost_matrix((s, a, sp), (s, a, sp), eta=7.0)
    assert np.allclose(np.diag(c), 0.0)


def test_augmented_cost_arithmetic():
    # next-state dist^2 = 4, state dist^2 = 1, action dist^2 = 0, eta = 10 -> 14
    triple_a = (np.array([[0.0]]), np.array([[0.5]]), np.array([[0.0]]))
    triple_b = (np.array([[1.0]]), np.array([[0.5]]), np.array([[2.0]]))
    c = ot.augmented_cost_matrix(triple_a, triple_b, eta=10.0)
    assert c[0, 0] == pytest.approx(14.0)


def test_augmented_cost_eta_zero_reduces_to_next_state_cost():
    rng = np.random.default_rng(3)
    ta = (rng.standard_normal((3, 2)), rng.standard_normal((3, 1)), rng.standard_normal((3, 2)))
    tb = (rng.standard_normal((3, 2)), rng.standard_normal((3, 1)), rng.standard_normal((3, 2)))
    assert np.array_equal(ot.augmented_cost_matrix(ta, tb, 0.0), ot.cost_matrix(ta[2], tb[2]))


def test_augmented_cost_rejects_negative_eta():
    z = (np.zeros((1, 1)),) * 3
    with pytest.raises(ValueError):
        ot.augmented_cost_matrix(z, z, -0.1)


def test_solve_exact_2x2_cases():
    c = np.array([[0.0, 1.0], [1.0, 0.0]])
    cp = ot.solve_exact(c)
    assert np.array_equal(cp.matrix, np.array([[0.5, 0.0], [0.0, 0.5]]))
    assert cp.transport_cost(c) == 0.0

    c = np.array([[1.0, 2.0], [3.0, 1.0]])
    cp = ot.solve_exact(c)
    assert np.array_equal(cp.matrix, np.array([[0.5, 0.0], [0.0, 0.5]]))
    assert cp.transport_cost(c) == pytest.approx(1.0)


def test_solve_exact_matches_permutation_oracle_5x5():
    rng = np.random.default_rng(4)
    for _ in range(20):
        c = rng.random((5, 5))
        assert ot.solve_exact(c).transport_cost(c) == pytest.approx(brute_force_cost(c), abs=1e-12)


def test_solve_exact_rejects_nonfinite():
    c = np.array([[0.0, np.inf], [1.0, 0.0]])
    with pytest.raises(ValueError):
        ot.solve_exact(c)


def test_solve_entropic_k1():
    cp = ot.solve_entropic(np.array([[2.0]]), eps=0.5)
    assert cp.matrix[0, 0] == pytest.approx(1.0)


def test_solve_entropic_dominant_permutation_near_exact():
    rng = np.random.default_rng(5)
    k = 5
    perm = rng.permutation(k)
    c = rng.random((k, k)) + 1.0
    c[np.arange(k), perm] = 0.0
    entropic = ot.solve_entropic(c, eps=1e-3)
    exact = ot.solve_exact(c)
    scale = c.max()
    assert entropic.transport_cost(c) <= exact.transport_cost(c) + 0.01 * scale


def test_solve_entropic_uniform_cost_gives_uniform_coupling():
    cp = ot.solve_entropic(np.full((4, 4), 2.5), eps=0.1)
    assert np.allclose(cp.matrix, 1.0 / 16, atol=1e-9)


def test_solve_entropic_reports_nonconvergence():
    rng = np.random.default_rng(6)
    c = rng.random((6, 6))
    with pytest.raises(ot.SinkhornError) as exc:
        ot.solve_entropic(c, eps=1e-4, max_iters=3)
    assert exc.value.violation > 0


def test_marginals_over_1000_random_matrices():
    rng = np.random.default_rng(7)
    for trial in range(1000):
        k = int(rng.integers(2, 9))
        c = rng.random((k, k)) * rng.uniform(0.5, 5.0)
        if trial % 4 == 0:
            cp = ot.solve_entropic(c, eps=0.15 * c.max())
            tol = ot.ENTROPIC_MARGINAL_TOL
        else:
            cp = ot.solve_exact(c)
            tol = ot.EXACT_MARGINAL_TOL
        cp.validate()
        assert np.abs(cp.matrix.sum(axis=0) - 1.0 / k).max() <= tol
        assert np.abs(cp.matrix.sum(axis=1) - 1.0 / k).max() <= tol


def test_entropic_cost_at_least_exact_cost():
    rng = np.random.default_rng(8)
    for _ in range(25):
        k = int(rng.integers(2, 7))
        c = rng.random((k, k))
        exact = ot.solve_exact(c).transport_cost(c)
        entropic = ot.solve_entropic(c, eps=0.2).transport_cost(c)
        assert entropic >= exact - 1e-12


def test_exact_matches_brute_force_up_to_k6():
    rng = np.random.default_rng(9)
    for k in range(2, 7):
        for _ in range(5):
            c = rng.random((k, k))
            assert ot.solve_exact(c).transport_cost(c) == pytest.approx(
                brute_force_cost(c), abs=1e-12)


def test_sample_pairs_identity_coupling_support():
    k = 4
    cp = ot.Coupling(np.eye(k) / k)
    pairs = ot.sample_pairs(cp, 200, np.random.default_rng(10))
    assert np.all(pairs[:, 0] == pairs[:, 1])


def test_sample_pairs_uniform_frequencies_within_3_stderr():
    k = 3
    n = 100_000
    cp = ot.Coupling(np.full((k, k), 1.0 / k ** 2))
    pairs = ot.sample_pairs(cp, n, np.random.default_rng(11))
    flat = pairs[:, 0] * k + pairs[:, 1]
    counts = np.bincount(flat, minlength=k * k)
    p = 1.0 / k ** 2
    stderr = np.sqrt(p * (1 - p) * n)
    assert np.all(np.abs(counts - n * p) <= 3 * stderr)


def test_sample_pairs_k1_always_origin():
    cp = ot.Coupling(np.array([[1.0]]))
    pairs = ot.sample_pairs(cp, 10, np.random.default_rng(12))
    assert np.all(pairs == 0)
