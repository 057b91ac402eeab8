"""Minibatch optimal transport between equal-size empirical point sets.

Couplings live on the scaled Birkhoff polytope: k x k nonnegative matrices
whose rows and columns each sum to 1/k. The exact solver reduces to linear
assignment (uniform marginals admit a permutation optimum); the entropic
solver is a log-domain Sinkhorn iteration kept as an opt-in for large k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

EXACT_MARGINAL_TOL = 1e-9
ENTROPIC_MARGINAL_TOL = 1e-6


class SinkhornError(RuntimeError):
    """Sinkhorn failed to reach the marginal tolerance within max_iters."""

    def __init__(self, violation, max_iters):
        self.violation = violation
        self.max_iters = max_iters
        super().__init__(
            f"entropic solver did not converge in {max_iters} iterations "
            f"(marginal violation {violation:.3e})"
        )


@dataclass
class Coupling:
    """Doubly-stochastic-up-to-1/k transport plan over a k x k minibatch."""

    matrix: np.ndarray
    marginal_tol: float = EXACT_MARGINAL_TOL

    @property
    def k(self) -> int:
        return self.matrix.shape[0]

    def validate(self):
        """Raise if the plan leaves the scaled Birkhoff polytope."""
        a = self.matrix
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"coupling must be square, got {a.shape}")
        k = a.shape[0]
        tol = self.marginal_tol
        if not np.all(np.isfinite(a)):
            raise ValueError("coupling has non-finite entries")
        if a.min() < -tol or a.max() > 1.0 / k + tol:
            raise ValueError(f"coupling entries outside [0, 1/k]: min {a.min()}, max {a.max()}")
        row_err = np.abs(a.sum(axis=1) - 1.0 / k).max()
        col_err = np.abs(a.sum(axis=0) - 1.0 / k).max()
        if row_err > tol or col_err > tol:
            raise ValueError(f"coupling marginals off by row {row_err:.3e} / col {col_err:.3e} (tol {tol:.1e})")

    def transport_cost(self, cost: np.ndarray) -> float:
        return float(np.sum(self.matrix * cost))


def _check_points(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"{name} must be a (k, d) array, got shape {x.shape}")
    return x


def cost_matrix(x0, x1) -> np.ndarray:
    """Pairwise squared Euclidean distances, C[i, j] = ||x0_i - x1_j||^2."""
    x0 = _check_points(x0, "x0")
    x1 = _check_points(x1, "x1")
    if x0.shape[1] != x1.shape[1]:
        raise ValueError(f"point dimensions differ: {x0.shape[1]} vs {x1.shape[1]}")
    return cdist(x0, x1, metric="sqeuclidean")


def augmented_cost_matrix(triples_a, triples_b, eta) -> np.ndarray:
    """Transport cost over (s, a, s') triples.

    C[i, j] = ||s'_a_i - s'_b_j||^2 + eta * (||s_a_i - s_b_j||^2 + ||a_a_i - a_b_j||^2),
    so large eta forces the coupling to align conditioning variables first.
    """
    if eta < 0:
        raise ValueError(f"eta must be nonnegative, got {eta}")
    s_a, a_a, sp_a = triples_a
    s_b, a_b, sp_b = triples_b
    cost = cost_matrix(sp_a, sp_b)
    if eta > 0:
        cost = cost + eta * (cost_matrix(s_a, s_b) + cost_matrix(a_a, a_b))
    return cost


def solve_exact(cost: np.ndarray) -> Coupling:
    """Optimal coupling via linear assignment; returns (1/k) * permutation matrix."""
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix has non-finite entries")
    k = cost.shape[0]
    rows, cols = linear_sum_assignment(cost)
    a = np.zeros((k, k))
    a[rows, cols] = 1.0 / k
    return Coupling(a, marginal_tol=EXACT_MARGINAL_TOL)


def solve_entropic(cost: np.ndarray, eps, max_iters=5000,
                   marginal_tol=ENTROPIC_MARGINAL_TOL) -> Coupling:
    """Entropic OT with uniform marginals, solved by log-domain Sinkhorn.

    Raises :class:`SinkhornError` with the achieved violation if the marginal
    tolerance is not met within ``max_iters`` sweeps.
    """
    if eps <= 0:
        raise ValueError(f"entropic regularization must be positive, got {eps}")
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix has non-finite entries")
    k = cost.shape[0]
    log_marg = -np.log(k)
    log_kernel = -cost / eps
    f = np.zeros(k)  # log row scalings
    g = np.zeros(k)  # log column scalings

    def plan():
        return np.exp(log_kernel + f[:, None] + g[None, :])

    violation = np.inf
    for _ in range(max_iters):
        f = log_marg - _logsumexp_rows(log_kernel + g[None, :])
        g = log_marg - _logsumexp_rows(log_kernel.T + f[None, :])
        a = plan()
        violation = max(
            np.abs(a.sum(axis=1) - 1.0 / k).max(),
            np.abs(a.sum(axis=0) - 1.0 / k).max(),
        )
        if violation <= marginal_tol:
            return Coupling(_round_to_polytope(a), marginal_tol=marginal_tol)
    raise SinkhornError(violation, max_iters)


def _round_to_polytope(a):
    """Project a near-feasible plan onto exact uniform marginals.

    Rows and columns with excess mass are scaled down, then the remaining
    deficit is spread by a rank-one correction; entries stay in [0, 1/k].
    """
    k = a.shape[0]
    target = 1.0 / k
    row = a.sum(axis=1)
    a = a * np.minimum(1.0, target / np.maximum(row, 1e-300))[:, None]
    col = a.sum(axis=0)
    a = a * np.minimum(1.0, target / np.maximum(col, 1e-300))[None, :]
    u = target - a.sum(axis=1)
    v = target - a.sum(axis=0)
    total = u.sum()
    if total > 0:
        a = a + np.outer(u, v) / total
    return a


def _logsumexp_rows(m):
    mx = m.max(axis=1, keepdims=True)
    return (mx + np.log(np.exp(m - mx).sum(axis=1, keepdims=True)))[:, 0]


def sample_pairs(coupling: Coupling, n, rng):
    """Draw n i.i.d. index pairs (i, j) with probability proportional to A_ij."""
    a = coupling.matrix
    k = a.shape[0]
    p = a.ravel()
    total = p.sum()
    if total <= 0:
        raise ValueError("coupling has zero total mass")
    flat = rng.choice(k * k, size=n, p=p / total)
    return np.stack([flat // k, flat % k], axis=1)
