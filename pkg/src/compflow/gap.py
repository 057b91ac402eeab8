"""Monte-Carlo dynamics-gap estimation from a composite flow, plus filtering.

The gap at (s, a) is the square root of the mean squared displacement the
online flow applies to offline-flow samples:

    gap(s, a) = sqrt( (1/M) sum_j || x1_j - x2_j ||^2 ),
    x1_j = offline transport of a Gaussian latent, x2_j = online transport of x1_j.

Each queried (s, a) owns its own latent stream, derived from the caller's
generator and the pair's bytes, so duplicated pairs in a batch get identical
estimates and batch results match one-at-a-time calls.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .flow import CompositeFlow
from .persist import atomic_write_text, format_float


@dataclass
class GapEstimate:
    value: float
    samples: int
    displacement_norms: np.ndarray


@dataclass
class GapThreshold:
    fraction: float
    value: float


def _element_rng(base_seed, state, action):
    payload = (np.ascontiguousarray(state, dtype="<f8").tobytes() + b"|"
               + np.ascontiguousarray(action, dtype="<f8").tobytes())
    digest = hashlib.sha256(payload).digest()
    words = np.frombuffer(digest[:16], dtype=np.uint32)
    return np.random.default_rng(np.random.SeedSequence([int(base_seed), *map(int, words)]))


def _require_trained(composite):
    if not composite.trained:
        raise ValueError("composite flow must be trained before gap estimation")


def estimate_gap(composite: CompositeFlow, state, action, m, rng) -> GapEstimate:
    """Gap estimate at one (s, a) from M independent Gaussian latents."""
    _require_trained(composite)
    if m < 1:
        raise ValueError(f"sample count must be >= 1, got {m}")
    state = np.asarray(state, dtype=float)
    action = np.asarray(action, dtype=float)
    base = int(rng.integers(0, 2 ** 32))
    latents = _element_rng(base, state, action).standard_normal((m, composite.latent_dim))
    s_rep = np.repeat(state[None, :], m, axis=0)
    a_rep = np.repeat(action[None, :], m, axis=0)
    x1, x2 = composite.transport(latents, s_rep, a_rep)
    norms = np.linalg.norm(x1 - x2, axis=1)
    return GapEstimate(float(np.sqrt(np.mean(norms ** 2))), m, norms)


def estimate_gap_batch(composite: CompositeFlow, states, actions, m, rng,
                       chunk=4096) -> list[GapEstimate]:
    """Vectorized :func:`estimate_gap` over a batch, emitted in input order."""
    _require_trained(composite)
    if m < 1:
        raise ValueError(f"sample count must be >= 1, got {m}")
    states = np.asarray(states, dtype=float)
    actions = np.asarray(actions, dtype=float)
    n = states.shape[0]
    base = int(rng.integers(0, 2 ** 32))
    d = composite.latent_dim
    out = []
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        b = hi - lo
        latents = np.empty((b, m, d))
        for i in range(b):
            latents[i] = _element_rng(base, states[lo + i], actions[lo + i]).standard_normal((m, d))
        s_rep = np.repeat(states[lo:hi], m, axis=0)
        a_rep = np.repeat(actions[lo:hi], m, axis=0)
        x1, x2 = composite.transport(latents.reshape(b * m, d), s_rep, a_rep)
        norms = np.linalg.norm(x1 - x2, axis=1).reshape(b, m)
        values = np.sqrt(np.mean(norms ** 2, axis=1))
        out.extend(GapEstimate(float(values[i]), m, norms[i]) for i in range(b))
    return out


def gap_values(estimates) -> np.ndarray:
    return np.array([e.value for e in estimates])


def quantile_select(gaps, fraction):
    """Indices of the ceil(fraction * B) smallest gaps; ties keep lower index.

    Returns (kept index array, sorted ascending) and the threshold, i.e. the
    largest kept gap.
    """
    gaps = np.asarray(gaps, dtype=float)
    if gaps.size == 0:
        raise ValueError("cannot select a quantile of an empty gap list")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"selection fraction must lie in (0, 1], got {fraction}")
    count = math.ceil(fraction * gaps.size)
    order = np.argsort(gaps, kind="stable")
    kept = np.sort(order[:count])
    threshold = GapThreshold(fraction, float(gaps[order[count - 1]]))
    return kept, threshold


def threshold_filter(dataset, composite: CompositeFlow, tau, m, rng):
    """Transitions whose estimated gap is at most tau; tau = inf means no filter."""
    if tau < 0:
        raise ValueError(f"threshold must be nonnegative, got {tau}")
    if np.isinf(tau):
        return dataset
    estimates = estimate_gap_batch(composite, dataset.states, dataset.actions, m, rng)
    keep = np.flatnonzero(gap_values(estimates) <= tau)
    return dataset.subset(keep)


def write_gap_report(path, states, actions, estimates, seed):
    """CSV report: one row per queried pair, columns s..., a..., gap, M, seed."""
    states = np.asarray(states, dtype=float)
    actions = np.asarray(actions, dtype=float)
    s_cols = [f"s{i}" for i in range(states.shape[1])]
    a_cols = [f"a{i}" for i in range(actions.shape[1])]
    lines = [",".join(s_cols + a_cols + ["gap", "M", "seed"])]
    for i, est in enumerate(estimates):
        row = [format_float(v) for v in states[i]] + [format_float(v) for v in actions[i]]
        row += [format_float(est.value), str(est.samples), str(seed)]
        lines.append(",".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")
