"""Conditional flow matching over next-state distributions.

An offline flow transports a standard Gaussian latent to the offline
next-state distribution on t in [0, 1]; an online flow continues from the
offline flow's output to the online next-state distribution on t in [1, 2].
The online flow trains on pairs drawn from a minibatch OT coupling under an
augmented cost that aligns the conditioning (s, a) first, so the composite
displacement approximates the conditional 2-Wasserstein transport.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nnet, ot


@dataclass
class FlowTrainConfig:
    """Knobs for one flow-matching training run."""

    hidden_layers: int = 6
    hidden_dim: int = 256
    batch_size: int = 1024
    ode_steps: int = 10
    lr: float = 3e-4
    lr_final: float = 0.0          # > 0 enables linear decay from lr to lr_final
    iters: int = 2000
    solver: str = "exact"          # "exact" | "entropic"
    entropic_eps: float = 1e-2

    def validate(self):
        if self.hidden_layers < 1 or self.hidden_dim < 1:
            raise ValueError("flow net needs at least one hidden layer and unit")
        if self.batch_size < 1:
            raise ValueError("flow batch size must be positive")
        if self.ode_steps < 1:
            raise ValueError("ode_steps must be >= 1")
        if self.lr <= 0:
            raise ValueError("flow learning rate must be positive")
        if self.lr_final < 0 or self.lr_final > self.lr:
            raise ValueError("lr_final must lie in [0, lr]")
        if self.iters < 0:
            raise ValueError("iteration budget must be >= 0")
        if self.solver not in ("exact", "entropic"):
            raise ValueError(f"unknown OT solver {self.solver!r}")

    def lr_at(self, iteration):
        if self.lr_final <= 0.0 or self.iters <= 1:
            return self.lr
        frac = iteration / (self.iters - 1)
        return self.lr + (self.lr_final - self.lr) * frac


@dataclass
class CouplingAudit:
    """Running count of coupling validations during training."""

    checks: int = 0
    violations: int = 0


@dataclass
class FMBatchLoss:
    value: float
    batch_size: int
    times: np.ndarray


@dataclass
class ConditionalFlow:
    """A velocity field v(x, t, s, a) with its integration interval.

    The field input is the raw concatenation [x, t, s, a]; the interval is
    (0, 1) for offline/direct flows and (1, 2) for the online flow.
    """

    net: nnet.DenseNet
    t_start: float
    t_end: float
    ode_steps: int
    s_dim: int
    a_dim: int
    x_dim: int
    trained: bool = False

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError(f"interval end must exceed start, got ({self.t_start}, {self.t_end})")
        if self.ode_steps < 1:
            raise ValueError("ode_steps must be >= 1")
        want_in = self.x_dim + 1 + self.s_dim + self.a_dim
        if self.net.in_dim != want_in:
            raise nnet.ShapeError(f"field input width {self.net.in_dim}, expected {want_in}")
        if self.net.out_dim != self.x_dim:
            raise nnet.ShapeError(f"field output width {self.net.out_dim}, expected {self.x_dim}")

    def clone(self) -> "ConditionalFlow":
        return ConditionalFlow(self.net.clone(), self.t_start, self.t_end,
                               self.ode_steps, self.s_dim, self.a_dim, self.x_dim,
                               self.trained)


def new_flow(s_dim, a_dim, x_dim, interval, config: FlowTrainConfig, rng,
             zero_final_layer=False) -> ConditionalFlow:
    widths = [x_dim + 1 + s_dim + a_dim] + [config.hidden_dim] * config.hidden_layers + [x_dim]
    net = nnet.init_dense(widths, rng, zero_final_layer=zero_final_layer)
    return ConditionalFlow(net, interval[0], interval[1], config.ode_steps,
                           s_dim, a_dim, x_dim)


def _field_input(flow, x, t, s, a):
    n = x.shape[0]
    t_col = np.full((n, 1), t) if np.isscalar(t) else np.asarray(t, dtype=float).reshape(n, 1)
    return np.concatenate([x, t_col, s, a], axis=1)


def velocity(flow: ConditionalFlow, x, t, s, a):
    return nnet.forward(flow.net, _field_input(flow, x, t, s, a))


def integrate(flow: ConditionalFlow, x_start, s, a):
    """Forward Euler over the flow's interval. Batched: all args (n, dim)."""
    x = np.asarray(x_start, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
        s = np.asarray(s, dtype=float)[None, :]
        a = np.asarray(a, dtype=float)[None, :]
    if x.shape[1] != flow.x_dim:
        raise nnet.ShapeError(f"x has dimension {x.shape[1]}, flow expects {flow.x_dim}")
    n, d = x.shape
    h = (flow.t_end - flow.t_start) / flow.ode_steps
    # the field input buffer is reused across steps; only x and t change
    z = np.empty((n, flow.net.in_dim))
    z[:, d + 1:] = np.concatenate([s, a], axis=1)
    x = x.copy()
    for step in range(flow.ode_steps):
        z[:, :d] = x
        z[:, d] = flow.t_start + step * h
        x += h * nnet.forward(flow.net, z)
        if not np.all(np.isfinite(x)):
            raise nnet.NumericsError(f"non-finite state during integration at step {step}")
    return x[0] if squeeze else x


def interpolate(flow: ConditionalFlow, x_start, x_end, t):
    """Linear path point and its velocity target on the flow's interval.

    The interval has unit length, so the target velocity is the full
    displacement x_end - x_start at every t.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < flow.t_start - 1e-9) or np.any(t > flow.t_end + 1e-9):
        raise ValueError(f"t outside flow interval [{flow.t_start}, {flow.t_end}]")
    u = ((t - flow.t_start) / (flow.t_end - flow.t_start)).reshape(-1, 1)
    x_t = (1.0 - u) * x_start + u * x_end
    return x_t, x_end - x_start


def fm_loss(flow: ConditionalFlow, x_start, x_end, s, a, t):
    """Linear-path matching loss and its parameter gradients.

    Loss = mean_i || v(x_t_i, t_i, s_i, a_i) - (x_end_i - x_start_i) ||^2.
    """
    x_start = np.asarray(x_start, dtype=float)
    x_end = np.asarray(x_end, dtype=float)
    k = x_start.shape[0]
    x_t, target = interpolate(flow, x_start, x_end, t)
    z = _field_input(flow, x_t, t, s, a)
    v, cache = nnet.forward_cache(flow.net, z)
    resid = v - target
    loss = float(np.sum(resid ** 2) / k)
    grads, _ = nnet.backward(flow.net, cache, 2.0 * resid / k)
    return FMBatchLoss(loss, k, np.asarray(t, dtype=float)), grads


def _run_fm_training(flow, sample_batch, config, on_iteration=None):
    params = flow.net.params()
    opt = nnet.adam_init(params, config.lr)
    names = flow.net.param_names()
    for i in range(config.iters):
        x_start, x_end, s, a, t = sample_batch()
        batch_loss, grads = fm_loss(flow, x_start, x_end, s, a, t)
        opt.lr = config.lr_at(i)
        nnet.optimizer_step(opt, params, grads, names)
        if on_iteration is not None:
            on_iteration(i, batch_loss.value)
    flow.trained = True
    return flow


def train_offline_flow(dataset, config: FlowTrainConfig, rng, on_iteration=None) -> ConditionalFlow:
    """Fit a conditional flow from N(0, I) to the dataset's next states.

    Per iteration: x1 := s', x0 ~ N(0, I), t ~ U[0, 1], all independent.
    """
    config.validate()
    if len(dataset) == 0:
        raise ValueError("cannot train a flow on an empty dataset")
    s_dim, a_dim = dataset.s_dim, dataset.a_dim
    flow = new_flow(s_dim, a_dim, s_dim, (0.0, 1.0), config, rng)
    n = len(dataset)
    k = min(config.batch_size, n) if n else config.batch_size

    def sample_batch():
        idx = rng.integers(0, n, size=k)
        x1 = dataset.next_states[idx]
        x0 = rng.standard_normal((k, s_dim))
        t = rng.uniform(0.0, 1.0, size=k)
        return x0, x1, dataset.states[idx], dataset.actions[idx], t

    return _run_fm_training(flow, sample_batch, config, on_iteration)


def train_direct_flow(online_buffer, config: FlowTrainConfig, rng, on_iteration=None) -> ConditionalFlow:
    """Baseline: fit the online next-state distribution straight from a Gaussian prior."""
    if len(online_buffer) == 0:
        raise ValueError("cannot train a direct flow on an empty online buffer")
    return train_offline_flow(online_buffer, config, rng, on_iteration)


def build_matched_offline_batch(offline_flow: ConditionalFlow, online_buffer, k, rng):
    """Offline-synthetic triples sharing the online buffer's (s, a) marginal.

    (s, a) are drawn uniformly from the online buffer and s'_off is generated
    by the pretrained offline flow from fresh Gaussian latents.
    """
    n = len(online_buffer)
    if k == 0:
        d, sd, ad = offline_flow.x_dim, offline_flow.s_dim, offline_flow.a_dim
        return np.empty((0, sd)), np.empty((0, ad)), np.empty((0, d))
    if n < k:
        raise ValueError(f"online buffer holds {n} transitions, need at least {k}")
    idx = rng.integers(0, n, size=k)
    s = online_buffer.states[idx]
    a = online_buffer.actions[idx]
    x0 = rng.standard_normal((k, offline_flow.x_dim))
    sp = integrate(offline_flow, x0, s, a)
    return s, a, sp


def train_online_flow(offline_flow: ConditionalFlow, online_buffer, eta,
                      config: FlowTrainConfig, rng, warm_start=None,
                      audit: CouplingAudit | None = None,
                      on_iteration=None) -> ConditionalFlow:
    """Fit the online flow on OT-coupled (offline-synthetic, online) pairs.

    Each iteration couples an offline-synthetic batch with an online batch
    under the augmented cost, samples index pairs from the coupling, and
    regresses the field (conditioned on the online pair's (s, a)) onto the
    coupled displacement over t ~ U[1, 2]. A fresh field starts with a zeroed
    final layer so the initial online flow is the identity map; ``warm_start``
    reuses a previous field's parameters with fresh optimizer state.
    """
    config.validate()
    if eta < 0:
        raise ValueError(f"eta must be nonnegative, got {eta}")
    n = len(online_buffer)
    if n == 0:
        raise ValueError("online buffer is empty")
    s_dim, a_dim = online_buffer.s_dim, online_buffer.a_dim
    if warm_start is not None:
        fl = warm_start.clone()
        fl.trained = False
    else:
        fl = new_flow(s_dim, a_dim, offline_flow.x_dim, (1.0, 2.0), config, rng,
                      zero_final_layer=True)
    k = min(config.batch_size, n)

    def sample_batch():
        s_off, a_off, x1 = build_matched_offline_batch(offline_flow, online_buffer, k, rng)
        idx = rng.integers(0, n, size=k)
        s_on = online_buffer.states[idx]
        a_on = online_buffer.actions[idx]
        x2 = online_buffer.next_states[idx]
        cost = ot.augmented_cost_matrix((s_off, a_off, x1), (s_on, a_on, x2), eta)
        if config.solver == "entropic":
            coupling = ot.solve_entropic(cost, config.entropic_eps)
        else:
            coupling = ot.solve_exact(cost)
        if audit is not None:
            audit.checks += 1
            try:
                coupling.validate()
            except ValueError:
                audit.violations += 1
                raise
        else:
            coupling.validate()
        pairs = ot.sample_pairs(coupling, k, rng)
        i_l, j_l = pairs[:, 0], pairs[:, 1]
        t = rng.uniform(fl.t_start, fl.t_end, size=k)
        return x1[i_l], x2[j_l], s_on[j_l], a_on[j_l], t

    return _run_fm_training(fl, sample_batch, config, on_iteration)


@dataclass
class CompositeFlow:
    """Offline flow on t in [0, 1] chained with an online flow on t in [1, 2]."""

    offline: ConditionalFlow
    online: ConditionalFlow

    def __post_init__(self):
        if (self.offline.t_start, self.offline.t_end) != (0.0, 1.0):
            raise ValueError("offline flow must live on (0, 1)")
        if (self.online.t_start, self.online.t_end) != (1.0, 2.0):
            raise ValueError("online flow must live on (1, 2)")
        for dim in ("s_dim", "a_dim", "x_dim"):
            if getattr(self.offline, dim) != getattr(self.online, dim):
                raise ValueError(f"offline/online flows disagree on {dim}")

    @property
    def latent_dim(self) -> int:
        return self.offline.x_dim

    @property
    def trained(self) -> bool:
        return self.offline.trained and self.online.trained

    def transport(self, latents, s, a):
        """Map Gaussian latents through both stages; returns (x1, x2)."""
        x1 = integrate(self.offline, latents, s, a)
        x2 = integrate(self.online, x1, s, a)
        return x1, x2


def sample_next_states(flow: ConditionalFlow, s, a, rng):
    """Draw one generated next state per (s, a) row from a (0, 1)-interval flow."""
    s = np.asarray(s, dtype=float)
    x0 = rng.standard_normal((s.shape[0], flow.x_dim))
    return integrate(flow, x0, s, a)


def composite_next_states(comp: CompositeFlow, s, a, rng):
    s = np.asarray(s, dtype=float)
    latents = rng.standard_normal((s.shape[0], comp.latent_dim))
    _, x2 = comp.transport(latents, s, a)
    return x2


def validation_mse(generate, states, actions, next_states, rng, draws=4):
    """Mean squared error of generated next states against held-out truth.

    ``generate`` maps (states, actions, rng) to one generated batch; the MSE
    is averaged over ``draws`` independent generations.
    """
    total = 0.0
    for _ in range(draws):
        pred = generate(states, actions, rng)
        total += float(np.mean(np.sum((pred - next_states) ** 2, axis=1)))
    return total / draws


# --- checkpoints: nnet format plus interval/step/dimension header ---

def save_flow(fl: ConditionalFlow, path):
    nnet.save_net(fl.net, path, extra_header={
        "kind": "conditional_flow",
        "interval": [fl.t_start, fl.t_end],
        "ode_steps": fl.ode_steps,
        "s_dim": fl.s_dim,
        "a_dim": fl.a_dim,
        "x_dim": fl.x_dim,
        "trained": fl.trained,
    })


def load_flow(path) -> ConditionalFlow:
    net, hdr = nnet.load_net(path)
    if hdr.get("kind") != "conditional_flow":
        raise ValueError(f"{path} is not a flow checkpoint")
    return ConditionalFlow(net, hdr["interval"][0], hdr["interval"][1],
                           hdr["ode_steps"], hdr["s_dim"], hdr["a_dim"],
                           hdr["x_dim"], hdr["trained"])
