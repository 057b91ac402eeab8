"""Soft actor-critic with gap-filtered offline data and BC regularization.

The training loop follows one recipe with three configurations:

* ``compflow`` -- per minibatch, estimate the dynamics gap of each offline
  transition with the composite flow, keep the ceil(xi * B) lowest-gap ones,
  shape their rewards by + beta * gap, and feed them to the critics next to
  the online batch; the actor adds a lambda-normalized behavior-cloning term
  over the full offline minibatch. The online flow is retrained from the
  replay buffer every ``train_freq`` interactions.
* ``bcsac`` -- the beta = 0, xi = 1 degeneracy: all offline data, no shaping,
  no flows.
* ``sac`` -- online data only, no BC term.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import flow as flow_mod
from . import gap as gap_mod
from . import nnet
from .envs import TransitionDataset

log = logging.getLogger(__name__)

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_TANH_EPS = 1e-6
_LAMBDA_EPS = 1e-8


@dataclass
class RLConfig:
    """SAC + CompFlow hyperparameters; defaults follow the reference tables
    except the desk-scale warmup."""

    method: str = "compflow"
    gamma: float = 0.99
    alpha_ent: float = 0.2
    target_update_rate: float = 5e-3
    omega: float = 5.0
    beta: float = 0.1
    xi: float = 0.5
    grad_steps: int = 10
    batch_size: int = 128
    buffer_capacity: int = 1_000_000
    warmup_steps: int = 1000
    total_interactions: int = 40_000
    eval_interval: int = 1000
    eval_episodes: int = 5
    gap_samples: int = 30
    hidden_dim: int = 256
    hidden_layers: int = 2
    lr: float = 3e-4
    checkpoint_interval: int = 5000
    eta: float = 10.0
    train_freq: int = 5000

    def validate(self):
        if self.method not in ("compflow", "sac", "bcsac"):
            raise ValueError(f"unknown method {self.method!r}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.target_update_rate <= 1.0:
            raise ValueError("target update rate must lie in (0, 1]")
        if not 0.0 < self.xi <= 1.0:
            raise ValueError("xi must lie in (0, 1]")
        for name in ("alpha_ent", "omega", "beta", "eta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("grad_steps", "batch_size", "buffer_capacity", "total_interactions",
                     "eval_interval", "eval_episodes", "gap_samples", "hidden_dim",
                     "hidden_layers", "checkpoint_interval", "train_freq"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


class ReplayBuffer:
    """Ring buffer of transitions with uniform without-replacement sampling."""

    def __init__(self, capacity, s_dim, a_dim):
        if capacity < 1:
            raise ValueError("buffer capacity must be >= 1")
        self.capacity = int(capacity)
        self.s_dim = s_dim
        self.a_dim = a_dim
        self.size = 0
        self.cursor = 0
        self._alloc = 0
        self.states = np.empty((0, s_dim))
        self.actions = np.empty((0, a_dim))
        self.rewards = np.empty(0)
        self.next_states = np.empty((0, s_dim))
        self.dones = np.empty(0, dtype=bool)

    def _grow(self):
        new_alloc = min(self.capacity, max(1024, self._alloc * 2))
        for name, width in (("states", self.s_dim), ("actions", self.a_dim),
                            ("next_states", self.s_dim)):
            old = getattr(self, name)
            fresh = np.empty((new_alloc, width))
            fresh[: self.size] = old[: self.size]
            setattr(self, name, fresh)
        for name, dtype in (("rewards", float), ("dones", bool)):
            old = getattr(self, name)
            fresh = np.empty(new_alloc, dtype=dtype)
            fresh[: self.size] = old[: self.size]
            setattr(self, name, fresh)
        self._alloc = new_alloc

    def add(self, state, action, reward, next_state, done):
        if self.cursor >= self._alloc and self._alloc < self.capacity:
            self._grow()
        i = self.cursor % self.capacity
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = done
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n, rng):
        if n > self.size:
            raise ValueError(f"cannot sample {n} transitions from a buffer of {self.size}")
        idx = rng.choice(self.size, size=n, replace=False)
        return self._slice(idx)

    def _slice(self, idx):
        return TransitionDataset(self.states[idx], self.actions[idx], self.rewards[idx],
                                 self.next_states[idx], self.dones[idx])

    def as_dataset(self) -> TransitionDataset:
        idx = np.arange(self.size)
        return self._slice(idx)


@dataclass
class AgentState:
    """Actor, twin critics, their targets, and per-network Adam states."""

    actor: nnet.DenseNet
    q1: nnet.DenseNet
    q2: nnet.DenseNet
    target_q1: nnet.DenseNet
    target_q2: nnet.DenseNet
    opt_actor: nnet.AdamState
    opt_q1: nnet.AdamState
    opt_q2: nnet.AdamState
    cfg: RLConfig
    action_low: np.ndarray
    action_high: np.ndarray
    env_steps: int = 0
    grad_updates: int = 0

    @property
    def a_dim(self):
        return len(self.action_low)

    @property
    def action_center(self):
        return 0.5 * (self.action_high + self.action_low)

    @property
    def action_half(self):
        return 0.5 * (self.action_high - self.action_low)


def make_agent(s_dim, a_dim, action_low, action_high, cfg: RLConfig, rng) -> AgentState:
    cfg.validate()
    hidden = [cfg.hidden_dim] * cfg.hidden_layers
    actor = nnet.init_dense([s_dim] + hidden + [2 * a_dim], rng)
    q1 = nnet.init_dense([s_dim + a_dim] + hidden + [1], rng)
    q2 = nnet.init_dense([s_dim + a_dim] + hidden + [1], rng)
    return AgentState(
        actor=actor, q1=q1, q2=q2,
        target_q1=q1.clone(), target_q2=q2.clone(),
        opt_actor=nnet.adam_init(actor.params(), cfg.lr),
        opt_q1=nnet.adam_init(q1.params(), cfg.lr),
        opt_q2=nnet.adam_init(q2.params(), cfg.lr),
        cfg=cfg,
        action_low=np.asarray(action_low, dtype=float),
        action_high=np.asarray(action_high, dtype=float),
    )


def _policy_heads(agent: AgentState, out):
    k = agent.a_dim
    mean = out[:, :k]
    raw_log_std = out[:, k:]
    log_std = np.clip(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
    return mean, raw_log_std, log_std, np.exp(log_std)


def _squash(agent: AgentState, u):
    return agent.action_center + agent.action_half * u


def _sample_policy(agent: AgentState, states, rng=None, eps=None, with_cache=False):
    """Reparameterized tanh-Gaussian sample plus everything backprop needs."""
    out, cache = nnet.forward_cache(agent.actor, np.asarray(states, dtype=float))
    mean, raw_log_std, log_std, std = _policy_heads(agent, out)
    if eps is None:
        eps = rng.standard_normal(mean.shape)
    z = mean + std * eps
    u = np.tanh(z)
    action = _squash(agent, u)
    log_prob = (
        -0.5 * eps ** 2 - log_std - 0.5 * math.log(2.0 * math.pi)
        - np.log(1.0 - u ** 2 + _TANH_EPS)
        - np.log(agent.action_half)[None, :]
    ).sum(axis=1)
    sample = {
        "action": action, "log_prob": log_prob, "mean": mean,
        "raw_log_std": raw_log_std, "log_std": log_std, "std": std,
        "eps": eps, "u": u,
    }
    if with_cache:
        sample["cache"] = cache
    return sample


def select_action(agent: AgentState, state, mode, rng=None):
    """Policy action for one state; stochastic sampling or the squashed mean."""
    state = np.asarray(state, dtype=float)
    if not np.all(np.isfinite(state)):
        raise ValueError("state contains non-finite values")
    if mode == "deterministic":
        out = nnet.forward(agent.actor, state[None, :])
        mean, _, _, _ = _policy_heads(agent, out)
        return _squash(agent, np.tanh(mean))[0]
    if mode == "stochastic":
        if rng is None:
            raise ValueError("stochastic mode needs an rng")
        return _sample_policy(agent, state[None, :], rng)["action"][0]
    raise ValueError(f"unknown action mode {mode!r}")


def _q_input(states, actions):
    return np.concatenate([states, actions], axis=1)


def bellman_targets(rewards, dones, target_q1, target_q2, next_log_prob, gamma, alpha_ent):
    """y = r + gamma * (1 - done) * (min_j Q_tgt_j - alpha * log pi(a'|s'))."""
    rewards = np.asarray(rewards, dtype=float)
    dones = np.asarray(dones, dtype=float)
    boot = np.minimum(target_q1, target_q2) - alpha_ent * np.asarray(next_log_prob, dtype=float)
    return rewards + gamma * (1.0 - dones) * boot


def bc_lambda(omega, q_min_values, eps=_LAMBDA_EPS):
    """lambda = omega / (mean |min Q| + eps), the BC normalization weight."""
    return omega / (float(np.mean(np.abs(q_min_values))) + eps)


def critic_update(agent: AgentState, online_batch: TransitionDataset,
                  offline_batch: TransitionDataset | None, rng):
    """One Bellman regression step for both critics on the union batch.

    Offline rewards are expected to be already gap-shaped by the caller. The
    target uses one sampled next action per state:
    y = r + gamma * (1 - done) * (min_j Q_tgt_j(s', a') - alpha * log pi(a'|s')).
    """
    parts = [online_batch] if offline_batch is None or len(offline_batch) == 0 \
        else [online_batch, offline_batch]
    states = np.concatenate([p.states for p in parts])
    actions = np.concatenate([p.actions for p in parts])
    rewards = np.concatenate([p.rewards for p in parts])
    next_states = np.concatenate([p.next_states for p in parts])
    dones = np.concatenate([p.dones for p in parts]).astype(float)
    n = len(states)

    nxt = _sample_policy(agent, next_states, rng)
    q_in_next = _q_input(next_states, nxt["action"])
    q1_t = nnet.forward(agent.target_q1, q_in_next)[:, 0]
    q2_t = nnet.forward(agent.target_q2, q_in_next)[:, 0]
    target = bellman_targets(rewards, dones, q1_t, q2_t, nxt["log_prob"],
                             agent.cfg.gamma, agent.cfg.alpha_ent)

    q_in = _q_input(states, actions)
    losses = []
    for critic, opt in ((agent.q1, agent.opt_q1), (agent.q2, agent.opt_q2)):
        q, cache = nnet.forward_cache(critic, q_in)
        resid = q[:, 0] - target
        losses.append(float(np.mean(resid ** 2)))
        grads, _ = nnet.backward(critic, cache, (2.0 * resid / n)[:, None])
        nnet.optimizer_step(opt, critic.params(), grads, critic.param_names())
    agent.grad_updates += 1
    return losses[0], losses[1]


def _actor_head_grads(agent, sample, g_action, g_logp_scale=0.0):
    """Map loss gradients w.r.t. (action, log_prob) into trunk-output gradients.

    ``g_action`` is dL/da per sample/dim; ``g_logp_scale`` is dL/dlogp per
    sample (scalar). The tanh reparameterization gives:
      da/dmean = half * (1 - u^2),  da/dlogstd = half * (1 - u^2) * std * eps,
      dlogp/dmean = 2 u (1 - u^2) / (1 - u^2 + eps_t),
      dlogp/dlogstd = -1 + 2 u (1 - u^2) std eps / (1 - u^2 + eps_t).
    Gradient through the log-std clamp is zeroed outside its bounds.
    """
    u, stdv, eps = sample["u"], sample["std"], sample["eps"]
    half = agent.action_half[None, :]
    one_m_u2 = 1.0 - u ** 2
    tanh_corr = 2.0 * u * one_m_u2 / (one_m_u2 + _TANH_EPS)
    g_mean = g_action * half * one_m_u2
    g_log_std = g_action * half * one_m_u2 * stdv * eps
    if np.ndim(g_logp_scale) or g_logp_scale:
        g_scale = np.asarray(g_logp_scale).reshape(-1, 1)
        g_mean = g_mean + g_scale * tanh_corr
        g_log_std = g_log_std + g_scale * (-1.0 + tanh_corr * stdv * eps)
    in_range = (sample["raw_log_std"] > LOG_STD_MIN) & (sample["raw_log_std"] < LOG_STD_MAX)
    g_log_std = g_log_std * in_range
    return np.concatenate([g_mean, g_log_std], axis=1)


def actor_update(agent: AgentState, union_states, offline_pairs, rng):
    """One policy-improvement + behavior-cloning step.

    Loss = mean_s [alpha * log pi(a~|s) - min_i Q_i(s, a~)]
         + lambda * mean_off ||a_off - a~_off||^2,
    lambda = omega / (mean |min Q(s, a~)| + eps), recomputed every call.
    Returns (loss value, lambda).
    """
    states = np.asarray(union_states, dtype=float)
    n = len(states)
    sample = _sample_policy(agent, states, rng, with_cache=True)
    act = sample["action"]

    q_in = _q_input(states, act)
    q1, c1 = nnet.forward_cache(agent.q1, q_in)
    q2, c2 = nnet.forward_cache(agent.q2, q_in)
    q1, q2 = q1[:, 0], q2[:, 0]
    q_min = np.minimum(q1, q2)
    pick1 = q1 <= q2

    lam = bc_lambda(agent.cfg.omega, q_min)

    # dL/da through the selected critic (critic params frozen here)
    g_out = (-1.0 / n) * np.ones((n, 1))
    _, gin1 = nnet.backward(agent.q1, c1, g_out * pick1[:, None])
    _, gin2 = nnet.backward(agent.q2, c2, g_out * (~pick1)[:, None])
    g_action = (gin1 + gin2)[:, states.shape[1]:]

    head_grad = _actor_head_grads(agent, sample, g_action,
                                  g_logp_scale=np.full(n, agent.cfg.alpha_ent / n))
    grads, _ = nnet.backward(agent.actor, sample["cache"], head_grad)

    loss = float(np.mean(agent.cfg.alpha_ent * sample["log_prob"] - q_min))
    bc_enabled = agent.cfg.omega > 0.0 and agent.cfg.method != "sac"
    if bc_enabled:
        off_states, off_actions = offline_pairs if offline_pairs is not None else (None, None)
        if off_states is None or len(off_states) == 0:
            log.warning("BC weight is positive but the offline batch is empty; skipping BC term")
        else:
            off_states = np.asarray(off_states, dtype=float)
            off_actions = np.asarray(off_actions, dtype=float)
            m = len(off_states)
            bc_sample = _sample_policy(agent, off_states, rng, with_cache=True)
            diff = bc_sample["action"] - off_actions
            loss += lam * float(np.mean(np.sum(diff ** 2, axis=1)))
            bc_head = _actor_head_grads(agent, bc_sample, lam * 2.0 * diff / m)
            bc_grads, _ = nnet.backward(agent.actor, bc_sample["cache"], bc_head)
            grads = [g + bg for g, bg in zip(grads, bc_grads)]

    nnet.optimizer_step(agent.opt_actor, agent.actor.params(), grads,
                        agent.actor.param_names())
    return loss, lam


def soft_target_update(agent: AgentState):
    """tgt <- rate * critic + (1 - rate) * tgt, per parameter."""
    rate = agent.cfg.target_update_rate
    for critic, target in ((agent.q1, agent.target_q1), (agent.q2, agent.target_q2)):
        for p, tp in zip(critic.params(), target.params()):
            tp *= 1.0 - rate
            tp += rate * p


def optimistic_argmax(q_values, gap_estimates, beta):
    """Index of argmax_a [Q(s, a) + beta * gap(s, a)] over an enumerated action set."""
    score = np.asarray(q_values, dtype=float) + beta * np.asarray(gap_estimates, dtype=float)
    return int(np.argmax(score))


def evaluate(agent: AgentState, env, episodes, rng):
    """Deterministic-policy rollouts; returns (mean, std) of undiscounted returns."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    totals = []
    for _ in range(episodes):
        state = env.reset(rng)
        total = 0.0
        for t in range(env.horizon):
            action = select_action(agent, state, "deterministic")
            state, reward, done = env.step(state, action, rng)
            total += reward
            if done:
                break
        totals.append(total)
    totals = np.asarray(totals)
    return float(totals.mean()), float(totals.std())


# --------------------------------------------------------------------------
# the full training loop
# --------------------------------------------------------------------------

@dataclass
class RunAudit:
    """Continuously-asserted training laws, tallied over a whole run."""

    filter_checks: int = 0
    filter_violations: int = 0
    coupling: flow_mod.CouplingAudit = field(default_factory=flow_mod.CouplingAudit)


@dataclass
class RunResult:
    agent: AgentState
    metrics: list
    audit: RunAudit
    online_flow: flow_mod.ConditionalFlow | None


def _rng_children(seed):
    names = ("env", "action", "batch", "gap", "flow", "eval")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def run_compflow(pair, offline_dataset, cfg: RLConfig, seed, offline_flow=None,
                 flow_cfg=None, metrics_sink=None, checkpoint_fn=None,
                 resume=None) -> RunResult:
    """Train an agent in ``pair.online`` with shifted-dynamics offline data.

    ``offline_flow`` must be pretrained for the compflow method. Metrics
    records are appended to the returned list and forwarded to
    ``metrics_sink`` as they are produced; ``checkpoint_fn(step, snapshot)``
    fires every ``checkpoint_interval`` interactions and at the end.
    """
    cfg.validate()
    env = pair.online
    method = cfg.method
    uses_offline = method in ("compflow", "bcsac")
    if uses_offline and (offline_dataset is None or len(offline_dataset) == 0):
        if method == "bcsac" and cfg.omega == 0.0:
            uses_offline = False  # omega = 0 with no data degenerates to plain SAC
        else:
            raise ValueError(f"method {method!r} needs a non-empty offline dataset")
    if method == "compflow":
        if offline_flow is None or not offline_flow.trained:
            raise ValueError("compflow needs a pretrained offline flow")
        if flow_cfg is None:
            raise ValueError("compflow needs a flow training config for online retrains")

    rngs = _rng_children(seed)
    buffer = ReplayBuffer(cfg.buffer_capacity, env.s_dim, env.a_dim)
    agent = make_agent(env.s_dim, env.a_dim, env.action_low, env.action_high,
                       cfg, rngs["batch"])
    audit = RunAudit()
    metrics: list = []

    online_flow = None
    composite = None
    if method == "compflow":
        # starting hypothesis before the first retrain: zero dynamics gap
        online_flow = flow_mod.new_flow(env.s_dim, env.a_dim, offline_flow.x_dim,
                                        (1.0, 2.0), flow_cfg, rngs["flow"],
                                        zero_final_layer=True)
        online_flow.trained = True
        composite = flow_mod.CompositeFlow(offline_flow, online_flow)

    state = env.reset(rngs["env"])
    ep_step = 0
    start_step = 0

    if resume is not None:
        agent, buffer, online_flow, state, ep_step, start_step, audit = \
            _restore_snapshot(resume, cfg, env, rngs, flow_cfg)
        if method == "compflow":
            composite = flow_mod.CompositeFlow(offline_flow, online_flow)

    accum = _StatAccumulator()
    b = cfg.batch_size
    keep_count = math.ceil(cfg.xi * b)

    for t in range(start_step + 1, cfg.total_interactions + 1):
        if t <= cfg.warmup_steps:
            action = rngs["action"].uniform(env.action_low, env.action_high)
        else:
            action = select_action(agent, state, "stochastic", rngs["action"])
        next_state, reward, done_env = env.step(state, action, rngs["env"])
        done = bool(done_env) or ep_step + 1 >= env.horizon
        buffer.add(state, action, reward, next_state, done)
        agent.env_steps = t
        if done:
            state = env.reset(rngs["env"])
            ep_step = 0
        else:
            state = next_state
            ep_step += 1

        if method == "compflow" and t > cfg.warmup_steps and t % cfg.train_freq == 0:
            online_flow = flow_mod.train_online_flow(
                offline_flow, buffer.as_dataset(), cfg.eta, flow_cfg, rngs["flow"],
                warm_start=online_flow, audit=audit.coupling)
            composite = flow_mod.CompositeFlow(offline_flow, online_flow)

        if t > cfg.warmup_steps and buffer.size >= b:
            for _ in range(cfg.grad_steps):
                b_on = buffer.sample(b, rngs["batch"])
                offline_kept = None
                bc_pairs = None
                if uses_offline:
                    idx = rngs["batch"].integers(0, len(offline_dataset), size=b)
                    b_off = offline_dataset.subset(idx)
                    bc_pairs = (b_off.states, b_off.actions)
                    if method == "compflow":
                        ests = gap_mod.estimate_gap_batch(
                            composite, b_off.states, b_off.actions,
                            cfg.gap_samples, rngs["gap"])
                        values = gap_mod.gap_values(ests)
                        kept, _ = gap_mod.quantile_select(values, cfg.xi)
                        _audit_filter(audit, values, kept, keep_count)
                        offline_kept = b_off.subset(kept)
                        offline_kept.rewards = offline_kept.rewards + cfg.beta * values[kept]
                        accum.add_gaps(values, kept)
                    else:  # bcsac: keep everything, no shaping
                        offline_kept = b_off
                loss1, loss2 = critic_update(agent, b_on, offline_kept, rngs["batch"])
                soft_target_update(agent)
                union_states = b_on.states if offline_kept is None or len(offline_kept) == 0 \
                    else np.concatenate([b_on.states, offline_kept.states])
                actor_loss, lam = actor_update(agent, union_states, bc_pairs, rngs["batch"])
                accum.add_losses(0.5 * (loss1 + loss2), actor_loss, lam)

        if t % cfg.eval_interval == 0:
            mean_ret, std_ret = evaluate(agent, env, cfg.eval_episodes, rngs["eval"])
            record = accum.flush(t, mean_ret, std_ret, buffer.size)
            metrics.append(record)
            if metrics_sink is not None:
                metrics_sink(record)
        if checkpoint_fn is not None and (t % cfg.checkpoint_interval == 0
                                          or t == cfg.total_interactions):
            checkpoint_fn(t, capture_snapshot(agent, buffer, online_flow, state,
                                              ep_step, t, rngs, audit))

    return RunResult(agent, metrics, audit, online_flow)


def _audit_filter(audit: RunAudit, values, kept, keep_count):
    audit.filter_checks += 1
    ok = len(kept) == keep_count
    if ok and len(kept) < len(values):
        rejected = np.setdiff1d(np.arange(len(values)), kept)
        ok = values[kept].max() <= values[rejected].min()
    if not ok:
        audit.filter_violations += 1
        log.warning("offline filter law violated at check %d", audit.filter_checks)


class _StatAccumulator:
    def __init__(self):
        self._zero()

    def _zero(self):
        self.n = 0
        self.critic = 0.0
        self.actor = 0.0
        self.lam = 0.0
        self.gap_n = 0
        self.kept_gap = 0.0
        self.rejected_gap = 0.0

    def add_losses(self, critic, actor, lam):
        self.n += 1
        self.critic += critic
        self.actor += actor
        self.lam += lam

    def add_gaps(self, values, kept):
        self.gap_n += 1
        self.kept_gap += float(values[kept].mean())
        rejected = np.setdiff1d(np.arange(len(values)), kept)
        self.rejected_gap += float(values[rejected].mean()) if len(rejected) else 0.0

    def flush(self, step, mean_ret, std_ret, buffer_size):
        n = max(self.n, 1)
        g = max(self.gap_n, 1)
        record = {
            "step": step,
            "eval_return_mean": mean_ret,
            "eval_return_std": std_ret,
            "critic_loss": self.critic / n,
            "actor_loss": self.actor / n,
            "lambda": self.lam / n,
            "mean_kept_gap": self.kept_gap / g,
            "mean_rejected_gap": self.rejected_gap / g,
            "buffer_size": buffer_size,
        }
        self._zero()
        return record


# --------------------------------------------------------------------------
# snapshots for checkpoint/resume
# --------------------------------------------------------------------------

def capture_snapshot(agent: AgentState, buffer: ReplayBuffer, online_flow,
                     env_state, ep_step, step, rngs, audit: RunAudit) -> dict:
    nets = {"actor": agent.actor.clone(), "q1": agent.q1.clone(), "q2": agent.q2.clone(),
            "target_q1": agent.target_q1.clone(), "target_q2": agent.target_q2.clone()}
    arrays = {
        "buffer_states": buffer.states[: buffer.size].copy(),
        "buffer_actions": buffer.actions[: buffer.size].copy(),
        "buffer_rewards": buffer.rewards[: buffer.size].copy(),
        "buffer_next_states": buffer.next_states[: buffer.size].copy(),
        "buffer_dones": buffer.dones[: buffer.size].copy(),
        "env_state": np.asarray(env_state, dtype=float),
    }
    for name, opt in (("actor", agent.opt_actor), ("q1", agent.opt_q1), ("q2", agent.opt_q2)):
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            arrays[f"opt_{name}_m{i}"] = m.copy()
            arrays[f"opt_{name}_v{i}"] = v.copy()
    meta = {
        "step": step,
        "ep_step": int(ep_step),
        "buffer_cursor": int(buffer.cursor),
        "grad_updates": int(agent.grad_updates),
        "opt_steps": {"actor": agent.opt_actor.step, "q1": agent.opt_q1.step,
                      "q2": agent.opt_q2.step},
        "rng_states": {name: rng.bit_generator.state for name, rng in rngs.items()},
        "audit": {"filter_checks": audit.filter_checks,
                  "filter_violations": audit.filter_violations,
                  "coupling_checks": audit.coupling.checks,
                  "coupling_violations": audit.coupling.violations},
    }
    snapshot = {"nets": nets, "arrays": arrays, "meta": meta, "flows": {}}
    if online_flow is not None:
        snapshot["flows"]["online_flow"] = online_flow.clone()
    return snapshot


def _restore_snapshot(snapshot, cfg: RLConfig, env, rngs, flow_cfg):
    meta = snapshot["meta"]
    nets = snapshot["nets"]
    arrays = snapshot["arrays"]
    agent = AgentState(
        actor=nets["actor"], q1=nets["q1"], q2=nets["q2"],
        target_q1=nets["target_q1"], target_q2=nets["target_q2"],
        opt_actor=_restore_opt(arrays, "actor", nets["actor"], cfg.lr, meta),
        opt_q1=_restore_opt(arrays, "q1", nets["q1"], cfg.lr, meta),
        opt_q2=_restore_opt(arrays, "q2", nets["q2"], cfg.lr, meta),
        cfg=cfg,
        action_low=env.action_low, action_high=env.action_high,
        env_steps=int(meta["step"]), grad_updates=int(meta["grad_updates"]),
    )
    buffer = ReplayBuffer(cfg.buffer_capacity, env.s_dim, env.a_dim)
    n = len(arrays["buffer_states"])
    for i in range(n):
        buffer.add(arrays["buffer_states"][i], arrays["buffer_actions"][i],
                   arrays["buffer_rewards"][i], arrays["buffer_next_states"][i],
                   bool(arrays["buffer_dones"][i]))
    buffer.cursor = int(meta["buffer_cursor"])
    for name, rng in rngs.items():
        rng.bit_generator.state = meta["rng_states"][name]
    audit = RunAudit()
    audit.filter_checks = meta["audit"]["filter_checks"]
    audit.filter_violations = meta["audit"]["filter_violations"]
    audit.coupling.checks = meta["audit"]["coupling_checks"]
    audit.coupling.violations = meta["audit"]["coupling_violations"]
    online_flow = snapshot.get("flows", {}).get("online_flow")
    env_state = arrays["env_state"]
    return agent, buffer, online_flow, env_state, int(meta["ep_step"]), int(meta["step"]), audit


def _restore_opt(arrays, name, net, lr, meta):
    opt = nnet.adam_init(net.params(), lr)
    opt.step = int(meta["opt_steps"][name])
    for i in range(len(opt.m)):
        opt.m[i] = arrays[f"opt_{name}_m{i}"].copy()
        opt.v[i] = arrays[f"opt_{name}_v{i}"].copy()
    return opt
