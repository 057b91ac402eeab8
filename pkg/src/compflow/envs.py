"""Simulated environment pairs with a controllable dynamics shift.

Three families, each exposing an offline member and an online member that
share state/action spaces and reward but differ in transition dynamics:

* ``gaussian_linear_pair`` -- linear-Gaussian next states with a mean shift
  (optionally confined to half the state space) and/or a noise-scale change;
  the conditional 2-Wasserstein distance has a closed form.
* ``point_mass_pair`` -- 2-D point mass under acceleration control with a
  friction or per-axis actuation (kinematic) shift.
* ``patrol_pair`` -- a green-security patrol grid: cells are attacked with a
  logistic probability driven by the previous patrol, wildlife grows and
  suffers losses on uncovered attacks, and patrol effort is budgeted.

Environments are value-semantic parameter bundles: the caller owns the state
and passes it to ``step`` explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Transition:
    """One environment step."""

    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


class TransitionDataset:
    """Column-array container for transitions; the unit every consumer shares."""

    def __init__(self, states, actions, rewards, next_states, dones):
        self.states = np.asarray(states, dtype=float)
        self.actions = np.asarray(actions, dtype=float)
        self.rewards = np.asarray(rewards, dtype=float)
        self.next_states = np.asarray(next_states, dtype=float)
        self.dones = np.asarray(dones, dtype=bool)
        n = len(self.states)
        if not (len(self.actions) == len(self.rewards) == len(self.next_states) == len(self.dones) == n):
            raise ValueError("transition columns have mismatched lengths")

    @classmethod
    def from_transitions(cls, transitions):
        return cls(
            [t.state for t in transitions],
            [t.action for t in transitions],
            [t.reward for t in transitions],
            [t.next_state for t in transitions],
            [t.done for t in transitions],
        )

    @classmethod
    def empty(cls, s_dim, a_dim):
        return cls(np.empty((0, s_dim)), np.empty((0, a_dim)), np.empty(0),
                   np.empty((0, s_dim)), np.empty(0, dtype=bool))

    def __len__(self):
        return len(self.states)

    @property
    def s_dim(self):
        return self.states.shape[1]

    @property
    def a_dim(self):
        return self.actions.shape[1]

    def subset(self, idx):
        return TransitionDataset(self.states[idx], self.actions[idx], self.rewards[idx],
                                 self.next_states[idx], self.dones[idx])


def _check_action(action, a_dim):
    action = np.asarray(action, dtype=float)
    if action.shape != (a_dim,):
        raise ValueError(f"action has shape {action.shape}, expected ({a_dim},)")
    if not np.all(np.isfinite(action)):
        raise ValueError("action contains non-finite values")
    return action


class GaussianLinearEnv:
    """s' = A s + B a + delta(s) + sigma * N(0, I), reward -min(||s'||, r_max).

    ``shift`` is added to the next-state mean; with ``half_shift`` it applies
    only where the first state coordinate is positive, which labels a
    shifted and an unshifted region of the state space.
    """

    def __init__(self, a_mat, b_mat, noise_scale, shift=None, half_shift=False,
                 r_max=10.0, horizon=40):
        self.a_mat = np.asarray(a_mat, dtype=float)
        self.b_mat = np.asarray(b_mat, dtype=float)
        if noise_scale <= 0:
            raise ValueError("noise scale must be positive")
        self.noise_scale = float(noise_scale)
        self.shift = np.zeros(self.a_mat.shape[0]) if shift is None else np.asarray(shift, dtype=float)
        self.half_shift = bool(half_shift)
        self.r_max = float(r_max)
        self.horizon = int(horizon)

    @property
    def s_dim(self):
        return self.a_mat.shape[0]

    @property
    def a_dim(self):
        return self.b_mat.shape[1]

    @property
    def action_low(self):
        return -np.ones(self.a_dim)

    @property
    def action_high(self):
        return np.ones(self.a_dim)

    def shift_at(self, state):
        if self.half_shift and state[0] <= 0.0:
            return np.zeros(self.s_dim)
        return self.shift

    def reset(self, rng):
        return rng.standard_normal(self.s_dim)

    def step(self, state, action, rng):
        action = _check_action(action, self.a_dim)
        mean = self.a_mat @ state + self.b_mat @ action + self.shift_at(state)
        next_state = mean + self.noise_scale * rng.standard_normal(self.s_dim)
        reward = -min(float(np.linalg.norm(next_state)), self.r_max)
        return next_state, reward, False


class PointMassEnv:
    """2-D point mass: vel' = (1 - f) vel + a dt, pos' = pos + vel' dt.

    Reward is the negated distance of the new position to the goal. The
    kinematic-shift mode clamps the commanded acceleration per axis.
    """

    def __init__(self, friction=0.05, dt=0.1, horizon=100, goal=(0.5, 0.5),
                 accel_limit=(1.0, 1.0), r_max=50.0):
        if not 0.0 <= friction < 1.0:
            raise ValueError("friction must lie in [0, 1)")
        self.friction = float(friction)
        self.dt = float(dt)
        self.horizon = int(horizon)
        self.goal = np.asarray(goal, dtype=float)
        self.accel_limit = np.asarray(accel_limit, dtype=float)
        self.r_max = float(r_max)

    s_dim = 4
    a_dim = 2

    @property
    def action_low(self):
        return -np.ones(2)

    @property
    def action_high(self):
        return np.ones(2)

    def reset(self, rng):
        pos = rng.uniform(0.0, 1.0, size=2)
        return np.concatenate([pos, np.zeros(2)])

    def step(self, state, action, rng):
        action = _check_action(action, 2)
        a = np.clip(action, -1.0, 1.0)
        a = np.clip(a, -self.accel_limit, self.accel_limit)
        pos, vel = state[:2], state[2:]
        new_vel = (1.0 - self.friction) * vel + a * self.dt
        new_pos = pos + new_vel * self.dt
        reward = -min(float(np.linalg.norm(new_pos - self.goal)), self.r_max)
        return np.concatenate([new_pos, new_vel]), reward, False


class PatrolEnv:
    """Budgeted patrol over a grid of cells with logistic attacks.

    State is (previous effort, wildlife, t). An attack lands in cell i with
    probability logistic(z_i + beta_p * prev_i + eta_p * sum of neighbor
    prev); wildlife then follows w^phi minus alpha per uncovered attack,
    floored at zero. Per-step reward is the change in total wildlife, which
    telescopes to total wildlife at the horizon minus the initial stock.
    """

    def __init__(self, grid=(5, 5), budget=5.0, attractiveness_seed=0,
                 deterrence=-2.0, displacement=0.5, growth=1.02, loss=0.5,
                 initial_wildlife=1.0, horizon=20):
        self.rows, self.cols = grid
        self.n_cells = self.rows * self.cols
        self.budget = float(budget)
        self.deterrence = float(deterrence)      # beta_p < 0
        self.displacement = float(displacement)  # eta_p > 0, the shift knob
        self.growth = float(growth)              # phi > 1
        self.loss = float(loss)                  # alpha > 0
        self.initial_wildlife = float(initial_wildlife)
        self.horizon = int(horizon)
        z_rng = np.random.default_rng(attractiveness_seed)
        self.attractiveness = z_rng.uniform(-1.0, 1.0, size=self.n_cells)
        self.adjacency = self._grid_adjacency()
        self.r_max = 2.0 * self.n_cells * max(1.0, self.initial_wildlife)

    def _grid_adjacency(self):
        adj = np.zeros((self.n_cells, self.n_cells))
        for r in range(self.rows):
            for c in range(self.cols):
                i = r * self.cols + c
                for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < self.rows and 0 <= cc < self.cols:
                        adj[i, rr * self.cols + cc] = 1.0
        return adj

    @property
    def s_dim(self):
        return 2 * self.n_cells + 1

    @property
    def a_dim(self):
        return self.n_cells

    @property
    def action_low(self):
        return np.zeros(self.n_cells)

    @property
    def action_high(self):
        return np.ones(self.n_cells)

    def project_action(self, action):
        """Clamp to [0, 1] per cell, then rescale if the budget is exceeded."""
        a = np.clip(action, 0.0, 1.0)
        total = a.sum()
        if total > self.budget:
            a = a * (self.budget / total)
        return a

    def reset(self, rng):
        prev = np.zeros(self.n_cells)
        wildlife = np.full(self.n_cells, self.initial_wildlife)
        return np.concatenate([prev, wildlife, [0.0]])

    def attack_probability(self, prev_effort):
        logits = (self.attractiveness + self.deterrence * prev_effort
                  + self.displacement * (self.adjacency @ prev_effort))
        with np.errstate(over="ignore"):  # saturates cleanly to 0/1
            return 1.0 / (1.0 + np.exp(-logits))

    def step(self, state, action, rng):
        action = _check_action(action, self.n_cells)
        n = self.n_cells
        prev, wildlife, t = state[:n], state[n:2 * n], state[2 * n]
        effort = self.project_action(action)
        p = self.attack_probability(prev)
        attacks = (rng.random(n) < p).astype(float)
        new_wildlife = np.maximum(0.0, wildlife ** self.growth - self.loss * attacks * (1.0 - effort))
        reward = float(new_wildlife.sum() - wildlife.sum())
        next_state = np.concatenate([effort, new_wildlife, [t + 1.0]])
        done = t + 1.0 >= self.horizon
        return next_state, reward, done


@dataclass
class EnvPair:
    name: str
    offline: object
    online: object


def gaussian_linear_pair(delta=(1.2, 1.6), sigma_off=1.0, sigma_on=1.0,
                         half_shift=False, horizon=40) -> EnvPair:
    """Linear-Gaussian pair; defaults give a pure mean shift of norm 2."""
    a_mat = np.array([[0.9, 0.1], [-0.1, 0.9]])
    b_mat = 0.5 * np.eye(2)
    offline = GaussianLinearEnv(a_mat, b_mat, sigma_off, horizon=horizon)
    online = GaussianLinearEnv(a_mat, b_mat, sigma_on, shift=delta,
                               half_shift=half_shift, horizon=horizon)
    return EnvPair("gaussian", offline, online)


def point_mass_pair(shift="friction", friction_off=0.05, friction_on=0.25,
                    kinematic_limit=0.4, horizon=100) -> EnvPair:
    if shift == "friction":
        offline = PointMassEnv(friction=friction_off, horizon=horizon)
        online = PointMassEnv(friction=friction_on, horizon=horizon)
    elif shift == "kinematic":
        offline = PointMassEnv(friction=friction_off, horizon=horizon)
        online = PointMassEnv(friction=friction_off, horizon=horizon,
                              accel_limit=(kinematic_limit, 1.0))
    elif shift == "none":
        offline = PointMassEnv(friction=friction_off, horizon=horizon)
        online = PointMassEnv(friction=friction_off, horizon=horizon)
    else:
        raise ValueError(f"unknown point-mass shift {shift!r}")
    return EnvPair("pointmass", offline, online)


def patrol_pair(attractiveness_seed=0, displacement_off=0.5, displacement_on=1.0,
                horizon=20) -> EnvPair:
    offline = PatrolEnv(attractiveness_seed=attractiveness_seed,
                        displacement=displacement_off, horizon=horizon)
    online = PatrolEnv(attractiveness_seed=attractiveness_seed,
                       displacement=displacement_on, horizon=horizon)
    return EnvPair("patrol", offline, online)


def analytic_conditional_w2(pair: EnvPair, state, action) -> float:
    """Closed-form conditional W2 between the pair's isotropic Gaussians.

    W2^2 = ||delta(s)||^2 + d * (sigma_off - sigma_on)^2; only defined for
    the linear-Gaussian pair.
    """
    off, on = pair.offline, pair.online
    if not (isinstance(off, GaussianLinearEnv) and isinstance(on, GaussianLinearEnv)):
        raise TypeError("analytic W2 is only available for the Gaussian-linear pair")
    mean_gap = on.shift_at(np.asarray(state, dtype=float)) - off.shift_at(np.asarray(state, dtype=float))
    d = off.s_dim
    w2_sq = float(mean_gap @ mean_gap) + d * (off.noise_scale - on.noise_scale) ** 2
    return float(np.sqrt(w2_sq))


# --- behavior policies for offline data generation ---

def uniform_policy(env):
    low, high = env.action_low, env.action_high

    def policy(state, rng):
        return rng.uniform(low, high)

    return policy


def pd_behavior_policy(env, kp=4.0, kd=2.0, noise=0.3):
    """Noisy proportional-derivative controller toward the point-mass goal."""
    goal = env.goal

    def policy(state, rng):
        pos, vel = state[:2], state[2:]
        a = kp * (goal - pos) - kd * vel + noise * rng.standard_normal(2)
        return np.clip(a, -1.0, 1.0)

    return policy


def patrol_heuristic_policy(env, noise=0.1):
    """Spread the budget uniformly over cells, with a little jitter."""
    base = min(1.0, env.budget / env.n_cells)

    def policy(state, rng):
        a = base + noise * rng.random(env.n_cells)
        return env.project_action(a)

    return policy


def behavior_policy_for(env):
    if isinstance(env, PointMassEnv):
        return pd_behavior_policy(env)
    if isinstance(env, PatrolEnv):
        return patrol_heuristic_policy(env)
    return uniform_policy(env)


def rollout_episode(env, policy, rng, max_steps=None):
    """One episode under ``policy``; truncates at the env horizon."""
    limit = env.horizon if max_steps is None else min(env.horizon, max_steps)
    state = env.reset(rng)
    transitions = []
    for t in range(limit):
        action = policy(state, rng)
        next_state, reward, done_env = env.step(state, action, rng)
        done = bool(done_env) or t == limit - 1
        transitions.append(Transition(state, np.asarray(action, dtype=float), reward, next_state, done))
        state = next_state
        if done:
            break
    return transitions


def generate_offline_dataset(env, behavior_policy, n, rng) -> TransitionDataset:
    """Roll out ``behavior_policy`` in ``env`` until n transitions are collected."""
    if n < 1:
        raise ValueError(f"dataset size must be >= 1, got {n}")
    collected = []
    while len(collected) < n:
        collected.extend(rollout_episode(env, behavior_policy, rng))
    return TransitionDataset.from_transitions(collected[:n])
