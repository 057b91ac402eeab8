"""Shared test oracles and protocols."""

import math

import numpy as np

from compflow import envs, flow, nnet


def finite_difference_grads(net, x, gout, h=1e-5):
    """Central-difference gradient of L = y . gout w.r.t. every parameter."""
    grads = []
    for p in net.params():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            lp = float(nnet.forward(net, x) @ gout)
            p[idx] = old - h
            lm = float(nnet.forward(net, x) @ gout)
            p[idx] = old
            g[idx] = (lp - lm) / (2 * h)
        grads.append(g)
    return grads


def composite_vs_direct_mse(seed, n_on, epochs=90, online_iters_cap=None):
    """Paired composite/direct held-out MSE on the friction point-mass pair.

    Both arms train with an epoch-matched budget over their own data, which is
    what makes online-sample scarcity visible: the direct flow must learn the
    full Gaussian-to-next-state transport from n_on samples' worth of gradient
    steps, while the composite's online stage only learns the small dynamics
    correction. ``online_iters_cap`` optionally caps the composite's online
    stage once it is converged (it never needs the full budget at large n_on).
    """
    pair = envs.point_mass_pair(shift="friction")
    rng = np.random.default_rng(seed)
    ds_off = envs.generate_offline_dataset(pair.offline,
                                           envs.behavior_policy_for(pair.offline),
                                           50_000, rng)
    ds_on = envs.generate_offline_dataset(pair.online,
                                          envs.behavior_policy_for(pair.online),
                                          n_on, rng)
    split = len(ds_on) - len(ds_on) // 10
    train_on = ds_on.subset(np.arange(split))
    holdout = ds_on.subset(np.arange(split, len(ds_on)))

    batch = 1024

    def cfg_for(n, cap=None):
        iters = math.ceil(epochs * n / batch)
        if cap is not None:
            iters = min(iters, cap)
        return flow.FlowTrainConfig(hidden_layers=3, hidden_dim=128, batch_size=batch,
                                    iters=iters, lr=1e-3, lr_final=1e-4, ode_steps=20)

    offline_flow = flow.train_offline_flow(ds_off, cfg_for(len(ds_off)), rng)
    online_flow = flow.train_online_flow(offline_flow, train_on, 10.0,
                                         cfg_for(len(train_on), online_iters_cap), rng)
    composite = flow.CompositeFlow(offline_flow, online_flow)
    direct = flow.train_direct_flow(train_on, cfg_for(len(train_on)), rng)

    mse_comp = flow.validation_mse(
        lambda s, a, r: flow.composite_next_states(composite, s, a, r),
        holdout.states, holdout.actions, holdout.next_states, rng, draws=8)
    mse_direct = flow.validation_mse(
        lambda s, a, r: flow.sample_next_states(direct, s, a, r),
        holdout.states, holdout.actions, holdout.next_states, rng, draws=8)
    return mse_comp, mse_direct
