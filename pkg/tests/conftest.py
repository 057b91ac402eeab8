import numpy as np
import pytest

from compflow import envs, flow


@pytest.fixture(scope="session")
def gaussian_mean_shift_composite():
    """Composite flow trained on the norm-2 mean-shift Gaussian pair.

    Shared by the flow and gap example tests; module-scale budgets (smaller
    than the acceptance protocol, which trains its own flows).
    """
    rng = np.random.default_rng(777)
    pair = envs.gaussian_linear_pair(delta=(1.2, 1.6))
    ds_off = envs.generate_offline_dataset(pair.offline, envs.uniform_policy(pair.offline),
                                           8_000, rng)
    ds_on = envs.generate_offline_dataset(pair.online, envs.uniform_policy(pair.online),
                                          2_000, rng)
    off_cfg = flow.FlowTrainConfig(hidden_layers=3, hidden_dim=96, batch_size=512,
                                   iters=1800, lr=1e-3, lr_final=1e-4, ode_steps=20)
    offline_flow = flow.train_offline_flow(ds_off, off_cfg, rng)
    on_cfg = flow.FlowTrainConfig(hidden_layers=3, hidden_dim=96, batch_size=512,
                                  iters=350, lr=1e-3, lr_final=1e-4, ode_steps=20)
    online_flow = flow.train_online_flow(offline_flow, ds_on, 10.0, on_cfg, rng)
    return pair, flow.CompositeFlow(offline_flow, online_flow)
