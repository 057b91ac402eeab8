"""Green-security patrol simulator walkthrough.

A 5x5 grid of cells is attacked with logistic probabilities shaped by the
previous patrol (deterrence on the cell, displacement to neighbors);
wildlife grows and loses stock to uncovered attacks under a budgeted effort
allocation. The offline/online pair differs in the displacement strength.
"""

import numpy as np

from compflow import envs

pair = envs.patrol_pair(attractiveness_seed=0)
env = pair.offline
rng = np.random.default_rng(4)

print(f"{env.n_cells} cells, budget {env.budget}, horizon {env.horizon}")

state = env.reset(rng)
n = env.n_cells
print("initial wildlife:", state[n:2 * n].sum())

# concentrate effort on the most attractive cells
effort = np.zeros(n)
effort[np.argsort(env.attractiveness)[-5:]] = 1.0
total = 0.0
done = False
while not done:
    state, reward, done = env.step(state, effort, rng)
    total += reward
final_wildlife = state[n:2 * n].sum()
print(f"targeted patrol: return {total:.3f} = final wildlife {final_wildlife:.3f} "
      f"- initial {float(n):.1f} (telescoping reward)")

# attack probabilities respond to patrol: deterrence here, displacement nearby
probe = np.zeros(n)
probe[12] = 1.0  # center cell
p_idle = env.attack_probability(np.zeros(n))
p_patrolled = env.attack_probability(probe)
print(f"\ncenter cell attack prob: {p_idle[12]:.3f} idle -> {p_patrolled[12]:.3f} patrolled")
neighbors = np.flatnonzero(env.adjacency[:, 12])
print(f"neighbor attack probs rise (displacement): "
      f"{np.round(p_idle[neighbors], 3)} -> {np.round(p_patrolled[neighbors], 3)}")
print(f"online member displaces harder: eta_p {pair.offline.displacement} -> "
      f"{pair.online.displacement}")

dataset = envs.generate_offline_dataset(env, envs.patrol_heuristic_policy(env),
                                        2000, rng)
print(f"\ngenerated {len(dataset)} offline transitions; "
      f"reward bound |r| <= {np.abs(dataset.rewards).max():.3f}")
