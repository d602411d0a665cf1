"""Greedification with exact action values on a small maze
=========================================================

Here policy iteration runs with exact soft action values on the 5x5 maze:
each outer step computes Q for the current policy, then takes a few RMSprop
steps on the KL to its Boltzmann target.

With tau = 0 both reverse and forward KL end up on a shortest path. At
tau = 0.1 the entropy bonus, about 0.14 per step, outweighs the reward for
reaching the goal. The soft-optimal policy stays close to uniform and
wanders, which shows up as a low unregularised value at the start.
"""

from __future__ import annotations

import numpy as np

from klgreed.agent import maze_layout, optimal_greedy_actions, reachable_states, true_value_training
from klgreed.mdp import exact_soft_values
from klgreed.policy import entropy

maze = maze_layout("maze5")
opt = optimal_greedy_actions(maze.mdp)
live = [s for s in reachable_states(maze) if not maze.mdp.terminal[s]]
start = maze.index(maze.start)

print(f"{'kl':4} {'tau':>4} {'V(start)':>9} {'optimal':>8} {'entropy':>8}")
for kl in ("rkl", "fkl"):
    for tau in (0.0, 0.1):
        final = true_value_training(maze, kl, tau)[-1]
        v = exact_soft_values(maze.mdp, final, 0.0).v[start]
        greedy = final.logits.argmax(-1)
        frac = np.mean([opt[s, greedy[s]] for s in live])
        ent = np.mean([entropy(final, s) for s in live])
        print(f"{kl:4} {tau:4.1f} {v:9.4f} {frac:8.2%} {ent:8.3f}")
