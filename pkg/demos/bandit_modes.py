"""Mode seeking and mode covering on a bimodal bandit
=====================================================

A squashed Gaussian policy is fit to the Boltzmann target of a bandit whose
reward has two bumps. We sweep the policy mean for a few fixed widths and
count strict local minima of each loss along that slice.

With a narrow policy the reverse KL has one minimum per bump, so gradient
descent can settle on either mode depending on where it starts. The forward
KL keeps a single basin at every width, centred on the higher bump.
"""

from __future__ import annotations

import numpy as np

from klgreed.experiments import bandit_surface, strict_local_minima, surface_grid

taus = (0.0, 0.1)
rows = bandit_surface(kls=("rkl", "fkl"), taus=taus, n_mu=81, n_sigma=20)

for tau in taus:
    print(f"tau = {tau}")
    for kl in ("rkl", "fkl"):
        mus, sigmas, grid = surface_grid(rows, kl, tau)
        for target_sigma in (0.1, 0.5, 1.5):
            i = int(np.argmin(np.abs(sigmas - target_sigma)))
            minima = strict_local_minima(grid[i])
            where = ", ".join(f"{np.tanh(mus[j]):+.2f}" for j in minima)
            print(f"  {kl}  sigma={sigmas[i]:.2f}  minima at tanh(mu) = [{where}]")
    print()

# The global minimiser of the forward KL at tau = 0.1, as an action.
mus, sigmas, grid = surface_grid(rows, "fkl", 0.1)
i, j = np.unravel_index(np.argmin(grid), grid.shape)
print(f"forward KL optimum: tanh(mu) = {np.tanh(mus[j]):+.3f}, sigma = {sigmas[i]:.2f}")
