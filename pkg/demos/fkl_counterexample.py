"""Lowering the forward KL does not guarantee improvement
========================================================

In a one-state MDP with rewards (-1, +1), the old policy puts almost all of
its mass on the good action. The new policy puts almost all of its mass on
the bad one. Measured against the old policy's Boltzmann target, the
forward KL still goes down, yet every action value and the start value get
worse.

The reverse KL has no such failure: any decrease of it improves the policy.
"""

from __future__ import annotations

from klgreed.theory import build_fkl_counterexample, two_action_counterexample

rep = two_action_counterexample(tau=1.0, gamma=0.9, eps1=1e-8, eps2=0.1)
print("tau = 1, two actions")
print("  pi_old       ", rep.pi_old.round(8))
print("  pi_new       ", rep.pi_new.round(8))
print("  FKL decrease ", rep.delta_fkl.round(4))
print("  Q_old        ", rep.q_old.round(3))
print("  Q_new        ", rep.q_new.round(3))
print(f"  eta: {rep.eta_old:.3f} -> {rep.eta_new:.3f}   certified={rep.certified}")
print()

# The same search run for a few temperatures. At tau = 0 the hard target is a
# point mass, so a third action is needed to build the example. At tau = 0.1
# the search ends on two nearly deterministic policies, so the drop is small
# but still strict.
for tau in (0.0, 0.1, 1.0):
    eps1, eps2, r = build_fkl_counterexample(tau, 0.9)
    drop = r.eta_old - r.eta_new
    print(f"tau={tau:<4} eps1={eps1:.0e} eps2={eps2:.12g}  eta drop {drop:.3e}  certified={r.certified}")
