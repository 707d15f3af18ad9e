"""
One fragile resource, two investors
===================================

Two identical players share a resource that pays ``c = 1`` and fails with
probability ``t**2`` once ``t`` units are in it. Their effective rate is
``F(t) = 1 - 2 t**2``, so nobody wants the total past ``1/sqrt(2)``.
"""

import numpy as np

from fragile_cpr import DynamicsConfig, build_game, best_response, omega, run, verify_gne

cpr = {"failure": {"family": "power", "q": 2}, "return": {"family": "constant", "c": 1}}
game = build_game([(1.0, 1.0), (1.0, 1.0)], [cpr])

###############################################################################
# Where the rate turns negative

print(f"omega = {omega(game, 0, 0):.7f}  (1/sqrt(2) = {1 / np.sqrt(2):.7f})")

###############################################################################
# Reaction curve: what player 0 does against each opponent stake.
# The fixed point of this curve is the equilibrium.

for b in np.linspace(0.0, 0.7, 8):
    print(f"  opponent {b:.2f} -> reply {best_response(game, 0, [[b]]).values[0]:.5f}")

###############################################################################
# Best-response dynamics from an empty market, both schedules

for schedule in ("sequential", "simultaneous"):
    traj = run(game, [[0.0], [0.0]], DynamicsConfig(schedule=schedule))
    path = ", ".join(f"{p.x[0, 0]:.4f}" for p in traj.profiles[:6])
    print(f"{schedule:>12}: {traj.status} after {traj.rounds} rounds; player 0 path {path}, ...")

###############################################################################
# The limit is (1/4, 1/4), and it survives the deviation audit

rep = verify_gne(game, traj.final)
print("endpoint", traj.final.x.ravel(), "verdict", rep.verdict, "max gap", rep.utility_gap.max())
