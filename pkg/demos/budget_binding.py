"""
When the budget binds
=====================

A lone investor facing two generous resources (``c = 8``) would like to put
``sqrt(8/27) ~ 0.544`` in each, which overspends the unit endowment. The
optimum then splits the budget and a multiplier ``kappa0`` prices the
constraint.
"""

import numpy as np

from fragile_cpr import Kind, build_game, best_response, h_aux
from fragile_cpr.solver import type1_response

cpr = {"failure": {"family": "power", "q": 2}, "return": {"family": "constant", "c": 8}}
game = build_game([(1.0, 1.0)], [cpr, cpr])

###############################################################################
# The unconstrained stationary point is infeasible

free = type1_response(game, 0, np.zeros(2))
print("unconstrained roots", free, "sum", free.sum())

###############################################################################
# The solver routes to the budget-binding branch

br = best_response(game, 0, np.zeros(2))
assert br.kind is Kind.TYPE_II
print(f"{br.kind}: x = {br.values}, kappa0 = {br.kappa0:.12f}")
print("residuals", br.residuals)

###############################################################################
# The response is a fixed point of H(.; kappa0)

print("H(0.5; kappa0) =", h_aux(game, 0, 0, 0.5, br.kappa0, 0.5))

###############################################################################
# Risk-averse players (a < 1) never leave an active resource empty under a
# binding budget: x**(a-1) blows up at zero.

poor = {"failure": {"family": "power", "q": 3}, "return": {"family": "constant", "c": 0.3}}
bent = build_game([(0.5, 1.0)], [cpr, cpr, cpr, poor])
br = best_response(bent, 0, np.zeros(4))
print(f"a = 0.5: {br.kind}, x = {br.values.round(6)}, J = {sorted(br.effective_set)}")
