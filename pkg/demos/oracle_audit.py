"""
Auditing the search with a grid
===============================

Multi-start dynamics finds equilibria quickly but shares code with the
solver it is checked against. The grid oracle enumerates every profile on a
1/100 lattice and keeps those where nobody gains more than the grid can
resolve. It never calls the solver.
"""

import time

from fragile_cpr import brute_force_gne, build_game, find_gne
from fragile_cpr.equilibrium import match_sets


def cpr(q, c):
    return {"failure": {"family": "power", "q": q}, "return": {"family": "constant", "c": c}}


games = {
    "two mixed players, two resources": build_game([(0.7, 1.5), (1.0, 1.0)], [cpr(2, 2.0), cpr(3, 1.0)]),
    "four players, one resource": build_game([(1, 1), (0.8, 2), (0.5, 1), (1, 3)], [cpr(2.5, 1.5)]),
}

for name, g in games.items():
    t0 = time.perf_counter()
    found = find_gne(g, num_starts=10, seed=0)
    t1 = time.perf_counter()
    grid = brute_force_gne(g, resolution=100)
    t2 = time.perf_counter()
    print(name)
    print(f"  search ({t1 - t0:.2f} s):", [p.x.round(4).tolist() for p in found.points])
    print(f"  grid   ({t2 - t1:.2f} s):", [p.x.round(2).tolist() for p in grid.points], "cluster sizes", grid.cluster_sizes)
    print("  agree within 0.02:", match_sets(found, grid, 0.02))
