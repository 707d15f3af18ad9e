"""
More resources than players
===========================

With at least as many players as resources the equilibrium totals form an
antichain and, when everyone's budget is slack, the equilibrium is unique.
Neither guarantee covers ``n < m``. This script draws random games of that
shape and counts what multi-start search turns up, along with how often
dynamics settle at all. It gathers evidence; it proves nothing.
"""

from collections import Counter

import numpy as np

from fragile_cpr import Status, build_game, classify_types, find_gne, validate_assumptions


def draw(rng, n, m):
    while True:
        players = [(float(rng.uniform(0.3, 1.0)), float(rng.uniform(0.5, 3.0))) for _ in range(n)]
        cprs = [
            {"failure": {"family": "power", "q": float(rng.uniform(1.5, 4))},
             "return": {"family": "constant", "c": float(rng.uniform(0.5, 8))}}
            for _ in range(m)
        ]
        g = build_game(players, cprs)
        if validate_assumptions(g, 200).passed:
            return g


rng = np.random.default_rng(3)
counts, statuses, types = Counter(), Counter(), Counter()
for _ in range(12):
    g = draw(rng, 2, 3)
    s = find_gne(g, num_starts=12, seed=int(rng.integers(1 << 30)))
    counts[len(s)] += 1
    statuses.update(str(st) for st, _ in s.runs)
    for p in s.points:
        types.update(str(t) for t in classify_types(g, p).types)

print("equilibria found per game:", dict(sorted(counts.items())))
print("dynamics outcomes over all starts:", dict(statuses))
print("player types at equilibria:", dict(types))
