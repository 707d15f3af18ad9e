"""Finding and auditing Generalized Nash equilibria (GNE).

A profile is a GNE when every row lies in the player's feasible set and no
feasible unilateral deviation raises that player's utility. Utilities are
concave on the feasible set, so the solver's best response is the deviation
to test against; :func:`brute_force_gne` is an independent grid audit that
never calls the solver.
"""

from __future__ import annotations

import csv
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .dynamics import DynamicsConfig, Status, fmt, run
from .model import GameSpec, StrategyProfile, _F, as_profile, row_utility
from .solver import DEFAULT, Kind, SolverConfig, best_response, constraint_bounds, kkt_residual, omega, omegas


class CostGuardError(RuntimeError):
    pass


@dataclass(frozen=True)
class GneReport:
    feasible: bool
    utility_gap: np.ndarray
    kkt_residual: np.ndarray
    type_tags: tuple[Kind, ...]
    kappa0: np.ndarray
    gap_tol: float
    kkt_tol: float

    @property
    def verdict(self) -> bool:
        return (
            self.feasible
            and float(np.max(self.utility_gap)) <= self.gap_tol
            and float(np.max(self.kkt_residual)) <= self.kkt_tol
        )


@dataclass
class GneSet:
    """Deduplicated equilibria with their CPR totals v_x."""

    points: list[StrategyProfile]
    reports: list[Optional[GneReport]] = field(default_factory=list)
    runs: list[tuple[Status, StrategyProfile]] = field(default_factory=list)
    cluster_sizes: list[int] = field(default_factory=list)

    @property
    def totals(self) -> list[np.ndarray]:
        return [p.totals for p in self.points]

    def __len__(self):
        return len(self.points)


def verify_gne(
    game: GameSpec, profile, gap_tol: float = 1e-6, kkt_tol: float = 1e-6, cfg: SolverConfig = DEFAULT
) -> GneReport:
    prof = as_profile(profile)
    feasible = True
    gaps, res, kinds, kappas = [], [], [], []
    for i in range(game.n):
        xbar = prof.others_totals(i)
        row = prof.x[i]
        feasible &= constraint_bounds(game, i, xbar).contains(row, tol=1e-9)
        br = best_response(game, i, xbar, cfg)
        gaps.append(row_utility(game, i, br.values, xbar) - row_utility(game, i, row, xbar))
        res.append(kkt_residual(game, i, row, xbar, cfg)[1])
        kinds.append(br.kind)
        kappas.append(br.kappa0)
    return GneReport(bool(feasible), np.array(gaps), np.array(res), tuple(kinds), np.array(kappas), gap_tol, kkt_tol)


def random_starts(game: GameSpec, num_starts: int, seed: int) -> list[StrategyProfile]:
    """The all-zero profile followed by ``num_starts`` uniform draws from C_m per row."""
    rng = np.random.default_rng(seed)
    starts = [StrategyProfile(np.zeros((game.n, game.m)))]
    for _ in range(num_starts):
        starts.append(StrategyProfile(rng.dirichlet(np.ones(game.m + 1), size=game.n)[:, : game.m]))
    return starts


def _sort_key(p: StrategyProfile):
    return tuple(p.totals.round(12)) + tuple(p.x.ravel().round(12))


def dedup(points: Sequence[StrategyProfile], eps: float = 1e-6) -> list[int]:
    """Indices of representatives after a deterministic sort and max-norm merge."""
    order = sorted(range(len(points)), key=lambda k: _sort_key(points[k]))
    keep: list[int] = []
    for k in order:
        if all(np.max(np.abs(points[k].x - points[q].x)) > eps for q in keep):
            keep.append(k)
    return keep


def _run_one(args):
    game, start, dyn_cfg = args
    traj = run(game, start, dyn_cfg)
    return traj.status, traj.final


def find_gne(
    game: GameSpec,
    num_starts: int = 10,
    seed: int = 0,
    dyn_cfg: DynamicsConfig = DynamicsConfig(),
    dedup_eps: float = 1e-6,
    gap_tol: float = 1e-6,
    kkt_tol: float = 1e-6,
    workers: Optional[int] = None,
) -> GneSet:
    """Multi-start best-response dynamics; keep verified endpoints.

    Output does not depend on ``workers``: endpoints are sorted by totals and
    then coordinates before deduplication.
    """
    if num_starts < 1:
        raise ValueError("num_starts must be >= 1")
    jobs = [(game, s, dyn_cfg) for s in random_starts(game, num_starts, seed)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            runs = list(ex.map(_run_one, jobs))
    else:
        runs = [_run_one(j) for j in jobs]
    cands, reports = [], []
    for status, end in runs:
        if status is not Status.CONVERGED:
            continue
        rep = verify_gne(game, end, gap_tol, kkt_tol, dyn_cfg.solver)
        if rep.verdict:
            cands.append(end)
            reports.append(rep)
    keep = dedup(cands, dedup_eps)
    return GneSet([cands[k] for k in keep], [reports[k] for k in keep], runs)


# ---------------------------------------------------------------------------
# grid oracle


def simplex_grid(m: int, res: int) -> np.ndarray:
    """All integer vectors u >= 0 of length m with sum(u) <= res, lexicographic."""
    if m == 1:
        return np.arange(res + 1)[:, None]
    blocks = []
    for c in range(res + 1):
        sub = simplex_grid(m - 1, res - c)
        blocks.append(np.hstack([np.full((len(sub), 1), c), sub]))
    return np.vstack(blocks)


MAX_GRID_POINTS = 2e7


def brute_force_gne(game: GameSpec, resolution: int = 100) -> GneSet:
    """Grid audit of the equilibrium set, independent of the solver.

    Each player's strategies are the points of C_m with step ``1/resolution``.
    A grid profile is kept when it is feasible and every player's regret
    against the best grid deviation is at most twice the local Lipschitz
    slack: the largest utility change to an adjacent own grid point. For
    ``a < 1`` the step between 0 and the first grid point straddles the cusp
    of ``x**a`` and is replaced by the next step. Kept profiles are grouped
    into clusters (max-norm adjacency of two grid steps), and each cluster is
    reported by its minimum-regret member, ties going to the member nearest
    the tied members' mean.
    """
    n, m = game.n, game.m
    if n * m > 4 or resolution > 200 or resolution < 2:
        raise CostGuardError(f"brute force needs n*m <= 4 and 2 <= resolution <= 200 (n={n}, m={m}, res={resolution})")
    res = resolution
    h = 1.0 / res
    G = simplex_grid(m, res)
    K = len(G)
    if K > MAX_GRID_POINTS:
        raise CostGuardError(f"{K} grid points per player exceed the cost guard")

    top = n * res
    xpow = [np.concatenate([[0.0], (np.arange(1, res + 2) * h) ** p.a]) for p in game.players]
    ftab = [[np.array([_F(p, c, s * h) for s in range(top + 2)]) for c in game.cprs] for p in game.players]
    base = (n - 1) * res + 1
    tbase = top + 1
    tradix = tbase ** np.arange(m)
    box = simplex_grid(m, (n - 1) * res) if n > 1 else np.zeros((1, m), dtype=int)
    box = box[np.all(box < base, axis=1)]
    room = res - G.sum(axis=1)

    # per player: acceptable (own point, opponent totals) pairs, keyed by the CPR totals they imply
    accepted: list[dict[int, tuple[np.ndarray, np.ndarray]]] = []
    for i, player in enumerate(game.players):
        w = omegas(game, i)
        cusp = player.a < 1.0
        chunks = []
        batch = max(1, int(1e6 // K))
        for lo in range(0, len(box), batch):
            S = box[lo : lo + batch][:, None, :]  # (B, 1, m)
            U = np.broadcast_to(G[None], (len(S), K, m))
            cap = np.where(S * h < w, np.floor((w - S * h) / h + 1e-9), 0)
            ok = np.all(U <= cap, axis=2)
            slack = np.zeros(ok.shape)
            v = np.zeros(ok.shape)
            for j in range(m):
                u, sj = U[:, :, j], S[:, :, j]
                xj, fj = xpow[i], ftab[i][j]
                v += xj[u] * fj[u + sj]
                up_u = np.where(cusp & (u == 0), 1, u)
                up = np.abs(xj[up_u + 1] * fj[up_u + 1 + sj] - xj[up_u] * fj[up_u + sj])
                up = np.where((room > 0) | (cusp & (u == 0)), up, 0.0)
                dn_u = np.where(cusp & (u == 1), 2, u)
                dn = np.abs(xj[dn_u] * fj[dn_u + sj] - xj[dn_u - 1] * fj[dn_u - 1 + sj])
                dn = np.where(u > 0, dn, 0.0)
                slack = np.maximum(slack, np.maximum(up, dn))
            regret = np.max(np.where(ok, v, -np.inf), axis=1, keepdims=True) - v
            b_idx, keep = np.nonzero(ok & (regret <= 2.0 * slack + 1e-12))
            chunks.append(((G[keep] + S[b_idx, 0]) @ tradix, keep, regret[b_idx, keep]))
        keys_i = np.concatenate([c[0] for c in chunks])
        u_i = np.concatenate([c[1] for c in chunks])
        r_i = np.concatenate([c[2] for c in chunks])
        order = np.argsort(keys_i, kind="stable")
        keys_i, u_i, r_i = keys_i[order], u_i[order], r_i[order]
        uniq, starts = np.unique(keys_i, return_index=True)
        bounds = np.append(starts, len(keys_i))
        acc = {int(k): (u_i[a:b], r_i[a:b]) for k, a, b in zip(uniq, bounds[:-1], bounds[1:])}
        accepted.append(acc)

    keys = set(accepted[0])
    for acc in accepted[1:]:
        keys &= set(acc)
    kept_pts, kept_reg = [], []
    for key in sorted(keys):
        T = np.array(np.unravel_index(key, (tbase,) * m, order="F"))
        lists = [np.array(acc[key][0]) for acc in accepted]
        regs = [np.array(acc[key][1]) for acc in accepted]
        mesh = np.meshgrid(*[np.arange(len(l)) for l in lists], indexing="ij")
        combo = np.stack([mm.ravel() for mm in mesh], axis=1)
        U = np.stack([G[lists[i][combo[:, i]]] for i in range(n)], axis=1)
        match = np.all(U.sum(axis=1) == T, axis=1)
        if not match.any():
            continue
        worst = np.max(np.stack([regs[i][combo[match, i]] for i in range(n)], axis=1), axis=1)
        kept_pts.append(U[match].reshape(-1, n * m))
        kept_reg.append(worst)
    if not kept_pts:
        return GneSet([])
    pts = np.vstack(kept_pts)
    reg = np.concatenate(kept_reg)
    pairs = cKDTree(pts).query_pairs(r=2.0, p=np.inf, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(pts), len(pts)))
    ncomp, labels = connected_components(graph, directed=False)
    reps, sizes = [], []
    for c in range(ncomp):
        members = np.flatnonzero(labels == c)
        r = reg[members]
        tied = members[r <= r.min() + 1e-12]
        centre = pts[tied].mean(axis=0)
        dist = np.max(np.abs(pts[tied] - centre), axis=1)
        pick = tied[np.lexsort((tied, dist))[0]]
        reps.append(StrategyProfile(pts[pick].reshape(n, m) * h))
        sizes.append(len(members))
    order = sorted(range(len(reps)), key=lambda k: _sort_key(reps[k]))
    return GneSet([reps[k] for k in order], [None] * len(order), [], [sizes[k] for k in order])


def match_sets(a: GneSet, b: GneSet, tol: float) -> bool:
    """Every point of ``a`` lies within ``tol`` (max-norm) of some point of ``b`` and vice versa."""

    def covered(src, dst):
        return all(any(np.max(np.abs(p.x - q.x)) <= tol for q in dst.points) for p in src.points)

    return covered(a, b) and covered(b, a)


# ---------------------------------------------------------------------------
# structural checks


class AntichainResult(NamedTuple):
    holds: bool
    witness: Optional[tuple[int, int]]


def antichain_check(gne_set, tol: float = 1e-6) -> AntichainResult:
    """No totals vector may be dominated coordinatewise by another with a strictly larger sum.

    Accepts a :class:`GneSet` or a sequence of totals vectors.
    """
    vs = [np.asarray(v, dtype=float) for v in (gne_set.totals if isinstance(gne_set, GneSet) else gne_set)]
    for x, y in itertools.permutations(range(len(vs)), 2):
        if np.all(vs[x] <= vs[y] + tol) and vs[x].sum() < vs[y].sum() - tol:
            return AntichainResult(False, (x, y))
    return AntichainResult(True, None)


@dataclass(frozen=True)
class Classification:
    types: tuple[Kind, ...]
    kappa0: tuple[float, ...]
    support: tuple[frozenset, ...]
    support_I: tuple[frozenset, ...]
    support_II: tuple[frozenset, ...]

    @property
    def type_I(self) -> frozenset:
        return frozenset(i for i, t in enumerate(self.types) if t is Kind.TYPE_I)

    @property
    def type_II(self) -> frozenset:
        return frozenset(i for i, t in enumerate(self.types) if t is Kind.TYPE_II)


def classify_types(game: GameSpec, profile, cfg: SolverConfig = DEFAULT) -> Classification:
    """Per-player response type and per-CPR supports S, S_I, S_II."""
    prof = as_profile(profile)
    brs = [best_response(game, i, prof.others_totals(i), cfg) for i in range(game.n)]
    types = tuple(b.kind for b in brs)
    totals = prof.totals
    sup = tuple(
        frozenset(i for i in range(game.n) if totals[j] < omega(game, i, j) and prof.x[i, j] > 0.0)
        for j in range(game.m)
    )
    sup_I = tuple(frozenset(i for i in s if types[i] is Kind.TYPE_I) for s in sup)
    sup_II = tuple(frozenset(i for i in s if types[i] is Kind.TYPE_II) for s in sup)
    return Classification(types, tuple(b.kappa0 for b in brs), sup, sup_I, sup_II)


class CountBound(NamedTuple):
    holds: bool
    largest_group: int
    bound: int


def count_bound_check(gne_set, n: int, m: int, dedup_eps: float = 1e-6) -> CountBound:
    """At most 2**(n*(m+1)) equilibria may share one totals vector."""
    vs = [np.asarray(v, dtype=float) for v in (gne_set.totals if isinstance(gne_set, GneSet) else gne_set)]
    bound = 2 ** (n * (m + 1))
    groups: list[list[np.ndarray]] = []
    for v in vs:
        for g in groups:
            if np.max(np.abs(g[0] - v)) <= dedup_eps:
                g.append(v)
                break
        else:
            groups.append([v])
    largest = max((len(g) for g in groups), default=0)
    return CountBound(largest <= bound, largest, bound)


# ---------------------------------------------------------------------------
# export


def gne_header(m: int) -> list[str]:
    return ["id", "player", "type", "kappa0"] + [f"x_{j}" for j in range(m)] + [f"total_{j}" for j in range(m)]


def write_gne_csv(game: GameSpec, gne_set: GneSet, path, cfg: SolverConfig = DEFAULT) -> list[Classification]:
    """One row per (point, player). Returns the classifications it computed."""
    out = []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(gne_header(game.m))
        for pid, p in enumerate(gne_set.points):
            cls = classify_types(game, p, cfg)
            out.append(cls)
            tot = [fmt(v) for v in p.totals]
            for i in range(game.n):
                w.writerow([pid, i, str(cls.types[i]), fmt(cls.kappa0[i])] + [fmt(v) for v in p.x[i]] + tot)
    return out


def read_gne_csv(path) -> list[StrategyProfile]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    pts: dict[int, list[list[float]]] = {}
    for r in rows:
        xs = [float(r[k]) for k in sorted((k for k in r if k.startswith("x_")), key=lambda k: int(k[2:]))]
        pts.setdefault(int(r["id"]), []).append(xs)
    return [StrategyProfile(pts[k]) for k in sorted(pts)]
