"""Best responses for one player of a Fragile multi-CPR game.

Given the opponents' totals ``xbar_j``, player ``i`` maximises a separable
concave objective over the box ``0 <= x_j <= omega_ij - xbar_j`` cut by the
budget ``sum(x) <= 1``. The optimum is either

* Type I: ``psi_ij(x_j; xbar_j) = 0`` on every active CPR, budget slack; or
* Type II: ``x_j**(a-1) * psi_ij(x_j; xbar_j) = kappa0 >= 0`` on the
  effective CPRs, budget binding.

Every root below is bracketed; monotonicity of ``psi`` on the bracket makes
each root unique.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from .model import (
    GameError,
    GameSpec,
    StrategyProfile,
    _check_index,
    _F,
    _F_d1,
)

KAPPA_CAP = 2.0**40


class SolverError(RuntimeError):
    """Numeric failure: a root could not be bracketed."""


class ContractError(SolverError):
    """A routine was called outside its precondition."""


class Kind(str, enum.Enum):
    TYPE_I = "TypeI"
    TYPE_II = "TypeII"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class SolverConfig:
    root_tol: float = 1e-10
    max_bisect_iters: int = 200
    sum_tol: float = 1e-9

    def __post_init__(self):
        if not (self.root_tol > 0 and self.sum_tol > 0 and self.max_bisect_iters > 0):
            raise ValueError("solver tolerances and iteration cap must be positive")


DEFAULT = SolverConfig()


@dataclass(frozen=True)
class BestResponse:
    kind: Kind
    values: np.ndarray
    effective_set: frozenset
    kappa0: float
    residuals: np.ndarray
    active_set: frozenset

    @property
    def total(self) -> float:
        return float(self.values.sum())


class Bounds(NamedTuple):
    """Feasible set for one player: ``0 <= x <= upper`` and ``sum(x) <= budget``."""

    upper: np.ndarray
    budget: float = 1.0

    def contains(self, row, tol: float = 1e-9) -> bool:
        row = np.asarray(row, dtype=float)
        return bool(
            np.all(row >= -tol) and np.all(row <= self.upper + tol) and row.sum() <= self.budget + tol
        )


def _root(f, lo: float, hi: float, cfg: SolverConfig, what: str) -> float:
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if not (flo > 0.0 > fhi):
        raise SolverError(f"{what}: no sign change on [{lo!r}, {hi!r}] (f={flo!r}, {fhi!r})")
    try:
        return brentq(f, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=cfg.max_bisect_iters)
    except RuntimeError as e:
        raise SolverError(f"{what}: {e}") from None


# ---------------------------------------------------------------------------
# thresholds and feasible sets


@lru_cache(maxsize=4096)
def _omega_cached(game: GameSpec, i: int, j: int) -> float:
    player, cpr = game.players[i], game.cprs[j]
    f0, f1 = _F(player, cpr, 0.0), _F(player, cpr, 1.0)
    if not (f0 > 0.0 > f1):
        raise SolverError(
            f"omega[{i},{j}]: F does not bracket a root on [0, 1] (F(0)={f0!r}, F(1)={f1!r}); "
            "run validate_assumptions on this game"
        )
    cfg = SolverConfig(max_bisect_iters=500)
    return _root(lambda t: _F(player, cpr, t), 0.0, 1.0, cfg, f"omega[{i},{j}]")


def omega(game: GameSpec, i: int, j: int) -> float:
    """Unique zero of F_ij in (0, 1). Cached per (game, i, j)."""
    _check_index(game, i, j)
    return _omega_cached(game, i, j)


def omegas(game: GameSpec, i: int) -> np.ndarray:
    return np.array([omega(game, i, j) for j in range(game.m)])


def others_totals(game: GameSpec, i: int, others) -> np.ndarray:
    """Normalise the ``others`` argument to the vector x_T^(j|i).

    Accepts a full :class:`StrategyProfile` (row ``i`` is excluded), an
    ``(n-1) x m`` array of opponent rows, or a length-``m`` totals vector.
    """
    if isinstance(others, StrategyProfile):
        xbar = others.others_totals(i)
    else:
        arr = np.asarray(others, dtype=float)
        if arr.ndim == 2:
            if arr.shape[0] != game.n - 1:
                raise GameError(f"expected {game.n - 1} opponent rows, got {arr.shape[0]}")
            xbar = arr.sum(axis=0) if arr.shape[0] else np.zeros(game.m)
        else:
            xbar = arr
    if xbar.shape != (game.m,):
        raise GameError(f"opponent totals must have length m={game.m}, got shape {xbar.shape}")
    return np.asarray(xbar, dtype=float)


def active_set(game: GameSpec, i: int, others) -> frozenset:
    """CPRs whose opponent total is strictly below omega_ij."""
    _check_index(game, i)
    xbar = others_totals(game, i, others)
    return frozenset(j for j in range(game.m) if xbar[j] < omega(game, i, j))


def constraint_bounds(game: GameSpec, i: int, others) -> Bounds:
    _check_index(game, i)
    xbar = others_totals(game, i, others)
    return Bounds(np.maximum(0.0, omegas(game, i) - xbar), 1.0)


# ---------------------------------------------------------------------------
# first-order functions


def _psi(game: GameSpec, i: int, j: int, x: float, xbar: float) -> float:
    player, cpr = game.players[i], game.cprs[j]
    t = x + xbar
    return x * _F_d1(player, cpr, t) + player.a * _F(player, cpr, t)


def psi(game: GameSpec, i: int, j: int, x: float, xbar: float) -> float:
    """psi_ij(x; xbar) = x * F'_ij(x + xbar) + a_i * F_ij(x + xbar)."""
    _check_index(game, i, j)
    if x < 0.0 or not 0.0 <= x + xbar < 1.0:
        raise GameError(f"psi needs x >= 0 and x + xbar in [0, 1), got x={x!r}, xbar={xbar!r}")
    return _psi(game, i, j, x, xbar)


def g_aux(game: GameSpec, i: int, j: int, t: float) -> float:
    """G_ij(t) = -a_i F_ij(t) / F'_ij(t); a Type I coordinate b satisfies G(b + xbar) = b."""
    _check_index(game, i, j)
    if not 0.0 < t < omega(game, i, j):
        raise GameError(f"g_aux needs t in (0, omega={omega(game, i, j)!r}), got {t!r}")
    player, cpr = game.players[i], game.cprs[j]
    return -player.a * _F(player, cpr, t) / _F_d1(player, cpr, t)


def h_aux(game: GameSpec, i: int, j: int, t: float, kappa0: float, x: float) -> float:
    """H_ij(t; kappa0) = -a_i F(t) / (F'(t) - kappa0 / x**a_i), own investment ``x``."""
    _check_index(game, i, j)
    if not 0.0 < t < omega(game, i, j):
        raise GameError(f"h_aux needs t in (0, omega={omega(game, i, j)!r}), got {t!r}")
    if x <= 0.0 or kappa0 < 0.0:
        raise GameError(f"h_aux needs x > 0 and kappa0 >= 0, got x={x!r}, kappa0={kappa0!r}")
    player, cpr = game.players[i], game.cprs[j]
    return -player.a * _F(player, cpr, t) / (_F_d1(player, cpr, t) - kappa0 / x**player.a)


# ---------------------------------------------------------------------------
# Type I / Type II


def _upper(game: GameSpec, i: int, xbar: np.ndarray) -> tuple[list[int], np.ndarray]:
    w = omegas(game, i)
    active = [j for j in range(game.m) if xbar[j] < w[j]]
    return active, w - xbar


def type1_response(game: GameSpec, i: int, others, cfg: SolverConfig = DEFAULT) -> np.ndarray:
    """Solve psi_ij = 0 per active CPR; the sum may exceed 1."""
    _check_index(game, i)
    xbar = others_totals(game, i, others)
    active, upper = _upper(game, i, xbar)
    out = np.zeros(game.m)
    for j in active:
        out[j] = _root(
            lambda x, j=j: _psi(game, i, j, x, xbar[j]), 0.0, upper[j], cfg, f"type I root [{i},{j}]"
        )
    return out


def _inner(game: GameSpec, i: int, j: int, xbar: float, upper: float, kappa: float, cfg: SolverConfig) -> float:
    # x**(a-1) * psi(x) = kappa  <=>  psi(x) - kappa * x**(1-a) = 0 on (0, upper)
    a = game.players[i].a
    if a == 1.0:
        f = lambda x: _psi(game, i, j, x, xbar) - kappa
    else:
        f = lambda x: _psi(game, i, j, x, xbar) - kappa * x ** (1.0 - a)
    if f(0.0) <= 0.0:
        return 0.0
    return _root(f, 0.0, upper, cfg, f"type II inner root [{i},{j}] kappa={kappa!r}")


def _type2(game, i, xbar, active, upper, cfg) -> tuple[np.ndarray, float]:
    def alloc(kappa: float) -> np.ndarray:
        out = np.zeros(game.m)
        for j in active:
            out[j] = _inner(game, i, j, xbar[j], upper[j], kappa, cfg)
        return out

    s0 = alloc(0.0).sum()
    if s0 < 1.0 - cfg.sum_tol:
        raise ContractError(f"type II called with S(0)={s0!r} < 1; the response is Type I")
    if s0 <= 1.0:
        return alloc(0.0), 0.0
    hi = 1.0
    while alloc(hi).sum() >= 1.0:
        hi *= 2.0
        if hi > KAPPA_CAP:
            raise SolverError(f"type II [{i}]: could not bracket kappa0 below {KAPPA_CAP:g}")
    kappa = _root(lambda k: alloc(k).sum() - 1.0, 0.0, hi, cfg, f"type II kappa0 [{i}]")
    return alloc(kappa), kappa


def type2_response(game: GameSpec, i: int, others, cfg: SolverConfig = DEFAULT) -> tuple[np.ndarray, float]:
    """Budget-binding response and its multiplier kappa0."""
    _check_index(game, i)
    xbar = others_totals(game, i, others)
    active, upper = _upper(game, i, xbar)
    if not active:
        raise ContractError("type II called with an empty active set")
    return _type2(game, i, xbar, active, upper, cfg)


def best_response(game: GameSpec, i: int, others, cfg: SolverConfig = DEFAULT) -> BestResponse:
    """Unique maximiser of V_i over the player's feasible set.

    Knife-edge candidates whose Type I sum is within ``sum_tol`` of 1 are
    tagged Type II with kappa0 solved from the system (usually ~0).
    """
    _check_index(game, i)
    xbar = others_totals(game, i, others)
    active, upper = _upper(game, i, xbar)
    m = game.m
    if not active:
        return BestResponse(Kind.TYPE_I, np.zeros(m), frozenset(), 0.0, np.zeros(m), frozenset())
    cand = type1_response(game, i, xbar, cfg)
    if cand.sum() < 1.0 - cfg.sum_tol:
        kind, values, kappa = Kind.TYPE_I, cand, 0.0
    else:
        kind = Kind.TYPE_II
        values, kappa = _type2(game, i, xbar, active, upper, cfg)
    values.setflags(write=False)
    res = _residuals(game, i, values, xbar, active, kind, kappa)
    eff = frozenset(j for j in range(m) if values[j] > 0.0)
    return BestResponse(kind, values, eff, float(kappa), res, frozenset(active))


def _residuals(game, i, values, xbar, active, kind, kappa) -> np.ndarray:
    a = game.players[i].a
    res = np.zeros(game.m)
    for j in range(game.m):
        x = values[j]
        if j not in active:
            res[j] = x
        elif x > 0.0:
            p = _psi(game, i, j, x, xbar[j])
            res[j] = p if kind is Kind.TYPE_I else x ** (a - 1.0) * p - kappa
        else:
            # zero on an active CPR: marginal utility at 0+ must not beat kappa0
            p0 = _psi(game, i, j, 0.0, xbar[j])
            res[j] = max(0.0, p0 - kappa) if a == 1.0 else p0
    return res


def kkt_residual(game: GameSpec, i: int, row, others, cfg: SolverConfig = DEFAULT) -> tuple[Kind, float, float]:
    """KKT violation of a candidate row, measured at its own coordinates.

    Returns ``(kind, residual, kappa0)``. The kind is read off the budget:
    slack means Type I (kappa0 = 0), binding means Type II with kappa0 taken
    as the mean of ``x**(a-1) * psi`` over the positive coordinates.
    """
    _check_index(game, i)
    xbar = others_totals(game, i, others)
    row = np.asarray(row, dtype=float)
    active, _ = _upper(game, i, xbar)
    a = game.players[i].a
    s = row.sum()
    if s < 1.0 - cfg.sum_tol or not active:
        kind, kappa = Kind.TYPE_I, 0.0
        budget = 0.0
    else:
        kind = Kind.TYPE_II
        pos = [j for j in active if row[j] > 0.0]
        fs = [row[j] ** (a - 1.0) * _psi(game, i, j, row[j], xbar[j]) for j in pos]
        kappa = float(np.mean(fs)) if fs else 0.0
        budget = abs(s - 1.0)
    res = _residuals(game, i, row, xbar, set(active), kind, kappa)
    worst = max(float(np.max(np.abs(res))), budget, max(0.0, -kappa))
    return kind, worst, kappa
