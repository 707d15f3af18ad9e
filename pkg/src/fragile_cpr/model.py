"""Game description for Fragile multi-CPR games.

A game has ``n`` players, each splitting a unit endowment across ``m``
independent common-pool resources (CPRs). CPR ``j`` fails with probability
``p_j(t)`` and otherwise returns at rate ``R_j(t)``, where ``t`` is the total
investment in it. Player ``i`` values a CPR through the effective rate of return

    F_ij(t) = (R_j(t) - 1)**a_i * (1 - p_j(t)) - k_i * p_j(t)

and earns ``x_ij**a_i * F_ij(x_T^(j))`` from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence, Union

import numpy as np
from scipy.optimize import brentq

FD_STEP = {1: 1e-6, 2: 1e-4}


class GameError(ValueError):
    """Invalid game parameters or indices."""


# ---------------------------------------------------------------------------
# function families


@dataclass(frozen=True)
class PowerFailure:
    """p(t) = min(t**q, 1)."""

    q: float = 2.0
    tag = "power"

    def __post_init__(self):
        if not (self.q >= 1.0 and math.isfinite(self.q)):
            raise GameError(f"q out of range: power-failure needs q >= 1, got {self.q!r}")

    def value(self, t: float) -> float:
        if t >= 1.0:
            return 1.0
        if t <= 0.0:
            return 0.0
        return t**self.q

    def d1(self, t: float) -> float:
        if t >= 1.0 or t < 0.0:
            return 0.0
        if t == 0.0:
            return 1.0 if self.q == 1.0 else 0.0
        return self.q * t ** (self.q - 1.0)

    def d2(self, t: float) -> float:
        if t >= 1.0 or t <= 0.0 or self.q == 1.0:
            return 0.0
        return self.q * (self.q - 1.0) * t ** (self.q - 2.0)


@dataclass(frozen=True)
class ConstantReturn:
    """R(t) = c + 1."""

    c: float = 1.0
    tag = "constant"

    def __post_init__(self):
        if not (self.c > 0.0 and math.isfinite(self.c)):
            raise GameError(f"c out of range: constant-return needs c > 0, got {self.c!r}")

    def value(self, t: float) -> float:
        return self.c + 1.0

    def d1(self, t: float) -> float:
        return 0.0

    def d2(self, t: float) -> float:
        return 0.0


@dataclass(frozen=True)
class ExpReturn:
    """R(t) = 2 - exp(t - 1)."""

    tag = "exp"

    def value(self, t: float) -> float:
        return 2.0 - math.exp(t - 1.0)

    def d1(self, t: float) -> float:
        return -math.exp(t - 1.0)

    def d2(self, t: float) -> float:
        return -math.exp(t - 1.0)


FailureFamily = PowerFailure
ReturnFamily = Union[ConstantReturn, ExpReturn]

_FAILURE_TAGS = {"power": PowerFailure}
_RETURN_TAGS = {"constant": ConstantReturn, "exp": ExpReturn}


def failure_from_dict(d: dict) -> PowerFailure:
    d = dict(d)
    tag = d.pop("family", None)
    if tag not in _FAILURE_TAGS:
        raise GameError(f"unknown failure family {tag!r}; expected one of {sorted(_FAILURE_TAGS)}")
    return _FAILURE_TAGS[tag](**d)


def return_from_dict(d: dict) -> ReturnFamily:
    d = dict(d)
    tag = d.pop("family", None)
    if tag not in _RETURN_TAGS:
        raise GameError(f"unknown return family {tag!r}; expected one of {sorted(_RETURN_TAGS)}")
    return _RETURN_TAGS[tag](**d)


def family_to_dict(fam) -> dict:
    out = {"family": fam.tag}
    if isinstance(fam, PowerFailure):
        out["q"] = fam.q
    elif isinstance(fam, ConstantReturn):
        out["c"] = fam.c
    return out


# ---------------------------------------------------------------------------
# game description


@dataclass(frozen=True)
class PlayerParams:
    a: float
    k: float

    def __post_init__(self):
        if not (0.0 < self.a <= 1.0):
            raise GameError(f"a out of range: need 0 < a <= 1, got {self.a!r}")
        if not (self.k > 0.0 and math.isfinite(self.k)):
            raise GameError(f"k out of range: need k > 0, got {self.k!r}")


@dataclass(frozen=True)
class CprSpec:
    failure: PowerFailure = field(default_factory=PowerFailure)
    ret: ReturnFamily = field(default_factory=ConstantReturn)

    @classmethod
    def from_dict(cls, d: dict) -> "CprSpec":
        missing = [k for k in ("failure", "return") if k not in d and not (k == "return" and "ret" in d)]
        if missing:
            raise GameError(f"missing field {missing[0]!r}")
        return cls(failure_from_dict(d["failure"]), return_from_dict(d.get("return", d.get("ret"))))

    def to_dict(self) -> dict:
        return {"failure": family_to_dict(self.failure), "return": family_to_dict(self.ret)}


@dataclass(frozen=True)
class GameSpec:
    """Immutable, hashable game. Build with :func:`build_game`."""

    players: tuple[PlayerParams, ...]
    cprs: tuple[CprSpec, ...]

    @property
    def n(self) -> int:
        return len(self.players)

    @property
    def m(self) -> int:
        return len(self.cprs)

    def to_dict(self) -> dict:
        return {
            "players": [{"a": p.a, "k": p.k} for p in self.players],
            "cprs": [c.to_dict() for c in self.cprs],
        }


def build_game(players: Sequence, cprs: Sequence) -> GameSpec:
    """Validate and freeze a game.

    ``players`` holds :class:`PlayerParams` or ``(a, k)`` pairs / dicts;
    ``cprs`` holds :class:`CprSpec` or dicts accepted by ``CprSpec.from_dict``.
    """
    if len(players) == 0:
        raise GameError("players: need at least one player")
    if len(cprs) == 0:
        raise GameError("cprs: need at least one CPR")
    ps = []
    for idx, p in enumerate(players):
        try:
            if isinstance(p, PlayerParams):
                ps.append(p)
            elif isinstance(p, dict):
                missing = [k for k in ("a", "k") if k not in p]
                if missing:
                    raise GameError(f"missing field {missing[0]!r}")
                ps.append(PlayerParams(float(p["a"]), float(p["k"])))
            else:
                a, k = p
                ps.append(PlayerParams(float(a), float(k)))
        except (ValueError, TypeError) as e:
            raise GameError(f"players[{idx}]: {e}") from None
    cs = []
    for idx, c in enumerate(cprs):
        try:
            cs.append(c if isinstance(c, CprSpec) else CprSpec.from_dict(c))
        except (ValueError, TypeError) as e:
            raise GameError(f"cprs[{idx}]: {e}") from None
    return GameSpec(tuple(ps), tuple(cs))


def _check_index(game: GameSpec, i: int, j: int | None = None) -> None:
    if not 0 <= i < game.n:
        raise GameError(f"player index {i} out of range for n={game.n}")
    if j is not None and not 0 <= j < game.m:
        raise GameError(f"cpr index {j} out of range for m={game.m}")


# ---------------------------------------------------------------------------
# strategy profiles


class ProfileError(ValueError):
    pass


class StrategyProfile:
    """n x m investment matrix with rows in C_m = {x >= 0, sum(x) <= 1}."""

    __slots__ = ("x",)

    def __init__(self, x, tol: float = 1e-8):
        x = np.array(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2:
            raise ProfileError("profile must be an n x m matrix")
        if np.any(~np.isfinite(x)):
            raise ProfileError("profile has non-finite entries")
        if np.any(x < -tol) or np.any(x > 1 + tol):
            raise ProfileError("profile entries must lie in [0, 1]")
        if np.any(x.sum(axis=1) > 1 + tol):
            raise ProfileError("profile row sums must be <= 1")
        x = np.clip(x, 0.0, 1.0)
        x.setflags(write=False)
        self.x = x

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def m(self) -> int:
        return self.x.shape[1]

    @property
    def totals(self) -> np.ndarray:
        """x_T^(j) for every CPR."""
        return self.x.sum(axis=0)

    def others_totals(self, i: int) -> np.ndarray:
        """x_T^(j|i): total investment of everyone but player ``i``."""
        return self.totals - self.x[i]

    def with_row(self, i: int, row) -> "StrategyProfile":
        x = self.x.copy()
        x[i] = row
        return StrategyProfile(x)

    def __array__(self, dtype=None, copy=None):
        return self.x if dtype is None else self.x.astype(dtype)

    def __repr__(self):
        return f"StrategyProfile({self.x.tolist()!r})"


def as_profile(x) -> StrategyProfile:
    return x if isinstance(x, StrategyProfile) else StrategyProfile(x)


# ---------------------------------------------------------------------------
# effective rate of return


def _F(player: PlayerParams, cpr: CprSpec, t: float) -> float:
    p = cpr.failure.value(t)
    gain = cpr.ret.value(t) - 1.0
    g = gain**player.a if gain > 0.0 else 0.0
    return g * (1.0 - p) - player.k * p


def _F_d1(player: PlayerParams, cpr: CprSpec, t: float) -> float:
    a, k = player.a, player.k
    p, dp = cpr.failure.value(t), cpr.failure.d1(t)
    gain, dR = cpr.ret.value(t) - 1.0, cpr.ret.d1(t)
    g = gain**a
    dg = a * gain ** (a - 1.0) * dR if dR != 0.0 else 0.0
    return dg * (1.0 - p) - (g + k) * dp


def _F_d2(player: PlayerParams, cpr: CprSpec, t: float) -> float:
    a, k = player.a, player.k
    p, dp, d2p = cpr.failure.value(t), cpr.failure.d1(t), cpr.failure.d2(t)
    gain, dR, d2R = cpr.ret.value(t) - 1.0, cpr.ret.d1(t), cpr.ret.d2(t)
    g = gain**a
    if dR == 0.0 and d2R == 0.0:
        dg = d2g = 0.0
    else:
        dg = a * gain ** (a - 1.0) * dR
        d2g = a * (a - 1.0) * gain ** (a - 2.0) * dR * dR + a * gain ** (a - 1.0) * d2R
    return d2g * (1.0 - p) - 2.0 * dg * dp - (g + k) * d2p


def effective_rate(game: GameSpec, i: int, j: int, t: float) -> float:
    """F_ij(t) for total investment ``t`` in CPR ``j``."""
    _check_index(game, i, j)
    return _F(game.players[i], game.cprs[j], float(t))


class Derivative(NamedTuple):
    value: float
    analytic: bool


def effective_rate_deriv(
    game: GameSpec, i: int, j: int, t: float, order: int = 1, method: str = "auto"
) -> Derivative:
    """First or second derivative of F_ij at ``t`` in (0, 1).

    ``method="auto"`` uses the closed form (all built-in families have one);
    ``method="fd"`` forces a central finite difference with step 1e-6 (order 1)
    or 1e-4 (order 2). ``Derivative.analytic`` records which path ran.
    """
    _check_index(game, i, j)
    if order not in (1, 2):
        raise GameError(f"order must be 1 or 2, got {order!r}")
    if not 0.0 < t < 1.0:
        raise GameError(f"t must lie in (0, 1), got {t!r}")
    if method not in ("auto", "analytic", "fd"):
        raise GameError(f"unknown method {method!r}")
    player, cpr = game.players[i], game.cprs[j]
    if method != "fd":
        fn = _F_d1 if order == 1 else _F_d2
        return Derivative(fn(player, cpr, t), True)
    h = FD_STEP[order]
    lo, hi = t - h, t + h
    if order == 1:
        return Derivative((_F(player, cpr, hi) - _F(player, cpr, lo)) / (2 * h), False)
    return Derivative(
        (_F(player, cpr, hi) - 2.0 * _F(player, cpr, t) + _F(player, cpr, lo)) / (h * h), False
    )


# ---------------------------------------------------------------------------
# assumption checks


class Violation(NamedTuple):
    player: int
    cpr: int
    t: float
    condition: str


@dataclass(frozen=True)
class AssumptionReport:
    """Outcome of a sampled check. ``passed`` is evidence, not a proof."""

    violations: tuple[Violation, ...]
    samples: int
    domain: str
    note: str = "grid sampling is sound for the points it visits but cannot prove the conditions"

    @property
    def passed(self) -> bool:
        return not self.violations

    def conditions_failed(self) -> set[str]:
        return {v.condition for v in self.violations}


def _unit_grid(samples: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, samples + 2)[1:-1]


def validate_assumptions(game: GameSpec, samples: int = 1000, domain: str = "unit") -> AssumptionReport:
    """Sample the structural conditions every solver routine relies on.

    For each CPR: ``p(0) == 0``, ``p(1) == 1`` and ``R > 1`` on the grid.
    For each (player, CPR): ``F' < 0`` and ``F'' < 0`` on the grid.

    ``domain="unit"`` samples ``samples`` interior points of (0, 1), the
    literal condition. ``domain="below_omega"`` samples the curvature
    conditions only on (0, omega_ij), the interval every first-order argument
    actually uses; ``F(0) > 0 > F(1)`` and ``F' < 0`` are still checked on (0, 1).
    """
    if samples < 3:
        raise GameError(f"samples must be >= 3, got {samples}")
    if domain not in ("unit", "below_omega"):
        raise GameError(f"unknown domain {domain!r}")
    grid = _unit_grid(samples)
    out: list[Violation] = []
    for j, cpr in enumerate(game.cprs):
        if cpr.failure.value(0.0) != 0.0:
            out.append(Violation(-1, j, 0.0, "p(0)=0"))
        if cpr.failure.value(1.0) != 1.0:
            out.append(Violation(-1, j, 1.0, "p(1)=1"))
        for t in grid:
            if not cpr.ret.value(t) > 1.0:
                out.append(Violation(-1, j, float(t), "R>1"))
    for i, player in enumerate(game.players):
        for j, cpr in enumerate(game.cprs):
            if not _F(player, cpr, 0.0) > 0.0:
                out.append(Violation(i, j, 0.0, "F(0)>0"))
            if not _F(player, cpr, 1.0) < 0.0:
                out.append(Violation(i, j, 1.0, "F(1)<0"))
            curv_grid = grid
            if domain == "below_omega":
                w = _sign_change_root(lambda t: _F(player, cpr, t), 0.0, 1.0)
                curv_grid = w * _unit_grid(samples) if w is not None else grid
            for t in grid:
                if not _F_d1(player, cpr, t) < 0.0:
                    out.append(Violation(i, j, float(t), "F'<0"))
            for t in curv_grid:
                if not _F_d2(player, cpr, t) < 0.0:
                    out.append(Violation(i, j, float(t), "F''<0"))
    return AssumptionReport(tuple(out), samples, domain)


def _sign_change_root(f, lo: float, hi: float) -> float | None:
    if not (f(lo) > 0.0 > f(hi)):
        return None
    return brentq(f, lo, hi, xtol=1e-15)


# ---------------------------------------------------------------------------
# utilities


def expected_utility(game: GameSpec, i: int, j: int, x: float, xbar: float) -> float:
    """E_ij = x**a_i * F_ij(x + xbar), with E = 0 at x = 0."""
    if x <= 0.0:
        return 0.0
    player = game.players[i]
    return x**player.a * _F(player, game.cprs[j], x + xbar)


def utility(game: GameSpec, profile, i: int) -> float:
    """Total prospect-theoretic utility V_i of player ``i`` under ``profile``."""
    _check_index(game, i)
    prof = as_profile(profile)
    if prof.n != game.n or prof.m != game.m:
        raise ProfileError(f"profile shape {prof.x.shape} does not match game ({game.n}, {game.m})")
    xbar = prof.others_totals(i)
    row = prof.x[i]
    return float(sum(expected_utility(game, i, j, row[j], xbar[j]) for j in range(game.m)))


def row_utility(game: GameSpec, i: int, row, xbar) -> float:
    """V_i for own investments ``row`` against opponents' totals ``xbar``."""
    return float(sum(expected_utility(game, i, j, float(row[j]), float(xbar[j])) for j in range(game.m)))
