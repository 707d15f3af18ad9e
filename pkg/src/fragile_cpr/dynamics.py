"""Round-based best-response dynamics."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import GameSpec, StrategyProfile, as_profile
from .solver import DEFAULT, SolverConfig, best_response


class Schedule(str, enum.Enum):
    SEQUENTIAL = "sequential"
    SIMULTANEOUS = "simultaneous"


class Status(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ROUNDS = "max_rounds_reached"
    CYCLE = "cycle_detected"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class DynamicsConfig:
    schedule: Schedule = Schedule.SEQUENTIAL
    conv_tol: float = 1e-8
    max_rounds: int = 10000
    damping: float = 1.0
    solver: SolverConfig = field(default=DEFAULT)

    def __post_init__(self):
        object.__setattr__(self, "schedule", Schedule(self.schedule))
        if not self.conv_tol > 0:
            raise ValueError(f"conv_tol must be > 0, got {self.conv_tol!r}")
        if self.max_rounds < 1:
            raise ValueError(f"max_rounds must be >= 1, got {self.max_rounds!r}")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping!r}")


@dataclass
class Trajectory:
    """Profiles visited, starting with the initial one.

    ``rounds`` counts updating rounds: on convergence the confirming round,
    which changed nothing, is not counted, so a start at a fixed point
    reports 0 rounds.
    """

    profiles: list[StrategyProfile]
    status: Status
    rounds: int
    final_gap: float

    @property
    def final(self) -> StrategyProfile:
        return self.profiles[-1]

    def to_csv(self, path) -> None:
        write_trajectory_csv(self, path)


def step(game: GameSpec, profile, cfg: DynamicsConfig = DynamicsConfig()) -> StrategyProfile:
    """One round of best responses.

    Sequential rounds update players in index order against the freshest
    opponents; simultaneous rounds respond to the round-start profile.
    """
    prof = as_profile(profile)
    x = prof.x.copy()
    lam = cfg.damping
    if cfg.schedule is Schedule.SEQUENTIAL:
        totals = x.sum(axis=0)
        for i in range(game.n):
            b = best_response(game, i, totals - x[i], cfg.solver).values
            new = b if lam == 1.0 else (1.0 - lam) * x[i] + lam * b
            totals = totals - x[i] + new
            x[i] = new
    else:
        totals = prof.totals
        rows = [best_response(game, i, totals - prof.x[i], cfg.solver).values for i in range(game.n)]
        for i, b in enumerate(rows):
            x[i] = b if lam == 1.0 else (1.0 - lam) * x[i] + lam * b
    return StrategyProfile(x)


def _gap(a: StrategyProfile, b: StrategyProfile) -> float:
    return float(np.max(np.abs(a.x - b.x)))


def run(game: GameSpec, start, cfg: DynamicsConfig = DynamicsConfig()) -> Trajectory:
    """Iterate :func:`step` until the round-to-round max-norm change is at most ``conv_tol``.

    A 2-cycle is reported when round ``t`` returns within ``conv_tol`` of round
    ``t-2`` while the change from round ``t-1`` is both above ``conv_tol`` and
    not shrinking; damped oscillations that are still converging keep running.
    """
    profiles = [as_profile(start)]
    gaps: list[float] = []
    tol = cfg.conv_tol
    for t in range(1, cfg.max_rounds + 1):
        nxt = step(game, profiles[-1], cfg)
        profiles.append(nxt)
        gap = _gap(nxt, profiles[-2])
        gaps.append(gap)
        if gap <= tol:
            return Trajectory(profiles, Status.CONVERGED, t - 1, gap)
        if t >= 3 and _gap(nxt, profiles[-3]) <= tol and gap >= (1.0 - 1e-3) * gaps[-2]:
            return Trajectory(profiles, Status.CYCLE, t, gap)
    return Trajectory(profiles, Status.MAX_ROUNDS, cfg.max_rounds, gaps[-1])


def trajectory_header(n: int, m: int) -> list[str]:
    return ["round"] + [f"x_{i}_{j}" for i in range(n) for j in range(m)] + ["gap"]


def fmt(v: float) -> str:
    """17 significant digits: lossless float round trip."""
    return format(float(v), ".17g")


def write_trajectory_csv(traj: Trajectory, path) -> None:
    n, m = traj.profiles[0].x.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trajectory_header(n, m))
        prev: Optional[StrategyProfile] = None
        for r, prof in enumerate(traj.profiles):
            gap = _gap(prof, prev) if prev is not None else 0.0
            w.writerow([r] + [fmt(v) for v in prof.x.ravel()] + [fmt(gap)])
            prev = prof


def read_trajectory_csv(path) -> list[StrategyProfile]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cells = [c for c in header if c.startswith("x_")]
    n = 1 + max(int(c.split("_")[1]) for c in cells)
    m = len(cells) // n
    return [StrategyProfile(np.array([float(v) for v in r[1 : 1 + n * m]]).reshape(n, m)) for r in body]
