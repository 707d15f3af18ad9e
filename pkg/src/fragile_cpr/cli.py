"""Batch front end: ``fragile-cpr <command> --config game.yaml``.

A config is a YAML mapping with ``schema_version``, a ``game`` block, and
exactly one command block named after the command being run::

    schema_version: 1
    seed: 7
    out: results
    game:
      players: [{a: 1.0, k: 1.0}, {a: 1.0, k: 1.0}]
      cprs:
        - failure: {family: power, q: 2}
          return: {family: constant, c: 1}
    search:
      num_starts: 10

Exit codes: 0 success, 1 config error, 2 numeric failure, 3 check failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .dynamics import DynamicsConfig, Schedule, fmt, run, write_trajectory_csv
from .equilibrium import (
    CostGuardError,
    antichain_check,
    classify_types,
    count_bound_check,
    find_gne,
    random_starts,
    write_gne_csv,
)
from .model import GameError, GameSpec, ProfileError, StrategyProfile, build_game, validate_assumptions
from .solver import Kind, SolverConfig, SolverError, best_response

SCHEMA_VERSION = 1
COMMANDS = ("solve", "dynamics", "search", "sweep", "validate")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3

_DYN_KEYS = {"schedule", "conv_tol", "max_rounds", "damping"}
_SEARCH_KEYS = {"num_starts", "dedup_eps", "gap_tol", "kkt_tol", "workers", "dynamics"}
_BLOCK_KEYS = {
    "solve": {"profile"},
    "dynamics": _DYN_KEYS | {"start"},
    "search": _SEARCH_KEYS,
    "sweep": {"path", "values", "search"},
    "validate": {"samples", "domain"},
}
_TOP_KEYS = {"schema_version", "game", "seed", "out", "solver"} | set(COMMANDS)


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# config loading


def _line_of(root: Optional[yaml.Node], path: tuple) -> Optional[int]:
    """1-based source line of the deepest node reachable along ``path``."""
    node, line = root, None
    for key in path:
        if node is None:
            break
        line = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            node = next((v for k, v in node.value if k.value == str(key)), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            node = None
    if node is not None:
        line = node.start_mark.line + 1
    return line


@dataclass
class ExperimentConfig:
    command: str
    game: GameSpec
    block: dict
    seed: int
    out: Path
    solver: SolverConfig
    raw: dict
    source: str = "<config>"


class _Loader:
    """Carries the composed node tree so field errors can cite a line."""

    def __init__(self, text: str, source: str):
        self.source = source
        try:
            self.root = yaml.compose(text, Loader=yaml.SafeLoader)
            self.data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            where = f"{source}:{mark.line + 1}" if mark else source
            raise ConfigError(f"{where}: YAML parse error: {getattr(e, 'problem', e)}") from None

    def fail(self, path: tuple, msg: str):
        line = _line_of(self.root, path)
        dotted = ".".join(str(p) for p in path) or "<root>"
        where = f"{self.source}:{line}" if line else self.source
        raise ConfigError(f"{where}: {dotted}: {msg}")

    def mapping(self, path: tuple, value, allowed: set) -> dict:
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.fail(path, "expected a mapping")
        for k in value:
            if k not in allowed:
                self.fail(path + (k,), f"unknown field; allowed: {sorted(allowed)}")
        return value

    def number(self, path: tuple, value, kind=float, positive=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"expected a number, got {value!r}")
        if kind is int and int(value) != value:
            self.fail(path, f"expected an integer, got {value!r}")
        if positive and not value > 0:
            self.fail(path, f"must be > 0, got {value!r}")
        return kind(value)


def _get_path(d: Any, path: list):
    for key in path:
        if isinstance(d, list):
            d = d[int(key)]
        elif isinstance(d, dict):
            d = d[key]
        else:
            raise KeyError(key)
    return d


def _set_path(d: Any, path: list, value) -> None:
    for key in path[:-1]:
        d = d[int(key)] if isinstance(d, list) else d[key]
    last = path[-1]
    if isinstance(d, list):
        d[int(last)] = value
    else:
        d[last] = value


def _build_game(ld: _Loader, gdata) -> GameSpec:
    g = ld.mapping(("game",), gdata, {"players", "cprs"})
    for key in ("players", "cprs"):
        if not isinstance(g.get(key), list):
            ld.fail(("game", key), "expected a list")
    try:
        return build_game(g["players"], g["cprs"])
    except GameError as e:
        msg = str(e)
        head = msg.split(":", 1)[0]
        path: tuple = ("game",)
        if "[" in head and head.endswith("]"):
            name, idx = head[:-1].split("[")
            path = ("game", name, int(idx))
        ld.fail(path, msg)


def _profile(ld: _Loader, path: tuple, value, game: GameSpec) -> StrategyProfile:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        ld.fail(path, "expected an n x m matrix of numbers")
    if arr.shape != (game.n, game.m):
        ld.fail(path, f"expected shape ({game.n}, {game.m}), got {arr.shape}")
    try:
        return StrategyProfile(arr)
    except ProfileError as e:
        ld.fail(path, str(e))


def _dyn_cfg(ld: _Loader, path: tuple, block: dict, solver: SolverConfig) -> DynamicsConfig:
    kw: dict[str, Any] = {"solver": solver}
    if "schedule" in block:
        try:
            kw["schedule"] = Schedule(block["schedule"])
        except ValueError:
            ld.fail(path + ("schedule",), f"expected one of {[s.value for s in Schedule]}")
    for key, kind in (("conv_tol", float), ("max_rounds", int), ("damping", float)):
        if key in block:
            kw[key] = ld.number(path + (key,), block[key], kind, positive=True)
    try:
        return DynamicsConfig(**kw)
    except ValueError as e:
        ld.fail(path, str(e))


def _solver_cfg(ld: _Loader, value) -> SolverConfig:
    block = ld.mapping(("solver",), value, {"root_tol", "max_bisect_iters", "sum_tol"})
    kw = {}
    for key in block:
        kind = int if key == "max_bisect_iters" else float
        kw[key] = ld.number(("solver", key), block[key], kind, positive=True)
    return SolverConfig(**kw)


def _check_search_block(ld: _Loader, path: tuple, block, solver: SolverConfig) -> dict:
    block = ld.mapping(path, block, _SEARCH_KEYS)
    for key, kind in (("num_starts", int), ("dedup_eps", float), ("gap_tol", float), ("kkt_tol", float), ("workers", int)):
        if key in block:
            ld.number(path + (key,), block[key], kind, positive=True)
    _dyn_cfg(ld, path + ("dynamics",), ld.mapping(path + ("dynamics",), block.get("dynamics"), _DYN_KEYS), solver)
    return block


def load_config(path, command: str, seed: Optional[int] = None, out: Optional[str] = None) -> ExperimentConfig:
    """Parse and validate a config file for ``command``; raises :class:`ConfigError`."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config: {e.strerror}") from None
    ld = _Loader(text, str(path))
    data = ld.data
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    ld.mapping((), data, _TOP_KEYS)
    if data.get("schema_version") != SCHEMA_VERSION:
        ld.fail(("schema_version",), f"expected {SCHEMA_VERSION}, got {data.get('schema_version')!r}")
    blocks = [c for c in COMMANDS if c in data]
    if len(blocks) != 1:
        raise ConfigError(f"{path}: need exactly one command block, found {blocks or 'none'}")
    if blocks[0] != command:
        ld.fail((blocks[0],), f"config is for {blocks[0]!r}, not {command!r}")
    if "game" not in data:
        ld.fail(("game",), "missing")
    game = _build_game(ld, data["game"])
    solver = _solver_cfg(ld, data.get("solver"))

    bpath = (command,)
    block = ld.mapping(bpath, data[command], _BLOCK_KEYS[command])
    if command == "solve":
        if "profile" in block:
            _profile(ld, bpath + ("profile",), block["profile"], game)
    elif command == "dynamics":
        _dyn_cfg(ld, bpath, block, solver)
        start = block.get("start", "zero")
        if start not in ("zero", "random"):
            _profile(ld, bpath + ("start",), start, game)
    elif command == "search":
        _check_search_block(ld, bpath, block, solver)
    elif command == "sweep":
        if not isinstance(block.get("path"), str):
            ld.fail(bpath + ("path",), "expected a dotted parameter path such as 'players.0.a'")
        keys = block["path"].split(".")
        try:
            _get_path(data["game"], keys)
        except (KeyError, IndexError, ValueError, TypeError):
            ld.fail(bpath + ("path",), f"parameter path {block['path']!r} does not exist in game")
        values = block.get("values")
        if not isinstance(values, list) or not values:
            ld.fail(bpath + ("values",), "expected a non-empty list")
        for idx, v in enumerate(values):
            gdata = copy.deepcopy(data["game"])
            _set_path(gdata, keys, v)
            try:
                build_game(gdata["players"], gdata["cprs"])
            except GameError as e:
                ld.fail(bpath + ("values", idx), str(e))
        _check_search_block(ld, bpath + ("search",), block.get("search"), solver)
    elif command == "validate":
        if "samples" in block:
            s = ld.number(bpath + ("samples",), block["samples"], int)
            if s < 3:
                ld.fail(bpath + ("samples",), "need samples >= 3")
        if block.get("domain", "unit") not in ("unit", "below_omega"):
            ld.fail(bpath + ("domain",), "expected 'unit' or 'below_omega'")

    if seed is None:
        seed = ld.number(("seed",), data["seed"], int) if "seed" in data else 0
    if out is None:
        out = str(data.get("out", "out"))
    return ExperimentConfig(command, game, block, int(seed), Path(out), solver, data, str(path))


# ---------------------------------------------------------------------------
# commands


@dataclass
class Outcome:
    summary: dict
    lines: list[str]
    checks_ok: bool = True


def _vec(v) -> list[float]:
    return [float(x) for x in v]


def _scalar(v) -> str:
    return fmt(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else str(v)


def _show(v) -> str:
    return "[" + ", ".join(format(float(x), ".6g") for x in v) + "]"


def cmd_solve(cfg: ExperimentConfig) -> Outcome:
    game = cfg.game
    prof = StrategyProfile(cfg.block["profile"]) if "profile" in cfg.block else StrategyProfile(np.zeros((game.n, game.m)))
    header = ["player", "type", "kappa0"] + [f"x_{j}" for j in range(game.m)]
    header += [f"residual_{j}" for j in range(game.m)] + ["effective_set"]
    rows, lines, recs = [], [], []
    for i in range(game.n):
        br = best_response(game, i, prof.others_totals(i), cfg.solver)
        eff = sorted(br.effective_set)
        rows.append(
            [i, str(br.kind), fmt(br.kappa0)]
            + [fmt(v) for v in br.values]
            + [fmt(r) for r in br.residuals]
            + [" ".join(map(str, eff))]
        )
        lines.append(f"player {i}, {br.kind}, {_show(br.values)}, kappa0={br.kappa0:.6g}")
        recs.append(
            {
                "player": i,
                "type": str(br.kind),
                "values": _vec(br.values),
                "kappa0": float(br.kappa0),
                "effective_set": eff,
                "max_residual": float(np.max(np.abs(br.residuals))),
            }
        )
    with open(cfg.out / "best_response.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return Outcome({"command": "solve", "responses": recs}, lines)


def cmd_dynamics(cfg: ExperimentConfig) -> Outcome:
    game = cfg.game
    dcfg = _dyn_cfg(_NullLoader(), (), cfg.block, cfg.solver)
    start = cfg.block.get("start", "zero")
    if start == "zero":
        prof = StrategyProfile(np.zeros((game.n, game.m)))
    elif start == "random":
        prof = random_starts(game, 1, cfg.seed)[1]
    else:
        prof = StrategyProfile(start)
    traj = run(game, prof, dcfg)
    write_trajectory_csv(traj, cfg.out / "trajectory.csv")
    cls = classify_types(game, traj.final, cfg.solver)
    types = [str(t) for t in cls.types]
    summary = {
        "command": "dynamics",
        "status": str(traj.status),
        "rounds": traj.rounds,
        "final_gap": float(traj.final_gap),
        "endpoint": traj.final.x.tolist(),
        "types": types,
    }
    line = (
        f"{traj.status}, rounds={traj.rounds}, final_gap={traj.final_gap:.3g}, "
        f"endpoint {[_show(r) for r in traj.final.x]}, types {types}"
    )
    return Outcome(summary, [line])


def _search_checks(game: GameSpec, gset, classes, dedup_eps: float) -> tuple[dict, bool]:
    n, m = game.n, game.m
    ok = True
    checks: dict[str, Any] = {"points": len(gset)}

    exist = len(gset) >= 1
    checks["nonempty"] = {"holds": exist}
    ok &= exist

    if m == 1:
        unique = len(gset) == 1
        checks["uniqueness_m1"] = {"applies": True, "holds": unique}
        ok &= unique
    else:
        checks["uniqueness_m1"] = {"applies": False, "holds": None}

    ac = antichain_check(gset)
    premise = n >= m
    checks["antichain"] = {
        "premise": "premise n>=m" if premise else "premise not met (n < m)",
        "holds": ac.holds,
        "witness": list(ac.witness) if ac.witness else None,
    }
    if premise:
        ok &= ac.holds

    hist = Counter()
    for c in classes:
        hist.update("I" if t is Kind.TYPE_I else "II" for t in c.types)
    checks["type_histogram"] = {"I": hist["I"], "II": hist["II"]}

    if premise:
        ti = all(len(c.type_I) > 0 for c in classes)
        checks["type_I_nonempty"] = {"applies": True, "holds": ti}
        ok &= ti
        all_I = bool(classes) and all(len(c.type_II) == 0 for c in classes)
        uniq = (not all_I) or len(gset) == 1
        checks["type_I_uniqueness"] = {"applies": all_I, "holds": uniq}
        ok &= uniq
    else:
        checks["type_I_nonempty"] = {"applies": False, "holds": None}
        checks["type_I_uniqueness"] = {"applies": False, "holds": None}

    cb = count_bound_check(gset, n, m, dedup_eps)
    checks["count_bound"] = {"holds": cb.holds, "largest_group": cb.largest_group, "bound": cb.bound}
    ok &= cb.holds
    return checks, bool(ok)


def _run_search(game: GameSpec, block: dict, seed: int, solver: SolverConfig):
    dcfg = _dyn_cfg(_NullLoader(), (), block.get("dynamics") or {}, solver)
    eps = float(block.get("dedup_eps", 1e-6))
    gset = find_gne(
        game,
        num_starts=int(block.get("num_starts", 10)),
        seed=seed,
        dyn_cfg=dcfg,
        dedup_eps=eps,
        gap_tol=float(block.get("gap_tol", 1e-6)),
        kkt_tol=float(block.get("kkt_tol", 1e-6)),
        workers=block.get("workers"),
    )
    return gset, eps


def _check_lines(checks: dict) -> list[str]:
    out = [f"points: {checks['points']}"]
    for key in ("nonempty", "uniqueness_m1", "antichain", "type_I_nonempty", "type_I_uniqueness", "count_bound"):
        c = checks[key]
        if c.get("applies") is False:
            out.append(f"{key}: n/a")
            continue
        verdict = "pass" if c["holds"] else "FAIL"
        extra = f" ({c['premise']})" if "premise" in c else ""
        if key == "count_bound":
            extra = f" (largest group {c['largest_group']} <= {c['bound']})"
        out.append(f"{key}: {verdict}{extra}")
    h = checks["type_histogram"]
    out.append(f"type histogram: I={h['I']} II={h['II']}")
    return out


def cmd_search(cfg: ExperimentConfig) -> Outcome:
    gset, eps = _run_search(cfg.game, cfg.block, cfg.seed, cfg.solver)
    classes = write_gne_csv(cfg.game, gset, cfg.out / "gne.csv", cfg.solver)
    checks, ok = _search_checks(cfg.game, gset, classes, eps)
    statuses = Counter(str(s) for s, _ in gset.runs)
    summary = {
        "command": "search",
        "seed": cfg.seed,
        "runs": dict(sorted(statuses.items())),
        "points": [p.x.tolist() for p in gset.points],
        "totals": [_vec(v) for v in gset.totals],
        "checks": checks,
    }
    return Outcome(summary, _check_lines(checks), ok)


def cmd_sweep(cfg: ExperimentConfig) -> Outcome:
    keys = cfg.block["path"].split(".")
    block = cfg.block.get("search") or {}
    m = cfg.game.m
    overview = ["step", "value", "points", "type_I", "type_II", "antichain", "count_bound", "checks"]
    detail = ["step", "value", "id", "player", "type", "kappa0"]
    detail += [f"x_{j}" for j in range(m)] + [f"total_{j}" for j in range(m)]
    over_rows, detail_rows, steps, lines = [], [], [], []
    all_ok = True
    for step_id, value in enumerate(cfg.block["values"]):
        gdata = copy.deepcopy(cfg.raw["game"])
        _set_path(gdata, keys, value)
        game = build_game(gdata["players"], gdata["cprs"])
        gset, eps = _run_search(game, block, cfg.seed, cfg.solver)
        classes = [classify_types(game, p, cfg.solver) for p in gset.points]
        checks, ok = _search_checks(game, gset, classes, eps)
        all_ok &= ok
        h = checks["type_histogram"]
        over_rows.append(
            [step_id, _scalar(value), len(gset), h["I"], h["II"], checks["antichain"]["holds"], checks["count_bound"]["holds"],
             "pass" if ok else "FAIL"]
        )
        for pid, (p, c) in enumerate(zip(gset.points, classes)):
            tot = [fmt(v) for v in p.totals]
            for i in range(game.n):
                detail_rows.append(
                    [step_id, _scalar(value), pid, i, str(c.types[i]), fmt(c.kappa0[i])] + [fmt(v) for v in p.x[i]] + tot
                )
        steps.append({"value": value, "points": len(gset), "checks": checks})
        lines.append(f"{cfg.block['path']}={_scalar(value)}: {len(gset)} point(s), I={h['I']} II={h['II']}, checks {'pass' if ok else 'FAIL'}")
    for name, header, rows in (("sweep.csv", overview, over_rows), ("sweep_points.csv", detail, detail_rows)):
        with open(cfg.out / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    return Outcome({"command": "sweep", "path": cfg.block["path"], "seed": cfg.seed, "steps": steps}, lines, all_ok)


def cmd_validate(cfg: ExperimentConfig) -> Outcome:
    rep = validate_assumptions(
        cfg.game, samples=int(cfg.block.get("samples", 1000)), domain=cfg.block.get("domain", "unit")
    )
    with open(cfg.out / "violations.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["player", "cpr", "t", "condition"])
        for v in rep.violations:
            w.writerow([v.player, v.cpr, fmt(v.t), v.condition])
    failed = sorted(rep.conditions_failed())
    summary = {
        "command": "validate",
        "passed": rep.passed,
        "violations": len(rep.violations),
        "conditions_failed": failed,
        "samples": rep.samples,
        "domain": rep.domain,
        "note": rep.note,
    }
    line = "passed" if rep.passed else f"FAILED: {len(rep.violations)} violation(s) of {', '.join(failed)}"
    return Outcome(summary, [line, rep.note], rep.passed)


class _NullLoader(_Loader):
    """Config already validated; any failure here is a bug."""

    def __init__(self):
        self.root, self.source = None, "<validated>"


_HANDLERS = {
    "solve": cmd_solve,
    "dynamics": cmd_dynamics,
    "search": cmd_search,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fragile-cpr", description="Fragile multi-CPR game experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="YAML experiment file")
    p.add_argument("--out", help="output directory (overrides config 'out')")
    p.add_argument("--seed", type=int, help="seed (overrides config 'seed')")
    p.add_argument("--quiet", action="store_true", help="suppress stdout; files are still written")
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.command, seed=args.seed, out=args.out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    cfg.out.mkdir(parents=True, exist_ok=True)
    try:
        outcome = _HANDLERS[args.command](cfg)
    except (SolverError, CostGuardError) as e:
        print(f"numeric failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    outcome.summary["game"] = cfg.game.to_dict()
    outcome.summary["checks_passed"] = outcome.checks_ok
    with open(cfg.out / "summary.json", "w") as fh:
        json.dump(outcome.summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if not args.quiet:
        for line in outcome.lines:
            print(line)
        print(f"wrote {cfg.out}/")
    if not outcome.checks_ok:
        print(f"check failure: see {cfg.out / 'summary.json'}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
