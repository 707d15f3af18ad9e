import json
import subprocess
import sys
import textwrap

import numpy as np
import pytest

import fragile_cpr.cli as cli
from fragile_cpr.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from fragile_cpr.dynamics import read_trajectory_csv
from fragile_cpr.equilibrium import AntichainResult, read_gne_csv
from fragile_cpr.solver import SolverError

QUAD = "{failure: {family: power, q: 2}, return: {family: constant, c: 1}}"
C8 = "{failure: {family: power, q: 2}, return: {family: constant, c: 8}}"


def write(tmp_path, body: str, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(body))
    return p


def invoke(tmp_path, command, body, *extra, out="out"):
    cfg = write(tmp_path, body)
    code = main([command, "--config", str(cfg), "--out", str(tmp_path / out), *extra])
    return code, tmp_path / out


def summary(out):
    return json.loads((out / "summary.json").read_text())


# --- solve -----------------------------------------------------------------


def test_solve_type2_row(tmp_path, capsys):
    code, out = invoke(
        tmp_path,
        "solve",
        f"""
        schema_version: 1
        game:
          players: [{{a: 1, k: 1}}]
          cprs: [{C8}, {C8}]
        solve: {{}}
        """,
    )
    assert code == EXIT_OK
    assert "player 0, TypeII, [0.5, 0.5], kappa0=1.25" in capsys.readouterr().out
    rows = (out / "best_response.csv").read_text().splitlines()
    assert rows[0].startswith("player,type,kappa0,x_0,x_1,residual_0")
    assert rows[1].split(",")[:5] == ["0", "TypeII", "1.25", "0.5", "0.5"]


def test_solve_saturated_opponent_gives_zero_row(tmp_path):
    code, out = invoke(
        tmp_path,
        "solve",
        f"""
        schema_version: 1
        game:
          players: [{{a: 1, k: 1}}, {{a: 1, k: 1}}]
          cprs: [{QUAD}]
        solve:
          profile: [[0.0], [0.8]]
        """,
    )
    assert code == EXIT_OK
    assert summary(out)["responses"][0]["values"] == [0.0]


def test_bad_exponent_is_a_config_error(tmp_path, capsys):
    code, _ = invoke(
        tmp_path,
        "solve",
        f"""
        schema_version: 1
        game:
          players:
            - {{a: 1.5, k: 1}}
          cprs: [{QUAD}]
        solve: {{}}
        """,
    )
    assert code == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "cfg.yaml:5" in err and "a out of range" in err


@pytest.mark.parametrize(
    "body, needle",
    [
        ("schema_version: 2\ngame: {players: [[1, 1]], cprs: []}\nsolve: {}\n", "schema_version"),
        (f"schema_version: 1\ngame: {{players: [{{a: 1, k: 1}}], cprs: [{QUAD}]}}\n", "exactly one command block"),
        (
            f"schema_version: 1\ngame: {{players: [{{a: 1, k: 1}}], cprs: [{QUAD}]}}\nsolve: {{}}\nsearch: {{}}\n",
            "exactly one command block",
        ),
        (f"schema_version: 1\ngame: {{players: [{{a: 1, k: 1}}], cprs: [{QUAD}]}}\nsearch: {{}}\n", "not 'solve'"),
        (f"schema_version: 1\ngame: {{players: [{{a: 1, k: 1}}], cprs: [{QUAD}]}}\nsolve: {{bogus: 1}}\n", "unknown field"),
        ("schema_version: 1\ngame: [\n", "YAML parse error"),
        (
            f"schema_version: 1\ngame: {{players: [{{a: 1, k: 1}}], cprs: [{QUAD}]}}\nsolve: {{profile: [[2.0]]}}\n",
            "solve.profile",
        ),
    ],
)
def test_config_errors(tmp_path, capsys, body, needle):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(body)
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert needle in capsys.readouterr().err


def test_missing_file(tmp_path, capsys):
    assert main(["solve", "--config", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG


# --- dynamics ----------------------------------------------------------------

SYM = f"""
schema_version: 1
seed: 5
game:
  players: [{{a: 1, k: 1}}, {{a: 1, k: 1}}]
  cprs: [{QUAD}]
"""


def test_dynamics_symmetric(tmp_path, capsys):
    code, out = invoke(tmp_path, "dynamics", SYM + "dynamics: {start: random}\n")
    assert code == EXIT_OK
    s = summary(out)
    assert s["status"] == "converged" and s["rounds"] <= 200
    assert np.allclose(s["endpoint"], [[0.25], [0.25]], atol=1e-6)
    assert s["types"] == ["TypeI", "TypeI"]
    assert capsys.readouterr().out.startswith("converged, rounds=")
    profiles = read_trajectory_csv(out / "trajectory.csv")
    assert np.allclose(profiles[-1].x, 0.25, atol=1e-6)


def test_dynamics_truncated(tmp_path):
    code, out = invoke(tmp_path, "dynamics", SYM + "dynamics: {max_rounds: 1}\n")
    assert code == EXIT_OK and summary(out)["status"] == "max_rounds_reached"


def test_dynamics_start_at_equilibrium(tmp_path):
    code, out = invoke(tmp_path, "dynamics", SYM + "dynamics: {start: [[0.25], [0.25]]}\n")
    assert summary(out)["status"] == "converged" and summary(out)["rounds"] <= 1


# --- search ------------------------------------------------------------------


def test_search_single_cpr(tmp_path):
    code, out = invoke(tmp_path, "search", SYM + "search: {num_starts: 10}\n")
    assert code == EXIT_OK
    checks = summary(out)["checks"]
    assert checks["points"] == 1
    assert checks["uniqueness_m1"]["holds"] and checks["antichain"]["premise"] == "premise n>=m"
    assert checks["count_bound"]["holds"]
    (p,) = read_gne_csv(out / "gne.csv")
    assert np.allclose(p.x, 0.25, atol=1e-6)


def test_search_type2_histogram(tmp_path):
    body = f"""
    schema_version: 1
    game:
      players: [{{a: 1, k: 1}}]
      cprs: [{C8}, {C8}]
    search: {{num_starts: 5}}
    """
    code, out = invoke(tmp_path, "search", body)
    assert code == EXIT_OK
    assert summary(out)["checks"]["type_histogram"] == {"I": 0, "II": 1}


def test_search_flags_unmet_premise(tmp_path, capsys):
    body = f"""
    schema_version: 1
    game:
      players: [{{a: 1, k: 1}}, {{a: 0.7, k: 1.5}}]
      cprs: [{QUAD}, {C8}, {{failure: {{family: power, q: 3}}, return: {{family: exp}}}}]
    search: {{num_starts: 6}}
    """
    code, out = invoke(tmp_path, "search", body)
    assert summary(out)["checks"]["antichain"]["premise"] == "premise not met (n < m)"
    assert "premise not met (n < m)" in capsys.readouterr().out


def test_search_is_byte_identical(tmp_path):
    body = SYM + "search: {num_starts: 6}\n"
    invoke(tmp_path, "search", body, out="a")
    invoke(tmp_path, "search", body, "--seed", "5", out="b")
    for name in ("gne.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_flag_overrides_config(tmp_path):
    body = SYM + "search: {num_starts: 2}\n"
    invoke(tmp_path, "search", body, "--seed", "9")
    assert summary(tmp_path / "out")["seed"] == 9


def test_check_failure_exit_code(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "antichain_check", lambda s: AntichainResult(False, (0, 1)))
    code, out = invoke(tmp_path, "search", SYM + "search: {num_starts: 2}\n")
    assert code == EXIT_CHECK
    assert summary(out)["checks_passed"] is False


def test_numeric_failure_exit_code(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise SolverError("no sign change on [0, 1]")

    monkeypatch.setattr(cli, "best_response", boom)
    code, _ = invoke(tmp_path, "solve", SYM + "solve: {}\n")
    assert code == EXIT_NUMERIC
    assert "no sign change on [0, 1]" in capsys.readouterr().err


# --- sweep and validate -------------------------------------------------------


def test_sweep_rows(tmp_path):
    body = SYM + "sweep: {path: players.0.k, values: [0.5, 1.0, 2.0], search: {num_starts: 3}}\n"
    code, out = invoke(tmp_path, "sweep", body)
    assert code == EXIT_OK
    rows = (out / "sweep.csv").read_text().splitlines()
    assert rows[0] == "step,value,points,type_I,type_II,antichain,count_bound,checks"
    assert len(rows) == 4 and all(r.endswith(",pass") for r in rows[1:])
    assert len((out / "sweep_points.csv").read_text().splitlines()) == 1 + 3 * 2


def test_sweep_bad_path(tmp_path, capsys):
    body = SYM + "sweep: {path: players.3.k, values: [1.0]}\n"
    code, _ = invoke(tmp_path, "sweep", body)
    assert code == EXIT_CONFIG and "does not exist" in capsys.readouterr().err


def test_sweep_bad_value(tmp_path, capsys):
    body = SYM + "sweep: {path: players.0.a, values: [0.5, 2.0]}\n"
    code, _ = invoke(tmp_path, "sweep", body)
    assert code == EXIT_CONFIG and "sweep.values.1" in capsys.readouterr().err


def test_validate_pass_and_fail(tmp_path):
    code, out = invoke(tmp_path, "validate", SYM + "validate: {samples: 100}\n")
    assert code == EXIT_OK and summary(out)["passed"]
    lin = SYM.replace("q: 2", "q: 1")
    code, out = invoke(tmp_path, "validate", lin + "validate: {}\n", out="lin")
    assert code == EXIT_CHECK
    assert summary(out)["conditions_failed"] == ["F''<0"]


def test_emitted_rows_reparse_as_feasible(tmp_path):
    body = f"""
    schema_version: 1
    game:
      players: [{{a: 1, k: 1}}, {{a: 0.6, k: 2}}, {{a: 0.9, k: 0.8}}]
      cprs: [{QUAD}, {C8}]
    search: {{num_starts: 6}}
    """
    invoke(tmp_path, "search", body)
    for p in read_gne_csv(tmp_path / "out" / "gne.csv"):
        assert np.all(p.x >= 0) and np.all(p.x.sum(axis=1) <= 1 + 1e-9)


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, SYM + "validate: {samples: 50}\n")
    proc = subprocess.run(
        [sys.executable, "-m", "fragile_cpr", "validate", "--config", str(cfg), "--out", str(tmp_path / "m"), "--quiet"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0 and proc.stdout == ""
