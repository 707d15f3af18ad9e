import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fragile_cpr import (
    GameError,
    StrategyProfile,
    build_game,
    effective_rate,
    effective_rate_deriv,
    utility,
    validate_assumptions,
)
from fragile_cpr.model import ConstantReturn, CprSpec, ExpReturn, PowerFailure, ProfileError

from _games import SINGLE11, SYM21, cpr, random_valid_game


# --- construction ----------------------------------------------------------


def test_smallest_game():
    g = build_game([(1, 1)], [cpr()])
    assert (g.n, g.m) == (1, 1)


@pytest.mark.parametrize(
    "players, cprs, needle",
    [
        ([(0, 1)], [cpr()], "a out of range"),
        ([(1.2, 1)], [cpr()], "a out of range"),
        ([(1, 0)], [cpr()], "k out of range"),
        ([(1, 1)], [cpr(q=0.5)], "q out of range"),
        ([(1, 1)], [cpr(c=0.0)], "c out of range"),
        ([], [cpr()], "players"),
        ([(1, 1)], [], "cprs"),
        ([{"a": 1}], [cpr()], "missing field 'k'"),
        ([(1, 1)], [{"failure": {"family": "power", "q": 2}}], "missing field 'return'"),
        ([(1, 1)], [{"failure": {"family": "linear"}, "return": {"family": "exp"}}], "unknown failure family"),
    ],
)
def test_build_game_rejects(players, cprs, needle):
    with pytest.raises(GameError, match=needle):
        build_game(players, cprs)


def test_field_level_diagnostic_names_the_player():
    with pytest.raises(GameError, match=r"players\[1\]: a out of range"):
        build_game([(1, 1), (0, 1)], [cpr()])


def test_exp_return_game_builds():
    g = build_game([(0.4, 1)], [cpr(2, exp=True)])
    assert isinstance(g.cprs[0].ret, ExpReturn)


def test_game_is_hashable_and_roundtrips():
    g = build_game([(0.5, 2)], [cpr(3, 1.5), cpr(2, exp=True)])
    assert hash(g) == hash(build_game(**g.to_dict()))
    assert build_game(**g.to_dict()) == g


def test_failure_clamped_above_one():
    p = PowerFailure(3.0)
    assert p.value(1.7) == 1.0 and p.d1(1.7) == 0.0


# --- effective rate --------------------------------------------------------


def test_effective_rate_closed_form():
    assert effective_rate(SINGLE11, 0, 0, 0.5) == pytest.approx(0.5)
    assert effective_rate(SINGLE11, 0, 0, 1.0) == pytest.approx(-1.0)
    assert effective_rate(SINGLE11, 0, 0, 0.0) == pytest.approx(1.0)


def test_effective_rate_at_one_is_minus_k():
    g = build_game([(0.3, 2.5), (1, 0.7)], [cpr(1.5, 3), cpr(2, exp=True)])
    for i in range(2):
        for j in range(2):
            assert effective_rate(g, i, j, 1.0) == pytest.approx(-g.players[i].k)
            assert effective_rate(g, i, j, 0.0) > 0


def test_index_errors():
    with pytest.raises(GameError):
        effective_rate(SINGLE11, 1, 0, 0.2)
    with pytest.raises(GameError):
        effective_rate(SINGLE11, 0, 3, 0.2)


def test_derivatives_closed_form():
    d1 = effective_rate_deriv(SINGLE11, 0, 0, 0.5, 1)
    assert d1.analytic and d1.value == pytest.approx(-2.0)
    for t in (0.1, 0.5, 0.9):
        assert effective_rate_deriv(SINGLE11, 0, 0, t, 2).value == pytest.approx(-4.0)


def test_derivative_domain():
    with pytest.raises(GameError):
        effective_rate_deriv(SINGLE11, 0, 0, 0.0)
    with pytest.raises(GameError):
        effective_rate_deriv(SINGLE11, 0, 0, 0.5, order=3)


def test_fd_path_is_flagged():
    d = effective_rate_deriv(SINGLE11, 0, 0, 0.5, 1, method="fd")
    assert not d.analytic
    assert d.value == pytest.approx(-2.0, abs=1e-6)


family = st.one_of(
    st.builds(lambda q, c: CprSpec(PowerFailure(q), ConstantReturn(c)), st.floats(1.0, 5.0), st.floats(0.1, 6.0)),
    st.builds(lambda q: CprSpec(PowerFailure(q), ExpReturn()), st.floats(1.0, 5.0)),
)
player = st.tuples(st.floats(0.05, 1.0), st.floats(0.1, 5.0))


@settings(max_examples=100, deadline=None)
@given(player, family, st.floats(0.001, 0.999))
def test_fd_matches_analytic_first_order(p, c, t):
    g = build_game([p], [c])
    exact = effective_rate_deriv(g, 0, 0, t, 1).value
    assert abs(exact - effective_rate_deriv(g, 0, 0, t, 1, method="fd").value) <= 1e-5


@settings(max_examples=100, deadline=None)
@given(player, family, st.floats(0.05, 0.95))
def test_fd_matches_analytic_second_order(p, c, t):
    # F'' ~ t**(q-2) is unbounded at 0 for 1 < q < 2, so the fixed 1e-4 stencil
    # cannot be uniformly accurate there; the band keeps it away from t = 0
    g = build_game([p], [c])
    exact = effective_rate_deriv(g, 0, 0, t, 2).value
    assert abs(exact - effective_rate_deriv(g, 0, 0, t, 2, method="fd").value) <= 1e-5


def test_fd_second_order_degrades_near_singularity():
    g = build_game([(1, 1)], [CprSpec(PowerFailure(1.125), ExpReturn())])
    t = 0.0117
    err = abs(effective_rate_deriv(g, 0, 0, t, 2).value - effective_rate_deriv(g, 0, 0, t, 2, method="fd").value)
    assert err > 1e-5


def test_effective_rate_decreasing_on_valid_games():
    rng = np.random.default_rng(11)
    ts = np.linspace(0.0, 1.0, 102)[1:-1]
    for _ in range(20):
        g = random_valid_game(rng, 2, 2)
        for i in range(g.n):
            for j in range(g.m):
                vals = [effective_rate(g, i, j, t) for t in ts]
                assert np.all(np.diff(vals) < 0)


# --- assumption validation ---------------------------------------------------


def test_validate_quadratic_passes():
    rep = validate_assumptions(SINGLE11)
    assert rep.passed and rep.violations == ()
    assert "cannot prove" in rep.note


def test_validate_linear_constant_fails_curvature():
    g = build_game([(1, 1)], [cpr(q=1.0)])
    rep = validate_assumptions(g)
    assert not rep.passed
    assert rep.conditions_failed() == {"F''<0"}


def test_validate_exp_return_small_a_fails_near_one():
    # (R - 1)**a (1 - p) carries a factor (1 - t)**(1 + a), convex at t -> 1
    rep = validate_assumptions(build_game([(0.4, 1)], [cpr(2, exp=True)]))
    assert rep.conditions_failed() == {"F''<0"}
    assert min(v.t for v in rep.violations) > 0.8


def test_validate_below_omega_domain():
    g = build_game([(0.4, 1)], [cpr(2, exp=True)])
    assert validate_assumptions(g, domain="below_omega").passed


def test_validate_sample_floor():
    with pytest.raises(GameError):
        validate_assumptions(SINGLE11, samples=2)


# --- profiles and utility --------------------------------------------------


def test_profile_invariants():
    with pytest.raises(ProfileError):
        StrategyProfile([[0.6, 0.6]])
    with pytest.raises(ProfileError):
        StrategyProfile([[-0.1]])
    p = StrategyProfile([[0.2, 0.3], [0.1, 0.0]])
    assert p.totals.tolist() == pytest.approx([0.3, 0.3])
    assert p.others_totals(0).tolist() == pytest.approx([0.1, 0.0])
    with pytest.raises(ValueError):
        p.x[0, 0] = 0.5


def test_utility_examples():
    assert utility(SINGLE11, [[0.5]], 0) == pytest.approx(0.25)
    assert utility(SYM21, [[0.25], [0.25]], 0) == pytest.approx(0.125)
    assert utility(SYM21, [[0.25], [0.25]], 1) == pytest.approx(0.125)
    g = build_game([(0.3, 2)], [cpr(), cpr(3, exp=True)])
    assert utility(g, [[0.0, 0.0]], 0) == 0.0


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(0.0, 1.0), min_size=6, max_size=6),
    st.integers(0, 2),
    st.integers(0, 1),
)
def test_utility_additive_across_cprs(raw, j, i):
    g = build_game([(0.6, 1.3), (1.0, 0.8)], [cpr(2, 1.0), cpr(3, 2.0), cpr(2.5, exp=True)])
    x = np.array(raw).reshape(2, 3)
    x = x / max(1.0, x.sum(axis=1).max())
    full = utility(g, x, i)
    cut = x.copy()
    cut[:, j] = 0.0
    xj, xbar = x[i, j], x[:, j].sum() - x[i, j]
    e_ij = 0.0 if xj == 0 else xj ** g.players[i].a * effective_rate(g, i, j, xj + xbar)
    assert utility(g, cut, i) == pytest.approx(full - e_ij, abs=1e-12)


def test_zero_times_f_is_zero_even_for_small_a():
    g = build_game([(0.1, 1)], [cpr()])
    assert utility(g, [[0.0]], 0) == 0.0
    assert math.isclose(utility(g, [[1e-300]], 0), 1e-30, rel_tol=1e-6)
