import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ionet import problems as P
from ionet import solvers as S
from ionet.fields import ConstantChannel, FixedChannel
from ionet.geometry import IntervalGeometry
from ionet.losses import ProblemSpec

GEOM = IntervalGeometry()


def _piecewise_constant(a1, a2, n_geom=GEOM):
    return ProblemSpec(n_geom, ConstantChannel([[a1, a2]]), jump_value=FixedChannel.constant(1.0),
                       jump_flux=FixedChannel.constant(0.0),
                       boundary=FixedChannel.constant({1: 1.0, 2: 0.0}))


def manufactured_problem():
    """a = 1 + x^2, u1 = exp(x), u2 = cos(x); data chosen so these solve the interface problem."""
    a = lambda x: 1 + x ** 2
    u = {1: (np.exp, np.exp, np.exp), 2: (np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x))}
    f = {r: (lambda p, r=r: -(2 * p[:, 0] * u[r][1](p[:, 0]) + a(p[:, 0]) * u[r][2](p[:, 0])))
         for r in (1, 2)}
    xg = 0.5
    return ProblemSpec(
        GEOM, FixedChannel({None: lambda p: a(p[:, 0])}), source=FixedChannel(f),
        jump_value=FixedChannel.constant(np.cos(xg) - np.exp(xg)),
        jump_flux=FixedChannel.constant(a(xg) * (-np.sin(xg) - np.exp(xg))),
        boundary=FixedChannel.constant({1: 1.0, 2: np.cos(1.0)})), u


def _error(n):
    problem, u = manufactured_problem()
    sol = S.solve_interface_1d(problem, n)
    exact = np.where(sol.side == 1, np.exp(sol.x), np.cos(sol.x))
    return np.max(np.abs(sol.u - exact))


def test_constant_coefficient_closed_form():
    sol = S.solve_interface_1d(_piecewise_constant(1.0, 1.0), 1000)
    exact = np.where(sol.side == 1, 1 - 2 * sol.x, 2 - 2 * sol.x)
    assert np.max(np.abs(sol.u - exact)) < 1e-10


def test_piecewise_constant_closed_form():
    a1, a2 = 1.0, 2.0
    c = -4 * a1 * a2 / (a1 + a2)
    sol = S.solve_interface_1d(_piecewise_constant(a1, a2), 100)
    exact = np.where(sol.side == 1, 1 + c / a1 * sol.x, c / a2 * (sol.x - 1))
    assert np.max(np.abs(sol.u - exact)) < 1e-10


def test_observed_order():
    e = [_error(n) for n in (250, 500, 1000)]
    orders = np.log2(np.array(e[:-1]) / np.array(e[1:]))
    assert np.all(orders >= 1.9)


def test_jumps_stored_at_interface():
    problem, _ = manufactured_problem()
    sol = S.solve_interface_1d(problem, 200)
    assert sol.jumps()[0] == pytest.approx(np.cos(0.5) - np.exp(0.5), abs=1e-12)
    assert len(sol.grid_values()) == 201


def test_small_grid_and_misaligned_interface():
    with pytest.raises(S.ConfigError):
        S.solve_interface_1d(_piecewise_constant(1, 1), 2)
    with pytest.raises(S.ConfigError):
        S.solve_interface_1d(_piecewise_constant(1, 1, IntervalGeometry(interfaces=(0.3333,))), 10)


def test_non_interval_rejected():
    geom, fs, _ = P.build_functions("ex3", 1, split="test")
    with pytest.raises(S.ConfigError):
        S.solve_interface_1d(P.build_problem("ex3", geom, fs), 100)


def test_csv_round_trip(tmp_path):
    sol = S.solve_interface_1d(_piecewise_constant(1.0, 3.0), 50)
    sol.to_csv(tmp_path / "ref.csv")
    back = S.ReferenceSolution.from_csv(tmp_path / "ref.csv")
    assert back.meta["hash"] == sol.meta["hash"]
    assert np.array_equal(back.u, sol.u) and np.array_equal(back.side, sol.side)


def test_example1_solver_verification():
    report = S.verify_example1_solver(n=1000, count=4)
    assert report["max_flux_variation"] < 5e-5
    assert report["max_jump_residual"] < 1e-10


def test_constant_coefficient_flux_is_constant():
    problem = _piecewise_constant(1.0, 1.0)
    fluxes = S.discrete_fluxes(problem, S.solve_interface_1d(problem, 100))
    for f in fluxes.values():
        assert np.ptp(f) < 1e-12


def test_exact_solution_values():
    assert S.exact_solution("ex3", [0.0, 0.0]) == 1.0
    assert S.exact_solution("ex6", np.zeros(6)) == 1.0
    with pytest.raises(ValueError):
        S.exact_solution("ex2", [0.1])


def test_ex3_jump_equals_gd():
    geom = P.make_geometry_for("ex3")
    pts = geom.interface_points(50, 0).points
    jump = S.exact_solution("ex3", pts, region=2) - S.exact_solution("ex3", pts, region=1)
    np.testing.assert_allclose(jump, 1 / (1 + 10 * np.sum(pts ** 2, axis=1)), rtol=1e-14)


def test_relative_l2_examples():
    ref = np.array([1.0, -2.0, 3.0])
    assert S.relative_l2(ref, ref) == 0.0
    assert S.relative_l2(1.1 * ref, ref) == pytest.approx(0.1)
    with pytest.raises(S.MetricError):
        S.relative_l2(ref, np.zeros(3))


def test_monte_carlo_self_consistency():
    geom = P.make_geometry_for("ex6")
    ref = lambda p: S.exact_solution("ex6", p, geometry=geom)
    pred = lambda p: 1.02 * ref(p) + 0.01 * np.sin(3 * p[:, 0])
    est = []
    for n in (10_000, 100_000):
        p = S.monte_carlo_points(geom, n, seed=1)
        p = p[geom.classify_many(p) > 0]
        est.append(S.relative_l2(pred(p), ref(p)))
    assert abs(est[0] - est[1]) / est[1] < 0.02


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0), st.booleans())
def test_relative_l2_scale_covariant(seed, c, flip):
    rng = np.random.default_rng(seed)
    ref, pred = rng.standard_normal(20) + 0.1, rng.standard_normal(20)
    c = -c if flip else c
    assert S.relative_l2(c * pred, c * ref) == pytest.approx(S.relative_l2(pred, ref), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(0.2, 5), st.floats(0.2, 5))
def test_piecewise_linear_solutions_are_exact(s1, c1, gd, a1, a2):
    # u1 = s1 x + c1, u2 determined by the jump conditions with zero flux jump
    s2 = a1 * s1 / a2
    c2 = s1 * 0.5 + c1 + gd - s2 * 0.5
    problem = ProblemSpec(GEOM, ConstantChannel([[a1, a2]]), jump_value=FixedChannel.constant(gd),
                          jump_flux=FixedChannel.constant(0.0),
                          boundary=FixedChannel.constant({1: c1, 2: s2 + c2}))
    sol = S.solve_interface_1d(problem, 40)
    exact = np.where(sol.side == 1, s1 * sol.x + c1, s2 * sol.x + c2)
    assert np.max(np.abs(sol.u - exact)) < 1e-10 * (1 + np.max(np.abs(exact)))
