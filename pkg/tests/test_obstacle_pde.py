import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import DEEP_OBSTACLE, X_SQUARED
from src.errors import BlowUpError, GridMismatchError, InvalidArgumentError, InvalidSpecError, UnsupportedDimensionError
from src.model.averaged_driver import build_averaged_driver
from src.model.coefficients import AVERAGED, ProblemSpec
from src.model.g_function import CovarianceSet
from src.solvers.obstacle_pde import solve_obstacle_pde, stable_time_steps, sup_norm_diff
from src.solvers.utils_solvers import Grid1D, NormWindow, regularity_moduli

QUARTIC = [{"weight": 1.0, "spatial": {"kind": "monomial", "degree": 4}}]
BASIC = {"sigma": [{"weight": 1.0}], "f": [{"weight": -2.0}], "phi": X_SQUARED, "S": [{"weight": 0.0}]}


@pytest.fixture
def basic_obstacle(spec_factory):
    return spec_factory(L=2.0, **BASIC)


@pytest.fixture
def sigma_quarter():
    return CovarianceSet.interval(0.25, 1.0)


def test_g_heat_closed_form(g_heat_spec, sigma_14):
    grid = Grid1D(-8.0, 8.0, 401, 1.0)
    solution = solve_obstacle_pde(g_heat_spec, sigma_14, grid)
    assert solution.at_time_zero(0.0) == pytest.approx(4.0, abs=0.04)
    np.testing.assert_array_equal(solution.values[-1], grid.x**2)


def test_deep_obstacle_is_a_no_op(g_heat_spec, sigma_14, small_grid):
    projected = solve_obstacle_pde(g_heat_spec, sigma_14, small_grid, project=True)
    free = solve_obstacle_pde(g_heat_spec, sigma_14, small_grid, project=False)
    np.testing.assert_array_equal(projected.values, free.values)
    assert not projected.active_obstacle.any()


def test_obstacle_dominance(basic_obstacle, sigma_quarter, small_grid):
    projected = solve_obstacle_pde(basic_obstacle, sigma_quarter, small_grid)
    free = solve_obstacle_pde(basic_obstacle, sigma_quarter, small_grid, project=False)
    assert np.all(projected.values >= projected.obstacle)
    assert projected.at_time_zero(0.0) >= 0.0
    interior = slice(1, -1)
    assert np.all(projected.values[:, interior] >= free.values[:, interior] - 1e-10)
    assert projected.active_obstacle[0].any()
    np.testing.assert_array_equal(projected.values[-1], small_grid.x**2)


def test_consistency_under_refinement(spec_factory, sigma_14):
    # convex quartic terminal: u = x⁴ + 6σ̄²τx² + 3σ̄⁴τ² with τ = T − t
    spec = spec_factory(sigma=[{"weight": 1.0}], phi=QUARTIC, S=DEEP_OBSTACLE)
    exact = 3.0 * 4.0**2
    grid = Grid1D(-8.0, 8.0, 49, 1.0)
    grid = grid.with_nt(stable_time_steps(spec, sigma_14, grid))
    errors = []
    for _ in range(3):
        errors.append(abs(solve_obstacle_pde(spec, sigma_14, grid).at_time_zero(0.0) - exact))
        grid = grid.refined()
    assert errors[0] > 1e-3
    assert all(coarse >= 1.5 * fine for coarse, fine in zip(errors, errors[1:]))


def test_quadratic_ghosts_are_exact_on_g_heat(g_heat_spec, sigma_14):
    grid = Grid1D(-8.0, 8.0, 199, 1.0)
    quadratic = solve_obstacle_pde(g_heat_spec, sigma_14, grid)
    linear = solve_obstacle_pde(g_heat_spec, sigma_14, grid, ghost="linear")
    exact = grid.x**2 + 4.0 * (1.0 - quadratic.grid.times[:, None])
    np.testing.assert_allclose(quadratic.values, exact, atol=1e-8, rtol=0)
    assert abs(linear.at_time_zero(0.0) - 4.0) > 1e-7
    assert quadratic.metadata["ghost"] == "quadratic"


def _random_term(rng, kinds):
    return {
        "weight": float(rng.uniform(-0.5, 0.5)),
        "temporal": str(rng.choice(["const", "sin", "cos2"])),
        "spatial": {"kind": str(rng.choice(["const", "tanh", "sin"])), "k": float(rng.uniform(0.2, 1.0))},
        "state": str(rng.choice(kinds)),
    }


def test_discrete_comparison_on_random_pairs(spec_factory, sigma_quarter):
    rng = np.random.default_rng(2024)
    grid = Grid1D(-3.0, 3.0, 39, 0.5)
    for _ in range(20):
        f = [_random_term(rng, ["none", "y", "tanh_y", "tanh_z"]) for _ in range(2)]
        phi = [{"weight": 0.5, "spatial": {"kind": "sin", "k": float(rng.uniform(0.2, 1.0))}},
               {"weight": 0.1, "spatial": {"kind": "monomial", "degree": 2}}]
        shift_phi, shift_f = float(rng.uniform(0, 0.3)), float(rng.uniform(0, 0.3))
        common = {
            "horizon": 0.5,
            "epsilon": float(rng.choice([1.0, 0.5])),
            "sigma": [{"weight": 1.0}, {"weight": 0.2, "spatial": "tanh"}],
            "S": [{"weight": -1.5}, {"weight": 0.2, "spatial": "cos", "temporal": "sin"}],
        }
        lower = spec_factory(f=f, phi=phi, **common)
        upper = spec_factory(f=f + [{"weight": shift_f}], phi=phi + [{"weight": shift_phi}], **common)
        nt = max(stable_time_steps(s, sigma_quarter, grid, s.epsilon) for s in (lower, upper))
        u1 = solve_obstacle_pde(lower, sigma_quarter, grid.with_nt(nt)).values
        u2 = solve_obstacle_pde(upper, sigma_quarter, grid.with_nt(nt)).values
        assert np.all(u1[:, 1:-1] <= u2[:, 1:-1] + 1e-10)


def test_blow_up_reports_first_offending_step(spec_factory, sigma_14):
    spec = spec_factory(L=50.0, f=[{"weight": 50.0, "state": "y"}], phi=[{"weight": 1.0}], S=DEEP_OBSTACLE)
    with pytest.raises(BlowUpError) as info:
        solve_obstacle_pde(spec, sigma_14, Grid1D(-2.0, 2.0, 9, 1.0))
    assert info.value.step >= 0


def test_terminal_below_obstacle_rejected(spec_factory, sigma_14, small_grid):
    spec = spec_factory(phi=[{"weight": 0.0}], S=[{"weight": 1.0}], c=1.0)
    with pytest.raises(InvalidSpecError):
        solve_obstacle_pde(spec, sigma_14, small_grid)


def test_argument_checks(g_heat_spec, sigma_14, small_grid):
    two_dim = ProblemSpec.from_dict({"horizon": 1.0, "dim_x": 2, "dim_b": 1, "coefficients": {}})
    with pytest.raises(UnsupportedDimensionError):
        solve_obstacle_pde(two_dim, sigma_14, small_grid)
    with pytest.raises(InvalidArgumentError):
        solve_obstacle_pde(g_heat_spec, sigma_14, Grid1D(-4.0, 4.0, 79, 2.0))
    with pytest.raises(InvalidArgumentError):
        solve_obstacle_pde(g_heat_spec, sigma_14, small_grid.with_nt(3))
    with pytest.raises(InvalidArgumentError):
        solve_obstacle_pde(g_heat_spec, sigma_14, small_grid, ghost="cubic")


def test_oscillating_solve_resolves_fast_scale(spec_factory, sigma_14, small_grid):
    spec = spec_factory(epsilon=0.01, b=[{"temporal": "sin", "spatial": "tanh"}], phi=X_SQUARED, S=DEEP_OBSTACLE)
    solution = solve_obstacle_pde(spec, sigma_14, small_grid)
    assert solution.grid.nt >= 20 / 0.01
    assert solution.epsilon == 0.01


def test_sup_norm_diff(g_heat_spec, sigma_14, small_grid):
    solution = solve_obstacle_pde(g_heat_spec, sigma_14, small_grid)
    assert sup_norm_diff(solution, solution)[0] == 0.0
    shifted = replace(solution, values=solution.values + 0.5)
    value, (k, j) = sup_norm_diff(shifted, solution)
    assert value == pytest.approx(0.5)
    window = NormWindow.inner(small_grid)
    assert window.x_lo <= solution.grid.x[j] <= window.x_hi

    other = solve_obstacle_pde(g_heat_spec, sigma_14, Grid1D(-4.0, 4.0, 39, 1.0))
    with pytest.raises(GridMismatchError):
        sup_norm_diff(solution, other)


def test_solution_frame_is_thinned(g_heat_spec, sigma_14, small_grid):
    solution = solve_obstacle_pde(g_heat_spec, sigma_14, small_grid)
    stride = max(1, solution.grid.nt // 10)
    frame = solution.to_frame(stride)
    slices = frame["t"].nunique()
    assert list(frame.columns) == ["t", "x", "u", "obstacle_active"]
    assert slices <= solution.grid.nt // stride + 2
    assert frame["t"].max() == pytest.approx(1.0)


def test_regularity_moduli_of_g_heat(g_heat_spec, sigma_14):
    grid = Grid1D(-8.0, 8.0, 159, 1.0)
    solution = solve_obstacle_pde(g_heat_spec, sigma_14, grid)
    window = NormWindow.inner(grid)
    moduli = regularity_moduli(solution.values, solution.grid, 1, window)
    # u = x² + 4(T − t): the growth ratio peaks at the origin at t = 0
    assert moduli["growth"] == pytest.approx(4.0, rel=1e-2)
    assert 0.0 < moduli["lipschitz_x"] <= 2 * window.x_hi + 0.1
    assert moduli["holder_t"] > 0.0


def test_memoized_averaged_solve_is_reset_per_grid(spec_factory, sigma_14):
    spec = spec_factory(
        horizon=0.5,
        sigma=[{"weight": 1.0}],
        f=[{"temporal": "cos2", "state": "y"}],
        phi=X_SQUARED,
        S=DEEP_OBSTACLE,
    ).with_epsilon(AVERAGED)
    grid = Grid1D(-2.0, 2.0, 9, 0.5)
    plain = solve_obstacle_pde(spec, sigma_14, grid, build_averaged_driver(spec))

    driver = build_averaged_driver(spec, {"memoize": True})
    driver._memo[("stale",)] = 0.0
    memoized = solve_obstacle_pde(spec, sigma_14, grid, driver)
    assert ("stale",) not in driver._memo
    assert driver._memo_spacing == pytest.approx(grid.dx)
    np.testing.assert_allclose(memoized.values, plain.values, atol=1e-6, rtol=0)

    finer = Grid1D(-2.0, 2.0, 19, 0.5)
    solve_obstacle_pde(spec, sigma_14, finer, driver)
    assert driver._memo_spacing == pytest.approx(finer.dx)
    assert driver._memo
