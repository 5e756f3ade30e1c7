import json

import pandas as pd
import pytest

from src.errors import BlowUpError, ConfigError, UnsupportedForwardError
from src.pipeline import run_pipeline
from src.pipeline.run_pipeline import (
    CONVERGED,
    FAILED,
    NON_MONOTONE,
    SWEEP_COLUMNS,
    SweepRow,
    regularity_drift,
    run_epsilon_sweep,
    run_feynman_kac_check,
    run_penalization_sweep,
    run_single_solve,
    run_validation,
    sweep_verdict,
)
from src.pipeline.utils_config import list_presets, load_experiment_config

SMALL_GRID = {"x_min": -4.0, "x_max": 4.0, "nx": 39, "nt": "auto"}


def test_bundled_presets_load():
    assert set(list_presets()) >= {"g_heat", "obstacle_basic", "averaging_trig", "penalization_demo"}
    for name in list_presets():
        assert load_experiment_config(name).name == name


@pytest.mark.parametrize(
    "overrides",
    [
        {"epsilons": [0.1, 0.2]},
        {"epsilons": [1.5]},
        {"window": 0.0},
        {"sigma_upper": [1.0, 1.0], "sigma_lower": [0.5, 0.5]},
        {"tolerances": {"richardson_levels": 5}},
        {"grid": {"nx": 1}},
    ],
)
def test_invalid_configs_raise_config_error(config_factory, overrides):
    with pytest.raises(ConfigError):
        config_factory("obstacle_basic", **overrides)


def test_unknown_preset_and_keys():
    with pytest.raises(ConfigError):
        load_experiment_config("no_such_preset")
    with pytest.raises(ConfigError):
        load_experiment_config({"problem": {"horizon": 1.0}, "surprise": 1})


def test_validation_writes_report(config_factory):
    cfg = config_factory("averaging_trig")
    report = run_validation(cfg)
    assert report.passed
    saved = json.loads((cfg.output_dir / "validation.json").read_text())
    assert saved["passed"] is True
    assert any(c["name"] == "axis_0" for c in saved["checks"])


@pytest.mark.parametrize(
    "errors,estimate,expected",
    [
        ([0.1, 0.05, 0.02], 0.01, CONVERGED),
        ([0.1, 0.105, 0.02], 0.01, CONVERGED),
        ([0.1, 0.2, 0.02], 0.01, NON_MONOTONE),
        ([0.1, 0.05], 0.001, FAILED),
        ([], 0.01, FAILED),
        ([float("nan")], 0.01, FAILED),
    ],
)
def test_sweep_verdict(errors, estimate, expected):
    assert sweep_verdict(errors, estimate) == expected


def _rows(growth, lipschitz):
    return [SweepRow(epsilon=0.4 / 2**i, sup_error=0.0, argmax_t=0.0, argmax_x=0.0, nt=10, growth=g, lipschitz_x=l,
                     holder_t=1.0) for i, (g, l) in enumerate(zip(growth, lipschitz))]


@pytest.mark.parametrize(
    "growth,lipschitz,expected,bounded",
    [
        ([2.0, 1.5, 1.6, 1.55], [9.0, 8.0, 8.2, 8.1], 0.0, True),
        ([1.0, 1.05, 1.08], [1.0, 1.0, 1.0], 0.08, True),
        ([1.0, 0.9, 1.2], [1.0, 1.0, 1.0], 0.2, False),
    ],
)
def test_regularity_drift_counts_growth_as_epsilon_shrinks(growth, lipschitz, expected, bounded):
    drift = regularity_drift(_rows(growth, lipschitz), limit=0.1)
    assert drift["growth"] == pytest.approx(expected)
    assert drift["holder_t"] == 0.0
    assert drift["bounded"] is bounded
    assert drift["spread"]["growth"] == pytest.approx(max(growth) / min(growth) - 1.0)


def test_regularity_drift_flags_a_modulus_leaving_zero():
    drift = regularity_drift(_rows([0.0, 0.5], [1.0, 1.0]))
    assert drift["growth"] == float("inf")
    assert not drift["bounded"]


def test_time_independent_sweep_converges(config_factory):
    cfg = config_factory("obstacle_basic", grid=SMALL_GRID, epsilons=[0.5, 0.1])
    report = run_epsilon_sweep(cfg)
    assert report.verdict == CONVERGED
    assert all(e <= report.richardson["estimate"] for e in report.errors)
    frame = pd.read_csv(cfg.output_dir / "sweep.csv")
    assert list(frame.columns) == SWEEP_COLUMNS
    assert frame["epsilon"].tolist() == [0.5, 0.1]
    verdict = json.loads((cfg.output_dir / "verdict.json").read_text())
    assert verdict["verdict"] == CONVERGED
    assert verdict["averaged"]["mode"]
    assert (cfg.output_dir / "timings.json").exists()


def test_sweep_outputs_are_reproducible(config_factory, tmp_path):
    outputs = []
    for run in ("first", "second"):
        cfg = config_factory("obstacle_basic", grid=SMALL_GRID, epsilons=[1.0, 0.5]).with_overrides(
            output_dir=tmp_path / run)
        run_epsilon_sweep(cfg, threads=2)
        outputs.append([(cfg.output_dir / name).read_bytes() for name in ("sweep.csv", "verdict.json")])
    assert outputs[0] == outputs[1]


def test_sweep_flushes_partial_rows_on_failure(config_factory, monkeypatch):
    cfg = config_factory("obstacle_basic", grid=SMALL_GRID, epsilons=[1.0, 0.5])
    solve = run_pipeline._solve_epsilon

    def flaky(cfg, grid, averaged, epsilon):
        if epsilon < 1.0:
            raise BlowUpError("synthetic failure", step=3, node=0)
        return solve(cfg, grid, averaged, epsilon)

    monkeypatch.setattr(run_pipeline, "_solve_epsilon", flaky)
    with pytest.raises(BlowUpError):
        run_epsilon_sweep(cfg)
    assert len(pd.read_csv(cfg.output_dir / "sweep.csv")) == 1
    verdict = json.loads((cfg.output_dir / "verdict.json").read_text())
    assert verdict["verdict"] == FAILED
    assert verdict["failed_epsilon"] == 0.5


def test_single_solve_writes_solution(config_factory):
    cfg = config_factory("obstacle_basic", grid=SMALL_GRID)
    solution = run_single_solve(cfg)
    assert solution.at_time_zero(0.0) >= 0.0
    frame = pd.read_csv(cfg.output_dir / "solution.csv")
    assert list(frame.columns) == ["t", "x", "u", "obstacle_active"]


def test_averaged_single_solve(config_factory):
    cfg = config_factory("averaging_trig", grid=SMALL_GRID)
    solution = run_single_solve(cfg, averaged=True, write=False)
    assert solution.kind == "averaged"
    assert solution.epsilon is None


def test_feynman_kac_on_g_heat(config_factory):
    cfg = config_factory("g_heat")
    report = run_feynman_kac_check(cfg)
    assert report.passed
    fine = report.levels[-1]
    assert fine["lattice_Y0"] == pytest.approx(4.0, abs=1e-8)
    assert fine["pde_u0"] == pytest.approx(4.0, abs=2e-2)
    saved = json.loads((cfg.output_dir / "fk_check.json").read_text())
    assert saved["passed"] is True
    assert len(saved["levels"]) == 2


def test_feynman_kac_constant_data(config_factory):
    constant = [{"weight": 0.5}]
    cfg = config_factory("penalization_demo", problem={"coefficients": {"f": [], "phi": constant, "S": constant}})
    report = run_feynman_kac_check(cfg, write=False)
    assert all(gap <= 1e-12 for gap in report.gaps)
    assert report.passed


def test_feynman_kac_on_obstacle_basic(config_factory):
    report = run_feynman_kac_check(config_factory("obstacle_basic"), write=False)
    assert report.passed
    assert report.gaps[-1] <= 2e-2


def test_feynman_kac_rejects_drift(config_factory):
    with pytest.raises(UnsupportedForwardError):
        run_feynman_kac_check(config_factory("averaging_trig"), write=False)


def test_penalization_on_demo(config_factory):
    cfg = config_factory("penalization_demo")
    report = run_penalization_sweep(cfg)
    assert report.passed
    assert report.skorokhod_violations == 0
    frame = pd.read_csv(cfg.output_dir / "penalization.csv")
    assert frame["n"].tolist() == [1.0, 4.0, 16.0, 64.0, 256.0]
    assert frame["Y0"].is_monotonic_increasing
    saved = json.loads((cfg.output_dir / "penalization.json").read_text())
    assert saved["passed"] is True
    assert (cfg.output_dir / "lattice.csv").exists()


@pytest.mark.slow
def test_averaging_acceptance(config_factory):
    report = run_epsilon_sweep(config_factory("averaging_trig"), threads=4, write=False)
    errors = report.errors
    assert all(b <= 1.1 * a + 1e-12 for a, b in zip(errors, errors[1:]))
    assert report.verdict == CONVERGED
    assert report.richardson["levels"] == 3
    assert len(report.richardson["differences"]) == 2
    assert 0.5 <= report.richardson["order"] <= 4.0
    regularity = report.regularity
    assert regularity["bounded"]
    assert regularity["growth"] <= 0.10
    assert regularity["lipschitz_x"] <= 0.10


@pytest.mark.parametrize("preset", ["g_heat", "obstacle_basic", "averaging_trig", "penalization_demo"])
def test_validated_presets_solve(config_factory, preset):
    cfg = config_factory(preset, grid=SMALL_GRID)
    assert run_validation(cfg, write=False).passed
    solution = run_single_solve(cfg, write=False)
    assert solution.values.shape[1] == SMALL_GRID["nx"] + 2
