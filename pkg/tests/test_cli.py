import json

import pytest

from src.pipeline.cli import (
    EXIT_CONFIG,
    EXIT_FEYNMAN_KAC,
    EXIT_OK,
    EXIT_VALIDATION,
    build_parser,
    main,
)


@pytest.fixture
def steep_drift_config(tmp_path):
    path = tmp_path / "steep.json"
    path.write_text(json.dumps({
        "problem": {
            "horizon": 1.0,
            "epsilon": 0.5,
            "lipschitz_L": 1.0,
            "coefficients": {
                "b": [{"weight": 1.0, "spatial": {"kind": "sin", "k": 3.0}}],
                "sigma": [{"weight": 1.0}],
                "phi": [{"weight": 1.0, "spatial": "tanh"}],
                "S": [{"weight": -1.0}],
            },
        },
        "sigma_lower": [0.5],
        "sigma_upper": [1.0],
    }))
    return path


def test_validate_writes_report(tmp_path):
    out = tmp_path / "g_heat"
    assert main(["validate", "g_heat", "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "validation.json").read_text())["passed"] is True


def test_missing_config_file(tmp_path):
    assert main(["validate", str(tmp_path / "missing.json")]) == EXIT_CONFIG


def test_unknown_preset():
    assert main(["solve", "not_a_preset"]) == EXIT_CONFIG


def test_failing_assumptions_stop_every_command(steep_drift_config, tmp_path):
    out = tmp_path / "steep"
    assert main(["validate", str(steep_drift_config), "--out", str(out)]) == EXIT_VALIDATION
    assert main(["solve", str(steep_drift_config), "--out", str(out)]) == EXIT_VALIDATION
    assert not (out / "solution.csv").exists()


def test_fk_check_rejects_drifting_forward(tmp_path):
    assert main(["fk-check", "averaging_trig", "--out", str(tmp_path)]) == EXIT_FEYNMAN_KAC


def test_penalize_demo(tmp_path):
    assert main(["penalize", "penalization_demo", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "penalization.csv").exists()
    assert json.loads((tmp_path / "penalization.json").read_text())["passed"] is True


def test_solve_and_sweep_write_outputs(tmp_path):
    assert main(["solve", "obstacle_basic", "--epsilon", "0.5", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "solution.csv").exists()
    assert main(["sweep", "obstacle_basic", "--out", str(tmp_path), "--threads", "2"]) == EXIT_OK
    assert json.loads((tmp_path / "verdict.json").read_text())["verdict"] == "converged"


def test_parser_rejects_conflicting_solve_modes():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["solve", "g_heat", "--epsilon", "0.1", "--averaged"])


def test_parser_global_flags():
    args = build_parser().parse_args(["sweep", "averaging_trig", "--threads", "4", "--seed", "3", "-v"])
    assert (args.command, args.config, args.threads, args.seed, args.verbose) == ("sweep", "averaging_trig", 4, 3, True)


@pytest.mark.parametrize(
    "argv",
    [
        ["--threads", "4", "--seed", "3", "-v", "sweep", "averaging_trig"],
        ["--threads", "4", "sweep", "averaging_trig", "--seed", "3", "-v"],
    ],
)
def test_global_flags_before_the_subcommand(argv):
    args = build_parser().parse_args(argv)
    assert (args.command, args.config, args.threads, args.seed, args.verbose) == ("sweep", "averaging_trig", 4, 3, True)


def test_global_flag_defaults():
    args = build_parser().parse_args(["validate", "g_heat"])
    assert (args.out, args.threads, args.seed, args.verbose) == (None, 1, None, False)


def test_leading_out_flag_is_honoured(tmp_path):
    out = tmp_path / "leading"
    assert main(["--out", str(out), "--threads", "2", "validate", "g_heat"]) == EXIT_OK
    assert (out / "validation.json").exists()
