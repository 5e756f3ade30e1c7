import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from src.errors import InvalidArgumentError
from src.model.averaged_driver import build_averaged_driver
from src.model.coefficients import AVERAGED
from src.model.g_function import check_nondegenerate
from src.model.utils_model import ValidationReport
from src.model.validate_assumptions import validate_assumptions
from src.pipeline.utils_config import ExperimentConfig
from src.pipeline.utils_export import resolve_time_stride, save_csv, save_json
from src.solvers.bsde_lattice import (
    Lattice,
    PenalizationSweep,
    check_lattice_forward,
    penalization_sweep,
    skorokhod_violations,
    solve_reflected_bsde,
)
from src.solvers.obstacle_pde import SolutionField, solve_obstacle_pde, stable_time_steps, sup_norm_diff
from src.solvers.utils_solvers import Grid1D, NormWindow, regularity_moduli, restrict_values, richardson_estimate

logger = logging.getLogger(__name__)

CONVERGED, NON_MONOTONE, FAILED = "converged", "non-monotone", "failed"
SWEEP_COLUMNS = ["epsilon", "sup_error", "argmax_t", "argmax_x", "nt", "growth", "lipschitz_x", "holder_t"]


# Validation


def run_validation(cfg: ExperimentConfig, write: bool = True) -> ValidationReport:
    """Sampled assumption checks over the grid box plus the non-degeneracy of Σ."""
    report = validate_assumptions(
        cfg.problem,
        box=cfg.validation_box,
        samples=int(cfg.validation.get("samples", 512)),
        seed=cfg.seed,
    ).merge(check_nondegenerate(cfg.sigma))
    status = "✅ passed" if report.passed else "❌ failed"
    logger.info(f"Validation of '{cfg.name}' {status} ({sum(c.passed for c in report.checks)}/{len(report.checks)} checks)")
    if write:
        save_json(report.to_dict(), cfg.output_dir / "validation.json")
    return report


# Single solve


def run_single_solve(cfg: ExperimentConfig, epsilon: float | None = None, averaged: bool = False,
                     write: bool = True) -> SolutionField:
    """One obstacle-PDE solve at `epsilon`, for the averaged driver, or at the problem's own ε."""
    spec = cfg.problem
    if averaged or (epsilon is None and spec.is_averaged):
        spec = spec.with_epsilon(AVERAGED)
        solution = solve_obstacle_pde(spec, cfg.sigma, cfg.grid, build_averaged_driver(spec, cfg.averaging))
    else:
        if epsilon is not None:
            spec = spec.with_epsilon(float(epsilon))
        solution = solve_obstacle_pde(spec, cfg.sigma, cfg.grid, "oscillating")

    logger.info(f"✅ {solution.kind} solve done: u(0, 0) = {solution.at_time_zero(0.0):.8f}")
    if write:
        stride = resolve_time_stride(cfg.output.get("time_stride", "auto"), solution.grid.nt)
        save_csv(solution.to_frame(stride), cfg.output_dir / "solution.csv", _float_format(cfg))
    return solution


# Epsilon sweep


@dataclass
class SweepRow:
    epsilon: float
    sup_error: float
    argmax_t: float
    argmax_x: float
    nt: int
    growth: float
    lipschitz_x: float
    holder_t: float
    wall_time: float = 0.0

    def to_record(self) -> dict:
        return {c: getattr(self, c) for c in SWEEP_COLUMNS}


@dataclass
class SweepReport:
    """Per-ε rows, averaged-solve metadata and the convergence verdict of an ε-sweep."""

    rows: list[SweepRow]
    averaged: dict
    richardson: dict
    verdict: str
    regularity: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def errors(self) -> list[float]:
        return [r.sup_error for r in self.rows]

    @property
    def converged(self) -> bool:
        return self.verdict == CONVERGED

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_record() for r in self.rows], columns=SWEEP_COLUMNS)

    def verdict_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "epsilons": [r.epsilon for r in self.rows],
            "errors": self.errors,
            "averaged": self.averaged,
            "richardson": self.richardson,
            "regularity": self.regularity,
        }


def sweep_verdict(errors: list[float], estimate: float, slack: float = 0.1, factor: float = 3.0) -> str:
    """
    converged: errors nonincreasing within `slack` (relative) and the last error at most
    `factor` times the scheme-error estimate of ū; non-monotone when the column goes up.
    """
    if not errors or not np.all(np.isfinite(errors)):
        return FAILED
    for previous, current in zip(errors, errors[1:]):
        if current > (1.0 + slack) * previous + 1e-12:
            return NON_MONOTONE
    return CONVERGED if errors[-1] <= factor * estimate + 1e-12 else FAILED


def regularity_drift(rows: list[SweepRow], limit: float = 0.1) -> dict:
    """
    Growth of each regularity modulus as ε shrinks.

    Args:
        rows (list[SweepRow]): sweep rows ordered by decreasing ε
        limit (float): largest relative growth still counted as bounded

    Returns:
        dict: per modulus, how far the rows at smaller ε rise above the row at the largest ε
        (max_i m_i / m_0 − 1, floored at 0), the plain max/min − 1 spread under "spread",
        and "bounded" when the growth and x-Lipschitz drifts stay within `limit`.
    """
    out, spread = {}, {}
    for key in ("growth", "lipschitz_x", "holder_t"):
        values = [getattr(r, key) for r in rows]
        drift = 0.0
        if len(values) > 1:
            reference, peak = values[0], max(values[1:])
            if reference > 0:
                drift = max(0.0, peak / reference - 1.0)
            elif peak > 0:
                drift = float("inf")
        out[key] = float(drift)
        low = min(values) if values else 0.0
        spread[key] = 0.0 if low <= 0 else float(max(values) / low - 1.0)
    out["spread"] = spread
    out["bounded"] = bool(out["growth"] <= limit and out["lipschitz_x"] <= limit)
    return out


def sweep_time_steps(cfg: ExperimentConfig) -> int:
    """One nt shared by ū and every u^ε: the largest stability/resolution requirement."""
    spec, sigma, grid = cfg.problem, cfg.sigma, cfg.grid
    required = stable_time_steps(spec, sigma, grid)
    required = max(required, stable_time_steps(spec, sigma, grid, min(cfg.epsilons)))
    if grid.nt == "auto":
        return required
    if grid.nt < required:
        raise InvalidArgumentError(f"grid.nt={grid.nt} is below the sweep requirement nt >= {required}")
    return int(grid.nt)


def _windowed_sup(values: np.ndarray, grid: Grid1D, window: NormWindow) -> float:
    mask = np.outer(window.mask_t(grid), window.mask_x(grid))
    return float(np.max(np.abs(values[mask])))


def _richardson(cfg: ExperimentConfig, averaged: SolutionField, driver) -> dict:
    levels = int(cfg.tolerances.get("richardson_levels", 3))
    averaged_spec = cfg.problem.with_epsilon(AVERAGED)
    coarse = averaged
    diffs = []
    for level in range(1, levels):
        fine_grid = coarse.grid.refined()
        logger.info(f"Richardson level {level}: nx={fine_grid.nx}, nt={fine_grid.nt}")
        fine = solve_obstacle_pde(averaged_spec, cfg.sigma, fine_grid, driver)
        restricted = restrict_values(fine.values, fine.grid, coarse.grid)
        window = NormWindow.inner(coarse.grid, cfg.window)
        diffs.append(_windowed_sup(restricted - coarse.values, coarse.grid, window))
        coarse = fine
    estimate, order = richardson_estimate(diffs)
    return {"levels": levels, "differences": diffs, "order": order, "estimate": estimate}


def _solve_epsilon(cfg: ExperimentConfig, grid: Grid1D, averaged: SolutionField, epsilon: float) -> SweepRow:
    start = time.perf_counter()
    solution = solve_obstacle_pde(cfg.problem.with_epsilon(epsilon), cfg.sigma, grid, "oscillating")
    window = cfg.norm_window
    error, (k, j) = sup_norm_diff(solution, averaged, window)
    moduli = regularity_moduli(solution.values, grid, cfg.problem.growth_m, window)
    return SweepRow(
        epsilon=epsilon,
        sup_error=error,
        argmax_t=float(grid.times[k]),
        argmax_x=float(grid.x[j]),
        nt=grid.nt,
        growth=moduli["growth"],
        lipschitz_x=moduli["lipschitz_x"],
        holder_t=moduli["holder_t"],
        wall_time=time.perf_counter() - start,
    )


def _flush_sweep(cfg: ExperimentConfig, rows: list[SweepRow], verdict: dict):
    frame = pd.DataFrame([r.to_record() for r in rows], columns=SWEEP_COLUMNS)
    save_csv(frame, cfg.output_dir / "sweep.csv", _float_format(cfg))
    save_json(verdict, cfg.output_dir / "verdict.json")


def run_epsilon_sweep(cfg: ExperimentConfig, threads: int = 1, write: bool = True) -> SweepReport:
    """
    Solve ū once with the averaged driver, then u^ε for every configured ε on the same
    grid, and compare them in the windowed sup norm. The verdict needs a nonincreasing
    error column ending within a few Richardson estimates of ū's own scheme error.
    """
    spec = cfg.problem
    nt = sweep_time_steps(cfg)
    grid = cfg.grid.with_nt(nt)
    logger.info(f"🚀 Starting epsilon sweep for '{cfg.name}': epsilons={list(cfg.epsilons)}, nx={grid.nx}, nt={nt}")

    # 1️⃣ Averaged problem and its scheme-error estimate
    t0 = time.perf_counter()
    averaged_spec = spec.with_epsilon(AVERAGED)
    driver = build_averaged_driver(averaged_spec, cfg.averaging)
    averaged = solve_obstacle_pde(averaged_spec, cfg.sigma, grid, driver)
    averaged_time = time.perf_counter() - t0
    t0 = time.perf_counter()
    richardson = _richardson(cfg, averaged, driver)
    richardson_time = time.perf_counter() - t0
    logger.info(f"Averaged solve done: mode={driver.mode}, Richardson estimate={richardson['estimate']:.4e}")

    # 2️⃣ Oscillating problems
    rows: list[SweepRow] = []
    total = len(cfg.epsilons)
    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        futures = [pool.submit(_solve_epsilon, cfg, grid, averaged, eps) for eps in cfg.epsilons]
        for idx, (eps, future) in enumerate(zip(cfg.epsilons, futures), start=1):
            logger.info(f"Processing epsilon {idx}/{total}: {eps:g}")
            try:
                row = future.result()
            except Exception as e:
                logger.error(f"❌ epsilon {eps:g} failed: {e}")
                for pending in futures[idx:]:
                    pending.cancel()
                if write:
                    _flush_sweep(cfg, rows, {"verdict": FAILED, "failed_epsilon": eps, "error": str(e),
                                             "epsilons": list(cfg.epsilons)})
                raise
            rows.append(row)
            logger.info(f"✅ epsilon {eps:g}: sup error {row.sup_error:.4e} at (t={row.argmax_t:.3f}, x={row.argmax_x:.3f})")

    # 3️⃣ Verdict
    verdict = sweep_verdict(
        [r.sup_error for r in rows],
        richardson["estimate"],
        slack=cfg.tolerance("monotone_slack", 0.1),
        factor=cfg.tolerance("richardson_factor", 3.0),
    )
    report = SweepReport(
        rows=rows,
        averaged={**driver.describe(), "nt": nt, "nx": grid.nx},
        richardson=richardson,
        verdict=verdict,
        regularity=regularity_drift(rows, cfg.tolerance("regularity_drift", 0.1)),
        timings={
            "averaged_solve": averaged_time,
            "richardson": richardson_time,
            "epsilons": {f"{r.epsilon:g}": r.wall_time for r in rows},
        },
    )
    status = "✅" if report.converged else "❌"
    logger.info(f"{status} Sweep verdict: {verdict} (final error {rows[-1].sup_error:.4e})")

    if write:
        _flush_sweep(cfg, rows, report.verdict_dict())
        save_json(report.timings, cfg.output_dir / "timings.json")
    return report


# Feynman-Kac consistency


@dataclass
class FeynmanKacReport:
    x0: float
    levels: list[dict]
    tolerance: float

    @property
    def gaps(self) -> list[float]:
        return [level["gap"] for level in self.levels]

    @property
    def passed(self) -> bool:
        coarse, fine = self.gaps[0], self.gaps[-1]
        return fine <= coarse + 1e-12 and fine <= self.tolerance

    def to_dict(self) -> dict:
        return {"x0": self.x0, "levels": self.levels, "tolerance": self.tolerance, "passed": self.passed}


def run_feynman_kac_check(cfg: ExperimentConfig, write: bool = True) -> FeynmanKacReport:
    """
    Compare the reflected lattice root value with the PDE value u(0, x0) at a coarse level
    (about half the nodes, half the lattice steps) and at the configured level.
    """
    spec = cfg.problem
    check_lattice_forward(spec)
    if spec.is_averaged:
        raise InvalidArgumentError("The Feynman-Kac check needs a numeric epsilon")
    x0, steps, grid = cfg.lattice_x0, cfg.lattice_steps, cfg.grid
    if not grid.x_min < x0 < grid.x_max:
        raise InvalidArgumentError(f"x0={x0} lies outside the grid [{grid.x_min}, {grid.x_max}]")

    coarse = Grid1D(grid.x_min, grid.x_max, max(3, (grid.nx - 1) // 2), grid.T)
    levels = []
    for level_grid, level_steps in ((coarse, max(1, steps // 2)), (grid, steps)):
        pde_value = solve_obstacle_pde(spec, cfg.sigma, level_grid, "oscillating").at_time_zero(x0)
        lattice = Lattice.build(cfg.sigma, x0, level_steps, spec.horizon)
        lattice_value = solve_reflected_bsde(spec, cfg.sigma, lattice).Y0
        gap = abs(pde_value - lattice_value)
        levels.append({"nx": level_grid.nx, "steps": level_steps, "pde_u0": pde_value,
                       "lattice_Y0": lattice_value, "gap": gap})
        logger.info(f"FK level nx={level_grid.nx}, N={level_steps}: u0={pde_value:.8f}, Y0={lattice_value:.8f}, gap={gap:.3e}")

    report = FeynmanKacReport(x0, levels, cfg.tolerance("fk_gap", 2e-2))
    logger.info(f"{'✅' if report.passed else '❌'} Feynman-Kac check: gaps {report.gaps}")
    if write:
        save_json(report.to_dict(), cfg.output_dir / "fk_check.json")
    return report


# Penalization


@dataclass
class PenalizationReport:
    sweep: PenalizationSweep
    skorokhod_violations: int
    tolerance: float

    @property
    def passed(self) -> bool:
        s = self.sweep
        return s.nondecreasing and s.gaps_shrinking and s.final_gap <= self.tolerance and self.skorokhod_violations == 0

    def to_dict(self) -> dict:
        return {
            "n": [n for n, _ in self.sweep.rows],
            "Y0": [y for _, y in self.sweep.rows],
            "reflected_Y0": self.sweep.reflected_Y0,
            "final_gap": self.sweep.final_gap,
            "nondecreasing": self.sweep.nondecreasing,
            "gaps_shrinking": self.sweep.gaps_shrinking,
            "skorokhod_violations": self.skorokhod_violations,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def run_penalization_sweep(cfg: ExperimentConfig, write: bool = True) -> PenalizationReport:
    spec = cfg.problem
    if not cfg.penalty_n_list:
        raise InvalidArgumentError("penalty.n_list is empty")
    lattice = Lattice.build(cfg.sigma, cfg.lattice_x0, cfg.lattice_steps, spec.horizon)
    logger.info(f"🚀 Penalization sweep for '{cfg.name}': N={lattice.steps}, n_list={list(cfg.penalty_n_list)}")

    sweep = penalization_sweep(spec, cfg.sigma, lattice, list(cfg.penalty_n_list))
    reflected = solve_reflected_bsde(spec, cfg.sigma, lattice)
    report = PenalizationReport(sweep, skorokhod_violations(reflected, spec), cfg.tolerance("penalization_gap", 1e-2))
    logger.info(f"{'✅' if report.passed else '❌'} Penalization: final gap {sweep.final_gap:.3e}, "
                f"Skorokhod violations {report.skorokhod_violations}")

    if write:
        fmt = _float_format(cfg)
        save_csv(sweep.to_frame(), cfg.output_dir / "penalization.csv", fmt)
        save_csv(reflected.to_frame(), cfg.output_dir / "lattice.csv", fmt)
        save_json(report.to_dict(), cfg.output_dir / "penalization.json")
    return report


def _float_format(cfg: ExperimentConfig) -> str:
    return cfg.output.get("float_format", "%.12e")
