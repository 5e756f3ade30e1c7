import logging

import numpy as np

from src.errors import InvalidArgumentError
from src.model.coefficients import TRIG_KINDS, ProblemSpec, eval_coefficient
from src.model.utils_model import ValidationReport

logger = logging.getLogger(__name__)

STATE_RADIUS = 5.0
RELATIVE_SLACK = 1e-9
DERIVATIVE_STEP = 1e-4
DERIVATIVE_SLACK = 1e-3


def default_time_span(spec: ProblemSpec) -> float:
    """Fast-time window long enough to see several periods of the slowest oscillation."""
    omegas = [t.omega for t in spec.oscillating_terms() if t.temporal in TRIG_KINDS]
    span = spec.horizon
    if omegas:
        span = max(span, 4 * 2 * np.pi / min(omegas))
    if any(t.temporal == "decay" for t in spec.oscillating_terms()):
        span = max(span, 10.0)
    return float(span)


def _norm(values: np.ndarray, batch_ndim: int) -> np.ndarray:
    flat = values.reshape(values.shape[:batch_ndim] + (-1,))
    return np.linalg.norm(flat, axis=-1)


def _sample_points(rng, box, samples: int, dim: int) -> np.ndarray:
    lo, hi = box
    return rng.uniform(lo, hi, size=(samples, dim))


def _within(observed: float, declared: float, slack: float = RELATIVE_SLACK) -> bool:
    return observed <= declared * (1 + slack) + slack


def _check_forward(spec, report, rng, box, samples, span):
    L = spec.lipschitz_L
    x1 = _sample_points(rng, box, samples, spec.dim_x)
    x2 = _sample_points(rng, box, samples, spec.dim_x)
    s = rng.uniform(0.0, span, size=samples)
    dist = np.maximum(np.linalg.norm(x1 - x2, axis=-1), 1e-15)
    origin = np.zeros((samples, spec.dim_x))
    for role in ("b", "h", "sigma"):
        diff = eval_coefficient(spec, role, s, x1) - eval_coefficient(spec, role, s, x2)
        ratio = float(np.max(_norm(diff, 1) / dist))
        report.add(f"H1.lipschitz.{role}", _within(ratio, L), observed=ratio, declared=L)
        at_origin = float(np.max(_norm(eval_coefficient(spec, role, s, origin), 1)))
        report.add(f"H1.origin.{role}", _within(at_origin, L), observed=at_origin, declared=L)


def _check_driver_growth(spec, report, rng, box, samples, span):
    L, m = spec.lipschitz_L, spec.growth_m
    x1 = _sample_points(rng, box, samples, spec.dim_x)
    x2 = _sample_points(rng, box, samples, spec.dim_x)
    s = rng.uniform(0.0, span, size=samples)
    y1 = rng.uniform(-STATE_RADIUS, STATE_RADIUS, size=samples)
    y2 = rng.uniform(-STATE_RADIUS, STATE_RADIUS, size=samples)
    z1 = rng.uniform(-STATE_RADIUS, STATE_RADIUS, size=(samples, spec.dim_b))
    z2 = rng.uniform(-STATE_RADIUS, STATE_RADIUS, size=(samples, spec.dim_b))

    abs1 = np.linalg.norm(x1, axis=-1)
    abs2 = np.linalg.norm(x2, axis=-1)
    weight = (1 + abs1**m + abs2**m) * np.maximum(np.linalg.norm(x1 - x2, axis=-1), 1e-15)
    state_dist = np.maximum(np.abs(y1 - y2) + np.linalg.norm(z1 - z2, axis=-1), 1e-15)
    origin = np.zeros((samples, spec.dim_x))

    for role in ("f", "g", "phi"):
        dx = eval_coefficient(spec, role, s, x1, y1, z1) - eval_coefficient(spec, role, s, x2, y1, z1)
        ratio_x = float(np.max(_norm(dx, 1) / weight))
        report.add(f"H2.lipschitz_x.{role}", _within(ratio_x, L), observed=ratio_x, declared=L,
                   detail=f"weighted by (1+|x|^{m}+|x'|^{m})")
        dyz = eval_coefficient(spec, role, s, x1, y1, z1) - eval_coefficient(spec, role, s, x1, y2, z2)
        ratio_yz = float(np.max(_norm(dyz, 1) / state_dist))
        report.add(f"H2.lipschitz_yz.{role}", _within(ratio_yz, L), observed=ratio_yz, declared=L)
        at_origin = float(np.max(_norm(eval_coefficient(spec, role, s, origin, 0.0, None), 1)))
        report.add(f"H2.origin.{role}", _within(at_origin, L), observed=at_origin, declared=L)


def _terminal_gap(spec, rng, box, samples) -> float:
    lo, hi = box
    grid = np.linspace(lo, hi, samples)[:, None] * np.ones(spec.dim_x)
    pts = np.concatenate([grid, _sample_points(rng, box, samples, spec.dim_x)])
    gap = eval_coefficient(spec, "phi", 0.0, pts) - eval_coefficient(spec, "S", spec.horizon, pts)
    return float(np.min(gap))


def _check_obstacle(spec, report, rng, box, samples):
    L, c = spec.lipschitz_L, spec.obstacle_cap
    x1 = _sample_points(rng, box, samples, spec.dim_x)
    x2 = _sample_points(rng, box, samples, spec.dim_x)
    s = rng.uniform(0.0, spec.horizon, size=samples)
    dist = np.maximum(np.linalg.norm(x1 - x2, axis=-1), 1e-15)
    s1 = eval_coefficient(spec, "S", s, x1)
    ratio = float(np.max(np.abs(s1 - eval_coefficient(spec, "S", s, x2)) / dist))
    report.add("H3.lipschitz.S", _within(ratio, L), observed=ratio, declared=L)
    s_max = float(np.max(s1))
    report.add("H3.cap", s_max <= c + RELATIVE_SLACK, observed=s_max, declared=c)
    gap = _terminal_gap(spec, rng, box, samples)
    report.add("H3.terminal", gap >= 0.0, observed=gap, declared=0.0, detail="min of phi(x) - S(T,x)")


def _check_obstacle_smooth(spec, report, rng, box, samples):
    """C^{1,2}_Lip regularity of S in x, estimated by central differences."""
    L = spec.lipschitz_L
    h = DERIVATIVE_STEP
    x1 = _sample_points(rng, box, samples, spec.dim_x)
    x2 = _sample_points(rng, box, samples, spec.dim_x)
    s = rng.uniform(0.0, spec.horizon, size=samples)
    dist = np.maximum(np.linalg.norm(x1 - x2, axis=-1), 1e-15)

    def derivatives(x):
        first, second = [], []
        for axis in range(spec.dim_x):
            e = np.zeros(spec.dim_x)
            e[axis] = h
            up = eval_coefficient(spec, "S", s, x + e)
            mid = eval_coefficient(spec, "S", s, x)
            down = eval_coefficient(spec, "S", s, x - e)
            first.append((up - down) / (2 * h))
            second.append((up - 2 * mid + down) / h**2)
        return np.stack(first, -1), np.stack(second, -1)

    d1a, d2a = derivatives(x1)
    d1b, d2b = derivatives(x2)
    ratio_s = float(np.max(np.abs(eval_coefficient(spec, "S", s, x1) - eval_coefficient(spec, "S", s, x2)) / dist))
    ratio_d1 = float(np.max(np.linalg.norm(d1a - d1b, axis=-1) / dist))
    ratio_d2 = float(np.max(np.linalg.norm(d2a - d2b, axis=-1) / dist))
    report.add("H4.lipschitz.S", _within(ratio_s, L), observed=ratio_s, declared=L)
    report.add("H4.lipschitz.dS", _within(ratio_d1, L, DERIVATIVE_SLACK), observed=ratio_d1, declared=L)
    report.add("H4.lipschitz.d2S", _within(ratio_d2, L, DERIVATIVE_SLACK), observed=ratio_d2, declared=L)
    gap = _terminal_gap(spec, rng, box, samples)
    report.add("H4.terminal", gap >= 0.0, observed=gap, declared=0.0, detail="min of phi(x) - S(T,x)")


def validate_assumptions(
    spec: ProblemSpec,
    box: tuple[float, float] = (-5.0, 5.0),
    samples: int = 512,
    seed: int = 0,
    time_span: float | None = None,
) -> ValidationReport:
    """
    Check the declared constants (L, m, c) of `spec` against sampled data.

    (H1) Lipschitz and origin bounds of b, h, σ; (H2) weighted Lipschitz and origin
    bounds of f, g, φ; (H3) Lipschitz, bounded-above obstacle below φ at T; (H4) the
    C^{1,2}_Lip alternative for S. The verdict is H1 ∧ H2 ∧ H3, which the averaging
    results need; H1 ∧ H2 ∧ (H3 ∨ H4), enough for a well-posed obstacle problem, is
    recorded as `well_posed` in the metadata.
    Sampling is deterministic given `seed`, which is recorded in the report.

    Args:
        spec (ProblemSpec): problem with its declared constants
        box (tuple[float, float]): spatial sampling interval, per axis
        samples (int): sampled points per check
        seed (int): seed of the sampling generator
        time_span (float | None): fast-time window for the temporal factors;
            None uses `default_time_span`

    Returns:
        ValidationReport: named checks grouped by assumption, with the verdict
    """
    if samples < 2:
        raise InvalidArgumentError(f"Need at least 2 samples, got {samples}")
    if not box[0] < box[1]:
        raise InvalidArgumentError(f"Invalid sample box {box}")
    span = default_time_span(spec) if time_span is None else float(time_span)
    rng = np.random.default_rng(seed)

    report = ValidationReport(f"assumptions for {spec.name}")
    _check_forward(spec, report, rng, box, samples, span)
    _check_driver_growth(spec, report, rng, box, samples, span)
    _check_obstacle(spec, report, rng, box, samples)
    _check_obstacle_smooth(spec, report, rng, box, samples)

    h1, h2 = report.group_passed("H1"), report.group_passed("H2")
    h3, h4 = report.group_passed("H3"), report.group_passed("H4")
    report.verdict = h1 and h2 and h3
    report.metadata.update({
        "seed": seed,
        "samples": samples,
        "box": [float(box[0]), float(box[1])],
        "time_span": span,
        "declared": {"L": spec.lipschitz_L, "m": spec.growth_m, "c": spec.obstacle_cap},
        "assumption_sets": {"H1": h1, "H2": h2, "H3": h3, "H4": h4},
        "well_posed": h1 and h2 and (h3 or h4),
    })
    for check in report.checks:
        if not check.passed:
            logger.info(f"Assumption check {check.name} failed: observed {check.observed:.4g} vs {check.declared:.4g}")
    return report
