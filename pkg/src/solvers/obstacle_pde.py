import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from src.errors import BlowUpError, InvalidArgumentError, InvalidSpecError, UnsupportedDimensionError
from src.model.averaged_driver import AveragedDriver
from src.model.coefficients import ProblemSpec, coefficient_sup, driver_values, eval_coefficient, fast_time
from src.model.g_function import CovarianceSet
from src.model.validate_assumptions import default_time_span
from src.solvers.utils_solvers import Grid1D, NormWindow, check_same_grid, first_offending

logger = logging.getLogger(__name__)

CFL_SAFETY = 0.9
GHOST_KINDS = ("quadratic", "linear")
STEPS_PER_FAST_UNIT = 20
BOUND_TIME_SAMPLES = 64


@dataclass(frozen=True)
class SchemeBounds:
    """Sup bounds that size the Lax-Friedrichs dissipation and the explicit time step."""

    sigma_sq_sup: float
    gradient_sup: float
    value_lipschitz: float

    @property
    def viscosity(self) -> float:
        return 0.5 * self.gradient_sup


def _declared_lipschitz(spec: ProblemSpec, role: str, kinds: tuple[str, ...]) -> float:
    terms = spec.coefficients[role].all_terms()
    return spec.lipschitz_L if any(t.state in kinds and t.weight != 0.0 for t in terms) else 0.0


def scheme_bounds(spec: ProblemSpec, sigma_set: CovarianceSet, grid: Grid1D) -> SchemeBounds:
    """
    Σ_sup bounds |σ|², the gradient bound P bounds |∂F/∂p| by |b| + σ̄²|h| + |σ|(L_z(f) + σ̄² L_z(g)),
    and L_y(f) + σ̄² L_y(g) bounds |∂F/∂v|. L_z, L_y are the declared L when the driver
    actually depends on z (resp. y), zero otherwise. Coefficients are sampled over one
    fast-time window.
    """
    upper = sigma_set.upper_max
    times = np.linspace(0.0, default_time_span(spec), BOUND_TIME_SAMPLES)
    x = grid.x
    sigma_sup = coefficient_sup(spec, "sigma", times, x)
    b_sup = coefficient_sup(spec, "b", times, x)
    h_sup = coefficient_sup(spec, "h", times, x)
    z_kinds, y_kinds = ("z", "tanh_z"), ("y", "tanh_y")
    lz = _declared_lipschitz(spec, "f", z_kinds) + upper * _declared_lipschitz(spec, "g", z_kinds)
    ly = _declared_lipschitz(spec, "f", y_kinds) + upper * _declared_lipschitz(spec, "g", y_kinds)
    return SchemeBounds(
        sigma_sq_sup=sigma_sup**2,
        gradient_sup=b_sup + upper * h_sup + sigma_sup * lz,
        value_lipschitz=ly,
    )


def stable_time_steps(spec: ProblemSpec, sigma_set: CovarianceSet, grid: Grid1D, epsilon=None) -> int:
    """
    Smallest nt with dt ≤ 0.9·dx² / (σ̄²·Σ_sup + dx·P + dx²·L_v); oscillating solves also
    need nt ≥ 20·T/ε so the fast scale is resolved.
    """
    bounds = scheme_bounds(spec, sigma_set, grid)
    dx = grid.dx
    denominator = sigma_set.upper_max * bounds.sigma_sq_sup + dx * bounds.gradient_sup + dx**2 * bounds.value_lipschitz
    nt = 1 if denominator <= 0 else math.ceil(grid.T * denominator / (CFL_SAFETY * dx**2) - 1e-9)
    if epsilon is not None:
        nt = max(nt, math.ceil(STEPS_PER_FAST_UNIT * grid.T / float(epsilon) - 1e-9))
    return max(nt, 1)


@dataclass
class SolutionField:
    """u on the space-time grid (values[k, j] at t_k, x_j, ghost nodes included)."""

    grid: Grid1D
    values: np.ndarray
    kind: str
    active_obstacle: np.ndarray
    obstacle: np.ndarray
    epsilon: float | None = None
    metadata: dict = field(default_factory=dict)

    def at_time_zero(self, x0: float) -> float:
        return float(np.interp(x0, self.grid.x, self.values[0]))

    def to_frame(self, time_stride: int = 1) -> pd.DataFrame:
        grid = self.grid
        rows = np.arange(0, grid.nt + 1, max(1, int(time_stride)))
        if rows[-1] != grid.nt:
            rows = np.append(rows, grid.nt)
        t = np.repeat(grid.times[rows], grid.nx + 2)
        x = np.tile(grid.x, rows.size)
        return pd.DataFrame({
            "t": t,
            "x": x,
            "u": self.values[rows].ravel(),
            "obstacle_active": self.active_obstacle[rows].ravel().astype(int),
        })


def _fill_ghosts(u: np.ndarray, ghost: str):
    if ghost == "linear":
        u[0] = 2.0 * u[1] - u[2]
        u[-1] = 2.0 * u[-2] - u[-3]
    else:
        u[0] = 3.0 * u[1] - 3.0 * u[2] + u[3]
        u[-1] = 3.0 * u[-2] - 3.0 * u[-3] + u[-4]


def _driver_step(spec, sigma_set, driver, t_k, x, v, p, a):
    if driver == "oscillating":
        return driver_values(spec, sigma_set, fast_time(t_k, spec.epsilon), x, v, p, a)[1]
    return driver.values(sigma_set, x, v, p, a)


def solve_obstacle_pde(
    spec: ProblemSpec,
    sigma_set: CovarianceSet,
    grid: Grid1D,
    driver: str | AveragedDriver = "oscillating",
    project: bool = True,
    ghost: str = "quadratic",
) -> SolutionField:
    """
    Backward explicit monotone scheme for min(−∂ₜu − F, u − S) = 0, u(T, ·) = φ.

    Each step: central gradient and second difference at the interior nodes,
    candidate = u + dt·F(t_k/ε or F̄, x, u, p, A) + (θ·dt/dx)·(u_{j+1} − 2u_j + u_{j−1}),
    ghost nodes by extrapolation from the nearest interior nodes, then projection
    u = max(candidate, S(t_k, x)).

    Args:
        spec (ProblemSpec): problem with n = 1; its ε is used by the oscillating driver
        sigma_set (CovarianceSet): covariance box of G
        grid (Grid1D): space-time grid; nt="auto" picks the smallest stable nt
        driver (str | AveragedDriver): "oscillating" or an averaged driver, whose memo
            (if enabled) is reset and keyed on this grid's dx
        project (bool): apply the obstacle projection
        ghost (str): "quadratic" (exact on quadratics) or "linear" extrapolation

    Returns:
        SolutionField: every time slice, ghost nodes included
    """
    if spec.dim_x != 1:
        raise UnsupportedDimensionError(f"The PDE solver supports n = 1 only, got n = {spec.dim_x}")
    if sigma_set.dim != spec.dim_b:
        raise InvalidArgumentError(f"Covariance set dim {sigma_set.dim} does not match d = {spec.dim_b}")
    oscillating = isinstance(driver, str)
    if oscillating and driver != "oscillating":
        raise InvalidArgumentError(f"Unknown driver '{driver}'")
    if ghost not in GHOST_KINDS:
        raise InvalidArgumentError(f"Unknown ghost extrapolation '{ghost}', expected one of {GHOST_KINDS}")
    if oscillating and spec.is_averaged:
        raise InvalidArgumentError("An oscillating solve needs a numeric epsilon")
    if abs(grid.T - spec.horizon) > 1e-12 * spec.horizon:
        raise InvalidArgumentError(f"Grid horizon {grid.T} differs from problem horizon {spec.horizon}")

    epsilon = float(spec.epsilon) if oscillating else None
    required = stable_time_steps(spec, sigma_set, grid, epsilon)
    if grid.nt == "auto":
        grid = grid.with_nt(required)
    elif grid.nt < required:
        raise InvalidArgumentError(f"nt={grid.nt} violates the stability/resolution bound; need nt >= {required}")

    bounds = scheme_bounds(spec, sigma_set, grid)
    dx, dt, nt = grid.dx, grid.dt, grid.nt
    x = grid.x
    x_int = x[1:-1]
    dissipation = bounds.viscosity * dt / dx
    if not oscillating and driver.memoize:
        driver.reset_memo(dx)

    values = np.empty((nt + 1, grid.nx + 2))
    active = np.zeros((nt + 1, grid.nx + 2), dtype=bool)
    obstacle = np.empty((nt + 1, grid.nx + 2))

    # 1️⃣ Terminal slice
    terminal = eval_coefficient(spec, "phi", 0.0, x)
    obstacle[nt] = eval_coefficient(spec, "S", grid.T, x)
    if np.any(terminal < obstacle[nt]):
        j = int(np.argmax(terminal < obstacle[nt]))
        raise InvalidSpecError(f"Terminal value phi lies below the obstacle S(T, x) at x = {x[j]:.6g}")
    values[nt] = terminal

    kind = "oscillating" if oscillating else "averaged"
    logger.info(f"Solving {kind} obstacle PDE: nx={grid.nx}, nt={nt}, dx={dx:.4g}, dt={dt:.4g}")

    # 2️⃣ Backward sweep
    u = terminal
    for k in range(nt - 1, -1, -1):
        t_k = k * dt
        lap = u[2:] - 2.0 * u[1:-1] + u[:-2]
        p = (u[2:] - u[:-2]) / (2.0 * dx)
        a = lap / dx**2
        fvals = _driver_step(spec, sigma_set, driver, t_k, x_int, u[1:-1], p, a)

        new = np.empty_like(u)
        new[1:-1] = u[1:-1] + dt * fvals + dissipation * lap
        _fill_ghosts(new, ghost)

        obstacle[k] = eval_coefficient(spec, "S", t_k, x)
        if project:
            active[k] = obstacle[k] > new
            new = np.maximum(new, obstacle[k])

        j = first_offending(new)
        if j is not None:
            raise BlowUpError("Obstacle PDE scheme blew up", step=k, node=j)
        values[k] = new
        u = new
        if logger.isEnabledFor(logging.DEBUG) and k % max(1, nt // 10) == 0:
            logger.debug(f"step {k}/{nt}: max|u|={np.max(np.abs(u)):.4g}, active nodes={int(active[k].sum())}")

    metadata = {"nt": nt, "dx": dx, "dt": dt, "viscosity": bounds.viscosity, "projected": project, "ghost": ghost}
    if not oscillating:
        metadata["averaging"] = driver.describe()
    return SolutionField(grid, values, kind, active, obstacle, epsilon, metadata)


def sup_norm_diff(a: SolutionField, b: SolutionField, window: NormWindow | None = None) -> tuple[float, tuple[int, int]]:
    """Windowed max |a − b| with its (time index, node index)."""
    check_same_grid(a.grid, b.grid)
    window = NormWindow.inner(a.grid) if window is None else window
    mask = np.outer(window.mask_t(a.grid), window.mask_x(a.grid))
    diff = np.where(mask, np.abs(a.values - b.values), -np.inf)
    k, j = np.unravel_index(int(np.argmax(diff)), diff.shape)
    return float(diff[k, j]), (int(k), int(j))
