import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from src.errors import (
    BlowUpError,
    InvalidArgumentError,
    PropertyFailureError,
    UnsupportedDimensionError,
    UnsupportedForwardError,
)
from src.model.coefficients import ProblemSpec, eval_coefficient, fast_time
from src.model.g_function import CovarianceSet
from src.solvers.utils_solvers import first_offending

logger = logging.getLogger(__name__)

MONOTONE_SLACK = 1e-10
FLAT_SLACK = 1e-9


@dataclass(frozen=True)
class Lattice:
    """
    Recombining trinomial lattice for X = x0 + B: nodes x0 + j·dx, |j| ≤ k at level k,
    dx = σ̄·√dt, branch probabilities (q/2, 1−q, q/2) with q in [q_min, 1].
    """

    x0: float
    steps: int
    T: float
    sigma_upper: float
    q_min: float

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise InvalidArgumentError(f"Lattice needs at least one step, got {self.steps}")
        if not self.T > 0 or not self.sigma_upper > 0:
            raise InvalidArgumentError("Lattice horizon and upper volatility must be positive")
        if not 0.0 < self.q_min <= 1.0:
            raise InvalidArgumentError(f"q_min must lie in (0, 1], got {self.q_min}")

    @classmethod
    def build(cls, sigma_set: CovarianceSet, x0: float, steps: int, T: float) -> "Lattice":
        if sigma_set.dim != 1:
            raise UnsupportedDimensionError("The lattice supports a scalar covariance interval only")
        lower, upper = float(sigma_set.lower[0]), float(sigma_set.upper[0])
        if not lower > 0:
            raise InvalidArgumentError("The lattice needs a non-degenerate variance interval")
        return cls(float(x0), int(steps), float(T), math.sqrt(upper), lower / upper)

    @property
    def dt(self) -> float:
        return self.T / self.steps

    @property
    def dx(self) -> float:
        return self.sigma_upper * math.sqrt(self.dt)

    def nodes(self, k: int) -> np.ndarray:
        return self.x0 + self.dx * np.arange(-k, k + 1)


@dataclass
class LatticeSolution:
    """
    Node fields by level: Y[k], Z[k], A[k] have length 2k+1. A holds the reflection
    increments (zero everywhere in penalized mode). Z at the terminal level is zero.
    """

    lattice: Lattice
    Y: list[np.ndarray]
    Z: list[np.ndarray]
    A: list[np.ndarray]
    mode: str
    n_penalty: float = 0.0
    metadata: dict = field(default_factory=dict)

    @property
    def Y0(self) -> float:
        return float(self.Y[0][0])

    @property
    def Z0(self) -> float:
        return float(self.Z[0][0])

    def to_frame(self) -> pd.DataFrame:
        lat = self.lattice
        frames = []
        for k, y in enumerate(self.Y):
            frames.append(pd.DataFrame({
                "k": k,
                "j": np.arange(-k, k + 1),
                "t": k * lat.dt,
                "x": lat.nodes(k),
                "Y": y,
                "Z": self.Z[k],
                "A": self.A[k],
            }))
        return pd.concat(frames, ignore_index=True)


def check_lattice_forward(spec: ProblemSpec):
    """The lattice carries X = x0 + B only: b = h = 0 and σ ≡ 1 with n = d = 1."""
    if spec.dim_x != 1 or spec.dim_b != 1:
        raise UnsupportedDimensionError("The lattice supports n = d = 1 only")
    coeffs = spec.coefficients
    if not (coeffs["b"].is_zero and coeffs["h"].is_zero):
        raise UnsupportedForwardError("The lattice needs b = 0 and h = 0")
    sigma_terms = coeffs["sigma"].all_terms()
    if any(t.temporal != "const" or t.spatial != "const" for t in sigma_terms if t.weight != 0.0):
        raise UnsupportedForwardError("The lattice needs a constant volatility sigma = 1")
    if abs(sum(t.weight for t in sigma_terms) - 1.0) > 1e-12:
        raise UnsupportedForwardError("The lattice needs sigma = 1")


def _epsilon(spec: ProblemSpec) -> float:
    return 1.0 if spec.is_averaged else float(spec.epsilon)


def _backward(spec: ProblemSpec, lat: Lattice, n_penalty: float, reflect: bool) -> LatticeSolution:
    check_lattice_forward(spec)
    if abs(lat.T - spec.horizon) > 1e-12 * spec.horizon:
        raise InvalidArgumentError(f"Lattice horizon {lat.T} differs from problem horizon {spec.horizon}")
    if n_penalty < 0:
        raise InvalidArgumentError(f"Penalty weight must be non-negative, got {n_penalty}")
    dt, dx, q_min = lat.dt, lat.dx, lat.q_min
    if n_penalty * dt > 1.0:
        raise InvalidArgumentError(
            f"Explicit penalty needs n*dt <= 1 (n={n_penalty}, dt={dt:.4g}); increase lattice.steps"
        )
    variance_step = lat.sigma_upper**2 * dt
    epsilon = _epsilon(spec)

    N = lat.steps
    Y = [None] * (N + 1)
    Z = [None] * (N + 1)
    A = [None] * (N + 1)
    Y[N] = eval_coefficient(spec, "phi", 0.0, lat.nodes(N))
    Z[N] = np.zeros(2 * N + 1)
    A[N] = np.zeros(2 * N + 1)

    for k in range(N - 1, -1, -1):
        nxt = Y[k + 1]
        up, mid, down = nxt[2:], nxt[1:-1], nxt[:-2]
        x = lat.nodes(k)
        t_fast = fast_time(k * dt, epsilon)
        z = (up - down) / (2.0 * dx)
        g = eval_coefficient(spec, "g", t_fast, x, mid, z[:, None])[..., 0, 0]

        def one_step(q):
            return 0.5 * q * (up + down) + (1.0 - q) * mid + g * q * variance_step

        expectation = np.maximum(one_step(q_min), one_step(1.0))
        free = expectation + eval_coefficient(spec, "f", t_fast, x, mid, z[:, None]) * dt
        obstacle = eval_coefficient(spec, "S", k * dt, x)

        if reflect:
            y = np.maximum(free, obstacle)
            increment = y - free
        else:
            y = free + n_penalty * dt * np.maximum(obstacle - free, 0.0)
            increment = np.zeros_like(y)

        j = first_offending(y)
        if j is not None:
            raise BlowUpError("Lattice recursion blew up", step=k, node=j - k)
        Y[k], Z[k], A[k] = y, z, increment

    mode = "reflected" if reflect else "penalized"
    return LatticeSolution(lat, Y, Z, A, mode, 0.0 if reflect else float(n_penalty))


def solve_penalized_bsde(spec: ProblemSpec, sigma_set: CovarianceSet, lat: Lattice, n_penalty: float) -> LatticeSolution:
    """
    Penalized G-BSDE on the lattice. At each node the conditional G-expectation is the
    larger of the one-step values at q_min and q = 1 (affine in q), the driver f is added
    explicitly and the penalty n·dt·(S − free)⁺ pushes the free value towards the obstacle.
    """
    _check_sigma(sigma_set, lat)
    return _backward(spec, lat, float(n_penalty), reflect=False)


def solve_g_bsde(spec: ProblemSpec, sigma_set: CovarianceSet, lat: Lattice) -> LatticeSolution:
    """Unreflected G-BSDE: the penalized recursion with n = 0."""
    return solve_penalized_bsde(spec, sigma_set, lat, 0.0)


def solve_reflected_bsde(spec: ProblemSpec, sigma_set: CovarianceSet, lat: Lattice) -> LatticeSolution:
    """Reflected G-BSDE: Y = max(free, S) with reflection increment A = Y − free ≥ 0."""
    _check_sigma(sigma_set, lat)
    return _backward(spec, lat, 0.0, reflect=True)


def _check_sigma(sigma_set: CovarianceSet, lat: Lattice):
    if sigma_set.dim != 1:
        raise UnsupportedDimensionError("The lattice supports a scalar covariance interval only")
    expected = Lattice.build(sigma_set, lat.x0, lat.steps, lat.T)
    if not (math.isclose(expected.sigma_upper, lat.sigma_upper) and math.isclose(expected.q_min, lat.q_min)):
        raise InvalidArgumentError("Lattice volatility does not match the covariance set")


def skorokhod_violations(solution: LatticeSolution, spec: ProblemSpec) -> int:
    """Count nodes where Y > S + 1e-9 but the reflection increment is not exactly zero."""
    lat = solution.lattice
    count = 0
    for k in range(lat.steps):
        obstacle = eval_coefficient(spec, "S", k * lat.dt, lat.nodes(k))
        count += int(np.sum((solution.Y[k] > obstacle + FLAT_SLACK) & (solution.A[k] != 0.0)))
    return count


@dataclass
class PenalizationSweep:
    rows: list[tuple[float, float]]
    reflected_Y0: float
    nondecreasing: bool
    gaps_shrinking: bool

    @property
    def final_gap(self) -> float:
        return abs(self.reflected_Y0 - self.rows[-1][1])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "n": [n for n, _ in self.rows],
            "Y0": [y for _, y in self.rows],
            "gap_to_reflected": [self.reflected_Y0 - y for _, y in self.rows],
        })


def penalization_sweep(
    spec: ProblemSpec,
    sigma_set: CovarianceSet,
    lat: Lattice,
    n_list: list[float],
) -> PenalizationSweep:
    """
    Penalized root values over an increasing list of penalties, compared with the
    reflected root value. A decrease beyond 1e-10 is a scheme bug and raises.
    """
    if not n_list or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise InvalidArgumentError(f"Penalty list must be non-empty and strictly increasing, got {n_list}")
    terminal = eval_coefficient(spec, "phi", 0.0, lat.nodes(lat.steps))
    if np.any(terminal < eval_coefficient(spec, "S", lat.T, lat.nodes(lat.steps))):
        raise InvalidArgumentError("Terminal value lies below the obstacle on the lattice")

    rows = []
    for n in n_list:
        y0 = solve_penalized_bsde(spec, sigma_set, lat, n).Y0
        rows.append((float(n), y0))
        logger.info(f"Penalty n={n:g}: Y0={y0:.10f}")
    reflected = solve_reflected_bsde(spec, sigma_set, lat).Y0

    values = [y for _, y in rows]
    steps = np.diff(values)
    nondecreasing = bool(np.all(steps >= -MONOTONE_SLACK))
    if not nondecreasing:
        k = int(np.argmax(steps < -MONOTONE_SLACK))
        raise PropertyFailureError(
            f"Penalized Y0 decreased from n={rows[k][0]:g} to n={rows[k + 1][0]:g} by {-steps[k]:.3e}"
        )
    gaps = steps if len(steps) else np.array([])
    gaps_shrinking = bool(np.all(np.diff(gaps) <= MONOTONE_SLACK)) if gaps.size > 1 else True
    return PenalizationSweep(rows, reflected, nondecreasing, gaps_shrinking)


def ordering_chain(spec: ProblemSpec, sigma_set: CovarianceSet, lat: Lattice, n_penalty: float) -> tuple[float, float, float]:
    """Root values (unreflected, penalized(n), reflected)."""
    return (
        solve_g_bsde(spec, sigma_set, lat).Y0,
        solve_penalized_bsde(spec, sigma_set, lat, n_penalty).Y0,
        solve_reflected_bsde(spec, sigma_set, lat).Y0,
    )
