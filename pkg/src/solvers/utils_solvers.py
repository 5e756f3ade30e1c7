import math
from dataclasses import dataclass, replace

import numpy as np

from src.errors import GridMismatchError, InvalidArgumentError

BLOW_UP_CAP = 1e12


@dataclass(frozen=True)
class Grid1D:
    """
    Truncated space-time grid: nx interior nodes plus one ghost node per side,
    nt backward steps on [0, T]. `nt` may be "auto" until the solver resolves it.
    """

    x_min: float
    x_max: float
    nx: int
    T: float
    nt: int | str = "auto"

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise InvalidArgumentError(f"Grid needs x_min < x_max, got [{self.x_min}, {self.x_max}]")
        if int(self.nx) != self.nx or self.nx < 3:
            raise InvalidArgumentError(f"Grid needs at least 3 interior nodes, got nx={self.nx}")
        if not self.T > 0:
            raise InvalidArgumentError(f"Grid horizon must be positive, got T={self.T}")
        if self.nt != "auto" and (int(self.nt) != self.nt or self.nt < 1):
            raise InvalidArgumentError(f"nt must be a positive integer or 'auto', got {self.nt}")

    @classmethod
    def from_config(cls, block: dict, horizon: float) -> "Grid1D":
        nt = block.get("nt", "auto")
        return cls(float(block["x_min"]), float(block["x_max"]), int(block["nx"]), horizon,
                   nt if nt == "auto" else int(nt))

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx + 1)

    @property
    def dt(self) -> float:
        if self.nt == "auto":
            raise InvalidArgumentError("Time step is undefined until nt is resolved")
        return self.T / self.nt

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.nx + 2)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.nt + 1)

    def with_nt(self, nt: int) -> "Grid1D":
        return replace(self, nt=int(nt))

    def refined(self) -> "Grid1D":
        """Halve dx and quarter dt, keeping every coarse node on the fine grid."""
        return replace(self, nx=2 * self.nx + 1, nt=4 * self.nt)

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "nx": self.nx, "T": self.T, "nt": self.nt}


@dataclass(frozen=True)
class NormWindow:
    """Sub-rectangle [x_lo, x_hi] × [t_lo, t_hi] used by every norm; ghost nodes never count."""

    x_lo: float
    x_hi: float
    t_lo: float = 0.0
    t_hi: float = math.inf

    @classmethod
    def inner(cls, grid: Grid1D, fraction: float = 0.6) -> "NormWindow":
        if not 0.0 < fraction <= 1.0:
            raise InvalidArgumentError(f"Window fraction must lie in (0, 1], got {fraction}")
        centre = 0.5 * (grid.x_min + grid.x_max)
        half = 0.5 * fraction * (grid.x_max - grid.x_min)
        return cls(centre - half, centre + half)

    def mask_x(self, grid: Grid1D) -> np.ndarray:
        x = grid.x
        eps = 1e-12 * (grid.x_max - grid.x_min)
        mask = (x >= self.x_lo - eps) & (x <= self.x_hi + eps)
        mask[0] = mask[-1] = False
        if not mask.any():
            raise InvalidArgumentError("Norm window contains no interior node")
        return mask

    def mask_t(self, grid: Grid1D) -> np.ndarray:
        t = grid.times
        eps = 1e-12 * grid.T
        mask = (t >= self.t_lo - eps) & (t <= self.t_hi + eps)
        if not mask.any():
            raise InvalidArgumentError("Norm window contains no time slice")
        return mask


def check_same_grid(a: Grid1D, b: Grid1D):
    if a != b:
        raise GridMismatchError(f"Grids differ: {a.to_dict()} vs {b.to_dict()}")


def restrict_values(values: np.ndarray, fine: Grid1D, coarse: Grid1D) -> np.ndarray:
    """Sample a fine-grid field on the nodes of a nested coarse grid."""
    if (fine.x_min, fine.x_max, fine.T) != (coarse.x_min, coarse.x_max, coarse.T):
        raise GridMismatchError("Nested grids must share the domain and horizon")
    rx, sx = divmod(fine.nx + 1, coarse.nx + 1)
    rt, st = divmod(fine.nt, coarse.nt)
    if sx or st:
        raise GridMismatchError(f"Grid {fine.to_dict()} is not nested in {coarse.to_dict()}")
    return values[::rt, ::rx]


def first_offending(values: np.ndarray) -> int | None:
    bad = ~np.isfinite(values) | (np.abs(values) > BLOW_UP_CAP)
    if not bad.any():
        return None
    return int(np.argmax(bad))


def richardson_estimate(diffs: list[float]) -> tuple[float, float]:
    """
    Scheme-error estimate of the coarsest solution from successive refinements.

    Args:
        diffs (list[float]): sup differences ‖u_h − u_{h/2}‖, ‖u_{h/2} − u_{h/4}‖, ...

    Returns:
        tuple[float, float]: estimate, order. With one difference the order is taken as 1;
        with two it is observed and clipped to [0.5, 4].
    """
    if not diffs:
        raise InvalidArgumentError("Richardson estimate needs at least one refinement")
    order = 1.0
    if len(diffs) >= 2 and diffs[0] > 0 and diffs[1] > 0:
        order = float(np.clip(np.log2(diffs[0] / diffs[1]), 0.5, 4.0))
    factor = 2.0**order / (2.0**order - 1.0)
    return factor * diffs[0], order


def regularity_moduli(values: np.ndarray, grid: Grid1D, growth_m: int, window: NormWindow) -> dict:
    """
    Empirical regularity constants of a solution field over the window:
    growth = max |u| / (1 + |x|^{m+1}), x-Lipschitz modulus over adjacent window nodes,
    and the half-Hölder time modulus max |u(t+Δ) − u(t)| / ((1 + |x|^{m+1}) Δ^{1/2}).
    """
    mx = window.mask_x(grid)
    mt = window.mask_t(grid)
    x = grid.x
    weight = 1.0 + np.abs(x[mx]) ** (growth_m + 1)
    u = values[mt][:, mx]
    growth = float(np.max(np.abs(u) / weight))
    lipschitz = float(np.max(np.abs(np.diff(u, axis=1)))) / grid.dx if u.shape[1] > 1 else 0.0

    lag = max(1, grid.nt // 10)
    times = np.flatnonzero(mt)
    starts = times[times + lag <= grid.nt]
    holder = 0.0
    if starts.size:
        jumps = np.abs(values[starts + lag][:, mx] - values[starts][:, mx]) / weight
        holder = float(np.max(jumps)) / math.sqrt(lag * grid.dt)
    return {"growth": growth, "lipschitz_x": lipschitz, "holder_t": holder}
