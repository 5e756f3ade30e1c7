import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.special import roots_legendre

from src.errors import AveragingFailureError, InvalidArgumentError, InvalidSpecError
from src.model.coefficients import TRIG_KINDS, ProblemSpec, as_points, driver_values
from src.model.g_function import CovarianceSet, SymMatrix

logger = logging.getLogger(__name__)

AVERAGING_MODES = ("auto", "periodic", "cesaro")
MAX_DENOMINATOR = 1000
CHUNK_SIZE = 262144
# default stopping tolerance per Cesàro order; the order-1 residual only decays like 1/s
CESARO_TOLERANCES = {1: 1e-4, 2: 1e-8}
MEMO_CAPACITY = 1 << 20


@lru_cache(maxsize=None)
def _gauss_legendre(points: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = roots_legendre(points)
    return nodes, weights


def common_period(spec: ProblemSpec) -> float | None:
    """
    Smallest common period of every oscillating temporal factor, or None when the
    frequencies are not commensurate (or a decaying factor is present).
    """
    periods = []
    for term in spec.oscillating_terms():
        if term.temporal == "decay":
            return None
        if term.temporal in TRIG_KINDS:
            base = 2 * math.pi / term.omega
            periods.append(base / 2 if term.temporal == "cos2" else base)
    if not periods:
        return 1.0

    reference = periods[0]
    numerators, denominators = [], []
    for period in periods:
        ratio = period / reference
        frac = Fraction(ratio).limit_denominator(MAX_DENOMINATOR)
        if abs(float(frac) - ratio) > 1e-9 * ratio:
            return None
        numerators.append(frac.numerator)
        denominators.append(frac.denominator)
    return reference * math.lcm(*numerators) / math.gcd(*denominators)


def fastest_frequency(spec: ProblemSpec) -> float:
    omegas = [t.omega for t in spec.oscillating_terms() if t.temporal in TRIG_KINDS]
    return max(omegas) if omegas else 1.0


@dataclass
class AveragedDriver:
    """
    Long-time average F̄ of the oscillating driver.

    mode='periodic' integrates one common period P with composite Gauss-Legendre,
    doubling panels until successive values differ by less than `quad_tol`.
    mode='cesaro' evaluates a Cesàro mean at horizons s0·2^k until successive values
    differ by less than `tol`. Order 1 is the running mean (1/s)∫₀ˢ F. Order 2 uses the
    triangular weight 2(s − r)/s², whose bias is c/s + O(1/s²); successive horizons are
    combined as 2·S(2s) − S(s) to cancel the c/s term, and the stopping test runs on those
    combined values. `tol=None` picks CESARO_TOLERANCES[cesaro_order].

    With `memoize`, values are cached on (x, v, p, A): x rounded to a quarter of the grid
    spacing set by `reset_memo`, the rest to `memo_resolution`. The cache holds at most
    MEMO_CAPACITY entries and is emptied by `reset_memo`.
    `diagnostics` keeps the residuals of the most recent evaluation.
    """

    base: ProblemSpec
    mode: str = "auto"
    period: float | None = None
    tol: float | None = None
    max_horizon: float = 1e6
    start_horizon: float = 1.0
    cesaro_order: int = 2
    quad_tol: float = 1e-10
    quad_points: int = 8
    start_panels: int = 4
    max_panels: int = 4096
    memoize: bool = False
    memo_resolution: float = 1e-9
    diagnostics: dict = field(default_factory=dict)
    _memo: dict = field(default_factory=dict, repr=False)
    _memo_spacing: float | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in AVERAGING_MODES:
            raise InvalidArgumentError(f"Unknown averaging mode '{self.mode}', expected one of {AVERAGING_MODES}")
        detected = common_period(self.base)
        if self.mode == "auto":
            self.mode = "periodic" if detected is not None else "cesaro"
            logger.info(f"Averaging mode resolved to '{self.mode}'")
        if self.mode == "periodic":
            if self.period is None:
                if detected is None:
                    raise InvalidSpecError("Periodic averaging needs commensurate trigonometric temporal factors")
                self.period = detected
            if not self.period > 0:
                raise InvalidSpecError(f"Averaging period must be positive, got {self.period}")
        if self.cesaro_order not in CESARO_TOLERANCES:
            raise InvalidArgumentError(f"cesaro_order must be 1 or 2, got {self.cesaro_order}")
        if self.tol is None:
            self.tol = CESARO_TOLERANCES[self.cesaro_order]
        if not (self.tol > 0 and self.max_horizon > 0 and self.start_horizon > 0):
            raise InvalidArgumentError("Cesàro tol, start_horizon and max_horizon must be positive")
        if not self.memo_resolution > 0:
            raise InvalidArgumentError(f"memo_resolution must be positive, got {self.memo_resolution}")
        self.diagnostics.setdefault("max_residual", 0.0)

    def reset_memo(self, spacing: float | None = None):
        """Empty the memo and key its x component on `spacing` (the grid's dx) from now on."""
        if spacing is not None and not spacing > 0:
            raise InvalidArgumentError(f"Memo spacing must be positive, got {spacing}")
        self._memo.clear()
        self._memo_spacing = spacing

    def describe(self) -> dict:
        return {
            "mode": self.mode,
            "period": self.period,
            "tol": self.tol,
            "max_horizon": self.max_horizon,
            "cesaro_order": self.cesaro_order,
            "max_residual": float(self.diagnostics.get("max_residual", 0.0)),
        }

    # Integration helpers

    def _integrand(self, sigma_set, r, x, v, p, a) -> np.ndarray:
        rows = []
        step = max(64, CHUNK_SIZE // max(1, len(v)))
        for start in range(0, r.size, step):
            chunk = r[start:start + step, None]
            rows.append(driver_values(self.base, sigma_set, chunk, x, v, p, a)[1])
        return np.concatenate(rows, axis=0)

    def _integrate(self, sigma_set, lo, hi, panels, x, v, p, a, moment: bool = False):
        nodes, weights = _gauss_legendre(self.quad_points)
        edges = np.linspace(lo, hi, panels + 1)
        half = 0.5 * (edges[1:] - edges[:-1])
        mid = 0.5 * (edges[1:] + edges[:-1])
        r = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
        w = (half[:, None] * weights[None, :]).ravel()
        values = self._integrand(sigma_set, r, x, v, p, a)
        zeroth = w @ values
        if not moment:
            return zeroth, None
        return zeroth, (w * r) @ values

    def _periodic(self, sigma_set, x, v, p, a) -> np.ndarray:
        panels = self.start_panels
        residual = np.array([np.inf])
        previous = self._integrate(sigma_set, 0.0, self.period, panels, x, v, p, a)[0] / self.period
        while panels < self.max_panels:
            panels *= 2
            current = self._integrate(sigma_set, 0.0, self.period, panels, x, v, p, a)[0] / self.period
            residual = np.abs(current - previous)
            if np.max(residual) < self.quad_tol:
                self._record(residual, [float(np.max(residual))])
                return current
            previous = current
        raise AveragingFailureError(
            f"Periodic quadrature did not settle below {self.quad_tol} with {self.max_panels} panels",
            [float(np.max(residual))],
        )

    def _cesaro(self, sigma_set, x, v, p, a) -> np.ndarray:
        width = min(0.5, 1.0 / fastest_frequency(self.base))
        second = self.cesaro_order == 2

        def mean(s, i0, i1):
            return i0 / s if not second else 2.0 * (s * i0 - i1) / s**2

        s = self.start_horizon
        i0, i1 = self._integrate(sigma_set, 0.0, s, max(1, math.ceil(s / width)), x, v, p, a, second)
        previous = mean(s, i0, i1)
        # order 2 compares combined estimates and needs two settled residuals in a row
        reference = None if second else previous
        needed = 2 if second else 1
        trace, settled = [], 0
        while 2 * s <= self.max_horizon:
            d0, d1 = self._integrate(sigma_set, s, 2 * s, max(1, math.ceil(s / width)), x, v, p, a, second)
            i0 = i0 + d0
            i1 = i1 + d1 if second else None
            s *= 2
            current = mean(s, i0, i1)
            estimate = 2.0 * current - previous if second else current
            previous = current
            if reference is None:
                reference = estimate
                continue
            residual = np.abs(estimate - reference)
            trace.append(float(np.max(residual)))
            settled = settled + 1 if trace[-1] < self.tol else 0
            if settled >= needed:
                self._record(residual, trace)
                return estimate
            reference = estimate
        self.diagnostics["trace"] = trace
        raise AveragingFailureError(
            f"Cesàro mean did not settle below tol={self.tol} before horizon {self.max_horizon}; "
            f"the averaged-driver limit may not exist for this problem",
            trace,
        )

    def _record(self, residual: np.ndarray, trace: list[float]):
        self.diagnostics["residuals"] = residual
        self.diagnostics["residual"] = float(np.max(residual)) if residual.size else 0.0
        self.diagnostics["trace"] = trace
        self.diagnostics["max_residual"] = max(self.diagnostics.get("max_residual", 0.0), self.diagnostics["residual"])

    def _compute(self, sigma_set, x, v, p, a) -> np.ndarray:
        if self.base.is_time_independent():
            values = driver_values(self.base, sigma_set, 0.0, x, v, p, a)[1]
            self._record(np.zeros_like(values), [0.0])
            return values
        if self.mode == "periodic":
            return self._periodic(sigma_set, x, v, p, a)
        return self._cesaro(sigma_set, x, v, p, a)

    def values(self, sigma_set: CovarianceSet, x, v, p, a) -> np.ndarray:
        """F̄ on a batch of nodes: x, p with trailing n, a with trailing (n, n), v scalar per node."""
        n = self.base.dim_x
        x = as_points(x, n)
        p = as_points(p, n)
        a = np.asarray(a, dtype=float)
        if n == 1 and (a.ndim < 2 or a.shape[-2:] != (1, 1)):
            a = a[..., None, None]
        v = np.asarray(v, dtype=float)
        batch = np.broadcast_shapes(x.shape[:-1], p.shape[:-1], a.shape[:-2], v.shape)
        x = np.broadcast_to(x, batch + (n,)).reshape(-1, n)
        p = np.broadcast_to(p, batch + (n,)).reshape(-1, n)
        a = np.broadcast_to(a, batch + (n, n)).reshape(-1, n, n)
        v = np.broadcast_to(v, batch).reshape(-1)
        if not self.memoize:
            return self._compute(sigma_set, x, v, p, a).reshape(batch)
        return self._memoized(sigma_set, x, v, p, a).reshape(batch)

    def _memoized(self, sigma_set, x, v, p, a) -> np.ndarray:
        x_step = 0.25 * self._memo_spacing if self._memo_spacing else self.memo_resolution
        x_keys = np.round(x / x_step)
        state = np.concatenate([v[:, None], p, a.reshape(len(v), -1)], axis=1)
        state_keys = np.round(state / self.memo_resolution)
        stacked = np.concatenate([x_keys, state_keys], axis=1).astype(np.int64)
        keys = [tuple(row) for row in stacked]
        result = np.empty(len(keys))
        missing = []
        for i, key in enumerate(keys):
            if key in self._memo:
                result[i] = self._memo[key]
            else:
                missing.append(i)
        if missing:
            idx = np.array(missing)
            fresh = self._compute(sigma_set, x[idx], v[idx], p[idx], a[idx])
            result[idx] = fresh
            if len(self._memo) + len(missing) > MEMO_CAPACITY:
                logger.debug(f"Averaging memo reached {len(self._memo)} entries, clearing it")
                self._memo.clear()
            for i, value in zip(missing, fresh):
                self._memo[keys[i]] = float(value)
        return result


def build_averaged_driver(spec: ProblemSpec, settings: dict | None = None) -> AveragedDriver:
    """Create an AveragedDriver from the `averaging` config block."""
    settings = dict(settings or {})
    return AveragedDriver(
        base=spec,
        mode=settings.get("mode", "auto"),
        period=settings.get("period"),
        tol=None if settings.get("tol") is None else float(settings["tol"]),
        max_horizon=float(settings.get("max_horizon", 1e6)),
        start_horizon=float(settings.get("start_horizon", 1.0)),
        cesaro_order=int(settings.get("cesaro_order", 2)),
        quad_tol=float(settings.get("quad_tol", 1e-10)),
        max_panels=int(settings.get("max_panels", 4096)),
        memoize=bool(settings.get("memoize", False)),
        memo_resolution=float(settings.get("memo_resolution", 1e-9)),
    )


def average_driver(avg: AveragedDriver, sigma_set: CovarianceSet, x, v: float, p, a: SymMatrix) -> float:
    """F̄(x, v, p, A) at a single point."""
    n = avg.base.dim_x
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if x.shape != (n,) or p.shape != (n,) or a.dim != n:
        raise InvalidArgumentError(f"Shapes x={x.shape}, p={p.shape}, A={a.dim} inconsistent with n={n}")
    return float(avg.values(sigma_set, x[None, :], np.array([v]), p[None, :], a.entries[None, :, :])[0])
