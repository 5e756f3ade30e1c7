import logging
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from src.errors import InvalidArgumentError, InvalidSpecError, NumericRangeError
from src.model.g_function import CovarianceSet, SymMatrix, g_value_batch

logger = logging.getLogger(__name__)

AVERAGED = "averaged"

TEMPORAL_KINDS = ("const", "sin", "cos", "cos2", "decay")
SPATIAL_KINDS = ("const", "linear", "sin", "cos", "tanh", "monomial")
STATE_KINDS = ("none", "y", "z", "tanh_y", "tanh_z")
TRIG_KINDS = ("sin", "cos", "cos2")

# role -> (index rank, state factors allowed, symmetric in the first two indices)
ROLES = {
    "b": ("n", False, False),
    "h": ("ddn", False, True),
    "sigma": ("nd", False, False),
    "f": ("", True, False),
    "g": ("dd", True, True),
    "phi": ("", False, False),
    "S": ("", False, False),
}
FORWARD_ROLES = ("b", "h", "sigma")
OSCILLATING_ROLES = ("b", "h", "sigma", "f", "g")


def role_shape(role: str, dim_x: int, dim_b: int) -> tuple[int, ...]:
    sizes = {"n": dim_x, "d": dim_b}
    return tuple(sizes[c] for c in ROLES[role][0])


@dataclass(frozen=True)
class TermSpec:
    """
    One catalog term: weight × temporal(t) × spatial(x) × state(y, z).

    temporal: const | sin(ωt+θ) | cos(ωt+θ) | cos2 = cos²(ωt+θ) | decay = 1/(1+t)
    spatial:  const | linear x_axis | sin(k·x_axis) | cos(k·x_axis) | tanh(k·x_axis) | monomial x_axis**degree
    state:    none | y | z (component state_axis) | tanh_y | tanh_z
    """

    weight: float = 1.0
    temporal: str = "const"
    omega: float = 1.0
    theta: float = 0.0
    spatial: str = "const"
    k: float = 1.0
    axis: int = 0
    degree: int = 1
    state: str = "none"
    state_axis: int = 0

    def __post_init__(self):
        if self.temporal not in TEMPORAL_KINDS:
            raise InvalidSpecError(f"Unknown temporal factor '{self.temporal}'")
        if self.spatial not in SPATIAL_KINDS:
            raise InvalidSpecError(f"Unknown spatial factor '{self.spatial}'")
        if self.state not in STATE_KINDS:
            raise InvalidSpecError(f"Unknown state factor '{self.state}'")
        if self.temporal in TRIG_KINDS and not self.omega > 0:
            raise InvalidSpecError(f"Trigonometric temporal factor needs omega > 0, got {self.omega}")
        if self.spatial == "monomial" and (int(self.degree) != self.degree or self.degree < 0):
            raise InvalidSpecError(f"Monomial degree must be a non-negative integer, got {self.degree}")
        if not np.isfinite(self.weight):
            raise InvalidSpecError(f"Non-finite term weight {self.weight}")

    @classmethod
    def from_dict(cls, data: dict) -> "TermSpec":
        data = dict(data)
        kwargs: dict[str, Any] = {"weight": float(data.pop("weight", 1.0))}
        for key, kind_field, params in (
            ("temporal", "temporal", ("omega", "theta")),
            ("spatial", "spatial", ("k", "axis", "degree")),
            ("state", "state", ("axis",)),
        ):
            value = data.pop(key, None)
            if value is None:
                continue
            if isinstance(value, str):
                value = {"kind": value}
            kwargs[kind_field] = value.get("kind", "const" if key != "state" else "none")
            for param in params:
                if param in value:
                    target = "state_axis" if key == "state" else param
                    kwargs[target] = value[param]
        if data:
            raise InvalidSpecError(f"Unknown term keys: {sorted(data)}")
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"weight": self.weight}
        if self.temporal != "const":
            out["temporal"] = {"kind": self.temporal, "omega": self.omega, "theta": self.theta}
        if self.spatial != "const":
            out["spatial"] = {"kind": self.spatial, "k": self.k, "axis": self.axis, "degree": self.degree}
        if self.state != "none":
            out["state"] = {"kind": self.state, "axis": self.state_axis}
        return out

    def describe(self) -> str:
        return f"{self.weight}*{self.temporal}*{self.spatial}*{self.state}"

    @property
    def is_time_free(self) -> bool:
        return self.temporal == "const"

    def temporal_factor(self, t):
        if self.temporal == "const":
            return np.ones_like(t, dtype=float)
        if self.temporal == "sin":
            return np.sin(self.omega * t + self.theta)
        if self.temporal == "cos":
            return np.cos(self.omega * t + self.theta)
        if self.temporal == "cos2":
            return np.cos(self.omega * t + self.theta) ** 2
        return 1.0 / (1.0 + t)

    def spatial_factor(self, x: np.ndarray):
        if self.spatial == "const":
            return np.ones(x.shape[:-1])
        xi = x[..., self.axis]
        if self.spatial == "linear":
            return xi
        if self.spatial == "sin":
            return np.sin(self.k * xi)
        if self.spatial == "cos":
            return np.cos(self.k * xi)
        if self.spatial == "tanh":
            return np.tanh(self.k * xi)
        return xi ** int(self.degree)

    def state_factor(self, y, z):
        if self.state == "none":
            return 1.0
        if self.state == "y":
            return y
        if self.state == "tanh_y":
            return np.tanh(y)
        zi = z[..., self.state_axis]
        return zi if self.state == "z" else np.tanh(zi)

    def evaluate(self, t, x, y, z):
        with np.errstate(over="ignore", invalid="ignore"):
            return self.weight * self.temporal_factor(t) * self.spatial_factor(x) * self.state_factor(y, z)


@dataclass(frozen=True)
class Coefficient:
    """Finite sums of catalog terms indexed by the entries of one coefficient's role shape."""

    role: str
    terms: dict[tuple[int, ...], tuple[TermSpec, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if self.role not in ROLES:
            raise InvalidSpecError(f"Unknown coefficient '{self.role}'")
        rank, state_allowed, symmetric = ROLES[self.role]
        clean = {}
        for key, terms in self.terms.items():
            key = tuple(int(i) for i in key)
            if len(key) != len(rank):
                raise InvalidSpecError(f"Coefficient {self.role} needs {len(rank)} indices, got {key}")
            if symmetric and key[0] > key[1]:
                raise InvalidSpecError(f"Coefficient {self.role} stores only the upper triangle, got index {key}")
            for term in terms:
                if term.state != "none" and not state_allowed:
                    raise InvalidSpecError(f"State factor '{term.state}' is not allowed in coefficient {self.role}")
            clean[key] = tuple(terms)
        object.__setattr__(self, "terms", clean)

    @classmethod
    def from_config(cls, role: str, raw) -> "Coefficient":
        # A bare list of terms is shorthand for the all-zero index.
        rank = len(ROLES.get(role, ("",))[0]) if role in ROLES else 0
        if isinstance(raw, list):
            raw = {",".join(["0"] * rank): raw}
        terms = {}
        for key, term_list in (raw or {}).items():
            index = tuple(int(i) for i in str(key).split(",") if i != "")
            terms[index] = tuple(TermSpec.from_dict(t) for t in term_list)
        return cls(role, terms)

    def to_config(self) -> dict:
        return {",".join(str(i) for i in key): [t.to_dict() for t in terms] for key, terms in self.terms.items()}

    def all_terms(self) -> list[TermSpec]:
        return [t for terms in self.terms.values() for t in terms]

    @property
    def is_zero(self) -> bool:
        return all(t.weight == 0.0 for t in self.all_terms())


@dataclass(frozen=True)
class ProblemSpec:
    """
    Full data tuple (ε, T, b, h, σ, f, g, φ, S) with declared constants (L, m, c).

    `epsilon` is a float in (0, 1] or the AVERAGED sentinel.
    """

    horizon: float
    coefficients: dict[str, Coefficient]
    epsilon: float | str = 1.0
    dim_x: int = 1
    dim_b: int = 1
    lipschitz_L: float = 1.0
    growth_m: int = 1
    obstacle_cap: float = 0.0
    name: str = "problem"

    def __post_init__(self):
        if not self.horizon > 0:
            raise InvalidSpecError(f"Horizon T must be positive, got {self.horizon}")
        if self.dim_x < 1 or self.dim_b < 1:
            raise InvalidSpecError("Spatial and Brownian dimensions must be positive")
        if self.epsilon != AVERAGED and not (0.0 < float(self.epsilon) <= 1.0):
            raise InvalidSpecError(f"epsilon must lie in (0, 1] or be '{AVERAGED}', got {self.epsilon}")
        if self.growth_m < 0 or int(self.growth_m) != self.growth_m:
            raise InvalidSpecError(f"growth_m must be a non-negative integer, got {self.growth_m}")
        if not self.lipschitz_L > 0:
            raise InvalidSpecError(f"lipschitz_L must be positive, got {self.lipschitz_L}")
        coeffs = {role: self.coefficients.get(role, Coefficient(role)) for role in ROLES}
        for role, coeff in coeffs.items():
            if coeff.role != role:
                raise InvalidSpecError(f"Coefficient stored under '{role}' has role '{coeff.role}'")
            shape = role_shape(role, self.dim_x, self.dim_b)
            max_degree = 1 if role in ("b", "h", "sigma", "S") else self.growth_m + 1
            for key, terms in coeff.terms.items():
                if any(i >= s for i, s in zip(key, shape)):
                    raise InvalidSpecError(f"Index {key} out of range for {role} with shape {shape}")
                for term in terms:
                    if term.spatial != "const" and term.axis >= self.dim_x:
                        raise InvalidSpecError(f"Spatial axis {term.axis} out of range in {role}")
                    if term.state in ("z", "tanh_z") and term.state_axis >= self.dim_b:
                        raise InvalidSpecError(f"State axis {term.state_axis} out of range in {role}")
                    if term.spatial == "monomial" and term.degree > max_degree:
                        raise InvalidSpecError(
                            f"Monomial degree {term.degree} in {role} exceeds the admissible {max_degree}"
                        )
                    if role == "phi" and term.temporal != "const":
                        raise InvalidSpecError("Terminal function phi cannot depend on time")
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def from_dict(cls, data: dict) -> "ProblemSpec":
        data = dict(data)
        raw = data.pop("coefficients", {})
        unknown = set(raw) - set(ROLES)
        if unknown:
            raise InvalidSpecError(f"Unknown coefficients: {sorted(unknown)}")
        coefficients = {role: Coefficient.from_config(role, raw.get(role)) for role in ROLES}
        epsilon = data.pop("epsilon", 1.0)
        epsilon = AVERAGED if epsilon == AVERAGED else float(epsilon)
        known = {"horizon", "dim_x", "dim_b", "lipschitz_L", "growth_m", "obstacle_cap", "name"}
        extra = set(data) - known
        if extra:
            raise InvalidSpecError(f"Unknown problem keys: {sorted(extra)}")
        return cls(coefficients=coefficients, epsilon=epsilon, **data)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "horizon": self.horizon,
            "epsilon": self.epsilon,
            "dim_x": self.dim_x,
            "dim_b": self.dim_b,
            "lipschitz_L": self.lipschitz_L,
            "growth_m": self.growth_m,
            "obstacle_cap": self.obstacle_cap,
            "coefficients": {role: c.to_config() for role, c in self.coefficients.items() if c.terms},
        }

    @property
    def is_averaged(self) -> bool:
        return self.epsilon == AVERAGED

    def with_epsilon(self, epsilon) -> "ProblemSpec":
        return replace(self, epsilon=epsilon)

    def oscillating_terms(self) -> list[TermSpec]:
        return [t for role in OSCILLATING_ROLES for t in self.coefficients[role].all_terms()]

    def is_time_independent(self) -> bool:
        """True when no driver or forward coefficient depends on the fast time variable."""
        return all(t.is_time_free for t in self.oscillating_terms())


def fast_time(t, epsilon) -> np.ndarray:
    """Rescaled time r/ε at which the oscillating coefficients are sampled."""
    if epsilon == AVERAGED:
        raise InvalidArgumentError("The averaged problem has no fast time")
    return np.asarray(t, dtype=float) / float(epsilon)


def as_points(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != dim:
        raise InvalidArgumentError(f"Expected trailing dimension {dim}, got shape {x.shape}")
    return x


def eval_coefficient(spec: ProblemSpec, which: str, t, x, y=0.0, z=None) -> np.ndarray:
    """
    Evaluate one coefficient of `spec` on broadcast arrays.

    Args:
        spec (ProblemSpec): problem holding the coefficient
        which (str): coefficient role (b, h, sigma, f, g, phi, S)
        t (float | np.ndarray): temporal argument, already rescaled by the caller (r/ε)
            for the oscillating coefficients; the real time for the obstacle S
        x (np.ndarray): spatial points of shape (..., n); scalars are accepted when n = 1
        y (np.ndarray): state y of shape (...), used only by f and g
        z (np.ndarray): state z of shape (..., d), used only by f and g

    Returns:
        np.ndarray: batch + role shape (vector for b, n×d matrix for σ, scalar for f, ...)
    """
    if which not in ROLES:
        raise InvalidSpecError(f"Unknown coefficient '{which}'")
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)) or np.any(t < 0):
        raise InvalidArgumentError("Time arguments must be finite and non-negative")
    x = as_points(x, spec.dim_x)
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("Spatial arguments must be finite")
    y = np.asarray(y, dtype=float)
    z = np.zeros(spec.dim_b) if z is None else as_points(z, spec.dim_b)

    coeff = spec.coefficients[which]
    rank, _, symmetric = ROLES[which]
    batch = np.broadcast_shapes(t.shape, x.shape[:-1], y.shape, z.shape[:-1])
    out = np.zeros(batch + role_shape(which, spec.dim_x, spec.dim_b))
    for key, terms in coeff.terms.items():
        total = np.zeros(batch)
        for term in terms:
            contribution = term.evaluate(t, x, y, z)
            if not np.all(np.isfinite(contribution)):
                raise NumericRangeError(f"Non-finite value in {which}[{key}] term {term.describe()}", term.describe())
            total = total + contribution
        out[(Ellipsis,) + key] = total
        if symmetric and key[0] != key[1]:
            out[(Ellipsis, key[1], key[0]) + key[2:]] = total
    return out


@dataclass(frozen=True)
class DriverEval:
    H: SymMatrix
    F: float


def driver_values(spec: ProblemSpec, sigma_set: CovarianceSet, t, x, v, p, a) -> tuple[np.ndarray, np.ndarray]:
    """
    Batched driver pair: H = σᵀAσ + 2 p·h + 2 g(t, x, v, pσ) and F = G(H) + p·b + f(t, x, v, pσ).

    x, p have trailing dimension n and a has trailing (n, n); all batch axes broadcast.
    """
    if sigma_set.dim != spec.dim_b:
        raise InvalidArgumentError(f"Covariance set dim {sigma_set.dim} does not match Brownian dim {spec.dim_b}")
    x = as_points(x, spec.dim_x)
    p = as_points(p, spec.dim_x)
    a = np.asarray(a, dtype=float)
    if spec.dim_x == 1 and (a.ndim < 2 or a.shape[-2:] != (1, 1)):
        a = a[..., None, None]
    if a.shape[-2:] != (spec.dim_x, spec.dim_x):
        raise InvalidArgumentError(f"Hessian shape {a.shape[-2:]} does not match spatial dim {spec.dim_x}")
    v = np.asarray(v, dtype=float)

    sig = eval_coefficient(spec, "sigma", t, x)
    z = np.einsum("...k,...kj->...j", p, sig)
    hmat = np.einsum("...ki,...kl,...lj->...ij", sig, a, sig)
    hmat = hmat + 2.0 * np.einsum("...k,...ijk->...ij", p, eval_coefficient(spec, "h", t, x))
    hmat = hmat + 2.0 * eval_coefficient(spec, "g", t, x, v, z)
    hmat = 0.5 * (hmat + np.swapaxes(hmat, -1, -2))

    drift = np.einsum("...k,...k->...", p, eval_coefficient(spec, "b", t, x))
    with np.errstate(over="ignore", invalid="ignore"):
        fvals = g_value_batch(hmat, sigma_set) + drift + eval_coefficient(spec, "f", t, x, v, z)
    if not (np.all(np.isfinite(hmat)) and np.all(np.isfinite(fvals))):
        raise NumericRangeError("Non-finite driver value while assembling (H, F)", "driver")
    return hmat, fvals


def assemble_driver(spec: ProblemSpec, sigma_set: CovarianceSet, t: float, x, v: float, p, a: SymMatrix) -> DriverEval:
    """Single-point driver assembly; `t` is the already-rescaled time."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if x.shape != (spec.dim_x,) or p.shape != (spec.dim_x,) or a.dim != spec.dim_x:
        raise InvalidArgumentError(
            f"Shapes x={x.shape}, p={p.shape}, A={a.dim}x{a.dim} inconsistent with n={spec.dim_x}"
        )
    hmat, fval = driver_values(spec, sigma_set, t, x, v, p, a.entries)
    return DriverEval(H=SymMatrix(hmat), F=float(fval))


def coefficient_sup(spec: ProblemSpec, which: str, times: np.ndarray, x: np.ndarray) -> float:
    """Largest entry magnitude of a state-free coefficient over a (time × node) sample."""
    values = eval_coefficient(spec, which, np.asarray(times)[:, None], np.asarray(x)[None, :])
    return float(np.max(np.abs(values))) if values.size else 0.0
