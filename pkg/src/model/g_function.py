import logging
from dataclasses import dataclass

import numpy as np

from src.errors import InvalidArgumentError
from src.model.utils_model import ValidationReport

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CovarianceSet:
    """
    Diagonal box Σ = {diag(s_1..s_n) : s_i in [lower_i, upper_i]} generating G.

    Args:
        lower (np.ndarray): per-axis variance lower bounds σ̲ᵢ²
        upper (np.ndarray): per-axis variance upper bounds σ̄ᵢ²

    Degenerate boxes (lower_i = 0) are accepted so that `check_nondegenerate`
    can report them; negative or inverted bounds are rejected.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.ndim != 1 or lower.shape != upper.shape or lower.size == 0:
            raise InvalidArgumentError("sigma_lower and sigma_upper must be non-empty vectors of the same length")
        if not (np.all(np.isfinite(upper)) and np.all(lower >= 0) and np.all(lower <= upper)):
            raise InvalidArgumentError(f"Invalid variance box: lower={lower.tolist()}, upper={upper.tolist()}")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def interval(cls, lower: float, upper: float) -> "CovarianceSet":
        return cls(np.array([lower]), np.array([upper]))

    @property
    def dim(self) -> int:
        return int(self.lower.size)

    @property
    def lower_min(self) -> float:
        return float(self.lower.min())

    @property
    def upper_max(self) -> float:
        return float(self.upper.max())

    def to_dict(self) -> dict:
        return {"sigma_lower": self.lower.tolist(), "sigma_upper": self.upper.tolist()}


@dataclass(frozen=True)
class SymMatrix:
    """Symmetric matrix stored as its upper triangle and mirrored on read."""

    upper_triangle: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.upper_triangle, dtype=float))
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidArgumentError(f"SymMatrix needs a square array, got shape {a.shape}")
        triu = np.triu(a)
        triu.setflags(write=False)
        object.__setattr__(self, "upper_triangle", triu)

    @classmethod
    def zeros(cls, dim: int) -> "SymMatrix":
        return cls(np.zeros((dim, dim)))

    @property
    def dim(self) -> int:
        return int(self.upper_triangle.shape[0])

    @property
    def entries(self) -> np.ndarray:
        u = self.upper_triangle
        return u + np.triu(u, 1).T

    def __add__(self, other: "SymMatrix") -> "SymMatrix":
        return SymMatrix(self.upper_triangle + other.upper_triangle)

    def __sub__(self, other: "SymMatrix") -> "SymMatrix":
        return SymMatrix(self.upper_triangle - other.upper_triangle)

    def scale(self, factor: float) -> "SymMatrix":
        return SymMatrix(factor * self.upper_triangle)


def g_value_batch(a: np.ndarray, sigma: CovarianceSet) -> np.ndarray:
    """
    Vectorized G over a stack of matrices of shape (..., d, d).

    Only the diagonal matters because Σ holds diagonal matrices:
    G(A) = ½ Σᵢ (σ̄ᵢ² max(aᵢᵢ, 0) + σ̲ᵢ² min(aᵢᵢ, 0)).
    """
    a = np.asarray(a, dtype=float)
    if a.ndim < 2 or a.shape[-1] != sigma.dim or a.shape[-2] != sigma.dim:
        raise InvalidArgumentError(f"Matrix shape {a.shape[-2:]} does not match covariance set dim {sigma.dim}")
    diag = np.diagonal(a, axis1=-2, axis2=-1)
    return 0.5 * (np.maximum(diag, 0.0) @ sigma.upper + np.minimum(diag, 0.0) @ sigma.lower)


def g_value(a: SymMatrix, sigma: CovarianceSet) -> float:
    """G(A) = ½ sup over Σ of tr(A·B), evaluated in closed form."""
    if a.dim != sigma.dim:
        raise InvalidArgumentError(f"Dimension mismatch: A is {a.dim}x{a.dim}, Σ has dim {sigma.dim}")
    return float(g_value_batch(a.entries, sigma))


def g_value_brute_force(a: SymMatrix, sigma: CovarianceSet, points_per_axis: int = 41) -> float:
    """½ max over a tensor grid of the box of tr(A·diag(s)); reference for small dims."""
    if a.dim != sigma.dim:
        raise InvalidArgumentError(f"Dimension mismatch: A is {a.dim}x{a.dim}, Σ has dim {sigma.dim}")
    axes = [np.linspace(lo, hi, points_per_axis) for lo, hi in zip(sigma.lower, sigma.upper)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, sigma.dim)
    return float(0.5 * np.max(mesh @ np.diagonal(a.entries)))


def check_nondegenerate(sigma: CovarianceSet) -> ValidationReport:
    """
    Report whether every axis has a strictly positive lower variance, together with
    the global ellipticity constants (min σ̲ᵢ², max σ̄ᵢ²).
    """
    report = ValidationReport("non-degeneracy of G")
    for i, (lo, hi) in enumerate(zip(sigma.lower, sigma.upper)):
        report.add(f"axis_{i}", lo > 0.0, observed=lo, declared=0.0, detail=f"[{lo}, {hi}]")
    report.metadata["ellipticity_lower"] = sigma.lower_min
    report.metadata["ellipticity_upper"] = sigma.upper_max
    report.metadata["covariance_set"] = sigma.to_dict()
    if not report.passed:
        logger.warning(f"Degenerate covariance set: lower bounds {sigma.lower.tolist()}")
    return report
