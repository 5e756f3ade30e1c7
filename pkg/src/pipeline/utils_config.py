import copy
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from src.errors import ConfigError, InvalidArgumentError, InvalidSpecError
from src.model.coefficients import ProblemSpec
from src.model.g_function import CovarianceSet
from src.solvers.utils_solvers import Grid1D, NormWindow

logger = logging.getLogger(__name__)

ROOT_DIR = Path(__file__).resolve().parents[2]
CONFIG_DIR = ROOT_DIR / "config"
DEFAULTS_FILE = CONFIG_DIR / "defaults.json"
PRESETS_DIR = CONFIG_DIR / "presets"

TOP_LEVEL_KEYS = {
    "problem", "sigma_lower", "sigma_upper", "grid", "averaging", "lattice", "penalty",
    "epsilons", "window", "seed", "output_dir", "tolerances", "output", "validation",
}


def list_presets() -> list[str]:
    return sorted(p.stem for p in PRESETS_DIR.glob("*.json"))


def read_json(path: Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"Config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON in {path}: {e}") from e


def deep_merge(base: dict, override: dict) -> dict:
    """Recursive dict merge; lists and scalars in `override` replace those in `base`."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def resolve_source(source) -> tuple[dict, str]:
    """A dict, a path to a JSON file, or the name of a bundled preset."""
    if isinstance(source, dict):
        return source, source.get("problem", {}).get("name", "custom")
    path = Path(source)
    if path.suffix == ".json" or path.exists():
        return read_json(path), path.stem
    preset = PRESETS_DIR / f"{source}.json"
    if not preset.exists():
        raise ConfigError(f"Unknown preset '{source}'; available: {', '.join(list_presets())}")
    return read_json(preset), str(source)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment: the problem, its covariance set and grid, plus every run setting."""

    name: str
    problem: ProblemSpec
    sigma: CovarianceSet
    grid: Grid1D
    epsilons: tuple[float, ...]
    window: float = 0.6
    output_dir: Path = Path("data/output")
    seed: int = 0
    lattice: dict = field(default_factory=dict)
    penalty_n_list: tuple[float, ...] = ()
    averaging: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    validation: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        eps = self.epsilons
        if not eps:
            raise ConfigError("epsilons must contain at least one value")
        if any(not 0.0 < e <= 1.0 for e in eps):
            raise ConfigError(f"epsilons must lie in (0, 1], got {list(eps)}")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError(f"epsilons must be strictly decreasing, got {list(eps)}")
        if not 0.0 < self.window <= 1.0:
            raise ConfigError(f"window must lie in (0, 1], got {self.window}")
        levels = int(self.tolerances.get("richardson_levels", 3))
        if levels not in (2, 3):
            raise ConfigError(f"tolerances.richardson_levels must be 2 or 3, got {levels}")

    @property
    def norm_window(self) -> NormWindow:
        return NormWindow.inner(self.grid, self.window)

    @property
    def lattice_steps(self) -> int:
        return int(self.lattice.get("steps", 500))

    @property
    def lattice_x0(self) -> float:
        return float(self.lattice.get("x0", 0.0))

    @property
    def validation_box(self) -> tuple[float, float]:
        box = self.validation.get("box")
        if box is None:
            return (self.grid.x_min, self.grid.x_max)
        return (float(box[0]), float(box[1]))

    def tolerance(self, key: str, default: float) -> float:
        return float(self.tolerances.get(key, default))

    def with_overrides(self, output_dir=None, seed=None) -> "ExperimentConfig":
        changes = {}
        if output_dir is not None:
            changes["output_dir"] = Path(output_dir)
        if seed is not None:
            changes["seed"] = int(seed)
        return replace(self, **changes) if changes else self


def parse_config(data: dict, name: str = "custom") -> ExperimentConfig:
    unknown = set(data) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"Unknown config keys: {sorted(unknown)}")
    if not data.get("problem"):
        raise ConfigError("Config has no 'problem' block")

    try:
        problem = ProblemSpec.from_dict({"name": name, **data["problem"]})
        sigma = CovarianceSet(data["sigma_lower"], data["sigma_upper"])
        grid = Grid1D.from_config(data["grid"], problem.horizon)
    except KeyError as e:
        raise ConfigError(f"Missing config key {e}") from e
    except (InvalidSpecError, InvalidArgumentError) as e:
        raise ConfigError(str(e)) from e

    if sigma.dim != problem.dim_b:
        raise ConfigError(f"Covariance set has dim {sigma.dim} but the problem has d = {problem.dim_b}")

    return ExperimentConfig(
        name=problem.name,
        problem=problem,
        sigma=sigma,
        grid=grid,
        epsilons=tuple(float(e) for e in data.get("epsilons", [])),
        window=float(data.get("window", 0.6)),
        output_dir=Path(data.get("output_dir", "data/output")),
        seed=int(data.get("seed", 0)),
        lattice=dict(data.get("lattice") or {}),
        penalty_n_list=tuple(float(n) for n in (data.get("penalty") or {}).get("n_list", [])),
        averaging=dict(data.get("averaging") or {}),
        tolerances=dict(data.get("tolerances") or {}),
        output=dict(data.get("output") or {}),
        validation=dict(data.get("validation") or {}),
        raw=data,
    )


def load_experiment_config(source) -> ExperimentConfig:
    """Load a preset name, JSON path or dict and merge it over config/defaults.json."""
    data, name = resolve_source(source)
    merged = deep_merge(read_json(DEFAULTS_FILE), data)
    cfg = parse_config(merged, name)
    logger.info(f"Loaded config '{cfg.name}' (epsilons={list(cfg.epsilons)}, grid nx={cfg.grid.nx})")
    return cfg
