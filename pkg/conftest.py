import numpy as np
import pytest

from src.model.coefficients import ProblemSpec
from src.model.g_function import CovarianceSet
from src.pipeline.utils_config import PRESETS_DIR, deep_merge, load_experiment_config, read_json
from src.solvers.utils_solvers import Grid1D

DEEP_OBSTACLE = [{"weight": -1e10}]
X_SQUARED = [{"weight": 1.0, "spatial": {"kind": "monomial", "degree": 2}}]


def make_spec(horizon=1.0, epsilon=1.0, L=1.0, m=1, c=0.0, name="test", **coefficients) -> ProblemSpec:
    return ProblemSpec.from_dict({
        "name": name,
        "horizon": horizon,
        "epsilon": epsilon,
        "lipschitz_L": L,
        "growth_m": m,
        "obstacle_cap": c,
        "coefficients": coefficients,
    })


@pytest.fixture
def spec_factory():
    return make_spec


@pytest.fixture
def sigma_14():
    return CovarianceSet.interval(1.0, 4.0)


@pytest.fixture
def g_heat_spec():
    return make_spec(sigma=[{"weight": 1.0}], phi=X_SQUARED, S=DEEP_OBSTACLE)


@pytest.fixture
def small_grid():
    return Grid1D(-4.0, 4.0, 79, 1.0)


@pytest.fixture
def config_factory(tmp_path):
    """Preset merged with overrides, writing into a per-test directory."""

    def build(preset: str, **overrides):
        data = deep_merge(read_json(PRESETS_DIR / f"{preset}.json"), overrides)
        data["output_dir"] = str(tmp_path / preset)
        return load_experiment_config(data)

    return build


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
