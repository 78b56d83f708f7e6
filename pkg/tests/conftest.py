import logging
import os

import numpy as np
import pytest

from kgcouple.dynamics import FieldState, FullState, ParticleState, TestFunctional
from kgcouple.model import ModelConfig, ProfileSpec
from kgcouple.spectral import GridSpec

KGCOUPLE_LOGGERS = [
    "kgcouple",
    "kgcouple.config",
    "kgcouple.spectral",
    "kgcouple.model",
    "kgcouple.dynamics",
    "kgcouple.resolvent",
    "kgcouple.measures",
    "kgcouple.scattering",
    "kgcouple.experiment_config",
    "kgcouple.experiment_output",
    "kgcouple.experiment_processor",
    "kgcouple.main",
    "dynaconf",
]


@pytest.fixture(autouse=True)
def reset_loggers():
    """Reset all kgcouple-related loggers before each test."""
    for name in KGCOUPLE_LOGGERS:
        logger = logging.getLogger(name)
        for handler in list(logger.handlers):
            handler.close()
        logger.handlers.clear()
        logger.setLevel(logging.NOTSET)
    yield


@pytest.fixture(autouse=True, scope="function")
def reset_env():
    """Reset key environment variables before each test."""
    env_keys = ["KGCOUPLE_SKIP_CONFIG_FILE_LOAD", "KGCOUPLE_SKIP_BUNDLED_CONFIG_LOAD", "KGCOUPLE_THREADS", "HOME"]
    original_env = {key: os.environ.get(key) for key in env_keys}
    yield
    for key in env_keys:
        if original_env[key] is None:
            os.environ.pop(key, None)
        else:
            os.environ[key] = original_env[key]


@pytest.fixture
def clean_cwd(tmp_path):
    """Change working directory to a clean temporary path to avoid loading real configs."""
    original_cwd = os.getcwd()
    os.chdir(tmp_path)
    yield tmp_path
    os.chdir(original_cwd)


def make_model(
    masses=(1.0,),
    omega=1.5,
    amplitude=0.5,
    support_radius=1.5,
    width=0.3,
    box_length=16.0,
    grid_n=16,
    dt=0.01,
    shape="truncated-gaussian",
) -> ModelConfig:
    profiles = tuple(
        ProfileSpec(amplitude=amplitude, support_radius=support_radius, width=width, shape=shape) for _ in masses
    )
    return ModelConfig(
        d=len(masses),
        masses=tuple(masses),
        omega=omega,
        profiles=profiles,
        box_length=box_length,
        grid_n=grid_n,
        dt=dt,
    )


def radial_bump(grid: GridSpec, radius: float, width: float = 0.4, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    offset = grid.positions - np.asarray(center, dtype=float)[:, None, None, None]
    offset -= grid.box_length * np.round(offset / grid.box_length)
    r = np.sqrt(np.sum(offset**2, axis=0))
    return ProfileSpec(amplitude=1.0, support_radius=radius, width=width).radial(r)


@pytest.fixture
def tiny_model():
    """d=1, m=(1), ω=1 on N=4, L=8: small enough for the dense generator oracle."""
    return make_model(masses=(1.0,), omega=1.0, amplitude=0.3, support_radius=1.5, width=0.6, box_length=8.0, grid_n=4)


@pytest.fixture
def small_model():
    """Massive coupled model on a coarse grid."""
    return make_model(grid_n=16)


@pytest.fixture
def uncoupled_model():
    return make_model(amplitude=0.0, grid_n=16)


@pytest.fixture
def random_state():
    def _make(model: ModelConfig, seed: int = 0, scale: float = 1.0) -> FullState:
        rng = np.random.default_rng(seed)
        shape = (model.d,) + model.grid.shape
        bump = radial_bump(model.grid, min(2.0, model.box_length / 4.0), width=0.6)
        phi = scale * bump * rng.standard_normal(shape)
        pi = scale * bump * rng.standard_normal(shape)
        return FullState(
            field=FieldState(phi=phi, pi=pi),
            particle=ParticleState(q=rng.standard_normal(3), p=rng.standard_normal(3)),
        )

    return _make


@pytest.fixture
def random_functional():
    def _make(model: ModelConfig, seed: int = 1) -> TestFunctional:
        rng = np.random.default_rng(seed)
        shape = (model.d,) + model.grid.shape
        bump = radial_bump(model.grid, min(2.0, model.box_length / 4.0), width=0.6)
        return TestFunctional(
            psi0=bump * rng.standard_normal(shape),
            psi1=bump * rng.standard_normal(shape),
            u=rng.standard_normal(3),
            v=rng.standard_normal(3),
        )

    return _make


def fast_config_data(experiment="check-model", amplitude=0.5, seed=5):
    """Raw (YAML-shaped) configuration small enough for end-to-end experiment runs."""
    return {
        "EXPERIMENT": experiment,
        "SEED": seed,
        "MODEL": {
            "d": 1,
            "masses": [1.0],
            "omega": 1.5,
            "box_length": 8.0,
            "grid_n": 8,
            "dt": 0.01,
            "profiles": [{"amplitude": amplitude, "support_radius": 1.5, "width": 0.3}],
        },
        "INITIAL": {"field_amplitude": 0.5, "field_radius": 1.5, "field_width": 0.4},
        "COVARIANCE": {"bump_radius": 1.0, "bump_width": 0.4, "c00": [[1.0]], "c01": [[0.0]], "c11": [[0.3]]},
        "FUNCTIONALS": [
            {"id": "q1", "u": [1.0, 0.0, 0.0]},
            {"id": "phi-bump", "field_amplitude": 1.0, "field_slot": 0},
        ],
        "TIME_GRID": {"t_max": 1.0, "dt": 0.05, "times": [0.0, 0.5, 1.0], "snapshot_stride": 2, "radii": [2.0]},
        "ENSEMBLE": {"m": 20, "propagation": "pullback"},
        "RESOLVENT": {"t_max": 1.0, "t_step": 0.05, "real_lambda_samples": 5},
        "PLEMELJ": {"xs": [1.5, 0.5], "v": [1.0, 0.0, 0.0]},
        "SCATTERING": {"horizon": 1.0, "times": [0.0, 0.5, 1.0]},
        "DECAY": {"radius": 2.0, "window": [0.5, 1.0]},
    }
