import logging
from typing import Any, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .config import load_config
from .dynamics import FieldState, FullState, ParticleState, TestFunctional
from .errors import ConfigValidationError
from .measures import CovarianceSpec
from .model import ModelConfig, ProfileSpec
from .resolvent import ContourSpec

logger = logging.getLogger(__name__)

EXPERIMENTS = ("check-model", "simulate", "energy-decay", "resolvent", "plemelj", "equilibrium", "scattering")
RANDOM_EXPERIMENTS = ("equilibrium",)

Vector3 = Tuple[float, float, float]


def _bump(model: ModelConfig, amplitude: float, radius: float, width: float, center: Vector3) -> np.ndarray:
    """Radial truncated-Gaussian bump centred at `center`, minimal image on the periodic box."""
    grid = model.grid
    L = grid.box_length
    offset = grid.positions - np.asarray(center, dtype=float)[:, np.newaxis, np.newaxis, np.newaxis]
    offset -= L * np.round(offset / L)
    r = np.sqrt(np.sum(offset**2, axis=0))
    return ProfileSpec(amplitude=amplitude, support_radius=radius, width=width).radial(r)


class InitialStateConfig(BaseModel):
    """Deterministic initial state: a radial field bump in φ of component 0 plus particle data."""

    q0: Vector3 = (0.0, 0.0, 0.0)
    p0: Vector3 = (1.0, 0.0, 0.0)
    field_amplitude: float = 1.0
    field_radius: float = Field(1.5, gt=0)
    field_width: float = Field(0.4, gt=0)

    def build(self, model: ModelConfig) -> FullState:
        state = FullState.zeros(model)
        phi = state.field.phi.copy()
        if self.field_amplitude:
            phi[0] = _bump(model, self.field_amplitude, self.field_radius, self.field_width, (0.0, 0.0, 0.0))
        return FullState(
            field=FieldState(phi=phi, pi=state.field.pi),
            particle=ParticleState(q=np.array(self.q0), p=np.array(self.p0)),
        )


class FunctionalSpec(BaseModel):
    """One test functional Z = (ψ, u, v) with an optional radial bump in one slot of one component."""

    id: str
    u: Vector3 = (0.0, 0.0, 0.0)
    v: Vector3 = (0.0, 0.0, 0.0)
    field_amplitude: float = 0.0
    field_slot: Literal[0, 1] = 0
    component: int = Field(0, ge=0)
    center: Vector3 = (0.0, 0.0, 0.0)
    radius: float = Field(1.0, gt=0)
    width: float = Field(0.4, gt=0)

    def build(self, model: ModelConfig) -> TestFunctional:
        if self.component >= model.d:
            raise ValueError(f"functional '{self.id}' uses component {self.component} but d={model.d}")
        Z = TestFunctional.zeros(model)
        psi0, psi1 = Z.psi0.copy(), Z.psi1.copy()
        if self.field_amplitude:
            target = psi0 if self.field_slot == 0 else psi1
            target[self.component] = _bump(model, self.field_amplitude, self.radius, self.width, self.center)
        return TestFunctional(psi0=psi0, psi1=psi1, u=np.array(self.u), v=np.array(self.v))


class TimeGridConfig(BaseModel):
    t_max: float = Field(6.0, ge=0)
    dt: Optional[float] = Field(None, gt=0, description="Overrides model.dt when set")
    times: List[float] = Field(default_factory=lambda: [0.0, 2.0, 4.0, 6.0])
    snapshot_stride: int = Field(10, ge=1)
    radii: List[float] = Field(default_factory=lambda: [2.0])

    @field_validator("times")
    @classmethod
    def validate_times(cls, v):
        if any(t < 0 for t in v) or any(b < a for a, b in zip(v, v[1:])):
            raise ValueError("times must be nonnegative and nondecreasing")
        return v


class EnsembleConfig(BaseModel):
    m: int = Field(200, ge=2, description="Ensemble size M")
    propagation: Literal["forward", "pullback"] = "pullback"
    radius: Optional[float] = Field(None, gt=0)


class ResolventConfig(ContourSpec):
    t_max: float = Field(6.0, gt=0)
    t_step: float = Field(0.01, gt=0)
    real_lambda_samples: int = Field(100, ge=1)

    def contour(self) -> ContourSpec:
        return ContourSpec(sigma=self.sigma, dy=self.dy, x_max=self.x_max, tail_tolerance=self.tail_tolerance)


class PlemeljConfig(BaseModel):
    xs: List[float] = Field(default_factory=lambda: [1.2, 1.5, 2.0, -1.5, 0.5])
    v: Vector3 = (1.0, 0.0, 0.0)
    eps: Tuple[float, float] = (1e-2, 1e-3)

    @field_validator("eps")
    @classmethod
    def validate_eps(cls, v):
        if not (v[0] > v[1] > 0):
            raise ValueError(f"eps must be two decreasing positive values, got {v}")
        return v


class ScatteringConfig(BaseModel):
    horizon: Optional[float] = Field(None, gt=0)
    ds: Optional[float] = Field(None, gt=0)
    times: List[float] = Field(default_factory=lambda: [0.0, 2.0, 4.0, 6.0])


class DecayConfig(BaseModel):
    radius: float = Field(2.0, gt=0, description="Ball radius R of the local energy norm")
    window: Optional[Tuple[float, float]] = None


class ExperimentConfig(BaseModel):
    """Validated experiment description; every section has defaults except the model's omega."""

    model_config = ConfigDict(extra="forbid")

    experiment: Literal[EXPERIMENTS] = "check-model"
    seed: Optional[int] = None
    output_dir: str = "kgcouple_out"
    model: ModelConfig
    initial: InitialStateConfig = Field(default_factory=InitialStateConfig)
    covariance: CovarianceSpec = Field(default_factory=CovarianceSpec)
    functionals: List[FunctionalSpec] = Field(default_factory=list)
    time_grid: TimeGridConfig = Field(default_factory=TimeGridConfig)
    ensemble: EnsembleConfig = Field(default_factory=EnsembleConfig)
    resolvent: ResolventConfig = Field(default_factory=ResolventConfig)
    plemelj: PlemeljConfig = Field(default_factory=PlemeljConfig)
    scattering: ScatteringConfig = Field(default_factory=ScatteringConfig)
    decay: DecayConfig = Field(default_factory=DecayConfig)

    @model_validator(mode="after")
    def validate_cross_sections(self):
        if self.experiment in RANDOM_EXPERIMENTS and self.seed is None:
            raise ValueError(f"experiment '{self.experiment}' draws random samples and needs a seed")
        if self.covariance.d != self.model.d:
            raise ValueError(f"covariance has d={self.covariance.d} but model has d={self.model.d}")
        ids = [f.id for f in self.functionals]
        if len(set(ids)) != len(ids):
            raise ValueError(f"functional ids must be unique, got {ids}")
        return self

    @property
    def dt(self) -> float:
        return self.time_grid.dt if self.time_grid.dt is not None else self.model.dt

    def echo(self) -> dict:
        return self.model_dump(mode="json")


def lower_keys(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k).lower(): lower_keys(v) for k, v in value.items()}
    if isinstance(value, list):
        return [lower_keys(v) for v in value]
    return value


def _format_error(error: dict) -> str:
    location = ".".join(str(part) for part in error.get("loc", ())) or "<root>"
    return f"{location}: {error.get('msg', 'invalid value')}"


def validate_config(data: dict) -> ExperimentConfig:
    """Validate a raw mapping into an ExperimentConfig.

    Raises:
        ConfigValidationError: With one message per problem found, each naming the field location.
    """
    try:
        return ExperimentConfig.model_validate(lower_keys(data))
    except ValidationError as e:
        errors = [_format_error(err) for err in e.errors()]
        logger.error(f"Configuration failed validation with {len(errors)} error(s)")
        raise ConfigValidationError(errors) from e


def parse_config(path: Optional[str] = None, quiet: bool = True) -> ExperimentConfig:
    """Load a configuration through the layered loader and validate it.

    Args:
        path: Custom config path; when None the local, home or bundled config is used.
        quiet: Suppress user-facing prints from the loader.

    Raises:
        ValueError: If the custom path does not exist.
        ConfigParseError: If the YAML is malformed (the message carries line and column).
        ConfigValidationError: If validation fails.
    """
    settings = load_config("kgcouple", path, quiet)
    return validate_config(settings.to_dict())
