"""
kgcouple - Spectral simulation of a Klein-Gordon field linearly coupled to a harmonic particle
"""

from .config import (
    init_config,
    load_config,
    thread_count,
    __version__,
)

from .errors import (
    BranchPointError,
    ConditionFailure,
    ConfigParseError,
    ConfigValidationError,
    DecayWindowError,
    HorizonError,
    InstabilityError,
    KgcoupleError,
    MissingTrajectoryError,
    NotPSDError,
    RadiusOutOfRangeError,
    SingularDenominatorError,
    SingularMatrixError,
    SizeMismatchError,
    SupportTooLargeError,
    TailToleranceError,
)
from .kgcouple_logging import configure_logging
from .spectral import GridSpec, SpectralField, transform, inverse_transform, gradient, shells
from .model import ModelConfig, ProfileSpec, CouplingField, ConditionReport, build_coupling, check_conditions
from .dynamics import (
    FieldState,
    ParticleState,
    FullState,
    TestFunctional,
    Trajectory,
    evolve,
    hamiltonian,
    energy_norm,
    local_energy_norm,
    adjoint_pullback,
    duhamel_reconstruct,
    dense_evolve,
)
from .resolvent import (
    ContourSpec,
    KernelN,
    DecayFit,
    H_of_lambda,
    D_of_lambda,
    N_tilde,
    inverse_laplace_N,
    plemelj_im_H,
    limiting_absorption_im_H,
    fit_decay,
)
from .measures import (
    CovarianceSpec,
    SpectralDensity,
    LimitCovariance,
    EnsembleStats,
    assemble_spectral_density,
    sample_initial,
    limit_covariance,
    exact_Qt,
    Q_infinity,
    ensemble_run,
)
from .scattering import (
    ScatteringProfiles,
    build_alpha_beta,
    build_psi_Z,
    residual_second_moment,
)
from .experiment_config import ExperimentConfig, parse_config
from .experiment_output import ExperimentOutput
from .experiment_processor import ExperimentProcessor
from .main import run

__all__ = [
    "__version__",
    "adjoint_pullback",
    "assemble_spectral_density",
    "BranchPointError",
    "build_alpha_beta",
    "build_coupling",
    "build_psi_Z",
    "check_conditions",
    "ConditionFailure",
    "ConditionReport",
    "ConfigParseError",
    "ConfigValidationError",
    "configure_logging",
    "ContourSpec",
    "CouplingField",
    "CovarianceSpec",
    "D_of_lambda",
    "DecayFit",
    "DecayWindowError",
    "dense_evolve",
    "duhamel_reconstruct",
    "energy_norm",
    "EnsembleStats",
    "ensemble_run",
    "evolve",
    "exact_Qt",
    "ExperimentConfig",
    "ExperimentOutput",
    "ExperimentProcessor",
    "FieldState",
    "fit_decay",
    "FullState",
    "gradient",
    "GridSpec",
    "H_of_lambda",
    "hamiltonian",
    "HorizonError",
    "init_config",
    "InstabilityError",
    "inverse_laplace_N",
    "inverse_transform",
    "KernelN",
    "KgcoupleError",
    "limit_covariance",
    "LimitCovariance",
    "limiting_absorption_im_H",
    "load_config",
    "local_energy_norm",
    "MissingTrajectoryError",
    "ModelConfig",
    "N_tilde",
    "NotPSDError",
    "parse_config",
    "ParticleState",
    "plemelj_im_H",
    "ProfileSpec",
    "Q_infinity",
    "RadiusOutOfRangeError",
    "residual_second_moment",
    "run",
    "sample_initial",
    "ScatteringProfiles",
    "shells",
    "SingularDenominatorError",
    "SingularMatrixError",
    "SizeMismatchError",
    "SpectralDensity",
    "SpectralField",
    "SupportTooLargeError",
    "TailToleranceError",
    "TestFunctional",
    "thread_count",
    "Trajectory",
    "transform",
]
