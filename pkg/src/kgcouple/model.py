"""Physical model: masses, oscillator frequency and the coupling profiles ρ_n.

Profiles are radial, even and compactly supported. They are sampled on the periodic grid for the
dynamics, and their continuum transforms ρ̂_n(|k|) are available for the radial quadrature oracles.
"""

import logging
from functools import lru_cache
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import integrate, optimize, special

from .errors import SingularDenominatorError, SupportTooLargeError
from .spectral import GridSpec, SpectralField, gradient_coeffs, inverse_transform, transform

logger = logging.getLogger(__name__)


def _transition(u: np.ndarray) -> np.ndarray:
    """C^∞ step: 1 for u ≤ 0, 0 for u ≥ 1."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(u < 1.0, np.exp(-1.0 / np.where(u < 1.0, 1.0 - u, 1.0)), 0.0)
        b = np.where(u > 0.0, np.exp(-1.0 / np.where(u > 0.0, u, 1.0)), 0.0)
    return a / (a + b)


class ProfileSpec(BaseModel):
    """Radial coupling profile ρ_n with compact support |x| < R_ρ."""

    model_config = ConfigDict(frozen=True)

    amplitude: float = Field(..., description="Peak value a_n = ρ_n(0)")
    support_radius: float = Field(..., gt=0, description="Support radius R_ρ")
    shape: Literal["truncated-gaussian", "bspline-bump"] = "truncated-gaussian"
    width: float = Field(0.3, gt=0, description="Gaussian width (truncated-gaussian only)")
    cutoff_start: float = Field(
        0.6, gt=0, lt=1, description="Fraction of R_ρ where the smooth cutoff starts (truncated-gaussian only)"
    )

    def radial(self, r: np.ndarray) -> np.ndarray:
        """ρ(r), exactly zero for r ≥ R_ρ."""
        r = np.asarray(r, dtype=float)
        R = self.support_radius
        if self.shape == "truncated-gaussian":
            u = (r / R - self.cutoff_start) / (1.0 - self.cutoff_start)
            values = self.amplitude * np.exp(-0.5 * (r / self.width) ** 2) * _transition(u)
        else:
            # normalized overlap volume of two balls of radius R/2 at distance r
            b = 0.5 * R
            rc = np.minimum(r, 2.0 * b)
            values = self.amplitude * (4.0 * b + rc) * (2.0 * b - rc) ** 2 / (16.0 * b**3)
        return np.where(r < R, values, 0.0)

    def radial_transform(self, k: np.ndarray) -> np.ndarray:
        """Continuum transform ρ̂(|k|) = 4π ∫ ρ(r) r² sinc(kr) dr."""
        k = np.atleast_1d(np.abs(np.asarray(k, dtype=float)))
        if self.amplitude == 0.0:
            return np.zeros_like(k)
        if self.shape == "bspline-bump":
            b = 0.5 * self.support_radius
            ball = 4.0 * np.pi * b**3 / 3.0
            with np.errstate(divide="ignore", invalid="ignore"):
                kb = k * b
                s = np.where(
                    kb > 1e-4,
                    4.0 * np.pi * (np.sin(kb) - kb * np.cos(kb)) / np.where(k > 0, k, 1.0) ** 3,
                    ball * (1.0 - kb**2 / 10.0),
                )
            return self.amplitude * s**2 / ball
        nodes, weights = _gauss_legendre(self.support_radius)
        kr = np.multiply.outer(k, nodes)
        integrand = 4.0 * np.pi * nodes**2 * self.radial(nodes) * weights
        return np.sinc(kr / np.pi) @ integrand

    def transform_zeros(self, k_max: float) -> List[float]:
        """Radial zeros of ρ̂ in (0, k_max] that are known in closed form.

        The bspline-bump transform is the square of the ball transform, which vanishes where tan(κb) = κb.
        The truncated Gaussian has no closed-form zeros and returns an empty list.
        """
        if self.shape != "bspline-bump" or self.amplitude == 0.0:
            return []
        b = 0.5 * self.support_radius

        def ball(x: float) -> float:
            return np.sin(x) - x * np.cos(x)

        zeros = []
        j = 1
        while j * np.pi / b <= k_max:
            root = optimize.brentq(ball, j * np.pi, j * np.pi + 0.5 * np.pi, xtol=1e-14)
            if root / b <= k_max:
                zeros.append(root / b)
            j += 1
        return zeros

    def transform_cutoff(self) -> float:
        """Wavenumber beyond which |ρ̂| is negligible for quadrature purposes."""
        if self.shape == "truncated-gaussian":
            return max(60.0 / self.support_radius, 12.0 / self.width)
        return 200.0 / self.support_radius


class ModelConfig(BaseModel):
    """Field components, masses, oscillator frequency, coupling profiles and discretization."""

    model_config = ConfigDict(frozen=True)

    d: int = Field(1, ge=1, description="Number of field components")
    masses: Tuple[float, ...] = Field((1.0,), description="Masses m_n ≥ 0, one per component")
    omega: float = Field(..., gt=0, description="Oscillator frequency ω")
    profiles: Tuple[ProfileSpec, ...] = Field(..., description="Coupling profiles ρ_n, one per component")
    box_length: float = Field(16.0, gt=0, description="Periodic box length L")
    grid_n: int = Field(32, gt=0, description="Grid points per axis N (even)")
    dt: float = Field(0.01, gt=0, description="Time step")
    a3_threshold: float = Field(1e-10, gt=0, description="Relative threshold for the A3 transform minimum")

    @field_validator("grid_n")
    @classmethod
    def validate_even(cls, v):
        if v % 2 != 0:
            raise ValueError(f"grid_n must be even, got {v}")
        return v

    @field_validator("masses")
    @classmethod
    def validate_masses(cls, v):
        if any(m < 0 for m in v):
            raise ValueError(f"masses must be nonnegative, got {list(v)}")
        return v

    @model_validator(mode="after")
    def validate_shapes(self):
        if len(self.masses) != self.d:
            raise ValueError(f"masses has {len(self.masses)} entries but d={self.d}")
        if len(self.profiles) != self.d:
            raise ValueError(f"profiles has {len(self.profiles)} entries but d={self.d}")
        for n, profile in enumerate(self.profiles):
            if profile.support_radius >= self.box_length / 4.0:
                raise SupportTooLargeError(
                    f"profile {n} support radius {profile.support_radius} violates the support guard "
                    f"R_rho < L/4 = {self.box_length / 4.0}"
                )
        return self

    @property
    def grid(self) -> GridSpec:
        return GridSpec(box_length=self.box_length, grid_n=self.grid_n)

    @property
    def m_star(self) -> float:
        nonzero = [m for m in self.masses if m != 0.0]
        return min(nonzero) if nonzero else 0.0

    @property
    def max_support(self) -> float:
        return max(p.support_radius for p in self.profiles)

    def with_updates(self, **changes) -> "ModelConfig":
        return self.model_validate({**self.model_dump(), **changes})


class CouplingField(BaseModel):
    """Sampled profiles and their spectral gradients, shapes (d, N, N, N) and (d, 3, N, N, N)."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    rho: np.ndarray
    rho_hat: np.ndarray
    grad_rho: np.ndarray
    grad_rho_hat: np.ndarray

    @property
    def is_zero(self) -> bool:
        return not np.any(self.rho)


class ConditionReport(BaseModel):
    """Verdicts of conditions A1, A1' and A3 with the matrices behind them."""

    K: List[List[float]]
    K0: List[List[float]]
    m_star: float
    eig_A1: List[float]
    eig_A1p: List[float]
    a3_min_abs: float
    a3_threshold: float
    a3_continuum_min: Optional[float] = None
    a3_radial_zeros: List[float] = Field(default_factory=list)
    a1_holds: bool
    a1p_holds: bool
    a3_holds: bool

    @property
    def all_hold(self) -> bool:
        return self.a1_holds and self.a1p_holds and self.a3_holds

    def failures(self) -> List[str]:
        names = []
        if not self.a1_holds:
            names.append("A1")
        if not self.a1p_holds:
            names.append("A1'")
        if not self.a3_holds:
            names.append("A3")
        return names


def build_profile(spec: ProfileSpec, grid: GridSpec) -> Tuple[np.ndarray, SpectralField]:
    """Sample ρ_n on the grid and transform it.

    Args:
        spec: Profile parameters.
        grid: Grid to sample on.

    Returns:
        Tuple of the real grid samples (exactly zero for |x| ≥ R_ρ) and their lattice transform.

    Raises:
        SupportTooLargeError: If R_ρ ≥ L/4.
    """
    if spec.support_radius >= grid.box_length / 4.0:
        logger.error(f"Support radius {spec.support_radius} is not below L/4 = {grid.box_length / 4.0}")
        raise SupportTooLargeError(
            f"Support radius {spec.support_radius} must be below L/4 = {grid.box_length / 4.0}"
        )
    rho = spec.radial(grid.radius)
    return rho, transform(rho, grid)


@lru_cache(maxsize=8)
def build_coupling(model: ModelConfig) -> CouplingField:
    """Sampled ρ_n, real ρ̂_n and spectral gradients for every component (cached per model)."""
    grid = model.grid
    rho = np.empty((model.d,) + grid.shape)
    rho_hat = np.empty((model.d,) + grid.shape, dtype=complex)
    for n, spec in enumerate(model.profiles):
        rho[n], sf = build_profile(spec, grid)
        rho_hat[n] = sf.coeffs
    grad_rho_hat = gradient_coeffs(rho_hat, grid)
    grad_rho = inverse_transform(grad_rho_hat, grid)
    field = CouplingField(rho=rho, rho_hat=rho_hat, grad_rho=grad_rho, grad_rho_hat=grad_rho_hat)
    for arr in (field.rho, field.rho_hat, field.grad_rho, field.grad_rho_hat):
        arr.setflags(write=False)
    return field


def coupling_matrix(model: ModelConfig, shift: float) -> np.ndarray:
    """Lattice approximation of Σ_n (2π)⁻³ ∫ k_i k_j |ρ̂_n(k)|² / (k²+m_n²−s²) dk.

    Args:
        model: The model.
        shift: s² (use model.m_star**2 for K and 0 for K₀).

    Returns:
        Symmetric 3×3 matrix.

    Raises:
        SingularDenominatorError: If k²+m_n²−s² ≤ 0 at a retained lattice mode. The k=0 mode is dropped when
            m_n² = s², since its numerator vanishes there.
    """
    grid = model.grid
    coupling = build_coupling(model)
    kg = grid.gradient_wavevectors
    total = np.zeros((3, 3))
    for n, mass in enumerate(model.masses):
        weight = np.abs(coupling.rho_hat[n]) ** 2
        if not np.any(weight):
            continue
        denom = grid.k_squared + mass**2 - shift
        retained = np.ones(grid.shape, dtype=bool)
        if np.isclose(mass**2, shift, rtol=0.0, atol=1e-14):
            retained[0, 0, 0] = False
        bad = retained & (denom <= 0.0)
        if np.any(bad):
            mode = tuple(int(i) for i in np.argwhere(bad)[0])
            logger.error(f"Nonpositive denominator k²+m²−s² at mode {mode} for component {n}")
            raise SingularDenominatorError(
                f"k²+m_n²−s² ≤ 0 at lattice mode {mode} (component {n}, m={mass}, s²={shift})", mode=mode
            )
        ratio = np.where(retained, weight / np.where(retained, denom, 1.0), 0.0)
        for i in range(3):
            for j in range(i, 3):
                total[i, j] += grid.lattice_sum(kg[i] * kg[j] * ratio)
                total[j, i] = total[i, j]
    return total


def coupling_matrix_oracle(model: ModelConfig, shift: float) -> float:
    """Radial quadrature value κ with K = κ·I for radial profiles.

    Uses the angular average of k_i k_j (|k|²/3 δ_ij) and adaptive quadrature over |k|.
    """
    total = 0.0
    for spec, mass in zip(model.profiles, model.masses):
        if spec.amplitude == 0.0:
            continue

        def integrand(k, mass=mass, spec=spec):
            if k <= 0.0:
                return 0.0
            return k**4 * float(spec.radial_transform(k)[0]) ** 2 / (k * k + mass * mass - shift)

        value, _ = integrate.quad(integrand, 0.0, spec.transform_cutoff(), limit=400)
        total += value * 4.0 * np.pi / 3.0 / (2.0 * np.pi) ** 3
    return total


def _radial_minimum(spec: ProfileSpec, k_lo: float, k_hi: float, scan: int = 2001) -> float:
    """min |ρ̂(κ)| over κ ∈ [k_lo, k_hi], with local minima refined by bounded Brent."""
    kappa = np.linspace(k_lo, k_hi, scan)
    values = np.abs(spec.radial_transform(kappa))
    best = float(values.min())
    interior = np.flatnonzero((values[1:-1] <= values[:-2]) & (values[1:-1] <= values[2:])) + 1
    for idx in interior:
        res = optimize.minimize_scalar(
            lambda k: abs(float(spec.radial_transform(k)[0])),
            bounds=(kappa[idx - 1], kappa[idx + 1]),
            method="bounded",
            options={"xatol": 1e-12},
        )
        best = min(best, float(res.fun))
    return best


def a3_minimum(model: ModelConfig) -> Tuple[float, float]:
    """Minimum of |ρ̂_n(k)| over the lattice modes k ≠ 0, and the max of |ρ̂_n| over all modes."""
    coupling = build_coupling(model)
    mags = np.abs(coupling.rho_hat)
    nonzero_mode = model.grid.k_squared > 0
    best = min(float(mags[n][nonzero_mode].min()) for n in range(model.d))
    return best, float(mags.max(initial=0.0))


def a3_continuum_minimum(model: ModelConfig) -> float:
    """Minimum of the continuum |ρ̂_n(κ)| over the lattice's radial range, between the shells included.

    Advisory only: compactly supported profiles generally have isolated radial zeros, and the lattice
    decides A3 as long as none of them falls on a shell.
    """
    grid = model.grid
    k_lo, k_hi = grid.mode_spacing, float(grid.k_norm.max())
    values = [_radial_minimum(spec, k_lo, k_hi) for spec in model.profiles if spec.amplitude != 0.0]
    return min(values) if values else 0.0


def a3_radial_zeros(model: ModelConfig) -> List[float]:
    """Closed-form radial zeros of the profile transforms inside the lattice's radial range."""
    grid = model.grid
    k_lo, k_hi = grid.mode_spacing, float(grid.k_norm.max())
    zeros = []
    for spec in model.profiles:
        zeros.extend(float(k) for k in spec.transform_zeros(k_hi) if k >= k_lo)
    return sorted(zeros)


def check_conditions(model: ModelConfig, threshold: Optional[float] = None) -> ConditionReport:
    """Evaluate A1, A1' and A3 for a model.

    Args:
        model: The model.
        threshold: Relative A3 threshold; defaults to model.a3_threshold. A3 holds iff the minimum of |ρ̂_n|
            over the lattice modes k ≠ 0 exceeds threshold·max|ρ̂| and no closed-form radial zero of a
            profile transform lies inside the lattice's radial range. The continuum minimum between shells
            is reported but does not decide A3.

    Returns:
        ConditionReport with K, K₀, the eigenvalues of (ω²−m_*²)I−K and ω²I−K₀, and the verdicts. When the
        mass set mixes massless and massive components the A1 matrix is undefined on the lattice; K is then
        reported as NaN and A1 as failing.
    """
    threshold = model.a3_threshold if threshold is None else threshold
    m_star = model.m_star
    K0 = coupling_matrix(model, 0.0)
    try:
        K = coupling_matrix(model, m_star**2)
    except SingularDenominatorError as e:
        logger.warning(f"A1 matrix undefined for this mass set: {e}")
        K = np.full((3, 3), np.nan)
    if np.all(np.isfinite(K)):
        eig_a1 = np.linalg.eigvalsh((model.omega**2 - m_star**2) * np.eye(3) - K)
    else:
        eig_a1 = np.full(3, np.nan)
    eig_a1p = np.linalg.eigvalsh(model.omega**2 * np.eye(3) - K0)
    a3_min, scale = a3_minimum(model)
    zeros = a3_radial_zeros(model)
    continuum_min = a3_continuum_minimum(model)
    if zeros:
        logger.warning(f"Profile transform vanishes inside the lattice range at |k| = {zeros[:4]}")
    elif scale > 0.0 and continuum_min <= threshold * scale:
        logger.warning(
            f"Continuum transform dips to {continuum_min:.3g} between lattice shells; A3 is decided on the lattice"
        )
    report = ConditionReport(
        K=K.tolist(),
        K0=K0.tolist(),
        m_star=m_star,
        eig_A1=[float(x) for x in eig_a1],
        eig_A1p=[float(x) for x in eig_a1p],
        a3_min_abs=a3_min,
        a3_threshold=threshold,
        a3_continuum_min=continuum_min,
        a3_radial_zeros=zeros,
        a1_holds=bool(np.all(eig_a1 > 0)),
        a1p_holds=bool(np.all(eig_a1p > 0)),
        a3_holds=bool(a3_min > threshold * scale and not zeros),
    )
    logger.info(
        f"Conditions: A1={report.a1_holds} A1'={report.a1p_holds} A3={report.a3_holds} "
        f"(eig A1={report.eig_A1}, a3_min={a3_min:.3g})"
    )
    return report


@lru_cache(maxsize=16)
def _gauss_legendre(support_radius: float, order: int = 1024) -> Tuple[np.ndarray, np.ndarray]:
    x, w = special.roots_legendre(order)
    return 0.5 * support_radius * (x + 1.0), 0.5 * support_radius * w
