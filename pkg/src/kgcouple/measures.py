"""Translation-invariant Gaussian initial measures and their statistics.

Correlations q₀^{ij}_{nn'}(z) = c^{ij}_{nn'}·g(z) are stored as Fourier multipliers M(k), a 2d×2d Hermitian
matrix per lattice mode indexed by (i, n) → i·d + n. Second moments of ⟨Y(t), Z⟩ are exact through the
adjoint pullback; the ensemble runner is the Monte Carlo cross-check.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from typing import TYPE_CHECKING, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .config import thread_count
from .dynamics import (
    FieldState,
    FullState,
    ParticleState,
    TestFunctional,
    evolve,
    local_energy_norm,
    pairing,
    pullback_series,
)
from .errors import NotPSDError, SupportTooLargeError
from .model import ModelConfig, ProfileSpec
from .spectral import GridSpec, forward, fundamental_multiplier, helmholtz_multiplier, inverse_transform, transform

if TYPE_CHECKING:
    from .scattering import ScatteringProfiles

logger = logging.getLogger(__name__)

Matrix = Tuple[Tuple[float, ...], ...]
SeedLike = Union[int, np.random.SeedSequence, np.random.Generator, None]


def _square(name: str, m: Matrix, size: int) -> np.ndarray:
    arr = np.array(m, dtype=float)
    if arr.shape != (size, size):
        raise ValueError(f"{name} must be {size}x{size}, got shape {arr.shape}")
    return arr


class CovarianceSpec(BaseModel):
    """Initial correlation blocks c^{ij}·g with g = χ*χ, plus the particle covariance.

    χ is a truncated Gaussian bump of support bump_radius; g is normalized to g(0) = 1, so the lag-0
    covariance of component blocks is c^{ij} itself. c10 defaults to c01ᵀ, the only choice compatible
    with real fields and even g.
    """

    model_config = ConfigDict(frozen=True)

    bump_radius: float = Field(1.5, gt=0, description="Support radius of χ; g is supported in 2·bump_radius")
    bump_width: float = Field(0.5, gt=0, description="Gaussian width of χ")
    c00: Matrix = ((1.0,),)
    c01: Matrix = ((0.0,),)
    c10: Optional[Matrix] = None
    c11: Matrix = ((1.0,),)
    sigma_q: float = Field(0.5, ge=0, description="Particle position standard deviation")
    sigma_p: float = Field(0.5, ge=0, description="Particle momentum standard deviation")
    particle_cov: Optional[Matrix] = Field(None, description="Explicit 6x6 covariance of (q, p)")

    @model_validator(mode="after")
    def validate_blocks(self):
        d = len(self.c00)
        c00 = _square("c00", self.c00, d)
        c11 = _square("c11", self.c11, d)
        c01 = _square("c01", self.c01, d)
        if not np.allclose(c00, c00.T) or not np.allclose(c11, c11.T):
            raise ValueError("c00 and c11 must be symmetric")
        if self.c10 is not None and not np.allclose(_square("c10", self.c10, d), c01.T):
            raise ValueError("c10 must equal the transpose of c01")
        if self.particle_cov is not None:
            P = _square("particle_cov", self.particle_cov, 6)
            if not np.allclose(P, P.T):
                raise ValueError("particle_cov must be symmetric")
        return self

    @property
    def d(self) -> int:
        return len(self.c00)

    def coefficient_matrix(self) -> np.ndarray:
        """The 2d×2d matrix [[c00, c01], [c10, c11]]."""
        c01 = np.array(self.c01, dtype=float)
        c10 = c01.T if self.c10 is None else np.array(self.c10, dtype=float)
        return np.block([[np.array(self.c00, dtype=float), c01], [c10, np.array(self.c11, dtype=float)]])

    def particle_covariance(self) -> np.ndarray:
        if self.particle_cov is not None:
            return np.array(self.particle_cov, dtype=float)
        return np.diag([self.sigma_q**2] * 3 + [self.sigma_p**2] * 3)

    def bump(self) -> ProfileSpec:
        return ProfileSpec(amplitude=1.0, support_radius=self.bump_radius, width=self.bump_width)


class BlockDensity(BaseModel):
    """Per-mode 2d×2d blocks, shape (2d, 2d, N, N, N)."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    grid: GridSpec
    blocks: np.ndarray

    @property
    def d(self) -> int:
        return self.blocks.shape[0] // 2

    def block(self, i: int, j: int) -> np.ndarray:
        """q̂^{ij}_{nn'}(k), shape (d, d, N, N, N)."""
        d = self.d
        return self.blocks[i * d : (i + 1) * d, j * d : (j + 1) * d]

    def form(self, a: Tuple[np.ndarray, np.ndarray], b: Tuple[np.ndarray, np.ndarray]) -> float:
        """L⁻³ Re Σ_k Ψ(k)^H M(k) Χ(k) for field pairs a = (ψ⁰, ψ¹), b = (χ⁰, χ¹)."""
        A = _stacked_coeffs(a, self.grid)
        B = A if b is a else _stacked_coeffs(b, self.grid)
        total = np.einsum("axyz,abxyz,bxyz->", np.conj(A), self.blocks, B)
        return float(total.real) / self.grid.box_length**3

    def correlation(self) -> np.ndarray:
        """Blocks in x-space, q^{ij}_{nn'}(z) on the grid."""
        return inverse_transform(self.blocks, self.grid)


class SpectralDensity(BlockDensity):
    """Assembled initial density M(k) with the particle covariance and the per-mode square root."""

    particle_cov: np.ndarray
    sqrt_blocks: np.ndarray
    g_hat: np.ndarray


class LimitCovariance(BlockDensity):
    """Equilibrium blocks q̂_∞^{ij}_{nn'}(k)."""


class EnsembleStats(BaseModel):
    """Monte Carlo statistics of ⟨Y(t), Z_a⟩ with leave-one-out jackknife standard errors."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    M: int
    times: np.ndarray
    functional_ids: List[str]
    propagation: str
    seeds: List[int]
    means: np.ndarray
    mean_se: np.ndarray
    Q_emp: np.ndarray
    Q_se: np.ndarray
    char_values: np.ndarray
    char_se: np.ndarray
    gauss_gap: np.ndarray
    gauss_gap_se: np.ndarray
    moment_means: Optional[np.ndarray] = None
    moment_check: Optional[bool] = None


def _stacked_coeffs(pair: Tuple[np.ndarray, np.ndarray], grid: GridSpec) -> np.ndarray:
    return np.concatenate([forward(np.asarray(pair[0], dtype=float), grid), forward(np.asarray(pair[1], dtype=float), grid)])


def _per_mode(blocks: np.ndarray) -> np.ndarray:
    """(2d, 2d, N, N, N) → (N³, 2d, 2d)."""
    size = blocks.shape[0]
    return np.moveaxis(blocks.reshape(size, size, -1), -1, 0)


def _from_per_mode(mats: np.ndarray, shape: Tuple[int, int, int]) -> np.ndarray:
    size = mats.shape[-1]
    return np.moveaxis(mats, 0, -1).reshape((size, size) + shape)


@lru_cache(maxsize=8)
def assemble_spectral_density(spec: CovarianceSpec, grid: GridSpec) -> SpectralDensity:
    """M(k) = C ⊗ ĝ(k) with ĝ = |χ̂|², verified Hermitian PSD at every mode.

    Raises:
        SupportTooLargeError: If g's support 2·bump_radius is not below L/2.
        NotPSDError: If some eigenvalue is below −1e−12·trace, reporting the worst mode.
    """
    if 2.0 * spec.bump_radius >= grid.box_length / 2.0:
        logger.error(f"Correlation support {2.0 * spec.bump_radius} is not below L/2 = {grid.box_length / 2.0}")
        raise SupportTooLargeError(
            f"Correlation support 2*bump_radius={2.0 * spec.bump_radius} must be below L/2={grid.box_length / 2.0}"
        )
    chi = spec.bump().radial(grid.radius)
    g_hat = np.abs(transform(chi, grid).coeffs) ** 2
    g0 = grid.lattice_sum(g_hat)
    if g0 > 0:
        g_hat = g_hat / g0
    C = spec.coefficient_matrix()
    blocks = C[:, :, np.newaxis, np.newaxis, np.newaxis] * g_hat
    mats = _per_mode(blocks.astype(complex))
    eigvals, eigvecs = np.linalg.eigh(mats)
    trace = np.abs(np.trace(mats, axis1=1, axis2=2).real)
    slack = eigvals.min(axis=1) + 1e-12 * np.maximum(trace, np.finfo(float).tiny)
    worst = int(np.argmin(slack))
    if slack[worst] < 0:
        k_index = tuple(int(i) for i in np.unravel_index(worst, grid.shape))
        eig = float(eigvals[worst].min())
        logger.error(f"Spectral density not PSD: eigenvalue {eig:.3g} at mode {k_index}")
        raise NotPSDError(f"Spectral density is not PSD: eigenvalue {eig:.6g} at mode {k_index}", k_index=k_index, eigenvalue=eig)
    roots = np.sqrt(np.clip(eigvals, 0.0, None))
    sqrt_mats = np.einsum("kab,kb,kcb->kac", eigvecs, roots, np.conj(eigvecs))
    density = SpectralDensity(
        grid=grid,
        blocks=blocks,
        particle_cov=spec.particle_covariance(),
        sqrt_blocks=_from_per_mode(sqrt_mats, grid.shape),
        g_hat=g_hat,
    )
    for arr in (density.blocks, density.sqrt_blocks, density.g_hat, density.particle_cov):
        arr.setflags(write=False)
    logger.debug(f"Assembled spectral density for d={spec.d} on N={grid.grid_n}")
    return density


def _generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_initial(spec: CovarianceSpec, model: ModelConfig, seed: SeedLike) -> FullState:
    """Draw Y₀ from the Gaussian measure.

    Real white noise of variance h⁻³ per cell is transformed, shaped by M(k)^{1/2} and transformed back.
    The particle is drawn independently from its 6×6 Gaussian.
    """
    if spec.d != model.d:
        raise ValueError(f"covariance has d={spec.d} but model has d={model.d}")
    grid = model.grid
    density = assemble_spectral_density(spec, grid)
    rng = _generator(seed)
    d = model.d
    noise = rng.standard_normal((2 * d,) + grid.shape) / np.sqrt(grid.cell_volume)
    shaped = np.einsum("abxyz,bxyz->axyz", density.sqrt_blocks, forward(noise, grid))
    values = inverse_transform(shaped, grid)
    qp = rng.multivariate_normal(np.zeros(6), density.particle_cov, method="eigh")
    return FullState(
        field=FieldState(phi=values[:d], pi=values[d:]),
        particle=ParticleState(q=qp[:3], p=qp[3:]),
    )


def limit_covariance(source: Union[CovarianceSpec, BlockDensity], model: ModelConfig) -> LimitCovariance:
    """Equilibrium blocks from the initial density.

    q̂_∞^{00} = χ·½(q̂^{00} + q̂^{11}/(k²+m²)), q̂_∞^{01} = χ·½(q̂^{01} − q̂^{10}) = −q̂_∞^{10},
    q̂_∞^{11} = χ·½(q̂^{11} + (k²+m²)q̂^{00}), with χ_{nn'} = 1 iff m_n = m_{n'}. At a massless zero mode
    1/(k²+m²) is taken as 0.
    """
    density = assemble_spectral_density(source, model.grid) if isinstance(source, CovarianceSpec) else source
    grid = density.grid
    d = density.d
    if d != model.d:
        raise ValueError(f"density has d={d} but model has d={model.d}")
    q00, q01, q10, q11 = density.block(0, 0), density.block(0, 1), density.block(1, 0), density.block(1, 1)
    out = np.zeros_like(density.blocks, dtype=complex)
    for n, m_n in enumerate(model.masses):
        helm = helmholtz_multiplier(grid, m_n)
        inverse = fundamental_multiplier(grid, m_n)
        for n2, m_n2 in enumerate(model.masses):
            if m_n != m_n2:
                continue
            cross = 0.5 * (q01[n, n2] - q10[n, n2])
            out[n, n2] = 0.5 * (q00[n, n2] + inverse * q11[n, n2])
            out[n, d + n2] = cross
            out[d + n, n2] = -cross
            out[d + n, d + n2] = 0.5 * (q11[n, n2] + helm * q00[n, n2])
    return LimitCovariance(grid=grid, blocks=out)


def _flow_matrix(model: ModelConfig, t: float) -> np.ndarray:
    """Per-mode W(t) in the (i, n) layout, shape (2d, 2d, N, N, N)."""
    grid = model.grid
    d = model.d
    W = np.zeros((2 * d, 2 * d) + grid.shape)
    for n, mass in enumerate(model.masses):
        omega = np.sqrt(grid.k_squared + mass**2)
        safe = np.where(omega > 0, omega, 1.0)
        W[n, n] = np.cos(omega * t)
        W[n, d + n] = np.where(omega > 0, np.sin(omega * t) / safe, t)
        W[d + n, n] = -omega * np.sin(omega * t)
        W[d + n, d + n] = np.cos(omega * t)
    return W


def free_transport(density: BlockDensity, model: ModelConfig, t: float) -> LimitCovariance:
    """Covariance of W(t)Y when Y has the given blocks: W(k) M(k) W(k)ᵀ per mode."""
    W = _flow_matrix(model, t)
    blocks = np.einsum("abxyz,bcxyz,dcxyz->adxyz", W, density.blocks, W)
    return LimitCovariance(grid=density.grid, blocks=blocks)


def transport_defect(limit: BlockDensity, model: ModelConfig, t: float) -> float:
    """max |W(t)q_∞W(t)ᵀ − q_∞| per block entry, excluding the zero mode of massless components."""
    moved = free_transport(limit, model, t)
    diff = np.abs(moved.blocks - limit.blocks)
    d = model.d
    for n, mass in enumerate(model.masses):
        if mass == 0.0:
            for i in (0, 1):
                diff[i * d + n, :, 0, 0, 0] = 0.0
                diff[:, i * d + n, 0, 0, 0] = 0.0
    return float(diff.max(initial=0.0))


def quadratic_form_limit(
    limit: BlockDensity,
    psi: Tuple[np.ndarray, np.ndarray],
    other: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> float:
    """Q^ν_∞(ψ, χ) = Σ_{nn'} ⟨q_∞,nn'(x−y), ψ_n(x)⊗χ_{n'}(y)⟩ in Fourier space (χ = ψ when omitted)."""
    return limit.form(psi, psi if other is None else other)


def initial_form(density: SpectralDensity, Z1: TestFunctional, Z2: TestFunctional) -> float:
    """C₀(Z₁, Z₂) = E⟨Y₀, Z₁⟩⟨Y₀, Z₂⟩: field blocks plus the particle 6×6 term."""
    field = density.form((Z1.psi0, Z1.psi1), (Z2.psi0, Z2.psi1))
    particle = np.concatenate([Z1.u, Z1.v]) @ density.particle_cov @ np.concatenate([Z2.u, Z2.v])
    return float(field + particle)


def exact_Qt(
    Z1: TestFunctional,
    Z2: TestFunctional,
    t: float,
    spec: CovarianceSpec,
    model: ModelConfig,
    dt: Optional[float] = None,
) -> float:
    """E(⟨Y(t), Z₁⟩⟨Y(t), Z₂⟩) = C₀(U'(t)Z₁, U'(t)Z₂), without sampling."""
    return float(exact_Qt_series([Z1, Z2], [t], spec, model, dt=dt)[0, 0, 1])


def exact_Qt_series(
    Zs: Sequence[TestFunctional],
    times: Sequence[float],
    spec: CovarianceSpec,
    model: ModelConfig,
    dt: Optional[float] = None,
) -> np.ndarray:
    """Matrix of exact second moments per time, shape (len(times), len(Zs), len(Zs))."""
    dt = model.dt if dt is None else dt
    density = assemble_spectral_density(spec, model.grid)
    order = np.argsort(times, kind="stable")
    sorted_times = [float(times[i]) for i in order]
    pulled = [pullback_series(Z, sorted_times, dt, model) for Z in Zs]
    out = np.zeros((len(times), len(Zs), len(Zs)))
    for slot, idx in enumerate(order):
        for a in range(len(Zs)):
            for b in range(a, len(Zs)):
                out[idx, a, b] = out[idx, b, a] = initial_form(density, pulled[a][slot], pulled[b][slot])
    return out


def Q_infinity(
    Z: TestFunctional, limit: LimitCovariance, profiles: "ScatteringProfiles", model: ModelConfig
) -> float:
    """Q_∞(Z, Z) = Q^ν_∞(ψ^Z, ψ^Z)."""
    from .scattering import build_psi_Z

    psi_z = build_psi_Z(Z, profiles, model)
    return quadratic_form_limit(limit, psi_z)


def _jackknife_se(values: np.ndarray, statistic) -> np.ndarray:
    """Leave-one-out jackknife SE of statistic(mean over members) along axis 0."""
    M = values.shape[0]
    total = values.sum(axis=0)
    loo = (total[np.newaxis] - values) / (M - 1)
    stats = statistic(loo)
    center = stats.mean(axis=0)
    return np.sqrt((M - 1) / M * np.sum(np.abs(stats - center) ** 2, axis=0))


def _member_values(
    seed: np.random.SeedSequence,
    spec: CovarianceSpec,
    model: ModelConfig,
    Zs: Sequence[TestFunctional],
    times: Sequence[float],
    dt: float,
    radius: float,
    pulled: Optional[List[List[TestFunctional]]],
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    Y = sample_initial(spec, model, seed)
    grid = model.grid
    values = np.empty((len(times), len(Zs)))
    if pulled is not None:
        for slot in range(len(times)):
            for a in range(len(Zs)):
                values[slot, a] = pairing(Y, pulled[a][slot], grid)
        return values, None
    norms = np.empty(len(times))
    previous = 0.0
    for slot, t in enumerate(times):
        if t > previous:
            Y = evolve(Y, t - previous, dt, model, snapshot_stride=10**9).final
            previous = t
        for a, Z in enumerate(Zs):
            values[slot, a] = pairing(Y, Z, grid)
        norms[slot] = local_energy_norm(Y, radius, model) ** 2
    return values, norms


def ensemble_run(
    spec: CovarianceSpec,
    model: ModelConfig,
    Zs: Sequence[TestFunctional],
    times: Sequence[float],
    M: int,
    base_seed: int,
    functional_ids: Optional[Sequence[str]] = None,
    propagation: Literal["forward", "pullback"] = "forward",
    dt: Optional[float] = None,
    radius: Optional[float] = None,
    threads: Optional[int] = None,
) -> EnsembleStats:
    """Monte Carlo statistics over M members with seeds spawned from base_seed.

    Args:
        spec: Initial covariance.
        model: Model.
        Zs: Test functionals.
        times: Nondecreasing observation times.
        M: Ensemble size (≥ 2; ≥ 100 for meaningful standard errors).
        base_seed: Root of the SeedSequence; member j uses its j-th spawned child.
        functional_ids: Labels for Zs.
        propagation: "forward" evolves each member; "pullback" pairs Y₀ with U'(t)Z, which is identical
            by duality and much cheaper. The uniform moment check is only available going forward.
        dt: Time step (defaults to model.dt).
        radius: Ball radius for the moment check (defaults to L/4).
        threads: Worker threads (defaults to KGCOUPLE_THREADS or the CPU count).

    Returns:
        EnsembleStats. Member results are reduced in member order, so the statistics do not depend on
        the thread count.
    """
    if M < 2:
        raise ValueError(f"ensemble size M must be at least 2, got {M}")
    if M < 100:
        logger.warning(f"Ensemble size M={M} is below 100; standard errors will be rough")
    times = [float(t) for t in times]
    if any(b < a for a, b in zip(times, times[1:])) or (times and times[0] < 0):
        raise ValueError("times must be nonnegative and nondecreasing")
    if propagation not in ("forward", "pullback"):
        raise ValueError(f"Unknown propagation mode '{propagation}'")
    dt = model.dt if dt is None else dt
    radius = model.box_length / 4.0 if radius is None else radius
    ids = list(functional_ids) if functional_ids is not None else [f"Z{a}" for a in range(len(Zs))]
    children = np.random.SeedSequence(base_seed).spawn(M)
    pulled = [pullback_series(Z, times, dt, model) for Z in Zs] if propagation == "pullback" else None
    workers = threads or thread_count()
    logger.info(f"Running ensemble of M={M} ({propagation}) on {workers} threads")

    def run_member(child):
        return _member_values(child, spec, model, Zs, times, dt, radius, pulled)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(run_member, children))

    X = np.stack([r[0] for r in results])  # (M, T, A)
    products = X[:, :, :, np.newaxis] * X[:, :, np.newaxis, :]
    phases = np.exp(1j * X)
    diag = np.arange(len(Zs))

    def gap(mean_phase_and_square):
        phase_mean, square_mean = mean_phase_and_square
        return np.abs(phase_mean - np.exp(-0.5 * square_mean))

    char = phases.mean(axis=0)
    Q_emp = products.mean(axis=0)
    squares = X**2
    gauss_gap = gap((char, squares.mean(axis=0)))
    stacked = np.concatenate([phases, squares.astype(complex)], axis=-1)
    A = len(Zs)
    gap_se = _jackknife_se(stacked, lambda s: gap((s[..., :A], s[..., A:].real)))

    moment_means = None
    moment_check = None
    if propagation == "forward":
        norms = np.stack([r[1] for r in results])
        moment_means = norms.mean(axis=0)
        moment_check = bool(moment_means.max(initial=0.0) <= 3.0 * moment_means.mean()) if len(times) else True
        if not moment_check:
            logger.warning(f"Uniform moment check failed: max {moment_means.max():.4g} vs mean {moment_means.mean():.4g}")
    else:
        logger.info("Uniform moment check skipped: pullback propagation never forms Y(t); use forward to run it")

    stats = EnsembleStats(
        M=M,
        times=np.array(times),
        functional_ids=ids,
        propagation=propagation,
        seeds=[int(c.generate_state(1)[0]) for c in children],
        means=X.mean(axis=0),
        mean_se=_jackknife_se(X, lambda s: s),
        Q_emp=Q_emp,
        Q_se=_jackknife_se(products, lambda s: s),
        char_values=char,
        char_se=_jackknife_se(phases, lambda s: s),
        gauss_gap=gauss_gap,
        gauss_gap_se=gap_se,
        moment_means=moment_means,
        moment_check=moment_check,
    )
    logger.debug(f"Ensemble Q diagonal at last time: {Q_emp[-1][diag, diag] if len(times) else []}")
    return stats
