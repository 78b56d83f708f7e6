"""Coupled field-particle dynamics.

The flow U(t) is built by Strang composition of exact subflows: the free Klein-Gordon rotation of every
Fourier mode, the harmonic rotation of the particle, and the coupling kick. The loop runs on lattice
coefficients, so a step costs no transforms. The transposed splitting gives U'(t).
"""

import logging
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import linalg

from .errors import InstabilityError, MissingTrajectoryError, RadiusOutOfRangeError, SizeMismatchError
from .model import ModelConfig, build_coupling
from .spectral import GridSpec, forward, gradient, helmholtz_multiplier, inverse_transform, shells

logger = logging.getLogger(__name__)


def _as_float_array(v, what: str) -> np.ndarray:
    arr = np.array(v, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite entries")
    return arr


class FieldState(BaseModel):
    """Field pair (φ, π), each of shape (d, N, N, N)."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    phi: np.ndarray
    pi: np.ndarray

    @field_validator("phi", "pi", mode="before")
    @classmethod
    def validate_array(cls, v, info):
        return _as_float_array(v, info.field_name)

    @model_validator(mode="after")
    def validate_shapes(self):
        if self.phi.shape != self.pi.shape or self.phi.ndim != 4:
            raise SizeMismatchError(f"phi {self.phi.shape} and pi {self.pi.shape} must both be (d, N, N, N)")
        return self

    @classmethod
    def zeros(cls, model: ModelConfig) -> "FieldState":
        shape = (model.d,) + model.grid.shape
        return cls(phi=np.zeros(shape), pi=np.zeros(shape))


class ParticleState(BaseModel):
    """Particle position q and momentum p in R³."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    q: np.ndarray = Field(default_factory=lambda: np.zeros(3))
    p: np.ndarray = Field(default_factory=lambda: np.zeros(3))

    @field_validator("q", "p", mode="before")
    @classmethod
    def validate_vector(cls, v, info):
        arr = _as_float_array(v, info.field_name)
        if arr.shape != (3,):
            raise SizeMismatchError(f"{info.field_name} must be a 3-vector, got shape {arr.shape}")
        return arr


class FullState(BaseModel):
    """Y = (φ, q, π, p)."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    field: FieldState
    particle: ParticleState = Field(default_factory=ParticleState)

    @classmethod
    def zeros(cls, model: ModelConfig) -> "FullState":
        return cls(field=FieldState.zeros(model), particle=ParticleState())

    def check_model(self, model: ModelConfig) -> None:
        expected = (model.d,) + model.grid.shape
        if self.field.phi.shape != expected:
            raise SizeMismatchError(f"state field shape {self.field.phi.shape} does not match model {expected}")

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.field.phi.ravel(), self.field.pi.ravel(), self.particle.q, self.particle.p]
        )

    @classmethod
    def from_vector(cls, vec: np.ndarray, model: ModelConfig) -> "FullState":
        shape = (model.d,) + model.grid.shape
        size = int(np.prod(shape))
        return cls(
            field=FieldState(phi=vec[:size].reshape(shape), pi=vec[size : 2 * size].reshape(shape)),
            particle=ParticleState(q=vec[2 * size : 2 * size + 3], p=vec[2 * size + 3 : 2 * size + 6]),
        )


class TestFunctional(BaseModel):
    """Z = (ψ, u, v): field test pairs ψ = (ψ⁰, ψ¹) of shape (d, N, N, N) and particle vectors u, v."""

    __test__ = False  # not a pytest class

    model_config = ConfigDict(arbitrary_types_allowed=True)

    psi0: np.ndarray
    psi1: np.ndarray
    u: np.ndarray = Field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = Field(default_factory=lambda: np.zeros(3))

    @field_validator("psi0", "psi1", "u", "v", mode="before")
    @classmethod
    def validate_array(cls, v, info):
        return _as_float_array(v, info.field_name)

    @model_validator(mode="after")
    def validate_shapes(self):
        if self.psi0.shape != self.psi1.shape or self.psi0.ndim != 4:
            raise SizeMismatchError(f"psi0 {self.psi0.shape} and psi1 {self.psi1.shape} must both be (d, N, N, N)")
        if self.u.shape != (3,) or self.v.shape != (3,):
            raise SizeMismatchError("u and v must be 3-vectors")
        return self

    @classmethod
    def zeros(cls, model: ModelConfig) -> "TestFunctional":
        shape = (model.d,) + model.grid.shape
        return cls(psi0=np.zeros(shape), psi1=np.zeros(shape))

    def __add__(self, other: "TestFunctional") -> "TestFunctional":
        return TestFunctional(
            psi0=self.psi0 + other.psi0, psi1=self.psi1 + other.psi1, u=self.u + other.u, v=self.v + other.v
        )

    def __sub__(self, other: "TestFunctional") -> "TestFunctional":
        return self + (-1.0) * other

    def __rmul__(self, scale: float) -> "TestFunctional":
        return TestFunctional(psi0=scale * self.psi0, psi1=scale * self.psi1, u=scale * self.u, v=scale * self.v)

    @property
    def is_zero(self) -> bool:
        return not (np.any(self.psi0) or np.any(self.psi1) or np.any(self.u) or np.any(self.v))


class Trajectory(BaseModel):
    """Recorded evolution: particle every step, energies and local norms every snapshot."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    times: np.ndarray
    q: np.ndarray
    p: np.ndarray
    snapshot_times: np.ndarray
    energies: np.ndarray
    local_norms: Dict[float, np.ndarray] = Field(default_factory=dict)
    states: List[FullState] = Field(default_factory=list)
    final: FullState
    dt: float


def pairing(Y: FullState, Z: TestFunctional, grid: GridSpec) -> float:
    """⟨Y, Z⟩ = Σ_n ∫ (φ_n ψ⁰_n + π_n ψ¹_n) dx + q·u + p·v."""
    field_part = grid.grid_sum(Y.field.phi * Z.psi0 + Y.field.pi * Z.psi1).sum()
    return float(field_part + Y.particle.q @ Z.u + Y.particle.p @ Z.v)


@lru_cache(maxsize=64)
def _rotation(box_length: float, grid_n: int, mass: float, t: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-mode cos(ωt), sin(ωt)/ω and ω·sin(ωt), with the ω→0 limits t and 0."""
    grid = GridSpec(box_length=box_length, grid_n=grid_n)
    omega = np.sqrt(grid.k_squared + mass**2)
    cos = np.cos(omega * t)
    sin = np.sin(omega * t)
    safe = np.where(omega > 0, omega, 1.0)
    sin_over = np.where(omega > 0, sin / safe, t)
    omega_sin = omega * sin
    for arr in (cos, sin_over, omega_sin):
        arr.setflags(write=False)
    return cos, sin_over, omega_sin


def _rotation_for(model: ModelConfig, t: float) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    return [_rotation(model.box_length, model.grid_n, float(m), float(t)) for m in model.masses]


# coefficient-space kernels --------------------------------------------------------------------------


def _free_hat(phi_hat, pi_hat, rotations):
    for n, (c, s_over, w_s) in enumerate(rotations):
        a, b = phi_hat[n], pi_hat[n]
        phi_hat[n], pi_hat[n] = c * a + s_over * b, -w_s * a + c * b


def _free_adjoint_hat(psi0_hat, psi1_hat, rotations):
    for n, (c, s_over, w_s) in enumerate(rotations):
        a, b = psi0_hat[n], psi1_hat[n]
        psi0_hat[n], psi1_hat[n] = c * a - w_s * b, s_over * a + c * b


def _harmonic(q, p, omega, t):
    c, s = np.cos(omega * t), np.sin(omega * t)
    return c * q + (s / omega) * p, -omega * s * q + c * p


def _harmonic_adjoint(u, v, omega, t):
    c, s = np.cos(omega * t), np.sin(omega * t)
    return c * u - omega * s * v, (s / omega) * u + c * v


def _coupling_pairs(field_hat: np.ndarray, grad_rho_hat: np.ndarray, grid: GridSpec) -> np.ndarray:
    """(Σ_n ⟨f_n, ∂_i ρ_n⟩)_i from lattice coefficients."""
    prod = np.conj(field_hat[:, np.newaxis]) * grad_rho_hat
    return grid.lattice_sum(prod).real.sum(axis=0)


def _kick_hat(phi_hat, pi_hat, q, p, grad_rho_hat, grid, tau):
    pi_hat -= tau * np.einsum("i,nixyz->nxyz", q, grad_rho_hat)
    return p - tau * _coupling_pairs(phi_hat, grad_rho_hat, grid)


def _kick_adjoint_hat(psi0_hat, psi1_hat, u, v, grad_rho_hat, grid, tau):
    psi0_hat -= tau * np.einsum("i,nixyz->nxyz", v, grad_rho_hat)
    return u - tau * _coupling_pairs(psi1_hat, grad_rho_hat, grid)


def _energy_hat(phi_hat, pi_hat, q, p, model: ModelConfig, grad_rho_hat) -> float:
    grid = model.grid
    field = 0.0
    for n, mass in enumerate(model.masses):
        field += 0.5 * grid.lattice_sum(helmholtz_multiplier(grid, mass) * np.abs(phi_hat[n]) ** 2)
        field += 0.5 * grid.lattice_sum(np.abs(pi_hat[n]) ** 2)
    interaction = float(q @ _coupling_pairs(phi_hat, grad_rho_hat, grid))
    return float(field + interaction + 0.5 * (p @ p + model.omega**2 * (q @ q)))


def _energy_norm_sq_hat(phi_hat, pi_hat, q, p, model: ModelConfig) -> float:
    grid = model.grid
    total = 0.0
    for n, mass in enumerate(model.masses):
        total += grid.lattice_sum(helmholtz_multiplier(grid, mass) * np.abs(phi_hat[n]) ** 2 + np.abs(pi_hat[n]) ** 2)
    return float(total + q @ q + p @ p)


def _to_hat(Y: FullState, grid: GridSpec):
    return forward(Y.field.phi, grid), forward(Y.field.pi, grid), Y.particle.q.copy(), Y.particle.p.copy()


def _from_hat(phi_hat, pi_hat, q, p, grid: GridSpec) -> FullState:
    return FullState(
        field=FieldState(phi=inverse_transform(phi_hat, grid), pi=inverse_transform(pi_hat, grid)),
        particle=ParticleState(q=q, p=p),
    )


# public operations ----------------------------------------------------------------------------------


def free_field_step(state: FieldState, t: float, model: ModelConfig) -> FieldState:
    """Exact free Klein-Gordon flow W(t) applied mode by mode.

    φ̂ ← cos(ωt)φ̂ + ω⁻¹sin(ωt)π̂,  π̂ ← −ω sin(ωt)φ̂ + cos(ωt)π̂, with φ̂ ← φ̂ + tπ̂ at a massless zero mode.
    """
    grid = model.grid
    phi_hat, pi_hat = forward(state.phi, grid), forward(state.pi, grid)
    _free_hat(phi_hat, pi_hat, _rotation_for(model, t))
    return FieldState(phi=inverse_transform(phi_hat, grid), pi=inverse_transform(pi_hat, grid))


def free_field_adjoint_step(psi0: np.ndarray, psi1: np.ndarray, t: float, model: ModelConfig):
    """Transposed free flow W'(t) on a field test pair: ψ̂⁰ ← cψ̂⁰ − ω s ψ̂¹, ψ̂¹ ← ω⁻¹s ψ̂⁰ + cψ̂¹."""
    grid = model.grid
    a, b = forward(psi0, grid), forward(psi1, grid)
    _free_adjoint_hat(a, b, _rotation_for(model, t))
    return inverse_transform(a, grid), inverse_transform(b, grid)


def harmonic_step(particle: ParticleState, omega: float, t: float) -> ParticleState:
    """Exact oscillator rotation over time t."""
    if omega <= 0:
        raise ValueError(f"omega must be positive, got {omega}")
    q, p = _harmonic(particle.q, particle.p, omega, t)
    return ParticleState(q=q, p=p)


def coupling_kick(state: FullState, model: ModelConfig, dt: float) -> FullState:
    """Exact flow of the interaction term for time dt: π_n −= dt·q·∇ρ_n, p −= dt·Σ_n⟨φ_n, ∇ρ_n⟩."""
    grid = model.grid
    coupling = build_coupling(model)
    q, p = state.particle.q, state.particle.p
    pi = state.field.pi - dt * np.einsum("i,nixyz->nxyz", q, coupling.grad_rho)
    pairs = grid.grid_sum(state.field.phi[:, np.newaxis] * coupling.grad_rho).sum(axis=0)
    return FullState(
        field=FieldState(phi=state.field.phi.copy(), pi=pi),
        particle=ParticleState(q=q.copy(), p=p - dt * pairs),
    )


def _step_count(T: float, dt: float) -> Tuple[int, float]:
    if T < 0:
        raise ValueError(f"T must be nonnegative, got {T}")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if T == 0:
        return 0, dt
    steps = max(1, int(round(T / dt)))
    effective = T / steps
    if abs(effective - dt) > 1e-12 * dt:
        logger.debug(f"Adjusted dt from {dt} to {effective} to land on T={T}")
    return steps, effective


def evolve(
    Y0: FullState,
    T: float,
    dt: float,
    model: ModelConfig,
    snapshot_stride: int = 10,
    radii: Sequence[float] = (),
    keep_states: bool = False,
    guard: float = 10.0,
) -> Trajectory:
    """Strang-split evolution kick(dt/2) ∘ [free(dt) ⊕ harmonic(dt)] ∘ kick(dt/2).

    Args:
        Y0: Initial state.
        T: Final time (≥ 0). The step is adjusted slightly so an integer number of steps lands on T.
        dt: Time step.
        model: Model supplying masses, ω and the coupling profiles.
        snapshot_stride: Steps between energy / local-norm snapshots (the last step is always a snapshot).
        radii: Ball radii for local energy norms recorded at snapshots.
        keep_states: Keep a FullState per snapshot.
        guard: Raise InstabilityError when the energy norm squared exceeds guard times its initial value.

    Returns:
        Trajectory with q, p at every step.

    Raises:
        InstabilityError: If the energy grows past the guard or becomes non-finite.
    """
    Y0.check_model(model)
    grid = model.grid
    coupling = build_coupling(model)
    grad_hat = coupling.grad_rho_hat
    steps, h = _step_count(T, dt)
    rotations = _rotation_for(model, h)
    phi_hat, pi_hat, q, p = _to_hat(Y0, grid)

    times = np.arange(steps + 1) * h
    qs = np.empty((steps + 1, 3))
    ps = np.empty((steps + 1, 3))
    qs[0], ps[0] = q, p
    snap_times: List[float] = []
    energies: List[float] = []
    local: Dict[float, List[float]] = {float(R): [] for R in radii}
    states: List[FullState] = []
    initial_norm = _energy_norm_sq_hat(phi_hat, pi_hat, q, p, model)

    def snapshot(t: float) -> None:
        snap_times.append(t)
        energies.append(_energy_hat(phi_hat, pi_hat, q, p, model, grad_hat))
        if local or keep_states:
            Y = _from_hat(phi_hat, pi_hat, q, p, grid)
            for R in local:
                local[R].append(local_energy_norm(Y, R, model))
            if keep_states:
                states.append(Y)

    snapshot(0.0)
    for step in range(1, steps + 1):
        p = _kick_hat(phi_hat, pi_hat, q, p, grad_hat, grid, 0.5 * h)
        _free_hat(phi_hat, pi_hat, rotations)
        q, p = _harmonic(q, p, model.omega, h)
        p = _kick_hat(phi_hat, pi_hat, q, p, grad_hat, grid, 0.5 * h)
        qs[step], ps[step] = q, p
        if step % snapshot_stride == 0 or step == steps:
            norm = _energy_norm_sq_hat(phi_hat, pi_hat, q, p, model)
            if not np.isfinite(norm) or (initial_norm > 0 and norm > guard * initial_norm):
                ratio = norm / initial_norm if initial_norm > 0 else float("inf")
                logger.error(f"Energy grew by a factor {ratio:.3g} at t={times[step]:.6g} (dt={h})")
                raise InstabilityError(
                    f"Instability: energy grew by a factor {ratio:.3g} at t={times[step]:.6g}; "
                    f"reduce dt (now {h}) or check condition A1'",
                    time=float(times[step]),
                    ratio=float(ratio),
                )
            snapshot(float(times[step]))

    logger.debug(f"Evolved {steps} steps of dt={h} to T={T}")
    return Trajectory(
        times=times,
        q=qs,
        p=ps,
        snapshot_times=np.array(snap_times),
        energies=np.array(energies),
        local_norms={R: np.array(v) for R, v in local.items()},
        states=states,
        final=_from_hat(phi_hat, pi_hat, q, p, grid),
        dt=h,
    )


def hamiltonian(Y: FullState, model: ModelConfig) -> float:
    """H(Y) = Σ_n ∫ (|∇φ_n|²/2 + m_n²φ_n²/2 + π_n²/2 + φ_n q·∇ρ_n) dx + (|p|² + ω²|q|²)/2."""
    Y.check_model(model)
    phi_hat, pi_hat, q, p = _to_hat(Y, model.grid)
    return _energy_hat(phi_hat, pi_hat, q, p, model, build_coupling(model).grad_rho_hat)


def energy_norm(Y: FullState, model: ModelConfig) -> float:
    """‖Y‖_E with ‖Y‖_E² = Σ_n (‖∇φ_n‖² + m_n²‖φ_n‖² + ‖π_n‖²) + |q|² + |p|²."""
    phi_hat, pi_hat, q, p = _to_hat(Y, model.grid)
    return float(np.sqrt(_energy_norm_sq_hat(phi_hat, pi_hat, q, p, model)))


def local_energy_norm(Y: FullState, R: float, model: ModelConfig, kind: str = "energy") -> float:
    """Local seminorm over the ball |x| < R, including |q|² + |p|².

    Args:
        Y: State.
        R: Ball radius in (0, L/2]. R = L/2 covers the whole box.
        model: Model (masses, grid).
        kind: "energy" for Σ_n ∫_{|x|<R} (|∇φ_n|² + m_n²φ_n² + π_n²), or "sobolev" for
            Σ_n ∫_{|x|<R} (φ_n² + |∇φ_n|² + π_n²).

    Raises:
        RadiusOutOfRangeError: If R is not in (0, L/2].
    """
    grid = model.grid
    if not 0 < R <= grid.box_length / 2:
        raise RadiusOutOfRangeError(f"Radius {R} outside (0, L/2 = {grid.box_length / 2}]")
    if kind not in ("energy", "sobolev"):
        raise ValueError(f"Unknown local norm kind '{kind}'")
    mask = np.ones(grid.shape, dtype=bool) if R >= grid.box_length / 2 else grid.radius < R
    phi, pi = Y.field.phi, Y.field.pi
    density = np.zeros(grid.shape)
    if np.any(phi):
        grad = gradient(phi, grid)
        density += np.sum(grad**2, axis=(0, 1))
        if kind == "energy":
            density += np.einsum("n,nxyz->xyz", np.asarray(model.masses) ** 2, phi**2)
        else:
            density += np.sum(phi**2, axis=0)
    density += np.sum(pi**2, axis=0)
    total = grid.grid_sum(np.where(mask, density, 0.0)) + Y.particle.q @ Y.particle.q + Y.particle.p @ Y.particle.p
    return float(np.sqrt(total))


def adjoint_pullback(Z: TestFunctional, T: float, dt: float, model: ModelConfig) -> TestFunctional:
    """U'(T)Z, defined by ⟨U(T)Y, Z⟩ = ⟨Y, U'(T)Z⟩, via the transposed splitting.

    Each step applies K'(dt/2), then the transposed free and harmonic rotations, then K'(dt/2).
    """
    return pullback_series(Z, [T], dt, model)[0]


def pullback_series(Z: TestFunctional, times: Sequence[float], dt: float, model: ModelConfig) -> List[TestFunctional]:
    """U'(t)Z for nondecreasing times, each on the step evolve(·, t, dt) would use.

    Consecutive times sharing that step continue one chain of transposed steps; a time whose step differs
    restarts from Z, so every result lands exactly on its t.
    """
    grid = model.grid
    grad_hat = build_coupling(model).grad_rho_hat
    times = [float(t) for t in times]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("pullback times must be nondecreasing")
    results: List[TestFunctional] = []
    h, done, rotations = None, 0, None
    a = b = u = v = None
    for t in times:
        steps, step = _step_count(t, dt)
        if steps > 0 and (h is None or abs(step - h) > 1e-12 * h):
            if h is not None:
                logger.debug(f"Restarting pullback at t={t}: step {step} differs from {h}")
            h, done, rotations = step, 0, _rotation_for(model, step)
            a, b = forward(Z.psi0, grid), forward(Z.psi1, grid)
            u, v = Z.u.copy(), Z.v.copy()
        if steps == 0:
            results.append(TestFunctional(psi0=Z.psi0.copy(), psi1=Z.psi1.copy(), u=Z.u.copy(), v=Z.v.copy()))
            continue
        for _ in range(done, steps):
            u = _kick_adjoint_hat(a, b, u, v, grad_hat, grid, 0.5 * h)
            _free_adjoint_hat(a, b, rotations)
            u, v = _harmonic_adjoint(u, v, model.omega, h)
            u = _kick_adjoint_hat(a, b, u, v, grad_hat, grid, 0.5 * h)
        done = steps
        results.append(
            TestFunctional(psi0=inverse_transform(a, grid), psi1=inverse_transform(b, grid), u=u.copy(), v=v.copy())
        )
    return results


def trapezoid_weights(samples: np.ndarray) -> np.ndarray:
    """Composite trapezoid weights for (possibly nonuniform) increasing sample points."""
    samples = np.asarray(samples, dtype=float)
    w = np.zeros_like(samples)
    if samples.size > 1:
        gaps = np.diff(samples)
        w[:-1] += 0.5 * gaps
        w[1:] += 0.5 * gaps
    return w


def duhamel_reconstruct(
    phi0: FieldState,
    q_samples: Optional[np.ndarray],
    times: Optional[np.ndarray],
    T: float,
    model: ModelConfig,
) -> FieldState:
    """Field at time T from φ_n(T) = W_n(T)φ⁰_n − ∫₀ᵀ W_n(T−s)(0, ∇ρ_n)·q(s) ds.

    Args:
        phi0: Initial field pair.
        q_samples: Recorded particle positions, shape (len(times), 3).
        times: Increasing sample times covering [0, T].
        T: Reconstruction time.
        model: Model.

    Raises:
        MissingTrajectoryError: If no samples are given or they do not cover [0, T].
    """
    if q_samples is None or times is None or len(times) == 0:
        raise MissingTrajectoryError("duhamel_reconstruct needs recorded q(s) samples")
    times = np.asarray(times, dtype=float)
    q_samples = np.asarray(q_samples, dtype=float)
    if q_samples.shape != (times.size, 3):
        raise MissingTrajectoryError(f"q samples shape {q_samples.shape} does not match {times.size} times")
    if times[0] > 1e-12 or times[-1] < T - 1e-9 * max(1.0, T):
        raise MissingTrajectoryError(f"recorded times [{times[0]}, {times[-1]}] do not cover [0, {T}]")
    keep = times <= T + 1e-12
    s, qs = times[keep], q_samples[keep]
    weights = trapezoid_weights(s)

    grid = model.grid
    grad_hat = build_coupling(model).grad_rho_hat
    phi_hat, pi_hat = forward(phi0.phi, grid), forward(phi0.pi, grid)
    _free_hat(phi_hat, pi_hat, _rotation_for(model, T))
    if np.any(qs):
        shell_k2, shell_of = shells(grid)
        lag = T - s
        for n, mass in enumerate(model.masses):
            omega = np.sqrt(shell_k2 + mass**2)
            phase = np.outer(omega, lag)
            cos = np.cos(phase)
            safe = np.where(omega > 0, omega, 1.0)[:, np.newaxis]
            sin_over = np.where(omega[:, np.newaxis] > 0, np.sin(phase) / safe, lag[np.newaxis, :])
            weighted = qs * weights[:, np.newaxis]
            int_phi = sin_over @ weighted
            int_pi = cos @ weighted
            phi_hat[n] -= np.einsum("ixyz,xyzi->xyz", grad_hat[n], int_phi[shell_of])
            pi_hat[n] -= np.einsum("ixyz,xyzi->xyz", grad_hat[n], int_pi[shell_of])
    return FieldState(phi=inverse_transform(phi_hat, grid), pi=inverse_transform(pi_hat, grid))


def apriori_bound(Y0: FullState, T: float, dt: float, model: ModelConfig, snapshot_stride: int = 10) -> float:
    """Measured constant C in max_t ‖Y(t)‖_E ≤ C‖Y0‖_E over [0, T]."""
    initial = energy_norm(Y0, model)
    if initial == 0:
        return 0.0
    trajectory = evolve(Y0, T, dt, model, snapshot_stride=snapshot_stride, keep_states=True)
    return max(energy_norm(Y, model) for Y in trajectory.states) / initial


def generator_matrix(model: ModelConfig) -> np.ndarray:
    """Dense generator A of Ẏ = AY on the grid, state ordered as (φ, π, q, p) flattened.

    Columns are built by applying each block of the right-hand side to unit vectors. Intended for small grids.
    """
    grid = model.grid
    coupling = build_coupling(model)
    volume = int(np.prod(grid.shape))
    d = model.d
    size = 2 * d * volume + 6
    A = np.zeros((size, size))
    eye = np.eye(volume).reshape((volume,) + grid.shape)
    qo, po = 2 * d * volume, 2 * d * volume + 3
    for n, mass in enumerate(model.masses):
        phi_sl = slice(n * volume, (n + 1) * volume)
        pi_sl = slice(d * volume + n * volume, d * volume + (n + 1) * volume)
        A[phi_sl, pi_sl] = np.eye(volume)
        helm = inverse_transform(forward(eye, grid) * helmholtz_multiplier(grid, mass), grid)
        A[pi_sl, phi_sl] = -helm.reshape(volume, volume).T
        for i in range(3):
            g = coupling.grad_rho[n, i].ravel()
            A[pi_sl, qo + i] = -g
            A[po + i, phi_sl] = -grid.cell_volume * g
    A[qo : qo + 3, po : po + 3] = np.eye(3)
    A[po : po + 3, qo : qo + 3] = -(model.omega**2) * np.eye(3)
    return A


def dense_evolve(Y0: FullState, T: float, model: ModelConfig) -> FullState:
    """exp(AT)Y0 with the dense generator; the small-grid oracle for evolve."""
    A = generator_matrix(model)
    return FullState.from_vector(linalg.expm(A * T) @ Y0.to_vector(), model)
