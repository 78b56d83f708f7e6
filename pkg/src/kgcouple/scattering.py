"""Asymptotic projection profiles α, β, θ and the scattered functional ψ^Z.

All s-integrals are trapezoid sums on the kernel's sample times. Every integrand is a free rotation of a
fixed profile, so modes sharing a |k|² shell share their time integrals and each integral is evaluated
once per shell.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from .dynamics import TestFunctional, free_field_adjoint_step, pullback_series, trapezoid_weights
from .errors import HorizonError
from .measures import CovarianceSpec, assemble_spectral_density, initial_form
from .model import ModelConfig, build_coupling
from .resolvent import KernelN
from .spectral import GridSpec, forward, inverse_transform, shells

logger = logging.getLogger(__name__)

FieldPair = Tuple[np.ndarray, np.ndarray]


class ScatteringProfiles(BaseModel):
    """α_k^i and β_k^i as field pairs, shape (d, 3, 2, N, N, N); θ and ψ^Z once a functional is attached."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    alpha: np.ndarray
    beta: np.ndarray
    s_samples: np.ndarray
    horizon: float
    ds: float
    theta: Optional[np.ndarray] = None
    psi_Z: Optional[np.ndarray] = None

    def export_arrays(self, grid: GridSpec) -> Tuple[Dict[str, np.ndarray], dict]:
        """Arrays and a JSON-ready descriptor (shapes, grid, horizon) for the binary profile dump."""
        arrays = {"alpha": self.alpha, "beta": self.beta, "s_samples": self.s_samples}
        if self.theta is not None:
            arrays["theta"] = self.theta
        if self.psi_Z is not None:
            arrays["psi_Z"] = self.psi_Z
        descriptor = {
            "shapes": {name: list(arr.shape) for name, arr in arrays.items()},
            "grid": {"box_length": grid.box_length, "grid_n": grid.grid_n},
            "horizon": self.horizon,
            "ds": self.ds,
            "layout": "component, index i, pair slot (0: field, 1: momentum), x, y, z",
        }
        return arrays, descriptor


def _dispersion_by_shell(grid: GridSpec, mass: float) -> Tuple[np.ndarray, np.ndarray]:
    shell_k2, shell_of = shells(grid)
    return np.sqrt(shell_k2 + mass**2), shell_of


def _shell_trig(omega: np.ndarray, s: np.ndarray, weights: np.ndarray):
    """Weighted cos(ωs), sin(ωs) and sin(ωs)/ω per (shell, sample), with sin(ωs)/ω → s at ω = 0."""
    phase = np.outer(omega, s)
    cos = np.cos(phase) * weights
    sin = np.sin(phase) * weights
    safe = np.where(omega > 0, omega, 1.0)[:, np.newaxis]
    sin_over = np.where(omega[:, np.newaxis] > 0, sin / safe, s[np.newaxis, :] * weights)
    return cos, sin, sin_over


def _check_horizon(model: ModelConfig, kernel: KernelN, horizon: Optional[float]) -> float:
    limit = model.box_length / 2.0 - model.max_support
    horizon = float(kernel.t_samples[-1]) if horizon is None else float(horizon)
    if horizon >= limit:
        logger.error(f"Horizon {horizon} reaches the wraparound limit L/2 - R_rho = {limit}")
        raise HorizonError(f"Horizon S_max={horizon} must be below L/2 - R_rho = {limit}")
    if kernel.t_samples[0] > 1e-12 or kernel.t_samples[-1] < horizon - 1e-9:
        logger.error(f"Kernel covers [{kernel.t_samples[0]}, {kernel.t_samples[-1]}], horizon {horizon}")
        raise HorizonError(
            f"Kernel samples cover [{kernel.t_samples[0]}, {kernel.t_samples[-1]}], not [0, {horizon}]"
        )
    return horizon


def build_alpha_beta(
    model: ModelConfig, kernel: KernelN, horizon: Optional[float] = None, ds: Optional[float] = None
) -> ScatteringProfiles:
    """α_k^i = −Σ_r ∫₀^S N_ir(s) W'_k(−s)(∂_rρ_k, 0) ds and β_k^i likewise with (0, ∂_rρ_k).

    Per mode W'_k(−s)(g, 0) = (cos(ωs)g, −ω⁻¹sin(ωs)g) and W'_k(−s)(0, g) = (ω sin(ωs)g, cos(ωs)g).

    Args:
        model: Model.
        kernel: N(s) sampled on [0, S] at least.
        horizon: Truncation S (defaults to the last kernel sample).
        ds: Resampling step; the kernel samples are used as they are when omitted.

    Raises:
        HorizonError: If S reaches L/2 − R_ρ or the kernel does not cover [0, S].
    """
    horizon = _check_horizon(model, kernel, horizon)
    keep = kernel.t_samples <= horizon + 1e-12
    s = kernel.t_samples[keep]
    N = kernel.N_vals[keep]
    if ds is not None:
        grid_s = np.arange(0.0, horizon + 0.5 * ds, ds)
        N = np.array([[np.interp(grid_s, s, N[:, i, r]) for r in range(3)] for i in range(3)])
        N = np.moveaxis(N, -1, 0)
        s = grid_s
    weights = trapezoid_weights(s)
    step = float(np.mean(np.diff(s))) if s.size > 1 else 0.0

    grid = model.grid
    grad_hat = build_coupling(model).grad_rho_hat
    alpha_hat = np.zeros((model.d, 3, 2) + grid.shape, dtype=complex)
    beta_hat = np.zeros_like(alpha_hat)
    for k, mass in enumerate(model.masses):
        omega, shell_of = _dispersion_by_shell(grid, mass)
        cos, sin, sin_over = _shell_trig(omega, s, weights)
        # per shell and (i, r): ∫N_ir cos, ∫N_ir sin/ω, ∫N_ir ω sin
        Ic = np.einsum("hs,sir->hir", cos, N)
        Iso = np.einsum("hs,sir->hir", sin_over, N)
        Iws = np.einsum("hs,sir->hir", sin * omega[:, np.newaxis], N)
        for i in range(3):
            for r in range(3):
                g = grad_hat[k, r]
                alpha_hat[k, i, 0] -= g * Ic[shell_of, i, r]
                alpha_hat[k, i, 1] += g * Iso[shell_of, i, r]
                beta_hat[k, i, 0] -= g * Iws[shell_of, i, r]
                beta_hat[k, i, 1] -= g * Ic[shell_of, i, r]
    logger.info(f"Built alpha/beta profiles to horizon {horizon} with {s.size} samples")
    return ScatteringProfiles(
        alpha=inverse_transform(alpha_hat, grid),
        beta=inverse_transform(beta_hat, grid),
        s_samples=s,
        horizon=horizon,
        ds=step,
    )


def free_response_integrand(model: ModelConfig, psi: FieldPair, s: np.ndarray) -> np.ndarray:
    """f_in(s) = ⟨W_n(s)(0, ∂_iρ_n), ψ_n⟩ for every n and i, shape (d, 3, len(s))."""
    grid = model.grid
    grad_hat = build_coupling(model).grad_rho_hat
    psi0_hat = forward(np.asarray(psi[0], dtype=float), grid)
    psi1_hat = forward(np.asarray(psi[1], dtype=float), grid)
    out = np.zeros((model.d, 3, s.size))
    ones = np.ones(s.size)
    for n, mass in enumerate(model.masses):
        omega, shell_of = _dispersion_by_shell(grid, mass)
        cos, _, sin_over = _shell_trig(omega, s, ones)
        index = shell_of.ravel()
        for i in range(3):
            g = grad_hat[n, i]
            a = np.bincount(index, weights=(np.conj(psi0_hat[n]) * g).real.ravel(), minlength=omega.size)
            b = np.bincount(index, weights=(np.conj(psi1_hat[n]) * g).real.ravel(), minlength=omega.size)
            out[n, i] = (a @ sin_over + b @ cos) / grid.box_length**3
    return out


def build_theta(model: ModelConfig, profiles: ScatteringProfiles, psi: FieldPair) -> np.ndarray:
    """θ_kn = Σ_i ∫₀^S W'_k(−s)α_k^i ⟨W_n(s)(0, ∂_iρ_n), ψ_n⟩ ds, shape (d, d, 2, N, N, N)."""
    grid = model.grid
    s = profiles.s_samples
    weights = trapezoid_weights(s)
    F = free_response_integrand(model, psi, s)
    alpha_hat = forward(profiles.alpha, grid)
    theta_hat = np.zeros((model.d, model.d, 2) + grid.shape, dtype=complex)
    for k, mass in enumerate(model.masses):
        omega, shell_of = _dispersion_by_shell(grid, mass)
        cos, sin, sin_over = _shell_trig(omega, s, weights)
        for n in range(model.d):
            if not np.any(F[n]):
                continue
            C = cos @ F[n].T  # (shells, i)
            WS = (sin * omega[:, np.newaxis]) @ F[n].T
            SO = sin_over @ F[n].T
            for i in range(3):
                a0, a1 = alpha_hat[k, i, 0], alpha_hat[k, i, 1]
                theta_hat[k, n, 0] += C[shell_of, i] * a0 + WS[shell_of, i] * a1
                theta_hat[k, n, 1] += -SO[shell_of, i] * a0 + C[shell_of, i] * a1
    return inverse_transform(theta_hat, grid)


def build_psi_Z(Z: TestFunctional, profiles: ScatteringProfiles, model: ModelConfig) -> FieldPair:
    """ψ^Z_k = ψ_k − Σ_n θ_kn + α_k·u + β_k·v."""
    psi = np.stack([Z.psi0, Z.psi1], axis=1)  # (d, 2, N, N, N)
    out = psi.copy()
    if np.any(psi):
        out -= build_theta(model, profiles, (Z.psi0, Z.psi1)).sum(axis=1)
    out += np.einsum("kipxyz,i->kpxyz", profiles.alpha, Z.u)
    out += np.einsum("kipxyz,i->kpxyz", profiles.beta, Z.v)
    return out[:, 0], out[:, 1]


def attach_functional(Z: TestFunctional, profiles: ScatteringProfiles, model: ModelConfig) -> ScatteringProfiles:
    """Copy of the profiles carrying θ and ψ^Z for Z."""
    theta = build_theta(model, profiles, (Z.psi0, Z.psi1))
    psi_z = build_psi_Z(Z, profiles, model)
    return profiles.model_copy(update={"theta": theta, "psi_Z": np.stack(psi_z, axis=1)})


def hm_norm(psi: FieldPair, model: ModelConfig) -> float:
    """Σ_n ‖ψ⁰_n‖ + ‖ω_n⁻¹ψ̂⁰_n‖ + ‖ψ¹_n‖_{H¹}; the zero mode of a massless component is left out of ω⁻¹."""
    grid = model.grid
    total = 0.0
    for n, mass in enumerate(model.masses):
        a = forward(np.asarray(psi[0][n], dtype=float), grid)
        b = forward(np.asarray(psi[1][n], dtype=float), grid)
        omega2 = grid.k_squared + mass**2
        inv = np.zeros_like(omega2)
        np.divide(1.0, omega2, out=inv, where=omega2 > 0)
        total += np.sqrt(grid.lattice_sum(np.abs(a) ** 2))
        total += np.sqrt(grid.lattice_sum(inv * np.abs(a) ** 2))
        total += np.sqrt(grid.lattice_sum((1.0 + grid.k_squared) * np.abs(b) ** 2))
    return float(total)


def residual_series(
    Z: TestFunctional,
    times: Sequence[float],
    spec: CovarianceSpec,
    profiles: ScatteringProfiles,
    model: ModelConfig,
    dt: Optional[float] = None,
) -> np.ndarray:
    """E|⟨Y(t), Z⟩ − ⟨W(t)φ⁰, ψ^Z⟩|² for nondecreasing times.

    With A = U'(t)Z and B = (W'(t)ψ^Z, 0, 0) the residual is C₀(A, A) − 2C₀(A, B) + C₀(B, B), evaluated as
    C₀(A − B, A − B).
    """
    dt = model.dt if dt is None else dt
    density = assemble_spectral_density(spec, model.grid)
    psi0_z, psi1_z = build_psi_Z(Z, profiles, model)
    pulled = pullback_series(Z, times, dt, model)
    out = []
    for t, A in zip(times, pulled):
        b0, b1 = free_field_adjoint_step(psi0_z, psi1_z, float(t), model)
        B = TestFunctional(psi0=b0, psi1=b1)
        diff = A - B
        out.append(max(initial_form(density, diff, diff), 0.0))
    return np.array(out)


def residual_second_moment(
    Z: TestFunctional,
    t: float,
    spec: CovarianceSpec,
    profiles: ScatteringProfiles,
    model: ModelConfig,
    dt: Optional[float] = None,
) -> float:
    """E|⟨Y(t), Z⟩ − ⟨W(t)φ⁰, ψ^Z⟩|² computed exactly through the covariance pullback."""
    return float(residual_series(Z, [t], spec, profiles, model, dt=dt)[0])


def unit_functionals(model: ModelConfig) -> List[Tuple[str, TestFunctional]]:
    """(0, e_i, 0) and (0, 0, e_i) for i = 1..3."""
    out = []
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        out.append((f"u{i + 1}", TestFunctional.zeros(model).model_copy(update={"u": e})))
        out.append((f"v{i + 1}", TestFunctional.zeros(model).model_copy(update={"v": e.copy()})))
    return out
