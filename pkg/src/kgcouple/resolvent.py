"""Laplace-domain response of the particle.

H(λ) is summed on the lattice grouped by |k|² shell, so each evaluation costs one pass over a few hundred
shells rather than over every mode. The time-domain kernel N(t) comes from a Bromwich line integral of
the remainder Ñ(λ) − I/(λ²+ω²); the free oscillator part is inverted in closed form.
"""

import logging
from functools import lru_cache
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import integrate

from .errors import (
    BranchPointError,
    DecayWindowError,
    SingularDenominatorError,
    SingularMatrixError,
    TailToleranceError,
)
from .model import ModelConfig, build_coupling
from .spectral import shells

logger = logging.getLogger(__name__)

BRANCH_GUARD = 1e-3
CONDITION_LIMIT = 1e12
MIN_FIT_SAMPLES = 10


class ContourSpec(BaseModel):
    """Vertical Bromwich line Re λ = σ sampled with step dy up to |Im λ| = x_max."""

    model_config = ConfigDict(frozen=True)

    sigma: float = Field(0.1, ge=0.01, le=0.1, description="Abscissa σ of the Bromwich line")
    dy: float = Field(0.02, gt=0, description="Trapezoid step along Im λ")
    x_max: float = Field(80.0, gt=0, description="Truncation X_max of the line")
    tail_tolerance: float = Field(1e-7, gt=0, description="Bound on the truncated tail")

    @model_validator(mode="after")
    def validate_aliasing(self):
        # trapezoid sampling with step dy aliases the kernel at period 2π/dy, damped by e^{−2πσ/dy}
        if np.exp(-2.0 * np.pi * self.sigma / self.dy) > 1e-10:
            raise ValueError(
                f"dy={self.dy} is too coarse for sigma={self.sigma}; need dy <= {2.0 * np.pi * self.sigma / 23.0:.4g}"
            )
        return self

    @property
    def sample_count(self) -> int:
        return int(np.ceil(self.x_max / self.dy)) + 1


class ResolventTable(BaseModel):
    """H, D and Ñ sampled at a list of λ."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    lambda_samples: np.ndarray
    H_vals: np.ndarray
    D_vals: np.ndarray
    Ntilde_vals: np.ndarray
    contour: Optional[ContourSpec] = None


class KernelN(BaseModel):
    """N(t) and Ṅ(t) on increasing sample times, shapes (T, 3, 3)."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    t_samples: np.ndarray
    N_vals: np.ndarray
    Ndot_vals: np.ndarray
    contour: ContourSpec
    imag_residue: float = 0.0
    tail_estimate: float = 0.0

    def rows(self) -> List[List[float]]:
        """CSV rows: t, the 9 entries of N, the 9 entries of Ṅ."""
        flat_n = self.N_vals.reshape(len(self.t_samples), 9)
        flat_nd = self.Ndot_vals.reshape(len(self.t_samples), 9)
        return [[float(t), *map(float, a), *map(float, b)] for t, a, b in zip(self.t_samples, flat_n, flat_nd)]

    @staticmethod
    def header() -> List[str]:
        return ["t"] + [f"N{i}{j}" for i in range(1, 4) for j in range(1, 4)] + [
            f"Ndot{i}{j}" for i in range(1, 4) for j in range(1, 4)
        ]


class DecayFit(BaseModel):
    """Least-squares decay fit: an exponential rate δ (value ∝ e^{−δt}) or a power-law slope on log(1+t)."""

    kind: Literal["exponential", "power"]
    rate_or_slope: float
    fit_window: Tuple[float, float]
    residual: float
    samples: int


@lru_cache(maxsize=8)
def _shell_weights(model: ModelConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per component and |k|² shell, G_ij = L⁻³ Σ_{k in shell} k_i k_j |ρ̂_n(k)|²."""
    grid = model.grid
    coupling = build_coupling(model)
    shell_k2, shell_of = shells(grid)
    index = shell_of.ravel()
    kg = grid.gradient_wavevectors
    G = np.zeros((model.d, shell_k2.size, 3, 3))
    for n in range(model.d):
        weight = np.abs(coupling.rho_hat[n]) ** 2
        for i in range(3):
            for j in range(i, 3):
                values = (kg[i] * kg[j] * weight).ravel()
                G[n, :, i, j] = np.bincount(index, weights=values, minlength=shell_k2.size)
                G[n, :, j, i] = G[n, :, i, j]
    G /= grid.box_length**3
    active = np.abs(G).reshape(model.d, shell_k2.size, 9).max(axis=2) > 0
    for arr in (G, active):
        arr.setflags(write=False)
    return shell_k2, G, active


def _H_batch(model: ModelConfig, lams: np.ndarray, floor: Optional[float] = None) -> np.ndarray:
    shell_k2, G, active = _shell_weights(model)
    lam2 = np.asarray(lams, dtype=complex) ** 2
    out = np.zeros((lam2.size, 3, 3), dtype=complex)
    for n, mass in enumerate(model.masses):
        if not np.any(active[n]):
            continue
        denom = shell_k2[np.newaxis, active[n]] + mass**2 + lam2[:, np.newaxis]
        if floor is not None:
            worst = np.unravel_index(np.argmin(np.abs(denom)), denom.shape)
            if abs(denom[worst]) <= floor:
                k2 = float(shell_k2[active[n]][worst[1]])
                mode = _representative_mode(model, k2)
                logger.error(f"Denominator |k²+m²+λ²| = {abs(denom[worst]):.3g} at mode {mode} (component {n})")
                raise SingularDenominatorError(
                    f"k²+m_n²+λ² is within {floor} of zero at lattice mode {mode} "
                    f"(|k|²={k2:.6g}, component {n}, λ={complex(lams[worst[0]])})",
                    mode=mode,
                )
        out += np.einsum("ls,sab->lab", 1.0 / denom, G[n, active[n]])
    return out


def _representative_mode(model: ModelConfig, k2: float) -> Tuple[int, int, int]:
    idx = np.argwhere(np.isclose(model.grid.k_squared, k2, rtol=0.0, atol=1e-9))
    return tuple(int(i) for i in idx[0]) if idx.size else (-1, -1, -1)


def H_of_lambda(model: ModelConfig, lam: complex, floor: float = 1e-10) -> np.ndarray:
    """H_ij(λ) = Σ_n L⁻³ Σ_k k_i k_j |ρ̂_n(k)|² / (k²+m_n²+λ²).

    Raises:
        SingularDenominatorError: If some retained denominator is within floor of zero.
    """
    return _H_batch(model, np.array([lam]), floor=floor)[0]


def D_of_lambda(model: ModelConfig, lam: complex, floor: float = 1e-10) -> np.ndarray:
    """D(λ) = (λ²+ω²)I − H(λ)."""
    lam = complex(lam)
    return (lam**2 + model.omega**2) * np.eye(3) - H_of_lambda(model, lam, floor=floor)


def N_tilde(model: ModelConfig, lam: complex, floor: float = 1e-10) -> np.ndarray:
    """Ñ(λ) = D(λ)⁻¹.

    Raises:
        SingularMatrixError: If the condition number of D(λ) exceeds 1e12.
    """
    D = D_of_lambda(model, lam, floor=floor)
    cond = float(np.linalg.cond(D))
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        logger.error(f"D(λ) is singular at λ={lam} (cond={cond:.3g})")
        raise SingularMatrixError(f"D(λ) is numerically singular at λ={lam} (cond={cond:.3g})", lam=lam, cond=cond)
    return np.linalg.solve(D, np.eye(3))


def resolvent_table(
    model: ModelConfig, lambdas: Sequence[complex], contour: Optional[ContourSpec] = None
) -> ResolventTable:
    lams = np.asarray(lambdas, dtype=complex)
    H = _H_batch(model, lams, floor=1e-10)
    D = (lams**2 + model.omega**2)[:, np.newaxis, np.newaxis] * np.eye(3) - H
    Ntilde = np.stack([N_tilde(model, lam) for lam in lams]) if lams.size else np.zeros((0, 3, 3), dtype=complex)
    return ResolventTable(lambda_samples=lams, H_vals=H, D_vals=D, Ntilde_vals=Ntilde, contour=contour)


def _remainder(model: ModelConfig, lams: np.ndarray) -> np.ndarray:
    """R(λ) = Ñ(λ) − I/(λ²+ω²) = Ñ(λ)H(λ)/(λ²+ω²), without the cancellation of the difference."""
    H = _H_batch(model, lams)
    a = lams**2 + model.omega**2
    D = a[:, np.newaxis, np.newaxis] * np.eye(3) - H
    return np.linalg.solve(D, H) / a[:, np.newaxis, np.newaxis]


def inverse_laplace_N(
    model: ModelConfig, t_grid: Sequence[float], contour: Optional[ContourSpec] = None, chunk: int = 256
) -> KernelN:
    """N(t) = (2πi)⁻¹ ∫ e^{λt} Ñ(λ) dλ along Re λ = σ, with Ṅ from λÑ(λ).

    The free part gives sin(ωt)/ω·I and cos(ωt)·I exactly. The remainder is sampled at σ + i·y_j with
    y_j = j·dy, |y_j| ≤ x_max, and summed with the trapezoid rule. The two halves of the line are kept
    separate so the imaginary residue of the sum can be reported before it is discarded.

    Raises:
        TailToleranceError: If the truncated tail estimate exceeds contour.tail_tolerance.
    """
    contour = contour or ContourSpec()
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0 or np.any(np.diff(t) <= 0) or t[0] < 0:
        raise ValueError("t_grid must be a nonempty increasing sequence of nonnegative times")
    sigma, dy = contour.sigma, contour.dy
    count = contour.sample_count
    y = np.arange(-(count - 1), count) * dy
    weights = np.full(y.size, dy)
    weights[[0, -1]] *= 0.5
    lams = sigma + 1j * y
    R = _remainder(model, lams)
    lamR = lams[:, np.newaxis, np.newaxis] * R

    x_edge = y[-1]
    t_max = float(t[-1])
    # beyond the lattice spectrum R ~ |λ|⁻⁶ and λR ~ |λ|⁻⁵
    tail = np.exp(sigma * t_max) / np.pi * x_edge * max(np.linalg.norm(R[-1]) / 5.0, np.linalg.norm(lamR[-1]) / 4.0)
    if not np.isfinite(tail) or tail > contour.tail_tolerance:
        logger.error(f"Bromwich tail estimate {tail:.3g} exceeds tolerance {contour.tail_tolerance}")
        raise TailToleranceError(
            f"Contour truncation at X_max={contour.x_max} leaves tail {tail:.3g} > {contour.tail_tolerance}; "
            f"increase x_max"
        )

    r = np.empty((t.size, 3, 3), dtype=complex)
    rdot = np.empty((t.size, 3, 3), dtype=complex)
    for start in range(0, t.size, chunk):
        ts = t[start : start + chunk]
        phase = np.exp(1j * np.outer(ts, y)) * weights
        scale = (np.exp(sigma * ts) / (2.0 * np.pi))[:, np.newaxis, np.newaxis]
        r[start : start + chunk] = scale * np.einsum("tj,jab->tab", phase, R)
        rdot[start : start + chunk] = scale * np.einsum("tj,jab->tab", phase, lamR)

    scale_ref = max(1.0, float(np.abs(r.real).max()), float(np.abs(rdot.real).max()))
    residue = max(float(np.abs(r.imag).max()), float(np.abs(rdot.imag).max()))
    if residue > 1e-8 * scale_ref:
        logger.warning(f"Inverse Laplace imaginary residue {residue:.3g} exceeds 1e-8")
    else:
        logger.debug(f"Inverse Laplace imaginary residue {residue:.3g}")

    omega = model.omega
    eye = np.eye(3)
    N_vals = (np.sin(omega * t) / omega)[:, np.newaxis, np.newaxis] * eye + r.real
    Ndot_vals = np.cos(omega * t)[:, np.newaxis, np.newaxis] * eye + rdot.real
    logger.info(f"Inverted N(t) on {t.size} times with {y.size} contour samples (tail {tail:.2g})")
    return KernelN(
        t_samples=t,
        N_vals=N_vals,
        Ndot_vals=Ndot_vals,
        contour=contour,
        imag_residue=residue,
        tail_estimate=float(tail),
    )


def kernel_envelope(kernel: KernelN, omega: float) -> np.ndarray:
    """√(ω²‖N(t)‖² + ‖Ṅ(t)‖²), which removes the oscillation of a damped rotation."""
    n = np.linalg.norm(kernel.N_vals, axis=(1, 2))
    nd = np.linalg.norm(kernel.Ndot_vals, axis=(1, 2))
    return np.sqrt(omega**2 * n**2 + nd**2)


# Lebedev rule of order 7 on the unit sphere (weights sum to 1)
def _lebedev26() -> Tuple[np.ndarray, np.ndarray]:
    points, weights = [], []
    for axis in range(3):
        for sign in (1.0, -1.0):
            p = np.zeros(3)
            p[axis] = sign
            points.append(p)
            weights.append(1.0 / 21.0)
    c = 1.0 / np.sqrt(2.0)
    for a, b in ((0, 1), (0, 2), (1, 2)):
        for sa in (1.0, -1.0):
            for sb in (1.0, -1.0):
                p = np.zeros(3)
                p[a], p[b] = sa * c, sb * c
                points.append(p)
                weights.append(4.0 / 105.0)
    c = 1.0 / np.sqrt(3.0)
    for sx in (1.0, -1.0):
        for sy in (1.0, -1.0):
            for sz in (1.0, -1.0):
                points.append(np.array([sx, sy, sz]) * c)
                weights.append(9.0 / 280.0)
    return np.array(points), np.array(weights)


LEBEDEV_POINTS, LEBEDEV_WEIGHTS = _lebedev26()


def plemelj_im_H(model: ModelConfig, x: float, v: Sequence[float]) -> float:
    """v·Im H(ix+0)v = −sign(x)·π·Σ_{m_n<|x|} (2π)⁻³ ∫_{|k|=κ_n} (v·k)²|ρ̂_n(k)|²/(2|k|) dS, κ_n = √(x²−m_n²).

    The sphere integral uses a fixed 26-point rule; ρ̂_n is the continuum transform of the profile.

    Raises:
        BranchPointError: If |x| is within 1e-3 of some m_n.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"v must be a 3-vector, got shape {v.shape}")
    for n, mass in enumerate(model.masses):
        if abs(abs(x) - mass) < BRANCH_GUARD:
            logger.error(f"x={x} is inside the guard band of branch point m_{n}={mass}")
            raise BranchPointError(f"|x|={abs(x)} is within {BRANCH_GUARD} of the branch point m_{n}={mass}")
    total = 0.0
    for spec, mass in zip(model.profiles, model.masses):
        if mass >= abs(x) or spec.amplitude == 0.0:
            continue
        kappa = np.sqrt(x * x - mass * mass)
        rho_sq = float(spec.radial_transform(kappa)[0]) ** 2
        directional = (LEBEDEV_POINTS @ v) ** 2 * kappa**2
        sphere = 4.0 * np.pi * kappa**2 * float(LEBEDEV_WEIGHTS @ directional)
        total += sphere * rho_sq / (2.0 * kappa) / (2.0 * np.pi) ** 3
    return float(-np.sign(x) * np.pi * total)


def radial_H(model: ModelConfig, lam: complex) -> np.ndarray:
    """Continuum H(λ) = h(λ)·I for radial profiles, h = (2π)⁻³(4π/3) Σ_n ∫ κ⁴|ρ̂_n(κ)|²/(κ²+m_n²+λ²) dκ."""
    lam = complex(lam)
    lam2 = lam * lam
    total = 0.0 + 0.0j
    for spec, mass in zip(model.profiles, model.masses):
        if spec.amplitude == 0.0:
            continue
        cutoff = spec.transform_cutoff()
        center2 = -(mass * mass + lam2.real)
        points = []
        if center2 > 0:
            kappa0 = np.sqrt(center2)
            width = abs(lam2.imag) / (2.0 * kappa0) if kappa0 > 0 else 0.0
            points = [p for p in (kappa0 - 10 * width, kappa0, kappa0 + 10 * width) if 0.0 < p < cutoff]

        def integrand(k, spec=spec, mass=mass):
            return k**4 * float(spec.radial_transform(k)[0]) ** 2 / (k * k + mass * mass + lam2)

        re, _ = integrate.quad(lambda k: integrand(k).real, 0.0, cutoff, points=points or None, limit=500)
        im, _ = integrate.quad(lambda k: integrand(k).imag, 0.0, cutoff, points=points or None, limit=500)
        total += complex(re, im)
    return total * 4.0 * np.pi / 3.0 / (2.0 * np.pi) ** 3 * np.eye(3)


def _richardson(f1, f2, eps1: float, eps2: float):
    """Linear extrapolation to ε = 0 from values at ε1 > ε2."""
    return f2 + (f2 - f1) * eps2 / (eps1 - eps2)


def limiting_absorption_im_H(
    model: ModelConfig, x: float, v: Sequence[float], eps: Tuple[float, float] = (1e-2, 1e-3)
) -> float:
    """v·Im H(ix+ε)v from the continuum quadrature, extrapolated to ε → 0."""
    v = np.asarray(v, dtype=float)
    eps1, eps2 = eps
    values = [float((v @ radial_H(model, 1j * x + e) @ v).imag) for e in (eps1, eps2)]
    return float(_richardson(values[0], values[1], eps1, eps2))


def imaginary_axis_scan(
    model: ModelConfig, xs: Sequence[float], eps: Tuple[float, float] = (1e-2, 1e-3)
) -> np.ndarray:
    """Smallest singular value of the continuum D(ix+0) at each x, ε-extrapolated."""
    eps1, eps2 = eps
    omega2 = model.omega**2
    out = []
    for x in xs:
        Ds = [((1j * x + e) ** 2 + omega2) * np.eye(3) - radial_H(model, 1j * x + e) for e in (eps1, eps2)]
        D0 = _richardson(Ds[0], Ds[1], eps1, eps2)
        out.append(float(np.linalg.svd(D0, compute_uv=False).min()))
    result = np.array(out)
    logger.debug(f"Imaginary-axis scan over {len(out)} points: min singular value {result.min(initial=np.inf):.3g}")
    return result


def fit_decay(
    times: Sequence[float],
    values: Sequence[float],
    kind: Literal["exponential", "power"],
    window: Optional[Tuple[float, float]] = None,
) -> DecayFit:
    """Least-squares fit of log(value) against t (exponential) or log(1+t) (power).

    Args:
        times: Sample times.
        values: Positive samples.
        kind: "exponential" reports the rate δ of e^{−δt}; "power" reports the log-log slope.
        window: Inclusive (t_lo, t_hi); all samples when omitted.

    Raises:
        DecayWindowError: If fewer than 10 samples fall in the window or any of them is nonpositive.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.shape != y.shape:
        raise ValueError(f"times {t.shape} and values {y.shape} differ in shape")
    lo, hi = window if window is not None else (float(t.min(initial=0.0)), float(t.max(initial=0.0)))
    keep = (t >= lo) & (t <= hi)
    if keep.sum() < MIN_FIT_SAMPLES:
        raise DecayWindowError(f"window [{lo}, {hi}] holds {int(keep.sum())} samples, need {MIN_FIT_SAMPLES}")
    t, y = t[keep], y[keep]
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise DecayWindowError(f"window [{lo}, {hi}] contains nonpositive or non-finite values")
    x = t if kind == "exponential" else np.log1p(t)
    slope, intercept = np.polyfit(x, np.log(y), 1)
    residual = float(np.sqrt(np.mean((np.log(y) - (slope * x + intercept)) ** 2)))
    value = -float(slope) if kind == "exponential" else float(slope)
    logger.debug(f"{kind} fit on [{lo}, {hi}]: {value:.6g} (residual {residual:.3g})")
    return DecayFit(kind=kind, rate_or_slope=value, fit_window=(float(t[0]), float(t[-1])), residual=residual, samples=int(t.size))
