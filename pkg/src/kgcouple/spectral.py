"""Periodic-box grid bookkeeping and lattice Fourier transforms.

The transform convention is fixed here and used everywhere else:

    f̂(k) = h³ Σ_x f(x) e^{−ik·x},        f(x) = L⁻³ Σ_k f̂(k) e^{ik·x},        h = L/N,

so that Σ_x |f(x)|² h³ = L⁻³ Σ_k |f̂(k)|² and a lattice sum L⁻³ Σ_k approximates (2π)⁻³ ∫ dk.
Arrays are stored in FFT order: index 0 on every axis is the origin cell, wavenumbers are
k = (2π/L)·j with j ∈ {−N/2, …, N/2−1}.
"""

import logging
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
import scipy.fft
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .config import thread_count
from .errors import SizeMismatchError

logger = logging.getLogger(__name__)

SPATIAL_AXES = (-3, -2, -1)


class GridSpec(BaseModel):
    """Cubic periodic box [−L/2, L/2)³ sampled with N points per axis."""

    model_config = ConfigDict(frozen=True)

    box_length: float = Field(..., gt=0, description="Box side length L")
    grid_n: int = Field(..., gt=0, description="Points per axis N (even)")

    @field_validator("grid_n")
    @classmethod
    def validate_even(cls, v):
        if v % 2 != 0:
            raise ValueError(f"grid_n must be even, got {v}")
        return v

    @property
    def spacing(self) -> float:
        return self.box_length / self.grid_n

    @property
    def cell_volume(self) -> float:
        return self.spacing**3

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.grid_n, self.grid_n, self.grid_n)

    @property
    def mode_spacing(self) -> float:
        return 2.0 * np.pi / self.box_length

    @property
    def axis_positions(self) -> np.ndarray:
        return _axis_arrays(self.box_length, self.grid_n)[0]

    @property
    def axis_wavenumbers(self) -> np.ndarray:
        return _axis_arrays(self.box_length, self.grid_n)[1]

    @property
    def positions(self) -> np.ndarray:
        """Coordinates of every grid point, shape (3, N, N, N), minimal-image about the origin cell."""
        return _lattice_arrays(self.box_length, self.grid_n)["positions"]

    @property
    def radius(self) -> np.ndarray:
        return _lattice_arrays(self.box_length, self.grid_n)["radius"]

    @property
    def wavevectors(self) -> np.ndarray:
        """Lattice wavevectors, shape (3, N, N, N)."""
        return _lattice_arrays(self.box_length, self.grid_n)["wavevectors"]

    @property
    def gradient_wavevectors(self) -> np.ndarray:
        """Wavevectors for the odd multiplier i·k_j, with the Nyquist row of axis j zeroed."""
        return _lattice_arrays(self.box_length, self.grid_n)["gradient_wavevectors"]

    @property
    def k_squared(self) -> np.ndarray:
        return _lattice_arrays(self.box_length, self.grid_n)["k_squared"]

    @property
    def k_norm(self) -> np.ndarray:
        return _lattice_arrays(self.box_length, self.grid_n)["k_norm"]

    def check_shape(self, values: np.ndarray, what: str = "field") -> None:
        if values.ndim < 3 or tuple(values.shape[-3:]) != self.shape:
            logger.error(f"{what} has shape {values.shape}, expected trailing {self.shape}")
            raise SizeMismatchError(f"{what} has shape {values.shape}, expected trailing axes {self.shape}")

    def lattice_sum(self, values: np.ndarray) -> np.ndarray:
        """L⁻³ Σ_k over the trailing lattice axes; the Riemann sum for (2π)⁻³ ∫ dk."""
        return np.sum(values, axis=SPATIAL_AXES) / self.box_length**3

    def grid_sum(self, values: np.ndarray) -> np.ndarray:
        """h³ Σ_x over the trailing grid axes; the Riemann sum for ∫ dx."""
        return np.sum(values, axis=SPATIAL_AXES) * self.cell_volume


class SpectralField(BaseModel):
    """Lattice Fourier coefficients of one or more components, trailing axes (N, N, N)."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    grid: GridSpec
    coeffs: np.ndarray

    @field_validator("coeffs", mode="before")
    @classmethod
    def validate_coeffs(cls, v):
        return np.asarray(v, dtype=complex)

    def to_grid(self) -> np.ndarray:
        return inverse_transform(self.coeffs, self.grid)

    def hermitian_defect(self) -> float:
        """max |ĉ(−k) − conj ĉ(k)|, zero for coefficients of a real field."""
        return float(np.max(np.abs(reflect(self.coeffs) - np.conj(self.coeffs)), initial=0.0))


def reflect(values: np.ndarray) -> np.ndarray:
    """Return g(x) = f(−x) (or ĝ(k) = f̂(−k)) on FFT-ordered trailing axes."""
    flipped = np.flip(values, axis=SPATIAL_AXES)
    return np.roll(flipped, 1, axis=SPATIAL_AXES)


def forward(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Lattice transform of grid values over the trailing three axes."""
    grid.check_shape(values)
    return scipy.fft.fftn(values, axes=SPATIAL_AXES, workers=thread_count()) * grid.cell_volume


def inverse_transform(coeffs: np.ndarray, grid: GridSpec, real: bool = True) -> np.ndarray:
    """Inverse lattice transform. With real=True the (roundoff-level) imaginary part is dropped."""
    grid.check_shape(coeffs, "coefficients")
    values = scipy.fft.ifftn(coeffs, axes=SPATIAL_AXES, workers=thread_count()) / grid.cell_volume
    return values.real if real else values


def transform(values: np.ndarray, grid: GridSpec) -> SpectralField:
    """Forward transform wrapped as a SpectralField."""
    return SpectralField(grid=grid, coeffs=forward(np.asarray(values, dtype=float), grid))


def dispersion(mass: float, k: np.ndarray) -> np.ndarray:
    """ω(k) = sqrt(|k|² + m²) for wavevectors k with components on the leading axis (or a single 3-vector)."""
    k = np.asarray(k, dtype=float)
    return np.sqrt(np.sum(k**2, axis=0) + mass**2)


def lattice_dispersion(grid: GridSpec, mass: float) -> np.ndarray:
    return np.sqrt(grid.k_squared + mass**2)


def fundamental_multiplier(grid: GridSpec, mass: float) -> np.ndarray:
    """Multiplier 1/(|k|²+m²) realizing convolution with the fundamental solution of −Δ+m².

    For a massless component the k=0 entry is set to 0.
    """
    denom = grid.k_squared + mass**2
    out = np.zeros_like(denom)
    np.divide(1.0, denom, out=out, where=denom > 0)
    return out


def helmholtz_multiplier(grid: GridSpec, mass: float) -> np.ndarray:
    """Multiplier |k|²+m² of −Δ+m²."""
    return grid.k_squared + mass**2


def resolvent_multiplier(grid: GridSpec, mass: float, lam: complex) -> np.ndarray:
    """Multiplier 1/(|k|²+m²+λ²) of the resolvent (−Δ+m²+λ²)⁻¹."""
    return 1.0 / (grid.k_squared + mass**2 + complex(lam) ** 2)


def yukawa_green(r: np.ndarray, mass: float, lam: float = 0.0) -> np.ndarray:
    """Closed-form kernel e^{−κr}/(4πr), κ = sqrt(λ²+m²), of (−Δ+m²+λ²)⁻¹ on R³ for real λ."""
    kappa = np.sqrt(lam**2 + mass**2)
    r = np.asarray(r, dtype=float)
    return np.exp(-kappa * r) / (4.0 * np.pi * r)


def apply_multiplier(values: np.ndarray, multiplier: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Apply a Fourier multiplier to real grid values; equals circular convolution with its inverse transform."""
    return inverse_transform(forward(values, grid) * multiplier, grid)


def gradient_coeffs(coeffs: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Spectral gradient in k-space: a new axis of length 3 is inserted before the lattice axes."""
    kg = grid.gradient_wavevectors
    return 1j * kg * coeffs[..., np.newaxis, :, :, :]


def gradient(values: np.ndarray, grid: GridSpec, coeffs: Optional[np.ndarray] = None) -> np.ndarray:
    """Spectral gradient of real grid values, shape (..., 3, N, N, N)."""
    if coeffs is None:
        coeffs = forward(values, grid)
    return inverse_transform(gradient_coeffs(coeffs, grid), grid)


@lru_cache(maxsize=16)
def _axis_arrays(box_length: float, grid_n: int) -> Tuple[np.ndarray, np.ndarray]:
    spacing = box_length / grid_n
    x = np.fft.fftfreq(grid_n, d=1.0 / grid_n) * spacing
    k = 2.0 * np.pi * np.fft.fftfreq(grid_n, d=spacing)
    x.setflags(write=False)
    k.setflags(write=False)
    return x, k


@lru_cache(maxsize=16)
def _lattice_arrays(box_length: float, grid_n: int) -> dict:
    x, k = _axis_arrays(box_length, grid_n)
    positions = np.stack(np.meshgrid(x, x, x, indexing="ij"))
    wavevectors = np.stack(np.meshgrid(k, k, k, indexing="ij"))
    gradient_wavevectors = wavevectors.copy()
    nyq = grid_n // 2
    gradient_wavevectors[0][nyq, :, :] = 0.0
    gradient_wavevectors[1][:, nyq, :] = 0.0
    gradient_wavevectors[2][:, :, nyq] = 0.0
    k_squared = np.sum(wavevectors**2, axis=0)
    arrays = {
        "positions": positions,
        "radius": np.sqrt(np.sum(positions**2, axis=0)),
        "wavevectors": wavevectors,
        "gradient_wavevectors": gradient_wavevectors,
        "k_squared": k_squared,
        "k_norm": np.sqrt(k_squared),
    }
    for value in arrays.values():
        value.setflags(write=False)
    return arrays


@lru_cache(maxsize=16)
def _shells(box_length: float, grid_n: int) -> Tuple[np.ndarray, np.ndarray]:
    k_squared = _lattice_arrays(box_length, grid_n)["k_squared"]
    values, inverse = np.unique(np.round(k_squared, 12), return_inverse=True)
    inverse = inverse.reshape(k_squared.shape)
    values.setflags(write=False)
    inverse.setflags(write=False)
    return values, inverse


def shells(grid: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Distinct |k|² values of the lattice and, per mode, the index of its shell."""
    return _shells(grid.box_length, grid.grid_n)
