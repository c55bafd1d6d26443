"""Localization smoothing kernels and their periodic convolution.

Two shapes are supported, both with peak value 1 at the origin:

* ``gaussian``: ``exp(-r**2 / a_L**2)``
* ``rational``: ``a_L**s / (a_L**s + |r|**s)`` with integer ``s > 2``

On a periodic grid the kernel is replaced by its periodic summation, so the
integral of a smoothed field over one period is exactly ``kernel_integral``
times the integral of the input.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from .errors import InvalidSpecError
from .grid import Grid1D

# Periodic images summed explicitly for the rational kernel; the remainder of
# the image series is added from its leading |r|**-s asymptote.
_RATIONAL_IMAGES = 400


@dataclass(frozen=True)
class KernelSpec:
    shape: str = "gaussian"
    a_L: float = 1.0
    s: int | None = None
    unit_integral: bool = False

    def __post_init__(self):
        shape = self.shape.lower()
        object.__setattr__(self, "shape", shape)
        if shape not in ("gaussian", "rational"):
            raise InvalidSpecError(f"unknown kernel shape {self.shape!r}")
        if not (np.isfinite(self.a_L) and self.a_L > 0):
            raise InvalidSpecError(f"a_L must be positive, got {self.a_L}")
        if shape == "rational":
            if self.s is None or int(self.s) != self.s or self.s <= 2:
                raise InvalidSpecError(f"rational kernel needs an integer s > 2, got {self.s}")
            object.__setattr__(self, "s", int(self.s))
        elif self.s is not None:
            raise InvalidSpecError("s only applies to the rational kernel")

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(shape=d.get("shape", "gaussian"), a_L=float(d["a_L"]),
                   s=d.get("s"), unit_integral=bool(d.get("unit_integral", False)))

    def to_dict(self) -> dict:
        d = {"shape": self.shape, "a_L": self.a_L, "unit_integral": self.unit_integral}
        if self.s is not None:
            d["s"] = self.s
        return d

    @property
    def scale(self) -> float:
        """Prefactor applied to the peak-one profile (1 unless ``unit_integral``)."""
        if self.unit_integral:
            return 1.0 / _raw_integral(self)
        return 1.0


def _profile(spec: KernelSpec, r: np.ndarray) -> np.ndarray:
    if spec.shape == "gaussian":
        return np.exp(-(r / spec.a_L) ** 2)
    u = np.abs(r / spec.a_L) ** spec.s
    return 1.0 / (1.0 + u)


def eval_kernel(spec: KernelSpec, r) -> np.ndarray:
    """Kernel value at separation ``r`` (no periodic images)."""
    return spec.scale * _profile(spec, np.asarray(r, dtype=float))


def _raw_integral(spec: KernelSpec) -> float:
    if spec.shape == "gaussian":
        return float(np.sqrt(np.pi) * spec.a_L)
    s = spec.s
    # int_{-inf}^{inf} dr / (1 + |r|^s) = 2 (pi/s) / sin(pi/s)
    return float(2.0 * spec.a_L * (np.pi / s) / np.sin(np.pi / s))


def kernel_integral(spec: KernelSpec, dimension: int = 1) -> float:
    """Integral of the kernel over the real line."""
    if dimension != 1:
        raise ValueError(f"only dimension 1 is supported, got {dimension}")
    return spec.scale * _raw_integral(spec)


def periodic_kernel(spec: KernelSpec, r, period: float) -> np.ndarray:
    """Periodic summation ``sum_m A(r + m*period)`` evaluated at ``r``."""
    r = np.asarray(r, dtype=float)
    r = np.mod(r + 0.5 * period, period) - 0.5 * period
    if spec.shape == "gaussian":
        # images farther than 9 a_L contribute below exp(-81)
        n_img = int(np.floor(9.0 * spec.a_L / period + 0.5))
        total = _profile(spec, r)
        for m in range(1, n_img + 1):
            total += _profile(spec, r + m * period) + _profile(spec, r - m * period)
        return spec.scale * total
    M = _RATIONAL_IMAGES
    total = _profile(spec, r)
    for m in range(1, M + 1):
        total += _profile(spec, r + m * period) + _profile(spec, r - m * period)
    # tail: sum_{m>M} (a/|r+mL|)^s ~ integral from M+1/2 of the asymptote
    s = spec.s
    a = spec.a_L
    for sign in (1.0, -1.0):
        edge = (M + 0.5) * period + sign * r
        total += a**s * edge ** (1 - s) / ((s - 1) * period)
    return spec.scale * total


@lru_cache(maxsize=64)
def _kernel_transform(spec: KernelSpec, grid: Grid1D) -> np.ndarray:
    """Fourier multiplier of the periodic kernel on ``grid`` (includes ``dx``)."""
    if spec.shape == "gaussian":
        k = grid.k
        return spec.scale * np.sqrt(np.pi) * spec.a_L * np.exp(-0.25 * (k * spec.a_L) ** 2)
    # grid-index displacement, FFT order: sample r = j*dx for j = 0..n-1
    r = grid.spacing * np.arange(grid.n_points)
    sampled = periodic_kernel(spec, r, grid.length)
    mult = sfft.fft(sampled).real * grid.spacing
    # |r|^s with odd s is not smooth at 0, so the sampled sum misses the exact
    # integral; pinning the zero mode keeps total weight exact
    mult[0] = kernel_integral(spec)
    return mult


def smooth_array(values: np.ndarray, spec: KernelSpec, grid: Grid1D) -> np.ndarray:
    """Periodic convolution ``int A(x - x') f(x') dx'`` of real ``values``."""
    mult = _kernel_transform(spec, grid)
    return sfft.irfft(sfft.rfft(values) * mult[: grid.n_points // 2 + 1], n=grid.n_points)


def smooth_density(D, spec: KernelSpec):
    """Smooth a :class:`~bohmcollapse.densities.DensityField` with the kernel."""
    from .densities import DensityField

    return DensityField(D.grid, smooth_array(D.values, spec, D.grid), D.kind)
