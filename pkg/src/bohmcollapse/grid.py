"""Periodic grids, configuration-space wavefunctions and spectral calculus.

All simulations use natural units (hbar = m = 1 unless a mass is given).
Each particle lives on the same one-dimensional periodic axis, so an
``N``-particle wavefunction is stored as an ``N``-dimensional array of shape
``(n_points,) * N``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DegenerateStateError, GridMismatchError, InvalidStateError

DEFAULT_MAX_POINTS = 2**24


@dataclass(frozen=True)
class Grid1D:
    """Uniform periodic grid on ``[-length/2, length/2)``."""

    n_points: int
    length: float

    def __post_init__(self):
        n = int(self.n_points)
        if n < 2 or n & (n - 1):
            raise ValueError(f"n_points must be a power of two >= 2, got {self.n_points}")
        if not (np.isfinite(self.length) and self.length > 0):
            raise ValueError(f"length must be positive, got {self.length}")
        object.__setattr__(self, "n_points", n)
        object.__setattr__(self, "length", float(self.length))

    @property
    def spacing(self) -> float:
        return self.length / self.n_points

    @cached_property
    def x(self) -> np.ndarray:
        return -0.5 * self.length + self.spacing * np.arange(self.n_points)

    @cached_property
    def k(self) -> np.ndarray:
        """Angular wavenumbers in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.spacing)

    @cached_property
    def k_derivative(self) -> np.ndarray:
        """Wavenumbers for first derivatives; the Nyquist mode is zeroed."""
        k = self.k.copy()
        k[self.n_points // 2] = 0.0
        return k

    def contains(self, position) -> np.ndarray:
        p = np.asarray(position, dtype=float)
        return (p >= -0.5 * self.length) & (p < 0.5 * self.length)

    def wrap(self, position):
        """Map positions back into ``[-length/2, length/2)``."""
        half = 0.5 * self.length
        return np.mod(np.asarray(position, dtype=float) + half, self.length) - half

    def nearest_index(self, position) -> np.ndarray:
        p = self.wrap(position)
        return np.mod(np.rint((p + 0.5 * self.length) / self.spacing).astype(int), self.n_points)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(values) * self.spacing)

    def check_same(self, other: "Grid1D") -> None:
        if self != other:
            raise GridMismatchError(f"grid mismatch: {self} vs {other}")


@dataclass(frozen=True)
class ConfigGrid:
    """Tensor product of ``particle_count`` copies of one axis."""

    axis: Grid1D
    particle_count: int = 1
    max_points: int = field(default=DEFAULT_MAX_POINTS, compare=False)

    def __post_init__(self):
        if self.particle_count < 1:
            raise ValueError("particle_count must be >= 1")
        if self.total_points > self.max_points:
            raise MemoryError(
                f"configuration grid has {self.total_points} points, "
                f"budget is {self.max_points}"
            )

    @property
    def total_points(self) -> int:
        return self.axis.n_points ** self.particle_count

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.axis.n_points,) * self.particle_count

    @property
    def cell_volume(self) -> float:
        return self.axis.spacing ** self.particle_count

    def mesh(self) -> list[np.ndarray]:
        """Open (broadcastable) coordinate arrays, one per particle."""
        return list(np.ix_(*([self.axis.x] * self.particle_count)))

    def check_same(self, other: "ConfigGrid") -> None:
        if self != other:
            raise GridMismatchError(f"configuration grid mismatch: {self} vs {other}")


@dataclass
class WaveFunction:
    """Complex amplitudes on a :class:`ConfigGrid` at a given time."""

    grid: ConfigGrid
    amplitudes: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.size != self.grid.total_points:
            raise InvalidStateError(
                f"amplitude array has {amps.size} entries, grid needs {self.grid.total_points}"
            )
        self.amplitudes = amps.reshape(self.grid.shape)

    @property
    def particle_count(self) -> int:
        return self.grid.particle_count

    @property
    def axis(self) -> Grid1D:
        return self.grid.axis

    def replace(self, amplitudes: np.ndarray, time: float | None = None) -> "WaveFunction":
        return WaveFunction(self.grid, amplitudes, self.time if time is None else time)

    def copy(self) -> "WaveFunction":
        return WaveFunction(self.grid, self.amplitudes.copy(), self.time)

    def probability(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


def check_finite(psi: WaveFunction) -> None:
    if not np.all(np.isfinite(psi.amplitudes)):
        raise InvalidStateError("wavefunction has non-finite amplitudes")


def norm_squared(psi: WaveFunction) -> float:
    """Return ``sum |psi|^2 * dx^N``."""
    check_finite(psi)
    return float(np.sum(psi.probability()) * psi.grid.cell_volume)


def momentum_norm_squared(psi: WaveFunction) -> float:
    """Squared norm evaluated in momentum space (Parseval partner of :func:`norm_squared`)."""
    check_finite(psi)
    spectrum = np.fft.fftn(psi.amplitudes)
    return float(np.sum(np.abs(spectrum) ** 2) * psi.grid.cell_volume / psi.grid.total_points)


def normalize(psi: WaveFunction) -> WaveFunction:
    nsq = norm_squared(psi)
    if nsq <= 0.0:
        raise DegenerateStateError("cannot normalize a state with zero norm")
    return psi.replace(psi.amplitudes / np.sqrt(nsq))


def spectral_gradient_array(amplitudes: np.ndarray, axis: Grid1D, axis_index: int) -> np.ndarray:
    """Fourier derivative of an array along ``axis_index``."""
    shape = [1] * amplitudes.ndim
    shape[axis_index] = axis.n_points
    ik = 1j * axis.k_derivative.reshape(shape)
    spec = np.fft.fft(amplitudes, axis=axis_index)
    return np.fft.ifft(ik * spec, axis=axis_index)


def spectral_gradient(psi: WaveFunction, axis_index: int) -> WaveFunction:
    """Derivative of ``psi`` with respect to particle ``axis_index``."""
    if not 0 <= axis_index < psi.particle_count:
        raise IndexError(f"axis_index {axis_index} out of range for N={psi.particle_count}")
    check_finite(psi)
    return psi.replace(spectral_gradient_array(psi.amplitudes, psi.axis, axis_index))


def inner_product(phi: WaveFunction, psi: WaveFunction) -> complex:
    phi.grid.check_same(psi.grid)
    return complex(np.vdot(phi.amplitudes, psi.amplitudes) * psi.grid.cell_volume)


def gaussian_packet(axis: Grid1D, center: float = 0.0, width: float = 1.0,
                    momentum: float = 0.0) -> np.ndarray:
    """Normalized Gaussian with ``|psi|^2`` of standard deviation ``width``.

    The packet is summed over a few periodic images so it stays smooth across
    the domain boundary.
    """
    x = axis.x
    amp = np.zeros(axis.n_points)
    for image in (-1, 0, 1):
        amp += np.exp(-((x - center + image * axis.length) ** 2) / (4.0 * width**2))
    psi = amp * np.exp(1j * momentum * x)
    return psi / np.sqrt(np.sum(np.abs(psi) ** 2) * axis.spacing)
