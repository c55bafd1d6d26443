"""Coupled evolution of the wavefunction and the Bohmian configuration.

:func:`advance` composes a kinetic half step, a position-diagonal middle
factor and a second kinetic half step. The middle factor combines the
potential with the localization multiplier
``exp(gamma_L * dt * [sum_n Delta(x_n) - N <Delta>])``, evaluated at the
middle of the step, and the state is renormalized afterwards. Positions
follow a two-stage midpoint rule on the guidance velocity.

The localization factor is real, so it leaves the phase untouched; it moves
the positions only through the change it makes to the amplitudes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.fft as sfft

from .densities import (
    BohmianConfig,
    DeltaVariant,
    DensityField,
    bohmian_smoothed,
    delta_field,
    mean_delta,
    quantum_density,
    smoothed_quantum,
)
from .errors import InvalidSpecError, InvalidStateError
from .grid import ConfigGrid, Grid1D, WaveFunction, normalize
from .kernels import KernelSpec

log = logging.getLogger(__name__)

NODE_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """Mass, external potential ``V(x)`` and even pair interaction ``U(x - x')``.

    ``frozen=True`` switches the Hamiltonian off entirely (no kinetic term),
    which is used for idealized collapse scenarios.
    """

    mass: float = 1.0
    potential: np.ndarray | None = None
    pair_interaction: Callable[[np.ndarray], np.ndarray] | None = None
    frozen: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.mass) and self.mass > 0):
            raise InvalidSpecError(f"mass must be positive, got {self.mass}")
        if self.potential is not None:
            V = np.asarray(self.potential, dtype=float)
            if not np.all(np.isfinite(V)):
                raise InvalidSpecError("external potential must be finite")
            object.__setattr__(self, "potential", V)

    def configuration_potential(self, grid: ConfigGrid) -> np.ndarray:
        return _configuration_potential(self, grid)


@lru_cache(maxsize=16)
def _configuration_potential(H: HamiltonianSpec, grid: ConfigGrid) -> np.ndarray:
    axis = grid.axis
    N = grid.particle_count
    coords = grid.mesh()
    total = np.zeros(grid.shape)
    if H.potential is not None:
        if H.potential.shape != (axis.n_points,):
            raise InvalidSpecError("potential size does not match the grid")
        for n in range(N):
            sl = [None] * N
            sl[n] = slice(None)
            total = total + H.potential[tuple(sl)]
    if H.pair_interaction is not None and N > 1:
        d = axis.wrap(axis.x - axis.x[0])
        if not np.allclose(H.pair_interaction(d), H.pair_interaction(-d), rtol=0, atol=1e-12):
            raise InvalidSpecError("pair interaction must be even")
        for n in range(N):
            for m in range(n + 1, N):
                sep = axis.wrap(coords[n] - coords[m])
                total = total + H.pair_interaction(sep)
    return total


@dataclass(frozen=True)
class CollapseParams:
    """Localization rate, kernel and Delta variant.

    ``n_eff`` > 1 selects the collective-coordinate model: a rigid pointer of
    ``n_eff`` particles represented by one coordinate, whose localization
    multiplier is scaled by ``n_eff**2``.
    """

    gamma_L: float = 0.0
    kernel: KernelSpec = field(default_factory=KernelSpec)
    variant: DeltaVariant = DeltaVariant.DIFFERENCE
    n_eff: int = 1

    def __post_init__(self):
        if not (np.isfinite(self.gamma_L) and self.gamma_L >= 0):
            raise InvalidSpecError(f"gamma_L must be >= 0, got {self.gamma_L}")
        if int(self.n_eff) != self.n_eff or self.n_eff < 1:
            raise InvalidSpecError(f"n_eff must be a positive integer, got {self.n_eff}")
        object.__setattr__(self, "variant", DeltaVariant(self.variant))


@dataclass
class SimulationState:
    psi: WaveFunction
    q: BohmianConfig
    time: float = 0.0
    rng_seed: int = 0
    step: int = 0
    node_events: int = 0

    def __post_init__(self):
        if self.q.particle_count != self.psi.particle_count:
            raise InvalidStateError(
                f"{self.q.particle_count} Bohmian positions for a "
                f"{self.psi.particle_count}-particle wavefunction"
            )


# -- Hamiltonian part -------------------------------------------------------

@lru_cache(maxsize=16)
def _split_factors(H: HamiltonianSpec, grid: ConfigGrid, dt: float):
    k2 = np.zeros(grid.shape)
    k = grid.axis.k
    N = grid.particle_count
    for n in range(N):
        sl = [None] * N
        sl[n] = slice(None)
        k2 = k2 + (k**2)[tuple(sl)]
    kinetic_half = np.exp(-0.25j * dt * k2 / H.mass)
    V = H.configuration_potential(grid)
    potential = np.exp(-1j * dt * V) if np.any(V) else None
    return kinetic_half, potential


def _split_step_spectra(amplitudes: np.ndarray, H: HamiltonianSpec, grid: ConfigGrid,
                        dt: float):
    """Split step returning ``(new, fft(old), fft(new))`` so callers can reuse spectra."""
    kinetic_half, potential = _split_factors(H, grid, float(dt))
    spec0 = sfft.fftn(amplitudes)
    phi = sfft.ifftn(kinetic_half * spec0)
    if potential is not None:
        phi = phi * potential
    spec1 = kinetic_half * sfft.fftn(phi)
    return sfft.ifftn(spec1), spec0, spec1


def split_step(amplitudes: np.ndarray, H: HamiltonianSpec, grid: ConfigGrid,
               dt: float) -> np.ndarray:
    return _split_step_spectra(amplitudes, H, grid, dt)[0]


def hamiltonian_step(state: SimulationState, H: HamiltonianSpec, dt: float) -> SimulationState:
    """Advance ``psi`` by one second-order split step; positions are untouched."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if H.frozen:
        return replace(state, psi=state.psi.copy())
    amps = split_step(state.psi.amplitudes, H, state.psi.grid, dt)
    return replace(state, psi=state.psi.replace(amps))


# -- localization part ------------------------------------------------------

def localization_fields(psi: WaveFunction, q: BohmianConfig, params: CollapseParams):
    """Return ``(D_Phi, Delta, <Delta>)`` for the current state and positions."""
    D = quantum_density(psi)
    N_B = bohmian_smoothed(q, params.kernel, psi.axis)
    if params.variant is DeltaVariant.BOHMIAN_ONLY:
        Delta = delta_field(N_B, N_B, params.variant)
    else:
        Delta = delta_field(N_B, smoothed_quantum(D, params.kernel), params.variant)
    return D, Delta, mean_delta(D, Delta)


def localization_multiplier(psi: WaveFunction, Delta: DensityField, mean: float,
                            n_eff: int = 1) -> np.ndarray:
    """``n_eff**2 * (sum_n Delta(x_n) - N <Delta>)`` on the configuration grid."""
    N = psi.particle_count
    M = np.full(psi.grid.shape, -N * mean)
    for n in range(N):
        sl = [None] * N
        sl[n] = slice(None)
        M = M + Delta.values[tuple(sl)]
    return (n_eff**2) * M


def apply_localization(psi: WaveFunction, Delta: DensityField, gamma_L: float, dt: float,
                       n_eff: int = 1, mean: float | None = None) -> WaveFunction:
    """Multiply by the localization factor for a given ``Delta`` and renormalize."""
    if mean is None:
        mean = mean_delta(quantum_density(psi), Delta)
    M = localization_multiplier(psi, Delta, mean, n_eff)
    return normalize(psi.replace(psi.amplitudes * np.exp(gamma_L * dt * M)))


def localization_step(state: SimulationState, params: CollapseParams, dt: float,
                      delta: DensityField | None = None) -> SimulationState:
    """Nonlinear localization step; ``delta`` overrides the self-consistent field."""
    if params.gamma_L == 0.0:
        return state
    psi = state.psi
    if delta is None:
        _, delta, mean = localization_fields(psi, state.q, params)
    else:
        mean = None
    new = apply_localization(psi, delta, params.gamma_L, dt, params.n_eff, mean)
    return replace(state, psi=new)


# -- Bohmian guidance -------------------------------------------------------

def _phase_vectors(axis: Grid1D, points: np.ndarray) -> np.ndarray:
    """Trigonometric interpolation weights, shape (M, n).

    ``w @ fft(f)`` interpolates ``f`` at ``points``; the Nyquist mode is taken
    as a cosine so real data interpolate to real values.
    """
    n = axis.n_points
    half = n // 2
    xr = np.asarray(points, dtype=float) + 0.5 * axis.length
    z = np.exp(2j * np.pi * xr / axis.length)[:, None]
    pos = np.cumprod(np.concatenate([np.ones_like(z), np.repeat(z, half, axis=1)], axis=1),
                     axis=1)
    # FFT order: modes 0..half-1, then the Nyquist mode, then -(half-1)..-1
    w = np.empty((len(xr), n), dtype=complex)
    w[:, :half] = pos[:, :half]
    w[:, half] = pos[:, half].real
    w[:, half + 1:] = np.conj(pos[:, half - 1:0:-1])
    return w / n


def _ik(axis: Grid1D, ndim: int, index: int) -> np.ndarray:
    shape = [1] * ndim
    shape[index] = axis.n_points
    return (1j * axis.k_derivative).reshape(shape)


def interpolate_with_gradient(psi: WaveFunction, point,
                              spectrum: np.ndarray | None = None) -> tuple[complex, np.ndarray]:
    """Spectral interpolation of ``psi`` and its gradient at a configuration point."""
    N = psi.particle_count
    spec = sfft.fftn(psi.amplitudes) if spectrum is None else spectrum
    pts = np.asarray(point, dtype=float).reshape(N)
    weights = _phase_vectors(psi.axis, pts)

    def contract(arr: np.ndarray) -> complex:
        for n in range(N - 1, -1, -1):
            arr = arr @ weights[n]
        return complex(arr)

    value = contract(spec)
    grad = np.array([contract(spec * _ik(psi.axis, N, n)) for n in range(N)])
    return value, grad


def interpolate_many(psi: WaveFunction, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized value and derivative at many points for a one-particle state."""
    if psi.particle_count != 1:
        raise ValueError("interpolate_many handles one-particle states only")
    spec = sfft.fft(psi.amplitudes)
    w = _phase_vectors(psi.axis, points)
    return w @ spec, w @ (spec * (1j * psi.axis.k_derivative))


def _grid_velocity(psi: WaveFunction, index: tuple[int, ...], mass: float) -> np.ndarray:
    from .grid import spectral_gradient_array

    val = psi.amplitudes[index]
    return np.array([
        np.imag(spectral_gradient_array(psi.amplitudes, psi.axis, n)[index] / val) / mass
        for n in range(psi.particle_count)
    ])


def bohmian_velocity(psi: WaveFunction, q: BohmianConfig, mass: float = 1.0,
                     node_eps: float = NODE_EPS,
                     spectrum: np.ndarray | None = None) -> tuple[np.ndarray, bool]:
    """Guidance velocity ``Im(grad_n psi / psi) / m`` at the configuration ``q``.

    Returns ``(velocities, regularized)``. Near a node (``|psi(q)|^2`` below
    ``node_eps * max|psi|^2``) the velocity of the closest grid point above
    threshold is used instead and ``regularized`` is True.
    """
    value, grad = interpolate_with_gradient(psi, q.positions, spectrum)
    prob = psi.probability()
    threshold = node_eps * prob.max()
    if abs(value) ** 2 >= threshold and abs(value) > 0:
        return np.imag(grad / value) / mass, False
    # nearest grid point above the node threshold
    axis = psi.axis
    good = np.argwhere(prob >= threshold)
    pos = q.as_array()
    diff = axis.wrap(axis.x[good] - pos[None, :])
    index = tuple(good[np.argmin(np.sum(diff**2, axis=1))])
    log.info("node regularization at q=%s, using grid point %s", pos, index)
    return _grid_velocity(psi, index, mass), True


def _lagrange_weights(axis: Grid1D, coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    u = (axis.wrap(coords) + 0.5 * axis.length) / axis.spacing
    i0 = np.floor(u).astype(int)
    t = u - i0
    w = np.stack([-t * (t - 1) * (t - 2) / 6, (t + 1) * (t - 1) * (t - 2) / 2,
                  -(t + 1) * t * (t - 2) / 2, (t + 1) * t * (t - 1) / 6])
    idx = (i0[None, :] + np.arange(-1, 3)[:, None]) % axis.n_points
    return w, idx


def lagrange_many(psi: WaveFunction, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Four-point periodic Lagrange interpolation of ``psi`` and its spectral gradient.

    ``points`` has shape ``(M, N)`` (or ``(M,)`` for one particle). Returns the
    values ``(M,)`` and gradients ``(M, N)``. Fourth order in the grid spacing
    and linear in ``M``, for ensembles where exact trigonometric interpolation
    is too slow.
    """
    N = psi.particle_count
    axis = psi.axis
    pts = np.asarray(points, dtype=float).reshape(-1, N)
    spec = sfft.fftn(psi.amplitudes)
    fields = [psi.amplitudes] + [sfft.ifftn(spec * _ik(axis, N, n)) for n in range(N)]
    stencil = [_lagrange_weights(axis, pts[:, n]) for n in range(N)]
    out = [np.zeros(len(pts), dtype=complex) for _ in fields]
    for offsets in np.ndindex(*(4,) * N):
        weight = np.prod([stencil[n][0][o] for n, o in enumerate(offsets)], axis=0)
        index = tuple(stencil[n][1][o] for n, o in enumerate(offsets))
        for acc, f in zip(out, fields):
            acc += weight * f[index]
    return out[0], np.stack(out[1:], axis=1)


def bohmian_velocities_many(psi: WaveFunction, points: np.ndarray, mass: float = 1.0,
                            node_eps: float = NODE_EPS, method: str = "lagrange") -> np.ndarray:
    """Velocities ``(M, N)`` of many independent trajectories guided by one state.

    ``method="spectral"`` interpolates exactly (one particle only); ``"lagrange"``
    uses :func:`lagrange_many`. Points near a node fall back to
    :func:`bohmian_velocity`.
    """
    N = psi.particle_count
    pts = np.asarray(points, dtype=float).reshape(-1, N)
    if method == "spectral":
        if N != 1:
            raise ValueError("spectral ensemble interpolation handles one-particle states only")
        value, deriv = interpolate_many(psi, pts[:, 0])
        grad = deriv[:, None]
    elif method == "lagrange":
        value, grad = lagrange_many(psi, pts)
    else:
        raise ValueError(f"unknown interpolation method {method!r}")
    v = np.zeros(pts.shape)
    ok = np.abs(value) ** 2 >= node_eps * psi.probability().max()
    v[ok] = np.imag(grad[ok] / value[ok, None]) / mass
    for i in np.flatnonzero(~ok):
        v[i] = bohmian_velocity(psi, BohmianConfig(pts[i]), mass, node_eps)[0]
    return v


def bohmian_velocities_1d(psi: WaveFunction, points: np.ndarray, mass: float = 1.0,
                          node_eps: float = NODE_EPS, method: str = "spectral") -> np.ndarray:
    """One-particle shorthand for :func:`bohmian_velocities_many` with flat arrays."""
    if psi.particle_count != 1:
        raise ValueError("bohmian_velocities_1d handles one-particle states only")
    return bohmian_velocities_many(psi, points, mass, node_eps, method)[:, 0]


# -- coupled step ----------------------------------------------------------

def _midpoint_multiplier(phi: WaveFunction, q_start: BohmianConfig, q_mid: BohmianConfig,
                         params: CollapseParams, dt: float) -> np.ndarray:
    """Localization multiplier at the middle of a step.

    A half step with the field of ``(phi, q_start)`` predicts the midpoint
    density; the field is then rebuilt from that prediction and ``q_mid``.
    """
    _, Delta, mean = localization_fields(phi, q_start, params)
    pred = apply_localization(phi, Delta, params.gamma_L, 0.5 * dt, params.n_eff, mean)
    _, Delta, mean = localization_fields(pred, q_mid, params)
    return localization_multiplier(pred, Delta, mean, params.n_eff)


def advance(state: SimulationState, H: HamiltonianSpec, params: CollapseParams,
            dt: float) -> SimulationState:
    """One coupled step of wavefunction and Bohmian positions.

    Symmetric composition: kinetic half step, then the potential and the
    localization factor together (both diagonal in position), then the second
    kinetic half step. The localization field is evaluated at the middle of
    the step, so the scheme is second order in ``dt``. Positions use the
    two-stage midpoint rule. With ``gamma_L = 0`` the wavefunction path is the
    plain split step.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    psi0 = state.psi
    grid = psi0.grid
    axis = psi0.axis
    q0 = state.q.as_array()
    events = state.node_events
    collapse = params.gamma_L != 0.0
    if H.frozen:
        q_new = q0
        amps = psi0.amplitudes
        if collapse:
            M = _midpoint_multiplier(psi0, state.q, state.q, params, dt)
            amps = normalize(psi0.replace(amps * np.exp(params.gamma_L * dt * M))).amplitudes
    else:
        kinetic_half, potential = _split_factors(H, grid, float(dt))
        spec0 = sfft.fftn(psi0.amplitudes)
        v1, reg1 = bohmian_velocity(psi0, state.q, H.mass, spectrum=spec0)
        q_mid = BohmianConfig(axis.wrap(q0 + 0.5 * dt * v1))
        phi = sfft.ifftn(kinetic_half * spec0)
        if potential is not None:
            phi = phi * potential
        if collapse:
            M = _midpoint_multiplier(psi0.replace(phi), state.q, q_mid, params, dt)
            phi = phi * np.exp(params.gamma_L * dt * M)
        spec1 = kinetic_half * sfft.fftn(phi)
        amps = sfft.ifftn(spec1)
        if collapse:
            scale = 1.0 / np.sqrt(np.sum(np.abs(amps) ** 2) * grid.cell_volume)
            amps, spec1 = amps * scale, spec1 * scale
        psi_mid = psi0.replace(0.5 * (psi0.amplitudes + amps))
        v2, reg2 = bohmian_velocity(psi_mid, q_mid, H.mass, spectrum=0.5 * (spec0 + spec1))
        q_new = axis.wrap(q0 + dt * v2)
        events += int(reg1) + int(reg2)
    return SimulationState(
        psi=psi0.replace(amps, time=state.time + dt),
        q=BohmianConfig(q_new),
        time=state.time + dt,
        rng_seed=state.rng_seed,
        step=state.step + 1,
        node_events=events,
    )


# -- quantum-equilibrium sampling ------------------------------------------

def sample_configurations(psi: WaveFunction, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` configurations from ``|psi|^2``.

    A grid cell is chosen by inverse transform on the flattened grid, then the
    point is placed uniformly within the cell of width ``dx`` centred on that
    grid point, so samples are continuous. Returns shape ``(size, N)``.
    """
    prob = psi.probability().ravel()
    cdf = np.cumsum(prob)
    cdf /= cdf[-1]
    u = rng.random(size)
    flat = np.minimum(np.searchsorted(cdf, u, side="right"), prob.size - 1)
    idx = np.unravel_index(flat, psi.grid.shape)
    axis = psi.axis
    cells = np.stack([axis.x[i] for i in idx], axis=1)
    offset = (rng.random(cells.shape) - 0.5) * axis.spacing
    return axis.wrap(cells + offset)


def sample_initial_positions(psi: WaveFunction, seed: int) -> BohmianConfig:
    """One configuration drawn from ``|psi|^2``, reproducible per ``seed``."""
    rng = np.random.default_rng(seed)
    return BohmianConfig(sample_configurations(psi, rng, 1)[0])
