"""Density-like fields on the spatial grid.

The one-body density of an ``N``-particle configuration-space wavefunction is
the sum of the single-particle marginals, which for exchange-symmetric states
equals ``N`` times the first marginal. The two-body density is built the same
way from the pair marginals.
"""
from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import GridMismatchError, InvalidStateError
from .grid import Grid1D, WaveFunction, norm_squared
from .kernels import KernelSpec, periodic_kernel, smooth_array

log = logging.getLogger(__name__)

NORMALIZATION_TOLERANCE = 1e-6
# relative threshold below which the correlation function is not evaluated
CORRELATION_EPS = 1e-12


class DensityKind(str, Enum):
    QUANTUM = "quantum"
    BOHMIAN_SMOOTHED = "bohmian_smoothed"
    DELTA = "delta"
    CURRENT = "current"
    CORRELATION = "correlation"


class DeltaVariant(str, Enum):
    DIFFERENCE = "difference"
    BOHMIAN_ONLY = "bohmian_only"


@dataclass
class DensityField:
    grid: Grid1D
    values: np.ndarray
    kind: DensityKind = DensityKind.QUANTUM

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_points,):
            raise GridMismatchError(
                f"field has shape {self.values.shape}, grid has {self.grid.n_points} points"
            )
        self.kind = DensityKind(self.kind)

    def integral(self) -> float:
        return self.grid.integrate(self.values)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "value"])
            for x, v in zip(self.grid.x, self.values):
                writer.writerow([repr(float(x)), repr(float(v))])


@dataclass(frozen=True)
class BohmianConfig:
    """Positions of the ``N`` Bohmian particles."""

    positions: tuple[float, ...]

    def __init__(self, positions):
        object.__setattr__(self, "positions", tuple(float(p) for p in np.atleast_1d(positions)))

    @property
    def particle_count(self) -> int:
        return len(self.positions)

    def as_array(self) -> np.ndarray:
        return np.array(self.positions)


def _check_normalized(psi: WaveFunction) -> None:
    nsq = norm_squared(psi)
    if abs(nsq - 1.0) > NORMALIZATION_TOLERANCE:
        raise InvalidStateError(f"expected a normalized state, norm^2 = {nsq:.3e}")


def quantum_density(psi: WaveFunction) -> DensityField:
    """One-body density ``D_Phi``; integrates to ``N``."""
    _check_normalized(psi)
    prob = psi.probability()
    N = psi.particle_count
    dx = psi.axis.spacing
    total = np.zeros(psi.axis.n_points)
    for p in range(N):
        others = tuple(a for a in range(N) if a != p)
        total += prob.sum(axis=others) if others else prob
    return DensityField(psi.axis, total * dx ** (N - 1), DensityKind.QUANTUM)


def bohmian_smoothed(q: BohmianConfig, spec: KernelSpec, grid: Grid1D) -> DensityField:
    """Smoothed Bohmian density ``N_B(x) = sum_n A(x - q_n)``."""
    pos = q.as_array()
    if not np.all(grid.contains(pos)):
        raise ValueError(f"Bohmian position outside the domain: {pos}")
    disp = grid.x[:, None] - pos[None, :]
    values = periodic_kernel(spec, disp, grid.length).sum(axis=1)
    return DensityField(grid, values, DensityKind.BOHMIAN_SMOOTHED)


def smoothed_quantum(D_Phi: DensityField, spec: KernelSpec) -> DensityField:
    """``N_Phi``: the one-body density convolved with the kernel."""
    return DensityField(D_Phi.grid, smooth_array(D_Phi.values, spec, D_Phi.grid),
                        DensityKind.QUANTUM)


def delta_field(N_B: DensityField, N_Phi: DensityField,
                variant: DeltaVariant | str = DeltaVariant.DIFFERENCE) -> DensityField:
    N_B.grid.check_same(N_Phi.grid)
    variant = DeltaVariant(variant)
    if variant is DeltaVariant.DIFFERENCE:
        values = N_B.values - N_Phi.values
    else:
        values = N_B.values.copy()
    return DensityField(N_B.grid, values, DensityKind.DELTA)


def mean_delta(D_Phi: DensityField, Delta: DensityField) -> float:
    """Average of ``Delta`` weighted by the normalized one-body density."""
    D_Phi.grid.check_same(Delta.grid)
    weight = D_Phi.integral()
    if weight <= 0:
        raise InvalidStateError("one-body density has zero weight")
    return float(np.sum(D_Phi.values * Delta.values) / np.sum(D_Phi.values))


def two_body_density(psi: WaveFunction) -> np.ndarray:
    """Pair density ``D^II(r, r')`` summed over ordered particle pairs.

    Returns an ``(n, n)`` array; integrates to ``N(N-1)``.
    """
    N = psi.particle_count
    if N < 2:
        raise ValueError("two-body density is undefined for a single particle")
    _check_normalized(psi)
    prob = psi.probability()
    dx = psi.axis.spacing
    n = psi.axis.n_points
    out = np.zeros((n, n))
    for p, r in itertools.permutations(range(N), 2):
        others = tuple(a for a in range(N) if a not in (p, r))
        marg = prob.sum(axis=others) if others else prob
        # marg axes are (min(p,r), max(p,r)); orient as (p, r)
        out += marg if p < r else marg.T
    return out * dx ** (N - 2)


def correlation_F(D2: np.ndarray, D_Phi: DensityField,
                  eps: float = CORRELATION_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Pair-correlation function ``F = 1 - D^II / (D_Phi x D_Phi)``.

    Returns ``(F, admissible)``. Where either density falls below
    ``eps * max(D_Phi)`` the value is set to 0 and ``admissible`` is False.
    """
    D = D_Phi.values
    if D2.shape != (D.size, D.size):
        raise GridMismatchError("pair density and one-body density sizes differ")
    threshold = eps * D.max()
    ok1 = D > threshold
    admissible = ok1[:, None] & ok1[None, :]
    prod = np.outer(D, D)
    F = np.zeros_like(D2)
    F[admissible] = 1.0 - D2[admissible] / prod[admissible]
    n_flagged = int(admissible.size - admissible.sum())
    if n_flagged:
        log.debug("correlation_F: %d points below density threshold", n_flagged)
    return F, admissible
