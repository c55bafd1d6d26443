"""Currents, localization-induced drifts, collapse detection and ensemble statistics."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import binomtest

from .densities import (
    DensityField,
    DensityKind,
    mean_delta,
    quantum_density,
    two_body_density,
)
from .dynamics import CollapseParams, localization_multiplier
from .errors import GridMismatchError, InvalidSpecError
from .grid import Grid1D, WaveFunction, spectral_gradient_array

log = logging.getLogger(__name__)

COLLAPSE_THRESHOLD = 0.99
H_CELL_POINTS = 8
NO_OUTCOME = "none"


def _marginal(arr: np.ndarray, keep: int, dx: float) -> np.ndarray:
    others = tuple(a for a in range(arr.ndim) if a != keep)
    return (arr.sum(axis=others) if others else arr) * dx ** (arr.ndim - 1)


def _momentum_density(psi: WaveFunction, p: int) -> np.ndarray:
    """``Im(psi^* d_p psi)`` on the configuration grid."""
    grad = spectral_gradient_array(psi.amplitudes, psi.axis, p)
    return np.imag(np.conj(psi.amplitudes) * grad)


# -- currents ----------------------------------------------------------------

def current(psi: WaveFunction, mass: float = 1.0) -> DensityField:
    """Particle current ``J(x)``, summed over particles."""
    dx = psi.axis.spacing
    J = sum(_marginal(_momentum_density(psi, p), p, dx) for p in range(psi.particle_count))
    return DensityField(psi.axis, J / mass, DensityKind.CURRENT)


def _mean_for_reading(psi: WaveFunction, Delta: DensityField, reading: str) -> float:
    mean = mean_delta(quantum_density(psi), Delta)
    if reading == "mean":
        return mean
    if reading == "n_mean":
        return psi.particle_count * mean
    raise ValueError(f"unknown reading {reading!r}; use 'mean' or 'n_mean'")


def current_drift_loc(psi: WaveFunction, Delta: DensityField, params: CollapseParams,
                      mass: float = 1.0, reading: str = "mean") -> DensityField:
    """Rate of change of the current caused by the localization term alone.

    Each of the ``N`` terms of the configuration multiplier subtracts one copy
    of the reference value. ``reading="mean"`` takes that value as the
    density-weighted mean of ``Delta``, which is what the dynamics uses;
    ``reading="n_mean"`` takes ``N`` times it.
    """
    psi.axis.check_same(Delta.grid)
    N = psi.particle_count
    ref = _mean_for_reading(psi, Delta, reading)
    M = localization_multiplier(psi, Delta, ref, params.n_eff)
    dx = psi.axis.spacing
    total = np.zeros(psi.axis.n_points)
    for p in range(N):
        total += _marginal(M * _momentum_density(psi, p), p, dx)
    return DensityField(psi.axis, 2.0 * params.gamma_L * total / mass, DensityKind.CURRENT)


# -- density drift ----------------------------------------------------------

def density_drift_loc(psi: WaveFunction, Delta: DensityField,
                      params: CollapseParams) -> DensityField:
    """Exact rate of change of the one-body density under the localization term."""
    psi.axis.check_same(Delta.grid)
    N = psi.particle_count
    if N > 3:
        raise ValueError("density_drift_loc supports at most 3 particles")
    D = quantum_density(psi)
    mean = mean_delta(D, Delta)
    dx = psi.axis.spacing
    pair = two_body_density(psi) @ Delta.values * dx if N > 1 else 0.0
    rate = 2.0 * params.gamma_L * params.n_eff**2
    values = rate * (Delta.values * D.values + pair - N * mean * D.values)
    return DensityField(psi.axis, values)


def density_drift_meanfield(D_Phi: DensityField, Delta: DensityField,
                            gamma_L: float) -> DensityField:
    D_Phi.grid.check_same(Delta.grid)
    return DensityField(D_Phi.grid, 2.0 * gamma_L * Delta.values * D_Phi.values)


def _central_diff(values: np.ndarray, dx: float) -> np.ndarray:
    return (np.roll(values, -1) - np.roll(values, 1)) / (2.0 * dx)


def equivalent_range(F: np.ndarray, grid: Grid1D) -> np.ndarray:
    """Half-width ``l(r)`` of the box with the same second moment as ``F(r, .)``.

    Matches ``(2 l^3 / 3) F(r, r) = int (r' - r)^2 F(r, r') dr'``.
    """
    n = grid.n_points
    idx = np.arange(n)
    sep = grid.wrap(grid.x[None, :] - grid.x[:, None])
    mu2 = np.sum(sep**2 * F, axis=1) * grid.spacing
    diag = F[idx, idx]
    with np.errstate(divide="ignore", invalid="ignore"):
        l3 = np.where(diag > 0, 1.5 * mu2 / diag, 0.0)
    return np.cbrt(np.maximum(l3, 0.0))


def density_drift_gradient_expansion(D_Phi: DensityField, F: np.ndarray, Delta: DensityField,
                                     gamma_L: float, l) -> DensityField:
    """Short-range expansion of the correlation form of the density drift (1D).

    With ``F(r, r') D(r')`` linear in ``r'`` over a box of half-width ``l`` the
    correlation integral reduces to
    ``-2 gamma_L D(r) (2 l^3 / 3) d_{r'}(F D)|_{r'=r} dDelta/dr``.
    ``l`` may be a scalar or an array over ``r`` (see :func:`equivalent_range`).
    Derivatives use periodic central differences, so ``Delta`` need only be
    smooth where ``D_Phi`` is appreciable.
    """
    grid = D_Phi.grid
    grid.check_same(Delta.grid)
    n = grid.n_points
    F = np.asarray(F, dtype=float)
    if F.shape != (n, n):
        raise GridMismatchError("F must be an n x n array on the density grid")
    D = D_Phi.values
    dx = grid.spacing
    idx = np.arange(n)
    up, down = (idx + 1) % n, (idx - 1) % n
    # product rule keeps a sharply peaked but symmetric F from biasing the slope
    dF = (F[idx, up] - F[idx, down]) / (2.0 * dx)
    dFD = F[idx, idx] * _central_diff(D, dx) + D * dF
    dDelta = _central_diff(Delta.values, dx)
    coeff = 2.0 * np.asarray(l, dtype=float) ** 3 / 3.0
    return DensityField(grid, -2.0 * gamma_L * D * coeff * dFD * dDelta)


def density_drift_correlation_form(D_Phi: DensityField, F: np.ndarray, Delta: DensityField,
                                   gamma_L: float) -> DensityField:
    """``2 gamma_L D(r) int F(r, r') D(r') [Delta(r) - Delta(r')] dr'`` by quadrature."""
    D = D_Phi.values
    Dl = Delta.values
    integrand = F * D[None, :] * (Dl[:, None] - Dl[None, :])
    return DensityField(D_Phi.grid, 2.0 * gamma_L * D * integrand.sum(axis=1) * D_Phi.grid.spacing)


# -- collapse detection -----------------------------------------------------

@dataclass(frozen=True)
class Packet:
    label: str
    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise InvalidSpecError(f"packet {self.label!r} has an empty window")


def check_packets(packets: Sequence[Packet]) -> None:
    ordered = sorted(packets, key=lambda p: p.lo)
    for a, b in zip(ordered, ordered[1:]):
        if b.lo < a.hi:
            raise InvalidSpecError(f"packet windows {a.label!r} and {b.label!r} overlap")
    labels = [p.label for p in packets]
    if len(set(labels)) != len(labels) or NO_OUTCOME in labels:
        raise InvalidSpecError("packet labels must be unique and not 'none'")


def packet_weights(psi: WaveFunction, packets: Sequence[Packet]) -> np.ndarray:
    """Fraction of the one-body density inside each window.

    Independent of global phase and normalization of ``psi``.
    """
    prob = psi.probability()
    dx = psi.axis.spacing
    D = sum(_marginal(prob, p, dx) for p in range(psi.particle_count))
    total = D.sum()
    x = psi.axis.x
    return np.array([D[(x >= p.lo) & (x < p.hi)].sum() / total for p in packets])


@dataclass(frozen=True)
class CollapseOutcome:
    label: str
    time: float | None

    @property
    def collapsed(self) -> bool:
        return self.label != NO_OUTCOME


class CollapseDetector:
    """Streaming form of :func:`detect_collapse`."""

    def __init__(self, packets: Sequence[Packet], threshold: float = COLLAPSE_THRESHOLD):
        if not 0.5 < threshold <= 1.0:
            raise InvalidSpecError("collapse threshold must be in (0.5, 1]")
        check_packets(packets)
        self.packets = list(packets)
        self.threshold = threshold
        self.outcome = CollapseOutcome(NO_OUTCOME, None)

    def update(self, time: float, weights: np.ndarray) -> CollapseOutcome:
        if not self.outcome.collapsed:
            k = int(np.argmax(weights))
            if weights[k] >= self.threshold:
                self.outcome = CollapseOutcome(self.packets[k].label, float(time))
        return self.outcome


def detect_collapse(states: WaveFunction | Iterable[WaveFunction], packets: Sequence[Packet],
                    threshold: float = COLLAPSE_THRESHOLD) -> CollapseOutcome:
    """First time at which one window holds at least ``threshold`` of the weight."""
    if isinstance(states, WaveFunction):
        states = [states]
    det = CollapseDetector(packets, threshold)
    for psi in states:
        if det.update(psi.time, packet_weights(psi, packets)).collapsed:
            break
    return det.outcome


# -- ensembles ----------------------------------------------------------------

@dataclass
class RunRecord:
    seed: int
    outcome: str
    collapse_time: float | None
    final_weights: list[float]
    initial_positions: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "outcome": self.outcome, "collapse_time": self.collapse_time,
                "final_weights": list(self.final_weights),
                "initial_positions": list(self.initial_positions)}

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(int(d["seed"]), d["outcome"], d["collapse_time"], list(d["final_weights"]),
                   list(d.get("initial_positions", [])))


@dataclass
class EnsembleResult:
    labels: list[str]
    runs: list[RunRecord]

    def __post_init__(self):
        allowed = set(self.labels) | {NO_OUTCOME}
        for r in self.runs:
            if r.outcome not in allowed:
                raise InvalidSpecError(f"run outcome {r.outcome!r} is not a packet label")

    @property
    def size(self) -> int:
        return len(self.runs)

    def counts(self) -> dict[str, int]:
        c = {lab: 0 for lab in [*self.labels, NO_OUTCOME]}
        for r in self.runs:
            c[r.outcome] += 1
        return c


@dataclass(frozen=True)
class OutcomeStats:
    label: str
    count: int
    frequency: float
    predicted: float
    sigma: float
    band: tuple[float, float]
    wilson: tuple[float, float]
    flagged: bool

    def to_dict(self) -> dict:
        return {"label": self.label, "count": self.count, "frequency": self.frequency,
                "predicted": self.predicted, "sigma": self.sigma, "band": list(self.band),
                "wilson_interval": list(self.wilson), "flagged": self.flagged}


@dataclass(frozen=True)
class BornReport:
    size: int
    outcomes: tuple[OutcomeStats, ...]
    uncollapsed: int

    @property
    def any_flagged(self) -> bool:
        return any(o.flagged for o in self.outcomes)

    def to_dict(self) -> dict:
        return {"size": self.size, "uncollapsed": self.uncollapsed,
                "any_flagged": self.any_flagged,
                "outcomes": [o.to_dict() for o in self.outcomes]}


def born_statistics(ensemble: EnsembleResult, predicted_weights: Sequence[float],
                    n_sigma: float = 3.0) -> BornReport:
    """Outcome frequencies against predicted weights with binomial intervals.

    An outcome is flagged when its frequency leaves ``p +- n_sigma * sqrt(p(1-p)/M)``.
    The Wilson score interval (95%) is reported alongside.
    """
    M = ensemble.size
    if M == 0:
        raise ValueError("empty ensemble")
    if len(predicted_weights) != len(ensemble.labels):
        raise ValueError("one predicted weight per packet label is required")
    counts = ensemble.counts()
    stats = []
    for label, p in zip(ensemble.labels, predicted_weights):
        k = counts[label]
        f = k / M
        sigma = math.sqrt(p * (1.0 - p) / M)
        band = (max(0.0, p - n_sigma * sigma), min(1.0, p + n_sigma * sigma))
        ci = binomtest(k, M).proportion_ci(0.95, method="wilson")
        flagged = abs(f - p) > n_sigma * sigma + 1e-12
        stats.append(OutcomeStats(label, k, f, float(p), sigma, band,
                                  (float(ci.low), float(ci.high)), flagged))
    return BornReport(M, tuple(stats), counts[NO_OUTCOME])


# -- quantum-equilibrium H-function -----------------------------------------

def _cell_points(grid: Grid1D, cell_size: float | None) -> int:
    if cell_size is None:
        return H_CELL_POINTS
    if cell_size < grid.spacing * (1 - 1e-12):
        raise ValueError("cell size must be at least one grid spacing")
    k = int(round(cell_size / grid.spacing))
    if grid.n_points % k:
        raise ValueError(f"cell of {k} grid points does not tile {grid.n_points} points")
    return k


def coarse_distribution(prob: np.ndarray, cell_points: int) -> np.ndarray:
    """Sum a configuration-grid array over hypercubic blocks of ``cell_points``."""
    arr = prob
    for ax in range(prob.ndim):
        shape = list(arr.shape)
        shape[ax: ax + 1] = [shape[ax] // cell_points, cell_points]
        arr = arr.reshape(shape).sum(axis=ax + 1)
    return arr / arr.sum()


def coarse_h_function(samples: np.ndarray, psi: WaveFunction,
                      cell_size: float | None = None) -> float:
    """Coarse-grained relative entropy of the sampled configurations against ``|psi|^2``.

    ``samples`` has shape ``(M,)`` for one particle or ``(M, N)``.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("empty sample")
    N = psi.particle_count
    samples = samples.reshape(-1, N)
    axis = psi.axis
    k = _cell_points(axis, cell_size)
    p_psi = coarse_distribution(psi.probability(), k)
    ncell = axis.n_points // k
    cells = (axis.nearest_index(samples) // k) % ncell
    flat = np.ravel_multi_index(tuple(cells.T), p_psi.shape)
    p_hat = np.bincount(flat, minlength=p_psi.size) / len(samples)
    occ = p_hat > 0
    q = p_psi.ravel()[occ]
    if np.any(q == 0):
        return math.inf
    return float(np.sum(p_hat[occ] * np.log(p_hat[occ] / q)))


def coarse_h_bootstrap(samples: np.ndarray, psi: WaveFunction, cell_size: float | None = None,
                       resamples: int = 200, seed: int = 0) -> tuple[float, float]:
    """H-function and its bootstrap standard error."""
    samples = np.asarray(samples, dtype=float).reshape(-1, psi.particle_count)
    rng = np.random.default_rng(seed)
    base = coarse_h_function(samples, psi, cell_size)
    boots = [coarse_h_function(samples[rng.integers(0, len(samples), len(samples))], psi,
                               cell_size) for _ in range(resamples)]
    return base, float(np.std(boots, ddof=1))


def longest_decreasing_run(values) -> int:
    """Length of the longest run of consecutive, strictly decreasing values."""
    best = run = 1 if len(values) else 0
    for prev, cur in zip(values, values[1:]):
        run = run + 1 if cur < prev else 1
        best = max(best, run)
    return best
