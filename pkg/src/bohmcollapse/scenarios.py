"""Concrete simulations built from a :class:`~bohmcollapse.config.ScenarioConfig`.

Each simulation exposes the same small interface used by the runner:
``columns``/``row()`` for the time series, ``advance()``, ``weights()`` for
collapse detection, ``summary()`` and a pair of methods that move its state
in and out of checkpoint arrays.

Collective coordinate: a pointer of ``n_eff`` rigidly bound particles is one
coordinate of mass ``n_eff * mass`` in a well of frequency ``omega / n_eff``,
so its ground-state width equals the single-particle one, and its
localization multiplier carries the factor ``n_eff**2``.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from . import density_matrix as dm
from .config import ScenarioConfig
from .densities import BohmianConfig
from .diagnostics import Packet, coarse_h_function, longest_decreasing_run, packet_weights
from .dynamics import (
    CollapseParams,
    HamiltonianSpec,
    SimulationState,
    _split_step_spectra,
    advance,
    bohmian_velocities_many,
    sample_configurations,
)
from .errors import ConfigError, InvalidStateError
from .grid import ConfigGrid, Grid1D, WaveFunction, gaussian_packet, norm_squared, normalize
from .kernels import KernelSpec, periodic_kernel


def collective_mass(cfg: ScenarioConfig) -> float:
    return cfg.mass * cfg.n_eff


def collective_omega(cfg: ScenarioConfig) -> float:
    return cfg.omega / cfg.n_eff


def ground_width(cfg: ScenarioConfig) -> float:
    """Standard deviation of ``|psi|^2`` in the ground state of one well."""
    return 1.0 / math.sqrt(2.0 * collective_mass(cfg) * collective_omega(cfg))


def build_axis(cfg: ScenarioConfig) -> Grid1D:
    return Grid1D(cfg.n_points, cfg.length)


def build_potential(cfg: ScenarioConfig, axis: Grid1D) -> np.ndarray | None:
    x = axis.x
    M, w = collective_mass(cfg), collective_omega(cfg)
    if cfg.potential == "free":
        return None
    if cfg.potential == "harmonic":
        return 0.5 * M * w**2 * x**2
    if cfg.potential == "double_well":
        d2 = np.min([axis.wrap(x - c) ** 2 for c in cfg.centers], axis=0)
        return 0.5 * M * w**2 * d2
    return 0.5 * M * cfg.omega**2 * x**2 + cfg.anharmonic * x**4


def build_hamiltonian(cfg: ScenarioConfig, axis: Grid1D) -> HamiltonianSpec:
    return HamiltonianSpec(mass=collective_mass(cfg), potential=build_potential(cfg, axis),
                           frozen=cfg.frozen)


def build_kernel(cfg: ScenarioConfig) -> KernelSpec:
    return KernelSpec(shape=cfg.kernel, a_L=cfg.a_L, s=cfg.s if cfg.kernel == "rational" else None,
                      unit_integral=cfg.unit_integral)


def build_params(cfg: ScenarioConfig) -> CollapseParams:
    return CollapseParams(cfg.gamma_L, build_kernel(cfg), cfg.variant, cfg.n_eff)


def packet_widths(cfg: ScenarioConfig) -> list[float]:
    if cfg.widths is not None:
        return list(cfg.widths)
    if cfg.potential in ("harmonic", "double_well"):
        return [ground_width(cfg)] * cfg.packet_count
    return [1.0] * cfg.packet_count


def build_packets(cfg: ScenarioConfig) -> list[Packet]:
    """Windows split halfway between neighbouring centers, labelled ``p<i>``."""
    half = 0.5 * cfg.length
    order = sorted(range(cfg.packet_count), key=lambda i: cfg.centers[i])
    cs = [cfg.centers[i] for i in order]
    edges = [-half] + [0.5 * (a + b) for a, b in zip(cs, cs[1:])] + [half]
    windows = {i: Packet(f"p{i}", edges[k], edges[k + 1]) for k, i in enumerate(order)}
    return [windows[i] for i in range(cfg.packet_count)]


def build_initial_wave(cfg: ScenarioConfig, axis: Grid1D) -> WaveFunction:
    amps = np.zeros(axis.n_points, dtype=complex)
    for c, w, wt, ph, p in zip(cfg.centers, packet_widths(cfg), cfg.weights, cfg.phases,
                               cfg.momenta):
        amps += math.sqrt(wt) * np.exp(1j * ph) * gaussian_packet(axis, c, w, p)
    return normalize(WaveFunction(ConfigGrid(axis, 1), amps))


def grid_hamiltonian_matrix(axis: Grid1D, mass: float, potential: np.ndarray | None) -> np.ndarray:
    """Dense single-particle Hamiltonian with the spectral kinetic operator."""
    n = axis.n_points
    kin = np.fft.ifft(np.fft.fft(np.eye(n), axis=0) * (axis.k**2 / (2 * mass))[:, None], axis=0)
    H = 0.5 * (kin + kin.conj().T).real
    if potential is not None:
        H = H + np.diag(potential)
    return H


def eigenstates(axis: Grid1D, mass: float, potential: np.ndarray | None, count: int):
    """Lowest ``count`` eigenpairs; eigenvectors normalized with ``sum |phi|^2 dx = 1``."""
    E, V = np.linalg.eigh(grid_hamiltonian_matrix(axis, mass, potential))
    phi = V[:, :count].T / math.sqrt(axis.spacing)
    for k in range(count):
        # fix the sign so results do not depend on the eigensolver
        if phi[k][np.argmax(np.abs(phi[k]))] < 0:
            phi[k] = -phi[k]
    return E[:count], phi


def logit_slope(times: np.ndarray, weights: np.ndarray, lo: float = 1e-9,
                hi: float = 0.45) -> float | None:
    """Least-squares decay rate of ``log(w / (1 - w))`` over the logistic range."""
    w = np.asarray(weights)
    sel = (w > lo) & (w < hi)
    if sel.sum() < 3:
        return None
    y = np.log(w[sel] / (1 - w[sel]))
    slope = np.polyfit(np.asarray(times)[sel], y, 1)[0]
    return float(-slope)


class WaveSimulation:
    """One wavefunction plus its Bohmian configuration."""

    def __init__(self, cfg: ScenarioConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        self.axis = build_axis(cfg)
        self.H = build_hamiltonian(cfg, self.axis)
        self.params = build_params(cfg)
        self.packets = build_packets(cfg)
        psi = build_initial_wave(cfg, self.axis)
        if cfg.positions is not None:
            q = BohmianConfig(cfg.positions[:1])
        else:
            q = BohmianConfig(sample_configurations(psi, np.random.default_rng(seed), 1)[0])
        self.state = SimulationState(psi, q, 0.0, seed)
        self.initial_positions = list(q.positions)
        self.initial_width = self._width()
        self.initial_center = self._center()

    # -- interface --------------------------------------------------------
    @property
    def columns(self) -> list[str]:
        return (["t", "norm"] + [f"w_{p.label}" for p in self.packets]
                + ["q_0"] + (["width"] if self.cfg.scenario == "free_packet" else []))

    def row(self) -> list[float]:
        s = self.state
        out = [s.time, norm_squared(s.psi)] + list(self.weights()) + [s.q.positions[0]]
        if self.cfg.scenario == "free_packet":
            out.append(self._width())
        return out

    def weights(self) -> np.ndarray:
        return packet_weights(self.state.psi, self.packets)

    def advance(self) -> None:
        self.state = advance(self.state, self.H, self.params, self.cfg.dt)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.state.psi.amplitudes))
                    and np.all(np.isfinite(self.state.q.positions)))

    @property
    def time(self) -> float:
        return self.state.time

    @property
    def step(self) -> int:
        return self.state.step

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray, dict]:
        s = self.state
        meta = {"node_events": s.node_events, "initial_positions": self.initial_positions,
                "initial_width": self.initial_width, "initial_center": self.initial_center}
        return s.psi.amplitudes.ravel(), np.array(s.q.positions), meta

    def load_arrays(self, amplitudes: np.ndarray, positions: np.ndarray, time: float,
                    step: int, meta: dict) -> None:
        psi = WaveFunction(self.state.psi.grid, amplitudes.copy(), time)
        self.state = SimulationState(psi, BohmianConfig(positions), time, self.seed, step,
                                     int(meta["node_events"]))
        self.initial_positions = list(meta["initial_positions"])
        self.initial_width = meta["initial_width"]
        self.initial_center = meta["initial_center"]

    def summary(self, rows: np.ndarray) -> dict:
        out = {"node_events": self.state.node_events,
               "max_norm_error": float(np.max(np.abs(rows[:, 1] - 1.0)))}
        cfg = self.cfg
        if cfg.scenario == "free_packet":
            w0 = self.initial_width
            t = self.state.time
            analytic = w0 * math.sqrt(1.0 + (t / (2.0 * collective_mass(cfg) * w0**2)) ** 2)
            width = self._width()
            out.update(width=width, analytic_width=analytic,
                       dispersion_error=abs(width - analytic) / analytic)
        if cfg.packet_count == 2:
            home = int(np.argmax([p.lo <= self.initial_positions[0] < p.hi
                                  for p in self.packets]))
            empty = rows[:, 2 + (1 - home)]
            out["measured_rate"] = logit_slope(rows[:, 0], empty)
            out["predicted_rate"] = self.predicted_rate()
            out["empty_weight_monotone"] = bool(np.all(np.diff(empty) <= 0))
        return out

    # -- helpers ----------------------------------------------------------
    def predicted_rate(self) -> float | None:
        """Logistic rate ``2 gamma n_eff^2 beta`` of the two-packet reduction (Bohmian-only Delta)."""
        cfg = self.cfg
        if cfg.variant != "bohmian_only":
            return None
        psi0 = build_initial_wave(cfg, self.axis)
        home = int(np.argmax([p.lo <= self.initial_positions[0] < p.hi for p in self.packets]))
        x = self.axis.x
        p = self.packets[home]
        inside = (x >= p.lo) & (x < p.hi)
        prob = np.abs(psi0.amplitudes) ** 2 * inside
        kern = periodic_kernel(self.params.kernel, x - self.initial_positions[0], self.axis.length)
        beta = float(np.sum(prob * kern) / np.sum(prob))
        return 2.0 * cfg.gamma_L * cfg.n_eff**2 * beta

    def _center(self) -> float:
        prob = self.state.psi.probability()
        return float(np.sum(self.axis.x * prob) / np.sum(prob))

    def _width(self) -> float:
        prob = self.state.psi.probability()
        x = self.axis.x
        mu = np.sum(x * prob) / np.sum(prob)
        d = self.axis.wrap(x - mu)
        return float(math.sqrt(np.sum(d**2 * prob) / np.sum(prob)))


class RhoSimulation:
    """Density operator on four localized modes, one Bohmian particle."""

    def __init__(self, cfg: ScenarioConfig, seed: int):
        if cfg.potential == "anharmonic":
            raise ConfigError("hamiltonian.potential", "two_mode_density_matrix needs a "
                                                       "free, harmonic or double_well potential")
        self.cfg = cfg
        self.seed = seed
        self.axis = axis = build_axis(cfg)
        self.packets = build_packets(cfg)
        self.kernel = build_kernel(cfg)
        self.system = build_mode_system(cfg, axis)
        U = self.system.shapes
        h1 = grid_hamiltonian_matrix(axis, collective_mass(cfg), build_potential(cfg, axis))
        self.H = self.system.one_body_operator(U @ h1 @ U.T * axis.spacing)
        # modes are sorted A first; map config order onto basis order
        order = [self._mode_index(c) for c in cfg.centers]
        amps = {}
        for i, (wt, ph) in enumerate(zip(cfg.weights, cfg.phases)):
            occ = [0] * 4
            occ[order[i]] = 1
            amps[tuple(occ)] = math.sqrt(wt) * np.exp(1j * ph)
        self.rho = dm.DensityOperator.pure(self.system, self.system.ket(amps))
        if cfg.positions is not None:
            q = BohmianConfig(cfg.positions[:1])
        else:
            D = dm.density_rho(self.rho).values
            rng = np.random.default_rng(seed)
            cdf = np.cumsum(D)
            cdf /= cdf[-1]
            idx = min(int(np.searchsorted(cdf, rng.random(), side="right")), axis.n_points - 1)
            q = BohmianConfig([axis.x[idx]])
        self.q = q
        self.initial_positions = list(q.positions)
        self.time = 0.0
        self.step = 0
        self.trace0 = self.rho.trace

    def _mode_index(self, center: float) -> int:
        for k, m in enumerate(self.system.modes):
            if m.center == center:
                return k
        raise InvalidStateError("mode center not found")

    @property
    def columns(self) -> list[str]:
        return ["t", "trace"] + [f"w_{p.label}" for p in self.packets] + ["q_0",
                                                                         "hermiticity_error"]

    def row(self) -> list[float]:
        M = self.rho.matrix
        return ([self.time, self.rho.trace] + list(self.weights()) + [self.q.positions[0],
                float(np.max(np.abs(M - M.conj().T)))])

    def weights(self) -> np.ndarray:
        D = dm.density_rho(self.rho).values
        x = self.axis.x
        total = D.sum()
        return np.array([D[(x >= p.lo) & (x < p.hi)].sum() / total for p in self.packets])

    def advance(self) -> None:
        self.rho = dm.evolve_coupled(self.rho, self.H, self.q, self.kernel, self.cfg.gamma_L,
                                     self.cfg.dt, self.cfg.variant)
        self.time = self.time + self.cfg.dt
        self.step += 1

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.rho.matrix)))

    def to_arrays(self):
        return (self.rho.matrix.ravel(), np.array(self.q.positions),
                {"initial_positions": self.initial_positions, "trace0": self.trace0})

    def load_arrays(self, amplitudes, positions, time, step, meta) -> None:
        d = self.system.dimension
        self.rho = dm.DensityOperator(self.system, amplitudes.reshape(d, d).copy())
        self.q = BohmianConfig(positions)
        self.time, self.step = time, step
        self.initial_positions = list(meta["initial_positions"])
        self.trace0 = meta["trace0"]

    def summary(self, rows: np.ndarray) -> dict:
        return {"max_trace_drift": float(np.max(np.abs(rows[:, 1] - self.trace0))),
                "max_hermiticity_error": float(np.max(rows[:, -1]))}


def build_mode_system(cfg: ScenarioConfig, axis: Grid1D) -> dm.ModeSystem:
    """Gaussian modes cut to their half of the domain and orthonormalized per region."""
    x = axis.x
    widths = cfg.widths if cfg.widths is not None else [ground_width(cfg)] * cfg.packet_count
    by_region: dict[str, list[tuple[float, np.ndarray]]] = {"A": [], "B": []}
    for c, w in zip(cfg.centers, widths):
        region = "A" if c < 0 else "B"
        inside = (x < 0) if region == "A" else (x >= 0)
        by_region[region].append((c, np.exp(-((x - c) ** 2) / (4 * w**2)) * inside))
    if not by_region["A"] or not by_region["B"]:
        raise ConfigError("initial.centers", "modes are needed on both sides of x = 0")
    modes = []
    for region, items in by_region.items():
        G = np.array([g for _, g in items])
        S = G @ G.T * axis.spacing
        evals, evecs = np.linalg.eigh(S)
        if evals.min() < 1e-10:
            raise ConfigError("initial.centers", f"modes in region {region} are linearly dependent")
        # symmetric (Loewdin) orthonormalization keeps each mode near its center
        W = evecs @ np.diag(evals**-0.5) @ evecs.T
        for (c, _), u in zip(items, W @ G):
            modes.append(dm.Mode(region, c, u))
    return dm.ModeSystem(axis, tuple(modes), max_occupation=1)


class EquilibriumSimulation:
    """Ensemble of independent Bohmian trajectories guided by one multimode state.

    The state superposes the lowest product eigenstates of ``particles``
    distinguishable particles in the configured potential. Trajectories start
    from the ground-state density, so the ensemble begins out of quantum
    equilibrium.
    """

    def __init__(self, cfg: ScenarioConfig, seed: int):
        if cfg.gamma_L != 0:
            raise ConfigError("collapse.gamma_L", "equilibrium_relaxation runs without collapse")
        self.cfg = cfg
        self.seed = seed
        self.axis = axis = build_axis(cfg)
        self.H = build_hamiltonian(cfg, axis)
        N = cfg.particles
        self.grid = ConfigGrid(axis, N)
        c = np.asarray(cfg.eigen_amplitudes, dtype=float)
        phases = np.zeros(len(c)) if cfg.eigen_phases is None else np.asarray(cfg.eigen_phases)
        E, phi = eigenstates(axis, collective_mass(cfg), self.H.potential, len(c))
        modes = sorted(itertools.product(range(len(c)), repeat=N),
                       key=lambda idx: (sum(E[i] for i in idx), idx))[:len(c)]
        amps = np.zeros(self.grid.shape, dtype=complex)
        for coef, phase, idx in zip(c, phases, modes):
            amps += coef * np.exp(1j * phase) * _product(phi, idx)
        self.modes = [list(m) for m in modes]
        self.psi = normalize(WaveFunction(self.grid, amps))
        ground = WaveFunction(self.grid, _product(phi, (0,) * N).astype(complex))
        rng = np.random.default_rng(seed)
        self.q = sample_configurations(ground, rng, cfg.ensemble_size)
        self.initial_positions = [float(v) for v in self.q[:4].ravel()]
        self.time = 0.0
        self.step = 0
        self.packets = []

    @property
    def columns(self) -> list[str]:
        return ["t", "norm", "H"]

    def row(self) -> list[float]:
        h = coarse_h_function(self.q, self.psi, self.cfg.h_cell_points * self.axis.spacing)
        return [self.time, norm_squared(self.psi), h]

    def weights(self) -> np.ndarray:
        return np.array([])

    def advance(self) -> None:
        dt = self.cfg.dt
        m = collective_mass(self.cfg)
        amps, _, _ = _split_step_spectra(self.psi.amplitudes, self.H, self.grid, dt)
        new = self.psi.replace(amps, self.time + dt)
        v1 = bohmian_velocities_many(self.psi, self.q, m)
        q_mid = self.axis.wrap(self.q + 0.5 * dt * v1)
        mid = self.psi.replace(0.5 * (self.psi.amplitudes + amps))
        v2 = bohmian_velocities_many(mid, q_mid, m)
        self.q = self.axis.wrap(self.q + dt * v2)
        self.psi = new
        self.time = self.time + dt
        self.step += 1

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.psi.amplitudes)) and np.all(np.isfinite(self.q)))

    def to_arrays(self):
        return self.psi.amplitudes.ravel(), self.q.copy(), {}

    def load_arrays(self, amplitudes, positions, time, step, meta) -> None:
        self.psi = WaveFunction(self.grid, amplitudes.reshape(self.grid.shape).copy(), time)
        self.q = positions.reshape(-1, self.grid.particle_count).copy()
        self.time, self.step = time, step

    def summary(self, rows: np.ndarray) -> dict:
        H = rows[:, 2]
        windows = window_means(H, 4)
        return {"H_initial": float(H[0]), "H_final": float(H[-1]), "H_windows": windows,
                "H_decreasing_windows": longest_decreasing_run(windows), "modes": self.modes}


def _product(phi: np.ndarray, idx) -> np.ndarray:
    out = phi[idx[0]]
    for i in idx[1:]:
        out = np.multiply.outer(out, phi[i])
    return out


def window_means(values: np.ndarray, count: int) -> list[float]:
    """Means over ``count`` consecutive, equal, disjoint windows."""
    chunks = np.array_split(np.asarray(values, dtype=float), count)
    return [float(np.mean(c)) for c in chunks]


def make_simulation(cfg: ScenarioConfig, seed: int):
    if cfg.scenario == "two_mode_density_matrix":
        return RhoSimulation(cfg, seed)
    if cfg.scenario == "equilibrium_relaxation":
        return EquilibriumSimulation(cfg, seed)
    return WaveSimulation(cfg, seed)
