"""Density operators on a small occupation-number basis.

Single-particle modes ``u_i(x)`` are real, orthonormal functions on a
:class:`~bohmcollapse.grid.Grid1D`, each tagged with a region ``"A"`` or
``"B"``. Many-body kets are occupation tuples ``(n_1, ..., n_P)`` with every
``n_i <= max_occupation``. Region-A modes come first so that the basis is the
tensor product ``basis_A x basis_B`` in row-major order, which makes partial
traces a reshape.

The localization operator for a given ``Delta`` field is

    Lbar = sum_ij Delta_ij a_i^dag a_j - Tr(N_Delta rho) / Tr(rho)

with ``Delta_ij = int u_i Delta u_j dx``; it satisfies ``Tr(Lbar rho) = 0``
and generates ``d rho/dt = -i [H, rho] + gamma_L {Lbar, rho}``.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import expm

from .densities import BohmianConfig, DeltaVariant, DensityField, bohmian_smoothed, delta_field
from .errors import GridMismatchError, InvalidSpecError, InvalidStateError
from .grid import Grid1D
from .kernels import KernelSpec, smooth_array

ORTHONORMAL_TOL = 1e-8
HERMITIAN_TOL = 1e-10
EIGEN_TOL = 1e-8
MAX_DIMENSION = 81
REGIONS = ("A", "B")


@dataclass(frozen=True, eq=False)
class Mode:
    region: str
    center: float
    shape: np.ndarray


@dataclass(frozen=True, eq=False)
class ModeSystem:
    grid: Grid1D
    modes: tuple[Mode, ...]
    max_occupation: int = 1

    def __post_init__(self):
        modes = tuple(sorted(self.modes, key=lambda m: REGIONS.index(m.region)
                             if m.region in REGIONS else -1))
        for m in modes:
            if m.region not in REGIONS:
                raise InvalidSpecError(f"mode region must be 'A' or 'B', got {m.region!r}")
            if np.shape(m.shape) != (self.grid.n_points,):
                raise GridMismatchError("mode shape does not match the grid")
        object.__setattr__(self, "modes", modes)
        if self.max_occupation < 1:
            raise InvalidSpecError("max_occupation must be >= 1")
        if self.dimension > MAX_DIMENSION:
            raise InvalidSpecError(
                f"basis dimension {self.dimension} exceeds the cap of {MAX_DIMENSION}")
        U = self.shapes
        gram = U @ U.T * self.grid.spacing
        if not np.allclose(gram, np.eye(len(modes)), rtol=0, atol=ORTHONORMAL_TOL):
            raise InvalidSpecError("mode shapes are not orthonormal")
        overlap = np.abs(U) @ np.abs(U).T * self.grid.spacing
        for i, j in itertools.combinations(range(len(modes)), 2):
            if modes[i].region != modes[j].region and overlap[i, j] > ORTHONORMAL_TOL:
                raise InvalidSpecError(
                    f"modes {i} and {j} lie in different regions but their supports overlap")

    @property
    def mode_count(self) -> int:
        return len(self.modes)

    @property
    def shapes(self) -> np.ndarray:
        return np.array([np.asarray(m.shape, dtype=float) for m in self.modes])

    def region_modes(self, region: str) -> list[int]:
        return [i for i, m in enumerate(self.modes) if m.region == region]

    def region_dimension(self, region: str) -> int:
        return (self.max_occupation + 1) ** len(self.region_modes(region))

    @property
    def dimension(self) -> int:
        return (self.max_occupation + 1) ** self.mode_count

    @cached_property
    def basis(self) -> list[tuple[int, ...]]:
        return list(itertools.product(range(self.max_occupation + 1), repeat=self.mode_count))

    def index(self, occupations) -> int:
        return self.basis.index(tuple(occupations))

    @cached_property
    def annihilators(self) -> list[np.ndarray]:
        """Truncated bosonic ``a_i`` as dense matrices."""
        d = self.dimension
        lookup = {occ: k for k, occ in enumerate(self.basis)}
        ops = []
        for i in range(self.mode_count):
            a = np.zeros((d, d))
            for k, occ in enumerate(self.basis):
                if occ[i] > 0:
                    lower = occ[:i] + (occ[i] - 1,) + occ[i + 1:]
                    a[lookup[lower], k] = np.sqrt(occ[i])
            ops.append(a)
        return ops

    @cached_property
    def hopping(self) -> np.ndarray:
        """``a_i^dag a_j`` for all pairs, shape ``(P, P, d, d)``."""
        a = self.annihilators
        return np.array([[ai.T @ aj for aj in a] for ai in a])

    def one_body_operator(self, h: np.ndarray) -> np.ndarray:
        """``sum_ij h_ij a_i^dag a_j`` for a ``P x P`` matrix ``h``."""
        h = np.asarray(h)
        if h.shape != (self.mode_count, self.mode_count):
            raise GridMismatchError(f"one-body matrix must be {self.mode_count}x{self.mode_count}")
        return np.einsum("ij,ijkl->kl", h, self.hopping)

    def number_operator(self) -> np.ndarray:
        return self.one_body_operator(np.eye(self.mode_count))

    def ket(self, amplitudes: dict) -> np.ndarray:
        """Normalized state vector from ``{occupation tuple: amplitude}``."""
        v = np.zeros(self.dimension, dtype=complex)
        for occ, amp in amplitudes.items():
            v[self.index(occ)] += amp
        nrm = np.linalg.norm(v)
        if nrm == 0:
            raise InvalidStateError("zero state vector")
        return v / nrm


@dataclass
class DensityOperator:
    system: ModeSystem
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        d = self.system.dimension
        if self.matrix.shape != (d, d):
            raise GridMismatchError(f"matrix shape {self.matrix.shape} does not match basis {d}")

    @classmethod
    def pure(cls, system: ModeSystem, vector: np.ndarray) -> "DensityOperator":
        v = np.asarray(vector, dtype=complex)
        return cls(system, np.outer(v, v.conj()))

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def validate(self) -> None:
        M = self.matrix
        if np.max(np.abs(M - M.conj().T)) > HERMITIAN_TOL * max(1.0, np.max(np.abs(M))):
            raise InvalidStateError("density operator is not Hermitian")
        if not self.trace > 0:
            raise InvalidStateError("density operator has non-positive trace")
        if np.linalg.eigvalsh(0.5 * (M + M.conj().T)).min() < -EIGEN_TOL:
            raise InvalidStateError("density operator has negative eigenvalues")

    def to_json(self) -> str:
        return matrix_to_json(self.matrix)


def matrix_to_json(matrix: np.ndarray) -> str:
    """Dense row-major ``[[re, im], ...]`` rows."""
    m = np.asarray(matrix, dtype=complex)
    rows = [[[float(z.real), float(z.imag)] for z in row] for row in m]
    return json.dumps({"shape": list(m.shape), "data": rows})


def matrix_from_json(text: str) -> np.ndarray:
    obj = json.loads(text)
    arr = np.array(obj["data"], dtype=float)
    return (arr[..., 0] + 1j * arr[..., 1]).reshape(obj["shape"])


# -- densities and the localization operator --------------------------------

def one_body_matrix(rho: DensityOperator) -> np.ndarray:
    """``<a_i^dag a_j> / Tr rho``."""
    hop = rho.system.hopping
    return np.einsum("ijkl,lk->ij", hop, rho.matrix) / rho.trace


def density_rho(rho: DensityOperator) -> DensityField:
    """One-body density ``D_rho(x) = sum_ij u_i(x) u_j(x) <a_i^dag a_j>``."""
    U = rho.system.shapes
    G = one_body_matrix(rho)
    values = np.einsum("ix,ij,jx->x", U, G, U).real
    return DensityField(rho.system.grid, values)


def delta_matrix(system: ModeSystem, Delta: DensityField,
                 region: str | None = None) -> np.ndarray:
    """Mode overlaps ``Delta_ij``; with ``region`` only that block is kept."""
    system.grid.check_same(Delta.grid)
    U = system.shapes
    D = (U * Delta.values) @ U.T * system.grid.spacing
    if region is not None:
        keep = np.zeros(system.mode_count, dtype=bool)
        keep[system.region_modes(region)] = True
        D = D * np.outer(keep, keep)
    return D


def lbar_from_delta(rho: DensityOperator, Delta: DensityField,
                    region: str | None = None) -> np.ndarray:
    """Centered localization operator for a fixed ``Delta``."""
    N_delta = rho.system.one_body_operator(delta_matrix(rho.system, Delta, region))
    return center(N_delta, rho.matrix)


def center(operator: np.ndarray, rho_matrix: np.ndarray) -> np.ndarray:
    """Shift ``operator`` by a constant so that ``Tr(operator rho) = 0``."""
    mean = np.trace(operator @ rho_matrix).real / np.trace(rho_matrix).real
    return operator - mean * np.eye(operator.shape[0])


def delta_from_rho(rho: DensityOperator, q: BohmianConfig, kernel: KernelSpec,
                   variant: DeltaVariant | str = DeltaVariant.DIFFERENCE) -> DensityField:
    grid = rho.system.grid
    N_rho = DensityField(grid, smooth_array(density_rho(rho).values, kernel, grid))
    return delta_field(bohmian_smoothed(q, kernel, grid), N_rho, variant)


def build_lbar(rho: DensityOperator, q: BohmianConfig, kernel: KernelSpec,
               variant: DeltaVariant | str = DeltaVariant.DIFFERENCE,
               region: str | None = None) -> np.ndarray:
    """``Lbar`` with ``D_rho`` in place of the wavefunction density."""
    return lbar_from_delta(rho, delta_from_rho(rho, q, kernel, variant), region)


# -- evolution ---------------------------------------------------------------

def _propagate(rho: np.ndarray, H: np.ndarray, L: np.ndarray, gamma_L: float,
               dt: float) -> np.ndarray:
    """Exact flow of ``d rho/dt = -i[H, rho] + gamma_L {L - <L>, rho}`` for fixed ``L``.

    Without the centering term the equation is ``A rho + rho A^dag`` with
    ``A = -iH + gamma_L L``, solved by ``e^{A dt} rho e^{A^dag dt}``; the
    centering constant only rescales, so the trace is restored afterwards.
    """
    E = expm(dt * (-1j * H + gamma_L * L))
    new = E @ rho @ E.conj().T
    new = 0.5 * (new + new.conj().T)
    return new * (np.trace(rho).real / np.trace(new).real)


def evolve_rho(rho: DensityOperator, H_matrix: np.ndarray, Lbar_matrix: np.ndarray,
               gamma_L: float, dt: float) -> DensityOperator:
    """Advance ``d rho/dt = -i[H, rho] + gamma_L {Lbar, rho}`` by ``dt``.

    ``Lbar_matrix`` carries the ``Delta`` of the start of the step and is held
    fixed; with that the step is exact. Positivity is kept and the trace is
    constant to round-off.
    """
    d = rho.system.dimension
    H = np.asarray(H_matrix, dtype=complex)
    L = np.asarray(Lbar_matrix, dtype=complex)
    if H.shape != (d, d) or L.shape != (d, d):
        raise GridMismatchError(
            f"operator shapes {H.shape} and {L.shape} do not match basis dimension {d}")
    return DensityOperator(rho.system, _propagate(rho.matrix, H, L, gamma_L, dt))


def evolve_coupled(rho: DensityOperator, H_matrix: np.ndarray, q: BohmianConfig,
                   kernel: KernelSpec, gamma_L: float, dt: float,
                   variant: DeltaVariant | str = DeltaVariant.DIFFERENCE) -> DensityOperator:
    """Second-order step with ``Delta`` rebuilt from ``rho`` at the midpoint.

    Bohmian positions are held at ``q`` during the step.
    """
    H = np.asarray(H_matrix, dtype=complex)
    R = rho.matrix
    L0 = build_lbar(rho, q, kernel, variant)
    mid = DensityOperator(rho.system, _propagate(R, H, L0, gamma_L, 0.5 * dt))
    L1 = build_lbar(mid, q, kernel, variant)
    return DensityOperator(rho.system, _propagate(R, H, L1, gamma_L, dt))


# -- partial traces ---------------------------------------------------------

def _split(rho: DensityOperator) -> tuple[int, int]:
    sys = rho.system
    dA, dB = sys.region_dimension("A"), sys.region_dimension("B")
    if not sys.region_modes("A") or not sys.region_modes("B"):
        raise InvalidSpecError("partial trace needs modes in both regions")
    return dA, dB


def partial_trace_A(rho: DensityOperator) -> np.ndarray:
    """Trace over the region-B occupations; returns the ``dA x dA`` matrix ``rho_A``."""
    dA, dB = _split(rho)
    return np.einsum("abcb->ac", rho.matrix.reshape(dA, dB, dA, dB))


def partial_trace_B(rho: DensityOperator) -> np.ndarray:
    dA, dB = _split(rho)
    return np.einsum("abad->bd", rho.matrix.reshape(dA, dB, dA, dB))


def region_b_block(rho: DensityOperator, operator: np.ndarray) -> np.ndarray:
    """Extract ``L_B`` from an operator of the form ``1_A x L_B``."""
    dA, dB = _split(rho)
    op = np.asarray(operator).reshape(dA, dB, dA, dB)
    block = op[0, :, 0, :]
    if not np.allclose(op, np.einsum("ac,bd->abcd", np.eye(dA), block), atol=1e-12):
        raise InvalidSpecError("operator does not act on region B only")
    return block


def localization_effect_on_A(rho: DensityOperator, Lbar_B_matrix: np.ndarray,
                             gamma_L: float) -> np.ndarray:
    """Rate of change of ``rho_A`` caused by the region-B localization operator.

    ``Lbar_B_matrix`` is either the ``dB x dB`` block or the full operator
    ``1_A x L_B``. The result is
    ``2 gamma_L sum_{b,b''} <b|L_B|b''> <a,b''|rho|a',b>``.
    """
    dA, dB = _split(rho)
    L = np.asarray(Lbar_B_matrix)
    if L.shape == (dA * dB, dA * dB):
        L = region_b_block(rho, L)
    if L.shape != (dB, dB):
        raise GridMismatchError(f"L_B has shape {L.shape}, region B dimension is {dB}")
    R = rho.matrix.reshape(dA, dB, dA, dB)
    return 2.0 * gamma_L * np.einsum("bc,acdb->ad", L, R)
