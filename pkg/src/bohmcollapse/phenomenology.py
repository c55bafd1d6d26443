"""SI closed-form rate estimates and constant relations.

Every function returns a :class:`Quantity` whose unit tag is checked on
construction. Inputs are plain floats in SI units.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidSpecError

UNITS = ("s^-1", "m/s", "dimensionless")

HBAR = 1.054571817e-34
G_NEWTON = 6.67430e-11
NUCLEON_MASS = 1.67262192e-27


@dataclass(frozen=True)
class Quantity:
    value: float
    unit: str

    def __post_init__(self):
        if self.unit not in UNITS:
            raise InvalidSpecError(f"unknown unit {self.unit!r}")
        if not math.isfinite(self.value):
            raise ArithmeticError(f"non-finite {self.unit} value")

    def __float__(self) -> float:
        return self.value

    def time(self) -> float:
        """Inverse of a rate, in seconds."""
        if self.unit != "s^-1":
            raise InvalidSpecError(f"time() needs a rate, got {self.unit}")
        return 1.0 / self.value


@dataclass(frozen=True)
class PhysicalParams:
    gamma_L: float
    a_L: float
    m: float = NUCLEON_MASS
    G: float = G_NEWTON
    hbar: float = HBAR

    def __post_init__(self):
        _positive(gamma_L=self.gamma_L, a_L=self.a_L, m=self.m, G=self.G, hbar=self.hbar)


def _positive(**values: float) -> None:
    for name, v in values.items():
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise InvalidSpecError(f"{name} must be a positive finite number, got {v!r}")


def _rate(value: float) -> Quantity:
    return Quantity(float(value), "s^-1")


def gamma_from_gravity(m: float, G: float, hbar: float, a_L: float) -> Quantity:
    """Localization rate fixed by the gravitational self-energy scale ``m^2 G / (hbar a_L)``."""
    _positive(m=m, G=G, hbar=hbar, a_L=a_L)
    return _rate(m * m * G / (hbar * a_L))


def collapse_velocity(gamma_L: float, a_L: float) -> Quantity:
    _positive(gamma_L=gamma_L, a_L=a_L)
    return Quantity(gamma_L * a_L, "m/s")


def alpha_constant(m: float, G: float, hbar: float, c_L: float) -> Quantity:
    _positive(m=m, G=G, hbar=hbar, c_L=c_L)
    return Quantity(m * m * G / (hbar * c_L), "dimensionless")


def rate_small_object(gamma_L: float, N: float) -> Quantity:
    """Object smaller than ``a_L`` holding ``N`` particles."""
    _positive(gamma_L=gamma_L, N=N)
    return _rate(gamma_L * N**2)


def rate_bulk(gamma_L: float, n: float, l: float) -> Quantity:
    """Object of size ``l < a_L`` with number density ``n``."""
    _positive(gamma_L=gamma_L, n=n, l=l)
    return _rate(gamma_L * n**2 * l**6)


def rate_large(gamma_L: float, n: float, a_L: float, l: float) -> Quantity:
    """Object of size ``l > a_L``: ``(n a_L^3)`` particles per kernel volume times ``n l^3``."""
    _positive(gamma_L=gamma_L, n=n, a_L=a_L, l=l)
    return _rate(gamma_L * n * a_L**3 * n * l**3)


def rate_pointer(gamma_L: float, N_phi: float, N_P: float) -> Quantity:
    """Decay rate of the empty pointer branch, ``2 gamma_L N_phi N_P``."""
    _positive(gamma_L=gamma_L, N_phi=N_phi, N_P=N_P)
    return _rate(2.0 * gamma_L * N_phi * N_P)


def micro_bound(gamma_L: float, N: float) -> Quantity:
    """Upper bound on the localization rate of an ``N``-particle microscopic system."""
    _positive(gamma_L=gamma_L, N=N)
    return _rate(gamma_L * N**2)


def narrowing_rate(gamma_L: float, tau_c: float) -> Quantity:
    """Second-order relaxation rate ``gamma_L^2 tau_c`` under motional narrowing.

    ``tau_c`` is the correlation time of the ``Delta`` fluctuations; it has no
    closed form and is a free input.
    """
    _positive(gamma_L=gamma_L, tau_c=tau_c)
    return _rate(gamma_L**2 * tau_c)


def table(gamma_values, a_values, N_values=(1e12,), n_values=(1e30,), l_values=(1e-6,)):
    """Rows of rate estimates over the Cartesian product of the inputs."""
    rows = []
    for g in gamma_values:
        for a in a_values:
            c = collapse_velocity(g, a).value
            for N in N_values:
                for n in n_values:
                    for l in l_values:
                        big = rate_large(g, n, a, l).value if l > a else None
                        rows.append({
                            "gamma_L": g, "a_L": a, "N": N, "n": n, "l": l,
                            "c_L": c,
                            "rate_small_object": rate_small_object(g, N).value,
                            "rate_bulk": rate_bulk(g, n, l).value,
                            "rate_large": big,
                        })
    return rows
