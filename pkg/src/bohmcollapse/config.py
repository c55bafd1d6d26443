"""Scenario configuration files (TOML).

Every physical quantity is written either as a string ``"<number> natural"``
or, when its section declares ``units = "natural"``, as a bare number. Pure
counts and ratios (grid size, weights, phases, seeds) are plain numbers.
Any violation raises :class:`~bohmcollapse.errors.ConfigError` naming the
offending field as ``section.key``.
"""
from __future__ import annotations

import hashlib
import math
import re
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError

SCENARIOS = (
    "free_packet",
    "double_packet_superposition",
    "pointer_collective",
    "two_mode_density_matrix",
    "equilibrium_relaxation",
)
POTENTIALS = ("free", "harmonic", "double_well", "anharmonic")
SEED_MODES = ("hash", "offset", "fixed")
EMIT_MODES = ("csv", "json", "both")

_QUANTITY = re.compile(r"^\s*([-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?)\s+([A-Za-z_]+)\s*$")


def _quantity(section: dict, sect: str, key: str, default=None, *, required=False):
    name = f"{sect}.{key}"
    if key not in section:
        if required:
            raise ConfigError(name, "missing required field")
        return default
    raw = section[key]
    natural = section.get("units") == "natural"
    if isinstance(raw, bool):
        raise ConfigError(name, "expected a quantity, got a boolean")
    if isinstance(raw, (int, float)):
        if not natural:
            raise ConfigError(name, f"bare number {raw!r} needs a unit: write \"{raw} natural\" "
                                    f"or declare units = \"natural\" in [{sect}]")
        value = float(raw)
    elif isinstance(raw, str):
        m = _QUANTITY.match(raw)
        if not m:
            raise ConfigError(name, f"cannot parse quantity {raw!r}; expected \"<number> natural\"")
        if m.group(4) != "natural":
            raise ConfigError(name, f"unsupported unit {m.group(4)!r}; simulations use "
                                    f"natural units only")
        value = float(m.group(1))
    else:
        raise ConfigError(name, f"expected a quantity, got {type(raw).__name__}")
    if not math.isfinite(value):
        raise ConfigError(name, "value must be finite")
    return value


def _quantity_list(section: dict, sect: str, key: str, default=None):
    name = f"{sect}.{key}"
    if key not in section:
        return default
    raw = section[key]
    if not isinstance(raw, list):
        raise ConfigError(name, "expected a list")
    out = []
    for i, item in enumerate(raw):
        out.append(_quantity({key: item, "units": section.get("units")}, sect, key))
    return out


def _number(section: dict, sect: str, key: str, default=None, *, kind=float, required=False):
    name = f"{sect}.{key}" if sect else key
    if key not in section:
        if required:
            raise ConfigError(name, "missing required field")
        return default
    raw = section[key]
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConfigError(name, f"expected a number, got {raw!r}")
    if kind is int:
        if int(raw) != raw:
            raise ConfigError(name, f"expected an integer, got {raw!r}")
        return int(raw)
    if not math.isfinite(raw):
        raise ConfigError(name, "value must be finite")
    return float(raw)


def _number_list(section: dict, sect: str, key: str, default=None):
    if key not in section:
        return default
    raw = section[key]
    if not isinstance(raw, list):
        raise ConfigError(f"{sect}.{key}", "expected a list")
    return [_number({key: v}, sect, key) for v in raw]


def _choice(section: dict, sect: str, key: str, options, default):
    raw = section.get(key, default)
    if raw not in options:
        raise ConfigError(f"{sect}.{key}", f"must be one of {list(options)}, got {raw!r}")
    return raw


def _section(doc: dict, name: str) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(name, "expected a table")
    return sec


@dataclass
class ScenarioConfig:
    scenario: str
    # grid
    n_points: int = 512
    length: float = 16.0
    # hamiltonian
    mass: float = 1.0
    potential: str = "free"
    omega: float = 1.0
    anharmonic: float = 0.0
    frozen: bool = False
    # collapse
    gamma_L: float = 0.0
    a_L: float = 1.0
    kernel: str = "gaussian"
    s: int | None = None
    unit_integral: bool = False
    variant: str = "difference"
    n_eff: int = 1
    # initial state
    centers: list[float] = field(default_factory=lambda: [0.0])
    widths: list[float] | None = None
    weights: list[float] = field(default_factory=lambda: [1.0])
    phases: list[float] = field(default_factory=lambda: [0.0])
    momenta: list[float] = field(default_factory=lambda: [0.0])
    positions: list[float] | None = None
    eigen_amplitudes: list[float] = field(default_factory=lambda: [1.0])
    eigen_phases: list[float] | None = None
    particles: int = 1
    # time
    dt: float = 0.01
    total_time: float = 1.0
    checkpoint_interval: int = 0
    # ensemble
    ensemble_size: int = 1
    seed: int = 0
    seed_mode: str = "hash"
    # output
    out_dir: str = "out"
    emit: str = "both"
    record_every: int = 1
    collapse_threshold: float = 0.99
    h_function: bool = False
    h_cell_points: int = 8
    stop_on_collapse: bool = False
    source_hash: str = ""

    @property
    def steps(self) -> int:
        return int(round(self.total_time / self.dt))

    @property
    def packet_count(self) -> int:
        return len(self.centers)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        cfg = cls(**{k: v for k, v in d.items() if k in known})
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError("scenario", f"must be one of {list(SCENARIOS)}")
        n = self.n_points
        if n < 8 or n & (n - 1):
            raise ConfigError("grid.n_points", f"must be a power of two >= 8, got {n}")
        if not self.length > 0:
            raise ConfigError("grid.length", "must be positive")
        if not self.mass > 0:
            raise ConfigError("hamiltonian.mass", "must be positive")
        if not self.omega > 0:
            raise ConfigError("hamiltonian.omega", "must be positive")
        if self.gamma_L < 0:
            raise ConfigError("collapse.gamma_L", "must be non-negative")
        if not self.a_L > 0:
            raise ConfigError("collapse.a_L", "must be positive")
        if self.kernel == "rational" and (self.s is None or self.s <= 2):
            raise ConfigError("collapse.s", "rational kernel needs an integer s > 2")
        if self.n_eff < 1:
            raise ConfigError("collapse.n_eff", "must be >= 1")
        if not self.dt > 0:
            raise ConfigError("time.dt", f"must be positive, got {self.dt}")
        if not self.total_time > 0:
            raise ConfigError("time.total", "must be positive")
        if self.steps < 1:
            raise ConfigError("time.total", "shorter than one time step")
        if abs(self.steps * self.dt - self.total_time) > 1e-9 * self.total_time:
            raise ConfigError("time.total", "must be an integer multiple of time.dt")
        # Strang splitting of a harmonic well is stable only for omega*dt < 2
        w_eff = self.omega / self.n_eff
        if self.potential in ("harmonic", "double_well") and w_eff * self.dt >= 2.0:
            raise ConfigError("time.dt", f"omega*dt = {w_eff * self.dt:.3g} exceeds the "
                                         f"split-step stability bound of 2")
        # keep the per-step localization factor close to one
        if self.gamma_L * self.n_eff**2 * self.dt > 0.5:
            raise ConfigError("time.dt", "gamma_L * n_eff^2 * dt exceeds 0.5")
        if self.checkpoint_interval < 0:
            raise ConfigError("time.checkpoint_interval", "must be >= 0")
        k = len(self.centers)
        for key in ("weights", "phases", "momenta"):
            if len(getattr(self, key)) != k:
                raise ConfigError(f"initial.{key}", f"needs {k} entries, one per packet center")
        if self.widths is not None and len(self.widths) != k:
            raise ConfigError("initial.widths", f"needs {k} entries")
        if self.widths is not None and any(w <= 0 for w in self.widths):
            raise ConfigError("initial.widths", "must be positive")
        if any(w < 0 for w in self.weights):
            raise ConfigError("initial.weights", "must be non-negative")
        if abs(sum(self.weights) - 1.0) > 1e-10:
            raise ConfigError("initial.weights", f"must sum to 1 within 1e-10, got {sum(self.weights)!r}")
        half = 0.5 * self.length
        if any(not -half <= c < half for c in self.centers):
            raise ConfigError("initial.centers", "packet centers must lie inside the domain")
        if self.positions is not None and any(not -half <= q < half for q in self.positions):
            raise ConfigError("initial.positions", "positions must lie inside the domain")
        if self.ensemble_size < 1:
            raise ConfigError("ensemble.size", "must be >= 1")
        if self.record_every < 1:
            raise ConfigError("output.record_every", "must be >= 1")
        if not 0.5 < self.collapse_threshold <= 1.0:
            raise ConfigError("output.collapse_threshold", "must be in (0.5, 1]")
        if n % self.h_cell_points:
            raise ConfigError("output.h_cell_points", "must divide grid.n_points")
        if not 1 <= self.particles <= 3:
            raise ConfigError("initial.particles", "must be 1, 2 or 3")
        if self.particles > 1 and self.scenario != "equilibrium_relaxation":
            raise ConfigError("initial.particles", "only equilibrium_relaxation supports several particles")
        if self.eigen_phases is not None and len(self.eigen_phases) != len(self.eigen_amplitudes):
            raise ConfigError("initial.eigen_phases", "needs one entry per eigen amplitude")
        if self.scenario == "two_mode_density_matrix" and k != 4:
            raise ConfigError("initial.centers", "two_mode_density_matrix needs 4 mode centers")

    def packet_separation(self) -> float | None:
        if len(self.centers) < 2:
            return None
        c = sorted(self.centers)
        return min(b - a for a, b in zip(c, c[1:]))


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("file", f"{source}: invalid TOML ({exc})") from exc
    scenario = doc.get("scenario")
    if scenario not in SCENARIOS:
        raise ConfigError("scenario", f"must be one of {list(SCENARIOS)}, got {scenario!r}")
    g = _section(doc, "grid")
    h = _section(doc, "hamiltonian")
    c = _section(doc, "collapse")
    i = _section(doc, "initial")
    t = _section(doc, "time")
    e = _section(doc, "ensemble")
    o = _section(doc, "output")
    frozen = h.get("frozen", False)
    if not isinstance(frozen, bool):
        raise ConfigError("hamiltonian.frozen", "expected true or false")
    unit_integral = c.get("unit_integral", False)
    if not isinstance(unit_integral, bool):
        raise ConfigError("collapse.unit_integral", "expected true or false")
    h_flag = o.get("h_function", False)
    stop = o.get("stop_on_collapse", False)
    for key, val in (("output.h_function", h_flag), ("output.stop_on_collapse", stop)):
        if not isinstance(val, bool):
            raise ConfigError(key, "expected true or false")
    out_dir = o.get("directory", "out")
    if not isinstance(out_dir, str):
        raise ConfigError("output.directory", "expected a string")
    centers = _quantity_list(i, "initial", "centers", [0.0])
    k = len(centers)
    cfg = ScenarioConfig(
        scenario=scenario,
        n_points=_number(g, "grid", "n_points", 512, kind=int),
        length=_quantity(g, "grid", "length", required=True),
        mass=_quantity(h, "hamiltonian", "mass", 1.0),
        potential=_choice(h, "hamiltonian", "potential", POTENTIALS, "free"),
        omega=_quantity(h, "hamiltonian", "omega", 1.0),
        anharmonic=_quantity(h, "hamiltonian", "anharmonic", 0.0),
        frozen=frozen,
        gamma_L=_quantity(c, "collapse", "gamma_L", 0.0),
        a_L=_quantity(c, "collapse", "a_L", 1.0),
        kernel=_choice(c, "collapse", "kernel", ("gaussian", "rational"), "gaussian"),
        s=_number(c, "collapse", "s", None, kind=int),
        unit_integral=unit_integral,
        variant=_choice(c, "collapse", "variant", ("difference", "bohmian_only"), "difference"),
        n_eff=_number(c, "collapse", "n_eff", 1, kind=int),
        centers=centers,
        widths=_quantity_list(i, "initial", "widths", None),
        weights=_number_list(i, "initial", "weights", [1.0 / k] * k),
        phases=_number_list(i, "initial", "phases", [0.0] * k),
        momenta=_quantity_list(i, "initial", "momenta", [0.0] * k),
        positions=_quantity_list(i, "initial", "positions", None),
        eigen_amplitudes=_number_list(i, "initial", "eigen_amplitudes", [1.0]),
        eigen_phases=_number_list(i, "initial", "eigen_phases", None),
        particles=_number(i, "initial", "particles", 1, kind=int),
        dt=_quantity(t, "time", "dt", required=True),
        total_time=_quantity(t, "time", "total", required=True),
        checkpoint_interval=_number(t, "time", "checkpoint_interval", 0, kind=int),
        ensemble_size=_number(e, "ensemble", "size", 1, kind=int),
        seed=_number(doc, "", "seed", 0, kind=int),
        seed_mode=_choice(e, "ensemble", "seed_mode", SEED_MODES, "hash"),
        out_dir=out_dir,
        emit=_choice(o, "output", "emit", EMIT_MODES, "both"),
        record_every=_number(o, "output", "record_every", 1, kind=int),
        collapse_threshold=_number(o, "output", "collapse_threshold", 0.99),
        h_function=h_flag,
        h_cell_points=_number(o, "output", "h_cell_points", 8, kind=int),
        stop_on_collapse=stop,
        source_hash=hashlib.sha256(text.encode()).hexdigest(),
    )
    cfg.validate()
    return cfg


def load_config(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError("file", f"cannot read {p}: {exc.strerror}") from exc
    return parse_config(text, str(p))


def derive_seed(parent: int, index: int, mode: str = "hash") -> int:
    """Seed of ensemble member ``index``.

    ``hash``: first 8 bytes (big-endian) of ``sha256(f"{parent}:{index}")``,
    reduced to 63 bits. ``offset``: ``parent + index``. ``fixed``: ``parent``.
    """
    if mode == "hash":
        digest = hashlib.sha256(f"{parent}:{index}".encode()).digest()
        return int.from_bytes(digest[:8], "big") & (2**63 - 1)
    if mode == "offset":
        return parent + index
    if mode == "fixed":
        return parent
    raise ValueError(f"unknown seed mode {mode!r}")
