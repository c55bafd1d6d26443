import dataclasses
from pathlib import Path

import pytest

from bohmcollapse.config import ScenarioConfig, derive_seed, load_config, parse_config
from bohmcollapse.errors import ConfigError

CONFIGS = sorted((Path(__file__).parent.parent / "configs").glob("*.toml"))

BASE = """
scenario = "double_packet_superposition"
seed = 3
[grid]
n_points = 64
length = "16 natural"
[collapse]
gamma_L = "1 natural"
[initial]
units = "natural"
centers = [-4.0, 4.0]
weights = [0.5, 0.5]
[time]
dt = "0.01 natural"
total = "0.5 natural"
"""


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    cfg = load_config(path)
    assert cfg.steps >= 1 and len(cfg.source_hash) == 64


def test_base_values():
    cfg = parse_config(BASE)
    assert cfg.n_points == 64 and cfg.length == 16.0 and cfg.gamma_L == 1.0
    assert cfg.steps == 50 and cfg.packet_count == 2 and cfg.packet_separation() == 8.0
    assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg


def expect_error(text, field):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.field == field, str(info.value)
    assert field in str(info.value)


@pytest.mark.parametrize("old,new,field", [
    ('length = "16 natural"', "length = 16", "grid.length"),
    ('length = "16 natural"', 'length = "16 m"', "grid.length"),
    ('length = "16 natural"', 'length = "sixteen"', "grid.length"),
    ('length = "16 natural"', "", "grid.length"),
    ("n_points = 64", "n_points = 100", "grid.n_points"),
    ("n_points = 64", "n_points = 64.5", "grid.n_points"),
    ("weights = [0.5, 0.5]", "weights = [0.5, 0.4]", "initial.weights"),
    ("weights = [0.5, 0.5]", "weights = [0.5]", "initial.weights"),
    ("centers = [-4.0, 4.0]", "centers = [-4.0, 9.0]", "initial.centers"),
    ('dt = "0.01 natural"', 'dt = "-0.01 natural"', "time.dt"),
    ('total = "0.5 natural"', 'total = "0.505 natural"', "time.total"),
    ('gamma_L = "1 natural"', 'gamma_L = "-1 natural"', "collapse.gamma_L"),
    ('gamma_L = "1 natural"', 'gamma_L = true', "collapse.gamma_L"),
    ('gamma_L = "1 natural"', 'gamma_L = "1 natural"\nunit_integral = 1', "collapse.unit_integral"),
    ('scenario = "double_packet_superposition"', 'scenario = "teleport"', "scenario"),
    ("seed = 3", "seed = 3\n[output]\nemit = \"xml\"", "output.emit"),
    ("seed = 3", "seed = 3\n[ensemble]\nsize = 0", "ensemble.size"),
])
def test_field_errors(old, new, field):
    assert old in BASE
    expect_error(BASE.replace(old, new), field)


def test_localization_factor_bound():
    text = BASE.replace('dt = "0.01 natural"', 'dt = "0.625 natural"')
    expect_error(text.replace('total = "0.5 natural"', 'total = "1.25 natural"'), "time.dt")


def test_invalid_toml():
    expect_error(BASE + "\n[grid\n", "file")


def test_rational_kernel_needs_exponent():
    text = BASE.replace('gamma_L = "1 natural"', 'gamma_L = "1 natural"\nkernel = "rational"')
    expect_error(text, "collapse.s")
    parse_config(text.replace('kernel = "rational"', 'kernel = "rational"\ns = 4'))


def test_unit_integral_flag_reaches_kernel():
    from bohmcollapse.kernels import kernel_integral
    from bohmcollapse.scenarios import build_kernel

    plain = parse_config(BASE)
    unit = parse_config(BASE.replace('gamma_L = "1 natural"',
                                     'gamma_L = "1 natural"\nunit_integral = true'))
    assert not plain.unit_integral and unit.unit_integral
    assert kernel_integral(build_kernel(plain)) == pytest.approx(1.7724538509055159)
    assert kernel_integral(build_kernel(unit)) == pytest.approx(1.0, rel=1e-12)


def test_harmonic_stability_bound():
    text = BASE.replace("[collapse]", "[hamiltonian]\npotential = \"harmonic\"\n"
                                      "omega = \"300 natural\"\n[collapse]")
    expect_error(text, "time.dt")


def test_particles_only_for_equilibrium():
    text = BASE.replace("weights = [0.5, 0.5]", "weights = [0.5, 0.5]\nparticles = 2")
    expect_error(text, "initial.particles")


def test_missing_file():
    with pytest.raises(ConfigError) as info:
        load_config("/nonexistent/x.toml")
    assert info.value.field == "file"


def test_seed_derivation():
    hashed = [derive_seed(5, i) for i in range(100)]
    assert len(set(hashed)) == 100 and all(0 <= s < 2**63 for s in hashed)
    assert hashed == [derive_seed(5, i, "hash") for i in range(100)]
    assert derive_seed(5, 3, "offset") == 8 and derive_seed(5, 3, "fixed") == 5
    with pytest.raises(ValueError):
        derive_seed(5, 3, "other")


def test_validate_catches_programmatic_changes():
    cfg = parse_config(BASE)
    with pytest.raises(ConfigError):
        dataclasses.replace(cfg, record_every=0).validate()
