import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bohmcollapse import diagnostics as dg
from bohmcollapse.densities import (
    BohmianConfig,
    DensityField,
    correlation_F,
    mean_delta,
    quantum_density,
    two_body_density,
)
from bohmcollapse.dynamics import (
    CollapseParams,
    HamiltonianSpec,
    SimulationState,
    advance,
    apply_localization,
)
from bohmcollapse.errors import InvalidSpecError
from bohmcollapse.grid import ConfigGrid, Grid1D, WaveFunction, gaussian_packet, normalize
from bohmcollapse.kernels import KernelSpec

from oracles import fd_rate, gaussian_on_grid, loglog_slope, two_level_crossing

AX = Grid1D(256, 20.0)


def wave(ax, values, N=1):
    return WaveFunction(ConfigGrid(ax, N), values)


def two_packets(ax, left=-4.0, right=4.0, w=(0.5, 0.5), k=(1.0, -0.5), width=0.8):
    amp = (math.sqrt(w[0]) * gaussian_on_grid(ax.x, left, width, k[0])
           + math.sqrt(w[1]) * gaussian_on_grid(ax.x, right, width, k[1]))
    return normalize(wave(ax, amp))


def sign_split(ax, d=1.0, scale=1.0):
    return DensityField(ax, d * np.tanh(-ax.x / scale))


def rel_err(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# -- current --------------------------------------------------------------------

def test_plane_wave_current():
    k = 2 * math.pi * 3 / AX.length
    psi = wave(AX, np.exp(1j * k * AX.x) / math.sqrt(AX.length))
    J = dg.current(psi, mass=2.0).values
    np.testing.assert_allclose(J, k / 2.0 / AX.length, atol=1e-12)


def test_real_wavefunction_has_no_current():
    psi = wave(AX, gaussian_on_grid(AX.x, 1.0, 1.0))
    assert np.max(np.abs(dg.current(psi).values)) < 1e-10


def test_moving_gaussian_current():
    k = 1.7
    psi = wave(AX, gaussian_on_grid(AX.x, 0.5, 1.0, k))
    np.testing.assert_allclose(dg.current(psi).values, k * np.abs(psi.amplitudes) ** 2,
                               atol=1e-8)


def test_two_particle_current_sums_particles():
    ax = Grid1D(64, 16.0)
    ka, kb = 2 * math.pi * 2 / ax.length, -2 * math.pi * 4 / ax.length
    a = gaussian_on_grid(ax.x, -2.0, 0.7, ka)
    b = gaussian_on_grid(ax.x, 2.0, 0.7, kb)
    psi = wave(ax, np.multiply.outer(a, b), 2)
    expect = ka * np.abs(a) ** 2 + kb * np.abs(b) ** 2
    np.testing.assert_allclose(dg.current(psi).values, expect, atol=1e-8)


# -- current drift -------------------------------------------------------------

def test_current_drift_vanishes_for_flat_delta():
    ax = Grid1D(64, 16.0)
    a = gaussian_on_grid(ax.x, -3.0, 1.0, 1.0)
    psi = wave(ax, np.multiply.outer(a, a), 2)
    Delta = DensityField(ax, np.full(64, 0.37))
    out = dg.current_drift_loc(psi, Delta, CollapseParams(gamma_L=2.0))
    assert np.max(np.abs(out.values)) < 1e-9


def test_current_drift_zero_rate():
    psi = two_packets(AX)
    out = dg.current_drift_loc(psi, sign_split(AX), CollapseParams(gamma_L=0.0))
    assert np.all(out.values == 0)


def _fd_current(psi, Delta, gamma, n_eff=1, eps=1e-4):
    return fd_rate(lambda h: dg.current(apply_localization(psi, Delta, gamma, h, n_eff)).values,
                   eps)


@pytest.mark.parametrize("n_eff", [1, 3])
def test_current_drift_matches_finite_difference(n_eff):
    psi = two_packets(AX)
    Delta = sign_split(AX)
    params = CollapseParams(gamma_L=1.5, n_eff=n_eff)
    exact = dg.current_drift_loc(psi, Delta, params).values
    assert rel_err(exact, _fd_current(psi, Delta, 1.5, n_eff)) < 0.02


def test_current_drift_two_particles_matches_finite_difference():
    ax = Grid1D(64, 16.0)
    phi = (gaussian_on_grid(ax.x, -3.0, 0.8, 1.0) + gaussian_on_grid(ax.x, 3.0, 0.8, -1.0))
    psi = normalize(wave(ax, np.multiply.outer(phi, gaussian_on_grid(ax.x, 1.0, 1.5, 0.5)), 2))
    Delta = sign_split(ax, 0.7, 2.0)
    exact = dg.current_drift_loc(psi, Delta, CollapseParams(gamma_L=1.0)).values
    assert rel_err(exact, _fd_current(psi, Delta, 1.0)) < 0.02
    n_mean = dg.current_drift_loc(psi, Delta, CollapseParams(gamma_L=1.0), reading="n_mean")
    assert rel_err(n_mean.values, exact) > 0.05
    with pytest.raises(ValueError):
        dg.current_drift_loc(psi, Delta, CollapseParams(gamma_L=1.0), reading="other")


# -- density drift ----------------------------------------------------------------

def random_state(seed, N, n=16):
    rng = np.random.default_rng(seed)
    ax = Grid1D(n, 8.0)
    amp = rng.normal(size=(n,) * N) + 1j * rng.normal(size=(n,) * N)
    return normalize(wave(ax, amp, N)), DensityField(ax, rng.normal(size=n))


@settings(max_examples=30)
@given(st.integers(0, 2**31), st.integers(1, 3), st.floats(0.0, 10.0))
def test_density_drift_conserves_particles(seed, N, gamma):
    psi, Delta = random_state(seed, N)
    out = dg.density_drift_loc(psi, Delta, CollapseParams(gamma_L=gamma))
    assert abs(out.integral()) < 1e-8


def test_density_drift_zero_delta():
    psi, _ = random_state(1, 2)
    zero = DensityField(psi.axis, np.zeros(psi.axis.n_points))
    assert np.all(dg.density_drift_loc(psi, zero, CollapseParams(gamma_L=1.0)).values == 0)


def disjoint_pair(ax):
    phi = gaussian_on_grid(ax.x, -4.0, 0.7) + gaussian_on_grid(ax.x, 4.0, 0.7)
    return normalize(wave(ax, np.multiply.outer(phi, phi), 2))


def test_density_drift_matches_finite_difference():
    ax = Grid1D(64, 16.0)
    psi = disjoint_pair(ax)
    Delta = sign_split(ax, 0.5, 1.0)  # +d on the left packet, -d on the right
    params = CollapseParams(gamma_L=1.0)
    exact = dg.density_drift_loc(psi, Delta, params).values
    fd = fd_rate(lambda h: quantum_density(apply_localization(psi, Delta, 1.0, h)).values, 1e-4)
    assert rel_err(exact, fd) < 0.02
    left = ax.x < 0
    assert exact[left].sum() > 0 and exact[~left].sum() < 0


def test_meanfield_sign_and_zero():
    ax = Grid1D(64, 16.0)
    D = DensityField(ax, np.abs(gaussian_on_grid(ax.x, 0.0, 2.0)) ** 2)
    Delta = sign_split(ax)
    mf = dg.density_drift_meanfield(D, Delta, 1.0).values
    pos = (Delta.values > 0) & (D.values > 1e-12)
    assert np.all(mf[pos] > 0) and np.all(mf[Delta.values < 0] <= 0)
    zero = DensityField(ax, np.zeros(64))
    assert np.all(dg.density_drift_meanfield(D, zero, 1.0).values == 0)


def test_product_state_reduces_to_meanfield():
    ax = Grid1D(64, 16.0)
    phi = gaussian_on_grid(ax.x, -2.0, 1.0) + 0.5 * gaussian_on_grid(ax.x, 3.0, 1.3, 1.0)
    psi = normalize(wave(ax, np.multiply.outer(phi, phi), 2))
    Delta = sign_split(ax, 0.8, 1.5)
    gamma = 1.3
    D = quantum_density(psi)
    loc = dg.density_drift_loc(psi, Delta, CollapseParams(gamma_L=gamma)).values
    mean_term = 2 * gamma * mean_delta(D, Delta) * D.values
    mf = dg.density_drift_meanfield(D, Delta, gamma).values
    np.testing.assert_allclose(loc + mean_term, mf, atol=1e-6)
    F, _ = correlation_F(two_body_density(psi), D)
    heavy = D.values > 1e-3 * D.values.max()
    np.testing.assert_allclose(F[np.ix_(heavy, heavy)], 0.5, atol=1e-9)


# -- gradient expansion ---------------------------------------------------------

def gaussian_F(ax, s):
    sep = ax.wrap(ax.x[None, :] - ax.x[:, None])
    return np.exp(-sep**2 / (2 * s**2))


def smooth_setup():
    ax = Grid1D(512, 40.0)
    D = DensityField(ax, np.exp(-ax.x**2 / (2 * 1.5**2)))
    Delta = DensityField(ax, 0.3 * np.sin(2 * math.pi * ax.x / ax.length))
    return ax, D, Delta


@pytest.mark.parametrize("s", [0.15, 0.25])
def test_gradient_expansion_matches_quadrature(s):
    ax, D, Delta = smooth_setup()
    F = gaussian_F(ax, s)
    l = dg.equivalent_range(F, ax)
    assert np.all(l <= ax.length / 64)
    approx = dg.density_drift_gradient_expansion(D, F, Delta, 1.0, l).values
    exact = dg.density_drift_correlation_form(D, F, Delta, 1.0).values
    assert rel_err(approx, exact) < 0.10


def test_gradient_expansion_range_scaling():
    ax, D, Delta = smooth_setup()
    F = gaussian_F(ax, 0.2)
    a = dg.density_drift_gradient_expansion(D, F, Delta, 1.0, 0.1).values
    b = dg.density_drift_gradient_expansion(D, F, Delta, 1.0, 0.2).values
    np.testing.assert_allclose(b, 8 * a, rtol=1e-12)


def test_gradient_expansion_limits():
    ax, D, _ = smooth_setup()
    const = DensityField(ax, np.full(ax.n_points, 0.4))
    F = gaussian_F(ax, 0.2)
    flat = dg.density_drift_gradient_expansion(D, F, const, 1.0, dg.equivalent_range(F, ax))
    assert np.max(np.abs(flat.values)) < 1e-12
    delta_F = np.eye(ax.n_points)
    _, _, Delta = smooth_setup()
    l = dg.equivalent_range(delta_F, ax)
    sharp = dg.density_drift_gradient_expansion(D, delta_F, Delta, 1.0, l).values
    exact = dg.density_drift_correlation_form(D, delta_F, Delta, 1.0).values
    assert np.max(np.abs(sharp)) < 1e-12 and np.max(np.abs(exact)) < 1e-12


# -- collapse detection --------------------------------------------------------

PACKETS = [dg.Packet("L", -10.0, 0.0), dg.Packet("R", 0.0, 10.0)]


def test_state_already_in_window():
    psi = wave(AX, gaussian_on_grid(AX.x, -5.0, 0.5))
    assert dg.detect_collapse(psi, PACKETS) == dg.CollapseOutcome("L", 0.0)


def test_frozen_symmetric_state_never_collapses():
    psi = two_packets(AX)
    state = SimulationState(psi, BohmianConfig([-4.0]))
    frozen = HamiltonianSpec(frozen=True)
    states = []
    for _ in range(20):
        state = advance(state, frozen, CollapseParams(gamma_L=0.0), 0.1)
        states.append(state.psi)
    out = dg.detect_collapse(states, PACKETS)
    assert out.label == dg.NO_OUTCOME and out.time is None and not out.collapsed


def test_packet_validation():
    with pytest.raises(InvalidSpecError):
        dg.CollapseDetector([dg.Packet("L", -10.0, 1.0), dg.Packet("R", 0.0, 10.0)])
    with pytest.raises(InvalidSpecError):
        dg.Packet("L", 1.0, 1.0)
    with pytest.raises(InvalidSpecError):
        dg.CollapseDetector([dg.Packet("none", -1.0, 1.0)])
    with pytest.raises(InvalidSpecError):
        dg.CollapseDetector(PACKETS, threshold=0.4)


@given(st.floats(0, 2 * math.pi), st.floats(1e-3, 1e3), st.floats(0.05, 0.95))
def test_detection_ignores_phase_and_scale(phase, scale, w):
    psi = two_packets(AX, w=(w, 1 - w))
    other = wave(AX, psi.amplitudes * scale * np.exp(1j * phase))
    np.testing.assert_allclose(dg.packet_weights(other, PACKETS),
                               dg.packet_weights(psi, PACKETS), rtol=1e-12)
    for th in (0.6, 0.9, 0.99):
        assert dg.detect_collapse(other, PACKETS, th) == dg.detect_collapse(psi, PACKETS, th)


def test_idealized_collapse_time_against_oracle():
    ax = Grid1D(256, 16.0)
    amp = (math.sqrt(0.5) * gaussian_packet(ax, -4.0, 0.2)
           + math.sqrt(0.5) * gaussian_packet(ax, 4.0, 0.2))
    psi = normalize(wave(ax, amp))
    params = CollapseParams(gamma_L=1.0, kernel=KernelSpec("gaussian", 2.0),
                            variant="bohmian_only")
    state = SimulationState(psi, BohmianConfig([-4.0]))
    det = dg.CollapseDetector(PACKETS)
    frozen = HamiltonianSpec(frozen=True)
    while not det.outcome.collapsed and state.time < 20:
        state = advance(state, frozen, params, 0.005)
        det.update(state.time, dg.packet_weights(state.psi, PACKETS))
    # Delta is the kernel exp(-r^2 / a^2) centred on the Bohmian particle
    beta = [float(np.sum(np.abs(gaussian_packet(ax, c, 0.2)) ** 2
                         * np.exp(-((ax.x + 4.0) / 2.0) ** 2)) * ax.spacing)
            for c in (-4.0, 4.0)]
    t_oracle = two_level_crossing([0.5, 0.5], beta, 1.0)
    assert det.outcome.label == "L"
    assert det.outcome.time == pytest.approx(t_oracle, rel=0.10)


# -- Born statistics ------------------------------------------------------------

def ensemble(labels, outcomes):
    return dg.EnsembleResult(labels, [dg.RunRecord(i, o, 1.0, []) for i, o in enumerate(outcomes)])


def test_born_band_for_seventy_thirty():
    rng = np.random.default_rng(11)
    outs = np.where(rng.random(1000) < 0.7, "L", "R")
    rep = dg.born_statistics(ensemble(["L", "R"], outs), [0.7, 0.3])
    s = rep.outcomes[0]
    assert s.sigma * 3 == pytest.approx(0.0435, abs=5e-4)
    assert s.band[0] <= s.frequency <= s.band[1] and not rep.any_flagged
    assert s.wilson[0] < s.frequency < s.wilson[1]


def test_born_flags_bias():
    rep = dg.born_statistics(ensemble(["L", "R"], ["L"] * 800 + ["R"] * 200), [0.7, 0.3])
    assert rep.any_flagged and rep.to_dict()["any_flagged"]


def test_born_certain_outcome():
    rep = dg.born_statistics(ensemble(["L", "R"], ["L"] * 50), [1.0, 0.0])
    assert rep.outcomes[0].count == 50 and not rep.any_flagged


def test_born_single_run():
    rep = dg.born_statistics(ensemble(["L", "R"], ["R"]), [0.7, 0.3])
    assert rep.outcomes[0].band == (0.0, 1.0) and not rep.any_flagged


def test_born_errors():
    with pytest.raises(ValueError):
        dg.born_statistics(ensemble(["L", "R"], []), [0.5, 0.5])
    with pytest.raises(InvalidSpecError):
        ensemble(["L", "R"], ["X"])
    rep = dg.born_statistics(ensemble(["L", "R"], ["L", "none"]), [0.5, 0.5])
    assert rep.uncollapsed == 1


def test_born_frequencies_converge_at_binomial_rate():
    rng = np.random.default_rng(3)
    sizes = [100, 1000, 10000]
    errs = []
    for M in sizes:
        dev = []
        for _ in range(40):
            outs = np.where(rng.random(M) < 0.7, "L", "R")
            dev.append(dg.born_statistics(ensemble(["L", "R"], outs), [0.7, 0.3])
                       .outcomes[0].frequency - 0.7)
        errs.append(np.sqrt(np.mean(np.square(dev))))
    assert loglog_slope(sizes, errs) == pytest.approx(-0.5, abs=0.1)


def test_run_record_round_trip():
    r = dg.RunRecord(7, "L", 1.25, [0.99, 0.01], [-3.2])
    assert dg.RunRecord.from_dict(r.to_dict()) == r


# -- H-function ------------------------------------------------------------------

def test_h_all_samples_in_one_cell():
    ax = Grid1D(64, 8.0)
    psi = wave(ax, np.ones(64) / math.sqrt(8.0))
    k = 64 // dg.H_CELL_POINTS
    assert dg.coarse_h_function(np.full(100, ax.x[3]), psi) == pytest.approx(math.log(k), abs=1e-12)


def test_h_decreases_with_sample_size():
    ax = Grid1D(128, 16.0)
    psi = wave(ax, gaussian_on_grid(ax.x, 0.0, 1.5))
    p = psi.probability().ravel()
    rng = np.random.default_rng(9)
    vals = []
    for M in (100, 1000, 10000, 100000):
        samples = ax.x[rng.choice(128, M, p=p / p.sum())]
        h, err = dg.coarse_h_bootstrap(samples, psi, resamples=50)
        assert h >= 0 and err > 0
        vals.append(h)
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-3


def test_h_two_particles_and_cell_options():
    ax = Grid1D(32, 8.0)
    a = gaussian_on_grid(ax.x, -1.0, 1.0)
    psi = wave(ax, np.multiply.outer(a, a), 2)
    samples = np.array([[ax.x[10], ax.x[12]]] * 20)
    assert dg.coarse_h_function(samples, psi, cell_size=4 * ax.spacing) > 0
    with pytest.raises(ValueError):
        dg.coarse_h_function(samples, psi, cell_size=0.5 * ax.spacing)
    with pytest.raises(ValueError):
        dg.coarse_h_function(samples, psi, cell_size=3 * ax.spacing)
    with pytest.raises(ValueError):
        dg.coarse_h_function(np.empty((0, 2)), psi)


@pytest.mark.parametrize("values,expected", [
    ([], 0), ([1.0], 1), ([3, 2, 1, 0], 4), ([1, 2, 3], 1), ([3, 2, 2, 1, 0], 3),
])
def test_longest_decreasing_run(values, expected):
    assert dg.longest_decreasing_run(values) == expected
