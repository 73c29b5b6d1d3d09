import json
import logging
import math

import mpmath
import numpy as np
import pytest

from turlab import clock as ck
from turlab.ensembles import DomainError, IdealGas, TwoLevel, Units
from turlab.stats import loglog_slope


# -- kinematics ---------------------------------------------------------------------

def test_kinematics_reference_values():
    kin = ck.Kinematics(1.0, 0.6)
    assert math.isclose(kin.gamma, 1.25)
    assert math.isclose(ck.clock_frequency(kin), 0.8)
    assert math.isclose(ck.wave_frequency(kin), 1.25)
    assert math.isclose(ck.phase_velocity(kin), 5.0 / 3.0)
    assert math.isclose(ck.de_broglie_wavelength(kin), 4.0 / 3.0)
    assert math.isclose(kin.momentum, 0.75)


@pytest.mark.parametrize("v", [-0.9, -0.3, 0.01, 0.5, 0.99])
@pytest.mark.parametrize("units", [Units(), Units(h=6.62607015e-34, c=299792458.0, k=1.380649e-23)],
                         ids=["natural", "SI"])
def test_kinematic_identities(v, units):
    m0 = 1.0 if units.c == 1.0 else 9.1093837e-31
    kin = ck.Kinematics(m0, v * units.c, units)
    # product of clock and wave frequencies is nu_0**2; V_ph * v = c**2; lambda = h / p
    assert math.isclose(ck.clock_frequency(kin) * ck.wave_frequency(kin), kin.rest_frequency**2, rel_tol=1e-12)
    assert math.isclose(ck.phase_velocity(kin) * kin.v, units.c**2, rel_tol=1e-12)
    assert abs(ck.phase_velocity(kin)) > units.c
    assert math.isclose(ck.de_broglie_wavelength(kin), units.h / abs(kin.momentum), rel_tol=1e-12)
    assert math.isclose(ck.wave_frequency(kin) * units.h, kin.energy, rel_tol=1e-12)


def test_kinematics_errors():
    with pytest.raises(ck.SuperluminalError):
        ck.Kinematics(1.0, 1.0)
    with pytest.raises(ValueError):
        ck.Kinematics(0.0, 0.1)
    kin = ck.Kinematics(1.0, 0.0)
    assert ck.clock_frequency(kin) == ck.wave_frequency(kin) == kin.rest_frequency
    with pytest.raises(ck.ZeroVelocityError):
        ck.phase_velocity(kin)
    with pytest.raises(ck.ZeroVelocityError):
        ck.de_broglie_wavelength(kin)


def test_guidance_velocity_recovers_particle_velocity():
    kin = ck.Kinematics(1.0, 0.6)
    lam, nu = ck.de_broglie_wavelength(kin), ck.wave_frequency(kin)
    # plane wave phi = 2 pi (nu t - x / lambda)
    v = ck.guidance_velocity([-2 * math.pi / lam], 2 * math.pi * nu)
    assert np.allclose(v, [0.6])
    v3 = ck.guidance_velocity([-1.0, 0.0, 2.0], 4.0, Units(c=2.0))
    assert np.allclose(v3, [1.0, 0.0, -2.0])
    with pytest.raises(ck.StationaryPhaseError):
        ck.guidance_velocity([1.0], 0.0)


# -- temperature and time --------------------------------------------------------------

@pytest.mark.parametrize("theta", [0.01, 1.0, 37.0])
def test_temperature_clock_round_trip(theta):
    u = Units(k=2.0, h=3.0)
    nu, t_c = ck.clock_from_theta(theta, u)
    assert math.isclose(t_c, 3.0 * theta) and math.isclose(nu * t_c, 1.0)
    assert math.isclose(ck.temperature_of_clock(nu, u), 1.0 / (2.0 * theta), rel_tol=1e-14)


def test_temperature_map_domain():
    with pytest.raises(DomainError):
        ck.clock_from_theta(0.0)
    with pytest.raises(DomainError):
        ck.temperature_of_clock(-1.0)


def test_clock_period_bound():
    assert math.isclose(ck.clock_period_uncertainty_bound(math.sqrt(15.0)), 1.0 / math.sqrt(15.0))
    assert math.isclose(ck.clock_period_uncertainty_bound(2.0, Units(h=4.0)), 2.0)
    with pytest.raises(DomainError):
        ck.clock_period_uncertainty_bound(0.0)


# -- phase ensembles -------------------------------------------------------------------

def test_process_validation():
    with pytest.raises(ck.ValidityError):
        ck.ClockProcess(1.0, 0.3)
    with pytest.raises(ValueError):
        ck.ClockProcess(1.0, 0.1, dt=0.1)
    with pytest.raises(ValueError):
        ck.ClockProcess(1.0, 0.1, horizon=5.0)
    with pytest.raises(ValueError):
        ck.ClockProcess(1.0, 0.1, replicas=10)
    with pytest.raises(DomainError):
        ck.ClockProcess(-1.0, 0.1)
    with pytest.raises(ValueError):
        ck.MeanReverting(0.0)


def test_near_zero_spread_keeps_phases_coherent():
    batch = ck.simulate_phases(ck.ClockProcess(2.0, 1e-8, horizon=10.0, replicas=200))
    assert np.all(batch.phase_spread[1:] <= 1e-6 * batch.mean_phase[1:])


def test_static_disorder_phase_spread_is_linear():
    proc = ck.ClockProcess(1.0, 0.05, horizon=20.0, replicas=500, seed=3)
    batch = ck.simulate_phases(proc)
    t = batch.times[1:]
    ratio = batch.phase_spread[1:] / t
    assert np.allclose(ratio, 2 * math.pi * batch.freq_spread[0], rtol=1e-9)


def test_time_uncertainty_static_closed_form():
    proc = ck.ClockProcess(1.0, 0.05, replicas=500, seed=1)
    batch = ck.simulate_phases(proc)
    nu = proc.initial_frequencies()
    values = []
    for t in (1.0, 2.0, 10.0, 50.0, 100.0):
        dt = ck.time_uncertainty(batch, t)
        assert math.isclose(dt, t * nu.std() / nu.mean(), rel_tol=1e-8)
        values.append(dt)
    assert np.all(np.diff(values) >= 0)
    with pytest.raises(DomainError):
        ck.time_uncertainty(batch, 0.5)
    with pytest.raises(ValueError):
        ck.time_uncertainty(batch, 1.005)


def _ou_phase_variance(s, tau, t):
    return 2 * s * s * tau * t - 2 * s * s * tau * tau * (1 - np.exp(-t / tau))


@pytest.mark.parametrize("dt", [0.01, 0.001])
def test_mean_reverting_phase_diffusion(dt):
    mu, rel, tau, R = 1.0, 0.05, 2.0, 2000
    proc = ck.ClockProcess(mu, rel, ck.MeanReverting(tau), dt=dt, horizon=20.0, replicas=R, seed=4)
    batch = ck.simulate_phases(proc)
    for t in (2.0, 10.0, 20.0):
        i = batch.index_of(t)
        expected = 2 * math.pi * math.sqrt(_ou_phase_variance(rel * mu, tau, t))
        # standard error of a Gaussian standard deviation is sd / sqrt(2R)
        assert abs(batch.phase_spread[i] - expected) <= 4 * expected / math.sqrt(2 * R)
    # the stationary frequency spread is preserved
    assert abs(batch.freq_spread[-1] - rel * mu) <= 4 * rel * mu / math.sqrt(2 * R)


def test_mean_reverting_is_deterministic():
    proc = ck.ClockProcess(1.0, 0.05, ck.MeanReverting(1.0), horizon=10.0, replicas=100, seed=2)
    a, b = ck.simulate_phases(proc), ck.simulate_phases(proc)
    assert np.array_equal(a.phases, b.phases)


def test_clipping_error():
    proc = ck.ClockProcess(1.0, 0.05, horizon=10.0, replicas=100)
    nu = np.ones(100)
    nu[:5] = -1.0
    with pytest.raises(ck.ClippingError):
        ck.simulate_phases(proc, frequencies=nu)


def test_phase_csv(tmp_path):
    batch = ck.simulate_phases(ck.ClockProcess(1.0, 0.05, horizon=10.0, replicas=100),
                               record_index=[0, 100, 500])
    path = tmp_path / "phases.csv"
    batch.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "time,replica,phase"
    assert len(lines) == 1 + 3 * 100


# -- Taylor remainders -------------------------------------------------------------------

def _truncated_gaussian_inverse_mean(r):
    """<1/nu> for nu ~ N(1, r**2) restricted to nu >= 1e-6, at 30 digits."""
    with mpmath.workdps(30):
        lo = mpmath.mpf("1e-6")
        cuts = [lo, 1 - 8 * r, 1, 1 + 8 * r, mpmath.inf]
        mass = mpmath.quad(lambda x: mpmath.npdf(x, 1, r), cuts)
        first = mpmath.quad(lambda x: mpmath.npdf(x, 1, r) / x, cuts)
        return float(first / mass)


@pytest.mark.parametrize("r", [0.05, 0.15])
def test_taylor_mean_remainder_against_oracle(r):
    proc = ck.ClockProcess(1.0, r, replicas=400000, seed=6)
    rep = ck.taylor_remainder_check(proc)
    exact = _truncated_gaussian_inverse_mean(r) - 1.0
    # the second-order coefficient is 1 plus 3 r**2 from the fourth moment
    assert math.isclose(exact / r**2, 1 + 3 * r**2, rel_tol=0.05)
    assert math.isclose(rep.mean_remainder, exact, rel_tol=0.03)
    assert rep.passed


def test_taylor_remainder_scaling():
    rs = np.array([0.02, 0.04, 0.08, 0.16])
    reps = [ck.taylor_remainder_check(ck.ClockProcess(1.0, r, replicas=100000, seed=1)) for r in rs]
    mean_rem = np.array([x.mean_remainder for x in reps])
    spread_rem = np.array([x.spread_remainder for x in reps])
    assert abs(loglog_slope(rs, mean_rem) - 2.0) <= 0.1
    # the spread remainder starts one order higher
    assert abs(loglog_slope(rs, spread_rem) - 3.0) <= 0.2
    assert all(x.C_mean <= 2.0 for x in reps)


def test_taylor_validity_guard():
    assert ck.taylor_remainder_check(ck.ClockProcess(1.0, 0.1)).passed
    # a spread above r_max is rejected when the process is built
    with pytest.raises(ck.ValidityError):
        ck.ClockProcess(1.0, 0.1, r_max=0.05)


# -- the chain ---------------------------------------------------------------------------

def test_chain_saturated_gaussian():
    rep = ck.chain_verify(ck.GaussianBetaSpec(1.0, 20.0), replicas=5000, seed=1, n_boot=100)
    assert rep.passed, [r.to_dict() for r in rep.records]
    assert [r.name for r in rep.records] == list(ck.CHAIN_RECORDS)
    assert rep.taylor.passed
    assert rep.min_product >= 1.0 - rep.epsilon_mc
    assert abs(rep.min_product - 1.0) <= 3 * rep.min_product_sigma + 0.01
    assert rep.sweep["t"].size >= 50
    assert rep.sweep["t"][0] >= rep.t_c * (1 - 1e-9)


def test_chain_unsaturated_gaussian_has_larger_product():
    rep = ck.chain_verify(ck.GaussianBetaSpec(1.0, 20.0, product=2.0), replicas=5000, seed=2, n_boot=50)
    assert rep.passed
    assert math.isclose(rep.min_product, 2.0, rel_tol=0.1)


def test_chain_gamma_model_outside_validity():
    with pytest.raises(ck.ValidityError):
        ck.chain_verify(IdealGas(10, 3), theta=1.0, replicas=2000, n_boot=10)


def test_chain_gamma_model_forced_reports_failure():
    rep = ck.chain_verify(IdealGas(10, 3), theta=1.0, replicas=5000, n_boot=50, allow_invalid=True)
    assert rep.rel_spread > ck.R_MAX
    # Delta E Delta beta / k = sqrt(alpha / (alpha - 2)) for alpha = 15, yet the Gamma clock misses h
    assert not rep.passed
    assert not rep.record("time_energy").passed


def test_chain_discrete_model_rejected():
    with pytest.raises(TypeError):
        ck.chain_verify(TwoLevel(10), theta=1.0, replicas=1000)
    with pytest.raises(ValueError):
        ck.chain_verify(IdealGas(10, 3), replicas=1000)


def test_chain_mean_reverting_reports_violation(caplog):
    with caplog.at_level(logging.INFO, logger="turlab.clock"):
        rep = ck.chain_verify(ck.GaussianBetaSpec(1.0, 20.0), process_model=ck.MeanReverting(5.0),
                              replicas=2000, seed=3, n_boot=50)
    assert rep.process == "mean-reverting"
    assert not rep.record("integral_inequality").passed
    assert any("integral_inequality" in m for m in caplog.messages)


def test_chain_is_deterministic_and_serializable():
    a = ck.chain_verify(ck.GaussianBetaSpec(1.0, 20.0), replicas=1000, seed=7, n_boot=20)
    b = ck.chain_verify(ck.GaussianBetaSpec(1.0, 20.0), replicas=1000, seed=7, n_boot=20)
    assert a.to_json() == b.to_json()
    data = json.loads(a.to_json())
    assert {"name", "lhs", "rhs", "margin", "pass"} == set(data["records"][0])
    assert data["taylor"]["name"] == "taylor_remainder"
