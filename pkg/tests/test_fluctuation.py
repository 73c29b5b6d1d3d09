import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from turlab import fluctuation as fl
from turlab.ensembles import DomainError, Units


def test_log_normalizer_gamma_closed_form():
    env = fl.power_law_environment(3.5, 2.0)
    expected = special.gammaln(4.5) - 4.5 * math.log(2.0)
    assert math.isclose(fl.log_normalizer(env), expected, rel_tol=1e-9)


def test_log_normalizer_volume_closed_form():
    env = fl.volume_environment(2.0, 3.0, 1.0, 2.0)
    expected = math.log(math.gamma(3) * math.gamma(4) / 2.0**4)
    assert math.isclose(fl.log_normalizer(env), expected, rel_tol=1e-8)


def test_gaussian_log_prob_is_normal_density():
    env = fl.gaussian_environment(5.0, 0.7, 2.0)
    for E in (3.0, 5.0, 6.4):
        assert math.isclose(fl.fluctuation_log_prob(env, E), stats.norm(5.0, 0.7).logpdf(E), rel_tol=1e-9)


def test_log_prob_errors():
    env = fl.ideal_gas_environment(2, 3, 1.0)
    with pytest.raises(DomainError):
        fl.fluctuation_log_prob(env, -1.0)
    with pytest.raises(ValueError):
        fl.fluctuation_log_prob(env, 1.0, (1.0,))


def test_unnormalizable_environment():
    env = fl.MacrostateEnvironment(theta0=1.0, entropy_fn=lambda E, X: 2.0 * E, support=(0.0, math.inf),
                                   hint=(1.0, 1.0))
    with pytest.raises(fl.NormalizationError):
        fl.log_normalizer(env)


def test_local_inverse_temperature():
    env = fl.ideal_gas_environment(2, 3, 1.0)
    assert math.isclose(fl.local_inverse_temperature(env, 4.0), 2.0 / 4.0)
    assert math.isclose(fl.local_inverse_temperature(env, 4.0, units=Units(k=3.0)), 1.5)
    # finite-difference route on a user environment without an analytic derivative
    raw = fl.MacrostateEnvironment(theta0=1.0, entropy_fn=lambda E, X: 2.0 * math.log(E), support=(0.0, math.inf))
    assert math.isclose(fl.local_inverse_temperature(raw, 4.0), 0.5, rel_tol=1e-8)
    with pytest.raises(DomainError):
        fl.local_inverse_temperature(env, 0.0)


def test_concavity_check():
    assert fl.gaussian_environment(0.0, 1.0, 1.0).check_concavity()
    convex = fl.MacrostateEnvironment(theta0=1.0, entropy_fn=lambda E, X: 0.1 * E * E, hint=(0.0, 1.0))
    assert not convex.check_concavity()


def test_direct_samplers_match_laws():
    g = fl.sample_macrostates(fl.gaussian_environment(1.0, 2.0, 0.5), 20000, seed=1)
    assert stats.kstest(g.energies, stats.norm(1.0, 2.0).cdf).pvalue > 1e-3
    p = fl.sample_macrostates(fl.power_law_environment(2.0, 1.5), 20000, seed=1)
    assert stats.kstest(p.energies, stats.gamma(3.0, scale=1 / 1.5).cdf).pvalue > 1e-3
    assert np.allclose(p.local_betas, 2.0 / p.energies)


def test_grid_sampler_matches_gaussian():
    env = fl.MacrostateEnvironment(theta0=2.0, entropy_fn=lambda E, X: -((E - 5.0) ** 2) / (2 * 0.49) + 2.0 * E)
    s = fl.sample_macrostates(env, 20000, seed=4)
    assert stats.kstest(s.energies, stats.norm(5.0, 0.7).cdf).pvalue > 1e-3
    assert np.allclose(s.local_betas, 2.0 - (s.energies - 5.0) / 0.49, rtol=1e-6, atol=1e-6)


def test_samples_are_deterministic():
    env = fl.volume_environment(2.0, 3.0, 1.0, 2.0)
    a = fl.sample_macrostates(env, 100, seed=3)
    b = fl.sample_macrostates(env, 100, seed=3)
    assert np.array_equal(a.energies, b.energies) and np.array_equal(a.displacements, b.displacements)


@pytest.mark.parametrize("env", [
    fl.gaussian_environment(5.0, 0.7, 2.0),
    fl.ideal_gas_environment(2, 3, 1.0),
    fl.power_law_environment(5.0, 0.5),
    fl.volume_environment(2.0, 3.0, 1.0, 2.0),
], ids=["gaussian", "ideal_gas", "power_law", "volume"])
def test_covariance_identity(env):
    s = fl.sample_macrostates(env, 100000, seed=7)
    rep = fl.covariance_identity_check(s, n_boot=100)
    assert rep.passed, rep.checks
    assert set(rep.checks) == {"cauchy_schwarz", "covariance_identity", "uncertainty_relation"}


def test_gamma_uncertainty_product_closed_form():
    # E ~ Gamma(3): Delta E Delta beta / k = sqrt(3)
    s = fl.sample_macrostates(fl.ideal_gas_environment(2, 3, 1.0), 100000, seed=2)
    rep = fl.covariance_identity_check(s, n_boot=100)
    assert math.isclose(fl.gamma_uncertainty_product(3.0), math.sqrt(3.0))
    assert abs(rep.product - math.sqrt(3.0)) <= 3 * rep.product_sigma
    with pytest.raises(DomainError):
        fl.gamma_uncertainty_product(2.0)


def test_gaussian_saturates_the_bound():
    s = fl.sample_macrostates(fl.gaussian_environment(0.0, 3.0, 1.0), 100000, seed=5)
    rep = fl.covariance_identity_check(s, n_boot=100)
    assert abs(rep.product - 1.0) <= 3 * rep.product_sigma
    # beta is linear in E, so Cauchy-Schwarz is an equality up to rounding
    assert math.isclose(rep.product, abs(rep.cov), rel_tol=1e-10)


def test_boundary_term_warning():
    s = fl.sample_macrostates(fl.power_law_environment(0.0, 1.0), 5000, seed=1)
    with pytest.warns(fl.BoundaryTermWarning):
        rep = fl.covariance_identity_check(s, n_boot=20)
    assert "covariance_identity" not in rep.checks
    assert "covariance_identity" in rep.diagnostics


def test_covariance_check_needs_samples():
    s = fl.sample_macrostates(fl.gaussian_environment(0.0, 1.0, 1.0), 100)
    with pytest.raises(ValueError):
        fl.covariance_identity_check(s)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), rho=st.floats(-1.0, 1.0), scale=st.floats(1e-3, 1e3))
def test_cauchy_schwarz_holds_on_any_sample(seed, rho, scale):
    rng = np.random.default_rng(seed)
    E = scale * rng.standard_normal(1000)
    b = rho * E + rng.standard_t(3, 1000)
    s = fl.FluctuationSample(E, np.empty((E.size, 0)), b, np.full(E.size, 1.0 / E.size))
    rep = fl.covariance_identity_check(s, n_boot=2)
    assert rep.checks["cauchy_schwarz"]


# -- exchange simulator --------------------------------------------------------------

def test_exchange_conserves_energy():
    traj = fl.subsystem_exchange_sim(4, 8, 32.0, 200000, seed=1)
    assert abs(traj.final_sum - 32.0) / 32.0 < 1e-12
    assert np.all(traj.final_energies >= 0)
    assert np.allclose(traj.subsystem_energies.sum(axis=1), 32.0, rtol=1e-12)


def test_two_unit_stationary_law_is_uniform():
    traj = fl.subsystem_exchange_sim(2, 1, 2.0, 200000, seed=3)
    assert traj.record_every == 1
    ks = stats.kstest(traj.tracer_energies / 2.0, "uniform")
    assert ks.statistic < 0.01


def test_finite_bath_variance_matches_beta_law():
    assert math.isclose(fl.finite_bath_subsystem_variance(4, 16, 64.0),
                        64.0**2 * stats.beta(16, 48).var(), rel_tol=1e-10)


def test_subsystem_variance_matches_prediction():
    m, n = 4, 16
    traj = fl.subsystem_exchange_sim(m, n, 4.0 * n, 2000000, seed=2)
    x = traj.subsystem_energies[:, 0]
    n_eff = x.size * traj.record_every / traj.tau_fl
    pred = fl.finite_bath_subsystem_variance(m, n, 4.0 * n)
    assert abs(np.var(x) - pred) <= 4 * pred * math.sqrt(2.0 / n_eff)


def test_timescale_hierarchy():
    traj = fl.subsystem_exchange_sim(4, 32, 128.0, 1000000, seed=4)
    assert traj.hierarchy_ok


def test_exchange_deterministic_and_csv(tmp_path):
    a = fl.subsystem_exchange_sim(3, 4, 12.0, 20000, seed=9, check_length=False)
    b = fl.subsystem_exchange_sim(3, 4, 12.0, 20000, seed=9, check_length=False)
    assert np.array_equal(a.subsystem_energies, b.subsystem_energies)
    path = tmp_path / "traj.csv"
    fl.write_trajectory_csv(a, path)
    rows = list(csv.DictReader(open(path)))
    assert rows[0].keys() == {"step", "subsystem_id", "energy", "T_hat"}
    assert len(rows) == a.times.size * 3
    assert math.isclose(float(rows[0]["T_hat"]), float(rows[0]["energy"]) / 4)


def test_exchange_rejects_short_runs_and_bad_parameters():
    with pytest.raises(fl.ParameterError):
        fl.subsystem_exchange_sim(4, 64, 256.0, 5000, seed=1)
    with pytest.raises(fl.ParameterError):
        fl.subsystem_exchange_sim(1, 4, 1.0, 1000)
    with pytest.raises(fl.ParameterError):
        fl.subsystem_exchange_sim(2, 4, 1.0, 1000, exchange_rate=0.0)
