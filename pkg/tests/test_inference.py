import math

import numpy as np
import pytest
from scipy import stats

from turlab import inference as inf
from turlab.ensembles import (
    DomainError,
    EnergySample,
    HarmonicOscillators,
    IdealGas,
    IsingChain,
    TwoLevel,
    Units,
    energy_variance,
    mean_energy,
    sample_energies,
)

MODELS = [IdealGas(10, 3), HarmonicOscillators(6), TwoLevel(30, 1.0), IsingChain(8, 1.0, 0.2)]


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.name)
@pytest.mark.parametrize("theta", [0.3, 1.0])
def test_fisher_information_two_routes(model, theta):
    analytic = inf.fisher_information(model, theta)
    quadrature = inf.fisher_information_quadrature(model, theta)
    assert math.isclose(analytic, energy_variance(model, theta))
    assert math.isclose(analytic, quadrature, rel_tol=1e-4)


def test_fisher_information_at_infinite_temperature():
    tl = TwoLevel(10, 2.0)
    # binomial variance N p (1 - p) gap**2 with p = 1/2
    assert math.isclose(inf.fisher_information_quadrature(tl, 0.0), 10.0, rel_tol=1e-4)


def test_empirical_fisher_estimates_variance():
    s = sample_energies(IdealGas(5), 2.0, 40000, seed=4)
    assert math.isclose(inf.empirical_fisher(s), energy_variance(IdealGas(5), 2.0), rel_tol=0.05)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.name)
def test_mle_inverts_mean_energy(model):
    for theta in (0.2, 0.9, 2.5):
        target = mean_energy(model, theta)
        assert math.isclose(inf._mle_from_mean(model, target), theta, rel_tol=1e-8)


def test_mle_gamma_closed_form():
    gas = IdealGas(4, 3)
    s = sample_energies(gas, 1.3, 50, seed=2)
    assert math.isclose(inf.mle_theta(s), gas.alpha / s.values.mean(), rel_tol=1e-9)


def test_mle_saturates_at_ground_state():
    tl = TwoLevel(5, 1.0)
    sample = EnergySample(np.zeros(4), tl, 1.0, 0, 0)
    with pytest.raises(inf.SaturationError) as err:
        inf.mle_theta(sample)
    assert err.value.side == "+inf"


def test_mle_saturates_above_infinite_temperature_mean():
    tl = TwoLevel(5, 1.0)
    sample = EnergySample(np.full(3, 4.0), tl, 1.0, 0, 0)
    with pytest.raises(inf.SaturationError):
        inf.mle_theta(sample)


def test_estimator_study_reports_and_is_deterministic():
    gas = IdealGas(4)
    a = inf.estimator_study(gas, 1.0, 200, 60, seed=1, n_boot=50)
    b = inf.estimator_study(gas, 1.0, 200, 60, seed=1, n_boot=50)
    assert a.to_dict() == b.to_dict()
    assert a.replica_count == 60 and a.variance_method == "control-variate"
    assert math.isclose(a.uncertainty_product, math.sqrt(a.cr_ratio))


def test_estimator_study_parallel_matches_serial():
    tl = TwoLevel(20, 1.0)
    a = inf.estimator_study(tl, 0.7, 100, 40, seed=3, n_boot=20)
    b = inf.estimator_study(tl, 0.7, 100, 40, seed=3, n_boot=20, parallel=4)
    assert a.to_dict() == b.to_dict()


def test_estimator_study_cramer_rao_for_gamma():
    # theta_hat = M alpha / S with S ~ Gamma(M alpha, 1/theta), so its variance is closed form
    gas = HarmonicOscillators(3)
    M, theta = 50, 2.0
    a = gas.alpha * M  # sum of M draws is Gamma(M alpha)
    exact_var = (gas.alpha * M) ** 2 * theta**2 / ((a - 1) ** 2 * (a - 2))
    expected_cr = exact_var * M * energy_variance(gas, theta)
    rep = inf.estimator_study(gas, theta, M, 400, seed=5, n_boot=100)
    assert abs(rep.cr_ratio - expected_cr) <= 4 * rep.cr_sigma + 1e-3
    assert abs(rep.raw_cr_ratio - expected_cr) <= 4 * rep.raw_cr_sigma


def test_single_draw_two_level_against_binomial_enumeration():
    # M = 1: theta_hat is a function of the binomial count; enumerate it exactly
    N, theta = 50, 1.0
    tl = TwoLevel(N, 1.0)
    p_up = 1.0 / (1.0 + math.exp(theta))
    k = np.arange(1, N)
    pk = stats.binom.pmf(k, N, p_up)
    pk = pk / pk.sum()
    th = np.log(N / k - 1.0)  # mean energy N/(e^theta + 1) inverted
    var = np.sum(pk * th**2) - np.sum(pk * th) ** 2
    product = math.sqrt(var * energy_variance(tl, theta))
    rep = inf.estimator_study(tl, theta, 1, 20000, seed=2, n_boot=100)
    assert rep.variance_method == "raw"
    assert rep.excluded_replicas
    assert abs(rep.uncertainty_product - product) <= 2 * rep.epsilon_mc
    assert product > 1.0


def test_estimator_study_validation():
    with pytest.raises(ValueError):
        inf.estimator_study(IdealGas(2), 1.0, 0, 10)
    with pytest.raises(ValueError):
        inf.estimator_study(IdealGas(2), 1.0, 10, 10, variance_method="jackknife")


def test_control_variate_consistent_with_raw():
    rep = inf.estimator_study(TwoLevel(40, 0.5), 0.8, 500, 200, seed=8, n_boot=100)
    assert abs(rep.cr_ratio - rep.raw_cr_ratio) < 4 * rep.raw_cr_sigma
    assert rep.cr_sigma < rep.raw_cr_sigma


# -- temperature definitions ---------------------------------------------------------

def test_gibbs_boltzmann_ideal_gas_n2():
    tb, tg = inf.gibbs_boltzmann_temperatures(IdealGas(2, 3), 4.2)
    assert math.isclose(tb / tg, 1.5, rel_tol=1e-12)
    assert math.isclose(tg, 4.2 / 3.0)


@pytest.mark.parametrize("model", [IdealGas(3, 2), HarmonicOscillators(5), IdealGas(7, 3)])
def test_gibbs_boltzmann_numeric_matches_closed_form(model):
    for E in (0.5, 3.0, 40.0):
        closed = inf.gibbs_boltzmann_temperatures(model, E, method="auto")
        numeric = inf.gibbs_boltzmann_temperatures(model, E, method="numeric")
        assert np.allclose(closed, numeric, rtol=1e-7)


def test_gibbs_boltzmann_gap_scales_inverse_n():
    N = np.array([2, 4, 8, 16, 32])
    gaps = [inf.gibbs_boltzmann_gap(IdealGas(int(n), 3), 1.0)["gap"] for n in N]
    assert np.allclose(gaps, 2.0 / (3 * N), rtol=1e-12)
    assert math.isclose(np.polyfit(np.log(N), np.log(gaps), 1)[0], -1.0, abs_tol=1e-10)


def test_gibbs_gap_large_n_small():
    g = inf.gibbs_boltzmann_gap(IdealGas(100, 3), 10.0)
    assert g["gap"] < 0.007 and g["gap_over_gibbs"] < 0.007


def test_gibbs_boltzmann_domain_errors():
    with pytest.raises(DomainError):
        inf.gibbs_boltzmann_temperatures(IdealGas(2), 0.0)
    with pytest.raises(DomainError):
        inf.gibbs_boltzmann_temperatures(HarmonicOscillators(1), 1.0)
    with pytest.raises(TypeError):
        inf.gibbs_boltzmann_temperatures(TwoLevel(3), 1.0)


def test_temperatures_carry_k():
    u = Units(k=2.0)
    tb, tg = inf.gibbs_boltzmann_temperatures(IdealGas(2), 3.0, u)
    assert math.isclose(tb, 3.0 / (2.0 * 2.0))


def test_kinetic_estimator_unbiased():
    rng = np.random.default_rng(0)
    T, d = 2.5, 3
    est = [inf.kinetic_estimator(inf.maxwell_kinetic_energies(T, d, 100, rng), d) for _ in range(400)]
    assert abs(np.mean(est) - T) < 4 * np.std(est) / math.sqrt(400)
    # spread of T_hat tracks the kinetic-energy spread: Var(T_hat) = 2 T^2 / (d n)
    assert math.isclose(np.var(est), 2 * T**2 / (d * 100), rel_tol=0.2)


def test_kinetic_estimator_errors():
    with pytest.raises(inf.InsufficientSampleError):
        inf.kinetic_estimator([], 3)
    with pytest.raises(ValueError):
        inf.kinetic_estimator([1.0], 0)
