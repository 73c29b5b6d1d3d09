"""Estimation-theory route to the energy-temperature uncertainty relation.

The canonical family is an exponential family in ``theta``, so the score of a
single energy draw is ``<E>_theta - E`` and the Fisher information per draw is
the energy variance.  The maximum-likelihood estimator solves
``<E>_theta = mean(sample)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, optimize

from .ensembles import (
    DomainError,
    EnergySample,
    EnsembleModel,
    Units,
    _GammaFamily,
    canonical_log_pdf,
    energy_variance,
    mean_energy,
    sample_energies,
)
from .rng import derive_rng


class InsufficientSampleError(ValueError):
    pass


class SaturationError(ValueError):
    """The sample mean is not attainable by any valid theta."""

    def __init__(self, message, side):
        super().__init__(message)
        self.side = side


# -- Fisher information --------------------------------------------------------

def fisher_information(model: EnsembleModel, theta: float) -> float:
    """Fisher information of one draw about ``theta``: the energy variance.

    In ``beta = k * theta`` units divide by ``k**2``.
    """
    return energy_variance(model, theta)


def _score_fd(model, E, theta, rel_step=1e-4):
    h = rel_step * max(theta, 1.0)
    if theta - h < 0 and model.bounded:
        f0 = canonical_log_pdf(model, E, theta)
        f1 = canonical_log_pdf(model, E, theta + h)
        f2 = canonical_log_pdf(model, E, theta + 2 * h)
        return (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h)
    return (canonical_log_pdf(model, E, theta + h) - canonical_log_pdf(model, E, theta - h)) / (2.0 * h)


def fisher_information_quadrature(model: EnsembleModel, theta: float) -> float:
    """Fisher information as ``E[score**2]`` by quadrature (or exact sum).

    The score is a central finite difference of :func:`canonical_log_pdf` in
    theta, so this route shares no code with the closed-form moments.
    """
    theta = model.check_theta(theta)
    if not model.continuous:
        levels, _ = model.degeneracies()
        p = np.exp(canonical_log_pdf(model, levels, theta))
        return float(np.sum(_score_fd(model, levels, theta) ** 2 * p))

    def integrand(E):
        return _score_fd(model, E, theta) ** 2 * math.exp(canonical_log_pdf(model, E, theta))

    if isinstance(model, _GammaFamily):
        scale = 1.0 / theta
        centre = max(model.alpha - 1.0, 0.0) * scale
        width = math.sqrt(model.alpha) * scale
        cuts = [0.0, centre, centre + 10 * width, centre + 60 * width, math.inf]
    else:
        cuts = [0.0, math.inf]
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b > a:
            total += integrate.quad(integrand, a, b, limit=200, epsabs=0.0, epsrel=1e-11)[0]
    return total


def empirical_fisher(sample: EnergySample) -> float:
    """Unbiased sample variance of the score ``<E>_theta - E_i``."""
    values = np.asarray(sample.values, dtype=float)
    if values.size < 2:
        raise InsufficientSampleError("empirical Fisher information needs at least two draws")
    score = mean_energy(sample.model, sample.theta) - values
    return float(np.var(score, ddof=1))


# -- maximum likelihood ------------------------------------------------------------

def _mle_from_mean(model: EnsembleModel, target: float, rtol: float = 1e-10,
                   max_doublings: int = 300) -> float:
    def f(t):
        return mean_energy(model, t) - target

    if model.bounded:
        lo_E, _ = model.energy_bounds()
        if target <= lo_E:
            raise SaturationError(f"sample mean {target} at the ground level: theta_hat = +inf", "+inf")
        if f(0.0) <= 0:
            raise SaturationError(
                f"sample mean {target} >= infinite-temperature mean {mean_energy(model, 0.0)}: theta_hat <= 0",
                "0",
            )
    if not np.isfinite(target) or (not model.bounded and target <= 0):
        raise SaturationError(f"sample mean {target} is not attainable", "0")

    lo, hi = 1.0, 1.0
    if f(1.0) > 0:
        for _ in range(max_doublings):
            lo, hi = hi, hi * 2.0
            if f(hi) < 0:
                break
        else:
            raise SaturationError("root bracket diverged upward (theta_hat -> inf)", "+inf")
    else:
        for _ in range(max_doublings):
            hi, lo = lo, lo / 2.0
            if f(lo) > 0:
                break
        else:
            if model.bounded and f(0.0) > 0:
                lo = 0.0
            else:
                raise SaturationError("root bracket collapsed to theta = 0", "0")
    if f(lo) == 0:
        return lo
    if f(hi) == 0:
        return hi
    return optimize.brentq(f, lo, hi, xtol=1e-300, rtol=rtol, maxiter=500)


def mle_theta(sample: EnergySample, model: EnsembleModel | None = None, rtol: float = 1e-10) -> float:
    """Maximum-likelihood theta: the unique root of ``<E>_theta = mean(sample)``.

    Raises :class:`SaturationError` when the sample mean lies outside the open
    range of attainable means (for example an all-ground-state sample).
    """
    model = sample.model if model is None else model
    return _mle_from_mean(model, float(np.mean(sample.values)), rtol=rtol)


# -- replica study --------------------------------------------------------------------

@dataclass
class EstimatorReport:
    theta_hat: float
    theta_true: float
    sample_size: int
    replica_count: int
    estimator_variance: float
    fisher_info: float
    cr_ratio: float
    bias: float
    uncertainty_product: float
    cr_sigma: float = 0.0
    epsilon_mc: float = 0.0
    variance_method: str = "control-variate"
    raw_variance: float = 0.0
    raw_cr_ratio: float = 0.0
    raw_cr_sigma: float = 0.0
    excluded_replicas: list = field(default_factory=list)
    sampler_info: dict = field(default_factory=dict)

    @property
    def cr_allowance(self) -> float:
        return 3.0 * self.cr_sigma

    def cramer_rao_holds(self) -> bool:
        return self.cr_ratio >= 1.0 - self.cr_allowance

    def product_holds(self) -> bool:
        return self.uncertainty_product >= 1.0 - self.epsilon_mc

    def to_dict(self) -> dict:
        return asdict(self)


def _variance_estimates(theta_hat, means, theta, mu_E, var_mean):
    """Raw and control-variate estimates of Var(theta_hat).

    The controls ``e = mean_r - <E>`` and ``e**2 - var_mean`` have zero
    expectation for independent draws.  They are regressed out of
    ``(theta_hat - theta)`` and its square; the variance is the adjusted
    mean squared error minus the adjusted squared bias.
    """
    raw = float(np.var(theta_hat, ddof=1))
    d = theta_hat - theta
    e = means - mu_E
    controls = np.column_stack([e, e * e - var_mean])
    centred = controls - controls.mean(axis=0)
    if not np.all(np.ptp(controls, axis=0) > 0):
        return raw, raw
    c_bias = np.dot(centred[:, 0], d - d.mean()) / np.dot(centred[:, 0], centred[:, 0])
    bias = d.mean() - c_bias * controls[:, 0].mean()
    coef, *_ = np.linalg.lstsq(centred, d * d - np.mean(d * d), rcond=None)
    mse = np.mean(d * d) - controls.mean(axis=0) @ coef
    return raw, float(mse - bias * bias)


def estimator_study(model: EnsembleModel, theta: float, sample_size: int, replica_count: int,
                    seed: int = 0, units: Units = Units(), n_boot: int = 200,
                    variance_method: str = "control-variate", parallel: int | None = None,
                    sampler_options: dict | None = None) -> EstimatorReport:
    """Run ``replica_count`` independent MLE experiments of ``sample_size`` draws.

    ``cr_ratio = Var(theta_hat) * M * I_F`` and the uncertainty product
    ``Delta E * sqrt(M) * Delta theta_hat`` (equal to ``Delta E * Delta
    beta_hat / k``) are reported with bootstrap Monte-Carlo allowances.
    Replicas whose sample mean saturates the estimator are excluded and listed;
    their presence switches the variance estimate to the raw replica variance
    because conditioning breaks the known control mean.
    """
    if sample_size < 1 or replica_count < 2:
        raise ValueError("need sample_size >= 1 and replica_count >= 2")
    if variance_method not in ("control-variate", "raw"):
        raise ValueError("variance_method must be 'control-variate' or 'raw'")
    theta = model.check_theta(theta)
    options = dict(sampler_options or {})
    # discrete models repeat sample means, so the root solve is memoized
    solved = {}

    def solve(mean):
        if mean not in solved:
            try:
                solved[mean] = _mle_from_mean(model, mean)
            except SaturationError:
                solved[mean] = None
        return solved[mean]

    def one(r):
        sample = sample_energies(model, theta, sample_size, seed=seed, replica_id=r, **options)
        mean = float(np.mean(sample.values))
        return r, mean, solve(mean), sample.info

    if parallel and parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(one, range(replica_count)))
    else:
        results = [one(r) for r in range(replica_count)]

    excluded = [r for r, _, th, _ in results if th is None]
    kept = [(m, th) for _, m, th, _ in results if th is not None]
    if len(kept) < 2:
        raise SaturationError("fewer than two replicas produced a finite estimate", "all")
    means = np.array([m for m, _ in kept])
    theta_hat = np.array([th for _, th in kept])

    fisher = fisher_information(model, theta)
    mu_E = mean_energy(model, theta)
    var_mean = fisher / sample_size
    method = variance_method if not excluded else "raw"

    def ratios(th, mn):
        raw, cv = _variance_estimates(th, mn, theta, mu_E, var_mean)
        return raw * sample_size * fisher, cv * sample_size * fisher

    raw_cr, cv_cr = ratios(theta_hat, means)
    boot_rng = derive_rng(seed, f"bootstrap/{model.name}", 0)
    boots = np.array([ratios(theta_hat[idx], means[idx])
                      for idx in (boot_rng.integers(0, len(theta_hat), len(theta_hat)) for _ in range(n_boot))])
    raw_sigma = float(np.std(boots[:, 0], ddof=1))
    cv_sigma = float(np.std(boots[:, 1], ddof=1))

    if method == "raw":
        cr, sigma, variance = raw_cr, raw_sigma, raw_cr / (sample_size * fisher)
    else:
        cr, sigma, variance = cv_cr, cv_sigma, cv_cr / (sample_size * fisher)
    product = math.sqrt(max(cr, 0.0))
    eps = 3.0 * sigma / (2.0 * max(product, 1e-300))

    info = results[0][3]
    return EstimatorReport(
        theta_hat=float(theta_hat.mean()),
        theta_true=theta,
        sample_size=sample_size,
        replica_count=len(theta_hat),
        estimator_variance=float(variance),
        fisher_info=float(fisher),
        cr_ratio=float(cr),
        bias=float(theta_hat.mean() - theta),
        uncertainty_product=product,
        cr_sigma=sigma,
        epsilon_mc=float(eps),
        variance_method=method,
        raw_variance=float(raw_cr / (sample_size * fisher)),
        raw_cr_ratio=float(raw_cr),
        raw_cr_sigma=raw_sigma,
        excluded_replicas=excluded,
        sampler_info={k: v for k, v in info.items() if isinstance(v, (int, float, str))},
    )


# -- temperature definitions and estimators -----------------------------------

def gibbs_boltzmann_temperatures(model: EnsembleModel, E: float, units: Units = Units(),
                                 method: str = "auto") -> tuple[float, float]:
    """Boltzmann and Gibbs temperatures of a continuous model at energy ``E``.

    ``1/T_B = k d ln sigma/dE`` and ``1/T_G = k d ln Omega/dE`` with
    ``Omega(E) = integral_0^E sigma``.  Power-law models use closed forms;
    ``method="numeric"`` forces quadrature and finite differences.
    """
    if not model.continuous:
        raise TypeError("Gibbs/Boltzmann temperatures need a continuous density of states")
    if not model.in_support(E):
        raise DomainError(f"energy {E} is not interior to the support")
    E = float(E)
    if method == "auto" and isinstance(model, _GammaFamily):
        a = model.alpha
        if a <= 1.0:
            raise DomainError("Boltzmann temperature undefined: density of states is not increasing")
        return E / (units.k * (a - 1.0)), E / (units.k * a)

    h = 1e-5 * E
    dlns = (model.log_density_of_states(E + h) - model.log_density_of_states(E - h)) / (2 * h)
    if dlns <= 0:
        raise DomainError("Boltzmann temperature undefined: density of states is not increasing")
    ref = model.log_density_of_states(E)

    def log_omega(x):
        val = integrate.quad(lambda y: math.exp(model.log_density_of_states(y) - ref), 0.0, x,
                             limit=200, epsabs=0.0, epsrel=1e-12)[0]
        return math.log(val)

    dlnw = (log_omega(E + h) - log_omega(E - h)) / (2 * h)
    return 1.0 / (units.k * dlns), 1.0 / (units.k * dlnw)


def gibbs_boltzmann_gap(model: EnsembleModel, E: float, units: Units = Units(),
                        method: str = "auto") -> dict:
    """Relative disagreement of the two temperature definitions at ``E``.

    ``gap = (T_B - T_G) / T_B`` (``2 / (d N)`` for the ideal gas) and
    ``gap_over_gibbs = (T_B - T_G) / T_G`` (``1 / (d N / 2 - 1)``).
    """
    tb, tg = gibbs_boltzmann_temperatures(model, E, units, method)
    return {"T_B": tb, "T_G": tg, "ratio": tb / tg, "gap": (tb - tg) / tb, "gap_over_gibbs": (tb - tg) / tg}


def kinetic_estimator(kinetic_sample, d: int, units: Units = Units()) -> float:
    """Equipartition temperature estimate ``2 * mean(K) / (d * k)``."""
    K = np.asarray(kinetic_sample, dtype=float)
    if K.size == 0:
        raise InsufficientSampleError("kinetic estimator needs at least one particle")
    if d < 1:
        raise ValueError("d must be >= 1")
    return float(2.0 * K.mean() / (d * units.k))


def maxwell_kinetic_energies(T: float, d: int, count: int, rng: np.random.Generator,
                             units: Units = Units()) -> np.ndarray:
    """Per-particle kinetic energies of a Maxwell gas: ``Gamma(d/2, k T)``."""
    return rng.gamma(d / 2.0, units.k * T, size=count)

