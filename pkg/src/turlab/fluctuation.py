"""Fluctuation-theory route: macrostate distributions of a small system.

A small system in contact with an environment at ``theta0 = 1/(k T0)`` and
generalized forces ``F_i`` visits macrostates ``(E, X)`` with probability

    P(E, X) ~ exp(-theta0 * (E + sum_i F_i X_i) + S(E, X) / k)

and its out-of-equilibrium inverse temperature is ``beta(E, X) = dS/dE``.
Entropy functions here are always given in units of ``k`` (``S/k``).

The module also hosts the isolated-system energy-exchange simulator used to
study the separation between unit-level and subsystem-level timescales.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from . import _kernels
from .ensembles import DomainError, Units
from .rng import derive_rng
from .stats import integrated_time


class BoundaryTermWarning(UserWarning):
    """Density does not vanish at the support edge; the -k covariance identity may fail."""


class NormalizationError(ValueError):
    pass


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class MacrostateEnvironment:
    """Environment temperature and forces plus the small system's entropy.

    ``entropy_fn(E, X)`` returns ``S/k``; ``X`` is a tuple of displacements
    (empty when there are none).  ``hint`` gives a rough ``(centre, width)`` of
    the energy marginal and ``x_hint`` the same per displacement; both only
    guide the quadrature.
    """

    theta0: float
    entropy_fn: Callable
    forces: tuple = ()
    support: tuple = (-math.inf, math.inf)
    x_support: tuple = ()
    dentropy_dE: Callable | None = None
    family: str | None = None
    params: tuple = ()
    hint: tuple | None = None
    x_hint: tuple = ()
    vanishing_boundary: bool = True

    def __post_init__(self):
        if not self.theta0 > 0:
            raise ValueError("theta0 must be positive")
        if len(self.x_support) != len(self.forces):
            raise ValueError("one support interval is needed per generalized force")

    @property
    def n_displacements(self) -> int:
        return len(self.forces)

    def param(self, name):
        return dict(self.params)[name]

    def interior(self, E, X=()) -> bool:
        lo, hi = self.support
        if not (lo < E < hi):
            return False
        return all(a < x < b for x, (a, b) in zip(X, self.x_support))

    def log_weight(self, E, X=()):
        """Unnormalized log probability of the macrostate."""
        work = E + sum(f * x for f, x in zip(self.forces, X))
        return -self.theta0 * work + self.entropy_fn(E, tuple(X))

    def check_concavity(self, points: int = 41) -> bool:
        """Sampled second differences of ``S`` in E are all non-positive."""
        c, w = self._hint()
        lo, hi = self.support
        grid = np.linspace(max(lo + 1e-9 * max(1, abs(lo)), c - 5 * w), min(hi, c + 5 * w), points)
        X = tuple(xc for xc, _ in self._x_hints())
        h = 1e-3 * w
        vals = [self.entropy_fn(e - h, X) - 2 * self.entropy_fn(e, X) + self.entropy_fn(e + h, X)
                for e in grid if self.interior(e - h, X) and self.interior(e + h, X)]
        return bool(np.all(np.asarray(vals) <= 1e-12 * max(1.0, np.max(np.abs(vals)) if vals else 1.0)))

    def _hint(self):
        if self.hint is not None:
            return self.hint
        lo, hi = self.support
        X = tuple(xc for xc, _ in self._x_hints())
        start = 0.0 if not (lo < 0.0 < hi) and not math.isfinite(lo) else (lo + 1.0 if math.isfinite(lo) else 0.0)
        res = optimize.minimize_scalar(lambda e: -self.log_weight(e, X) if self.interior(e, X) else math.inf,
                                       bracket=(start, start + 1.0))
        centre = float(res.x)
        h = 1e-3 * max(1.0, abs(centre))
        curv = -(self.log_weight(centre + h, X) - 2 * self.log_weight(centre, X) + self.log_weight(centre - h, X)) / h**2
        return centre, 1.0 / math.sqrt(curv) if curv > 0 else max(1.0, abs(centre))

    def _x_hints(self):
        return self.x_hint if self.x_hint else tuple((1.0, 1.0) for _ in self.forces)


# -- shipped environments ------------------------------------------------------

def gaussian_environment(E0: float, sigma: float, theta0: float) -> MacrostateEnvironment:
    """``S/k = -(E - E0)**2 / (2 sigma**2) + theta0 * E``: Gaussian energy with mean E0, sd sigma."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return MacrostateEnvironment(
        theta0=theta0,
        entropy_fn=lambda E, X: -((E - E0) ** 2) / (2.0 * sigma**2) + theta0 * E,
        dentropy_dE=lambda E, X: theta0 - (E - E0) / sigma**2,
        family="gaussian",
        params=(("E0", E0), ("sigma", sigma)),
        hint=(E0, sigma),
    )


def power_law_environment(nu: float, theta0: float) -> MacrostateEnvironment:
    """``S/k = nu * ln E`` on ``E > 0``: energy ~ Gamma(nu + 1, 1/theta0)."""
    if not nu > -1:
        raise ValueError("nu must exceed -1 for a normalizable distribution")
    shape = nu + 1.0
    return MacrostateEnvironment(
        theta0=theta0,
        entropy_fn=lambda E, X: nu * math.log(E),
        dentropy_dE=lambda E, X: nu / E,
        support=(0.0, math.inf),
        family="power",
        params=(("nu", nu),),
        hint=(shape / theta0, math.sqrt(shape) / theta0),
        vanishing_boundary=nu > 0,
    )


def ideal_gas_environment(N: int, d: int, theta0: float) -> MacrostateEnvironment:
    """Ideal-gas small system with ``S = k ln sigma(E)``, ``sigma ~ E**(dN/2 - 1)``.

    The energy is then Gamma(dN/2, 1/theta0), the canonical law of the gas.
    """
    return power_law_environment(d * N / 2.0 - 1.0, theta0)


def volume_environment(nu: float, n_particles: float, theta0: float, pressure: float) -> MacrostateEnvironment:
    """``S/k = nu ln E + n ln X`` with a pressure-like force conjugate to X.

    ``E ~ Gamma(nu + 1, 1/theta0)`` and ``X ~ Gamma(n + 1, 1/(theta0 * pressure))``.
    """
    if not pressure > 0:
        raise ValueError("pressure must be positive")
    shape_x = n_particles + 1.0
    rate_x = theta0 * pressure
    return MacrostateEnvironment(
        theta0=theta0,
        entropy_fn=lambda E, X: nu * math.log(E) + n_particles * math.log(X[0]),
        dentropy_dE=lambda E, X: nu / E,
        forces=(pressure,),
        support=(0.0, math.inf),
        x_support=((0.0, math.inf),),
        family="volume",
        params=(("nu", nu), ("n_particles", n_particles), ("pressure", pressure)),
        hint=((nu + 1.0) / theta0, math.sqrt(nu + 1.0) / theta0),
        x_hint=((shape_x / rate_x, math.sqrt(shape_x) / rate_x),),
        vanishing_boundary=nu > 0,
    )


# -- distribution ------------------------------------------------------------------

def _pieces(lo, hi, centre, width, spans=(8.0, 40.0)):
    cuts = [lo]
    for s in sorted(spans, reverse=True):
        cuts.append(centre - s * width)
    cuts.append(centre)
    for s in sorted(spans):
        cuts.append(centre + s * width)
    cuts.append(hi)
    cuts = sorted(min(max(c, lo), hi) for c in cuts)
    return [(a, b) for a, b in zip(cuts[:-1], cuts[1:]) if b > a]


@lru_cache(maxsize=64)
def log_normalizer(env: MacrostateEnvironment) -> float:
    """``ln`` of the integral of ``exp(log_weight)`` over the support, by quadrature."""
    c, w = env._hint()
    xh = env._x_hints()
    ref = env.log_weight(c, tuple(x for x, _ in xh)) if env.interior(c, tuple(x for x, _ in xh)) else 0.0

    def f1(E, X=()):
        if not env.interior(E, X):
            return 0.0
        return math.exp(env.log_weight(E, X) - ref)

    opts = dict(limit=200, epsabs=0.0, epsrel=1e-11)
    try:
        total = _integrate_weight(env, f1, c, w, xh, opts)
    except OverflowError:
        raise NormalizationError("fluctuation distribution is not normalizable on its support") from None
    if not (np.isfinite(total) and total > 0):
        raise NormalizationError("fluctuation distribution is not normalizable on its support")
    return ref + math.log(total)


def _integrate_weight(env, f1, c, w, xh, opts):
    if env.n_displacements == 0:
        return sum(integrate.quad(f1, a, b, **opts)[0] for a, b in _pieces(*env.support, c, w))
    if env.n_displacements == 1:
        (xc, xw), = xh
        (xlo, xhi), = env.x_support

        def inner(E):
            return sum(integrate.quad(lambda x: f1(E, (x,)), a, b, **opts)[0]
                       for a, b in _pieces(xlo, xhi, xc, xw))

        return sum(integrate.quad(inner, a, b, **opts)[0] for a, b in _pieces(*env.support, c, w))
    raise NotImplementedError("quadrature normalization supports at most one displacement")


def fluctuation_log_prob(env: MacrostateEnvironment, E: float, X=()) -> float:
    """Normalized log density of the macrostate ``(E, X)``."""
    X = tuple(X)
    if len(X) != env.n_displacements:
        raise ValueError(f"expected {env.n_displacements} displacements, got {len(X)}")
    if not env.interior(E, X):
        raise DomainError(f"macrostate ({E}, {X}) lies outside the support")
    return env.log_weight(E, X) - log_normalizer(env)


def local_inverse_temperature(env: MacrostateEnvironment, E: float, X=(), units: Units = Units()) -> float:
    """``beta(E, X) = dS/dE``, carrying ``k`` (so ``beta = k theta``)."""
    X = tuple(X)
    if not env.interior(E, X):
        raise DomainError(f"energy {E} is not interior to the support")
    if env.dentropy_dE is not None:
        return units.k * env.dentropy_dE(E, X)
    h = 1e-6 * max(1.0, abs(E))
    lo, hi = env.support
    if not (lo < E - h and E + h < hi):
        raise DomainError("energy too close to the support boundary for a derivative")
    return units.k * (env.entropy_fn(E + h, X) - env.entropy_fn(E - h, X)) / (2.0 * h)


@dataclass
class FluctuationSample:
    energies: np.ndarray
    displacements: np.ndarray
    local_betas: np.ndarray
    weights: np.ndarray
    vanishing_boundary: bool = True
    k: float = 1.0

    def __len__(self):
        return len(self.energies)


def _grid_inverse_cdf(env, rng, count, nodes=20001):
    c, w = env._hint()
    lo, hi = env.support
    a = max(lo, c - 40 * w)
    b = min(hi, c + 40 * w)
    if a == lo:
        a = lo + 1e-12 * max(1.0, w)
    grid = np.linspace(a, b, nodes)
    logp = np.array([env.log_weight(e) for e in grid])
    # refine the window to where the density is non-negligible
    keep = np.nonzero(logp > logp.max() - 60.0)[0]
    grid = np.linspace(grid[max(keep[0] - 1, 0)], grid[min(keep[-1] + 1, nodes - 1)], nodes)
    logp = np.array([env.log_weight(e) for e in grid])
    p = np.exp(logp - logp.max())
    cdf = integrate.cumulative_trapezoid(p, grid, initial=0.0)
    if not cdf[-1] > 0:
        raise NormalizationError("grid sampler found no probability mass")
    cdf /= cdf[-1]
    return np.interp(rng.random(count), cdf, grid)


def sample_macrostates(env: MacrostateEnvironment, count: int, seed: int = 0,
                       units: Units = Units(), replica: int = 0) -> FluctuationSample:
    """Draw macrostates; direct sampling for the shipped families, inverse CDF otherwise."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = derive_rng(seed, f"macrostates/{env.family or 'grid'}", replica)
    X = np.empty((count, env.n_displacements))
    if env.family == "gaussian":
        E = rng.normal(env.param("E0"), env.param("sigma"), size=count)
    elif env.family in ("power", "volume"):
        E = rng.gamma(env.param("nu") + 1.0, 1.0 / env.theta0, size=count)
        if env.family == "volume":
            X[:, 0] = rng.gamma(env.param("n_particles") + 1.0, 1.0 / (env.theta0 * env.param("pressure")), size=count)
    elif env.n_displacements == 0:
        E = _grid_inverse_cdf(env, rng, count)
    else:
        raise NotImplementedError("grid sampling supports energy-only environments")
    if env.dentropy_dE is not None and env.family is not None:
        if env.n_displacements:
            betas = np.array([units.k * env.dentropy_dE(e, tuple(x)) for e, x in zip(E, X)])
        else:
            betas = units.k * np.asarray(env.dentropy_dE(E, ()), dtype=float)
    else:
        betas = np.array([local_inverse_temperature(env, e, tuple(x), units) for e, x in zip(E, X)])
    weights = np.full(count, 1.0 / count)
    return FluctuationSample(E, X, betas, weights, env.vanishing_boundary, units.k)


# -- covariance identity ------------------------------------------------------------

@dataclass
class CovarianceReport:
    cov: float
    delta_E: float
    delta_beta: float
    product: float
    cov_sigma: float
    product_sigma: float
    k: float
    identity_asserted: bool
    checks: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def _weighted_moments(E, b, w):
    mE = np.sum(w * E)
    mb = np.sum(w * b)
    dE = E - mE
    db = b - mb
    return np.sum(w * dE * db), math.sqrt(np.sum(w * dE * dE)), math.sqrt(np.sum(w * db * db))


def covariance_identity_check(sample: FluctuationSample, n_boot: int = 200, seed: int = 0,
                              n_sigma: float = 3.0) -> CovarianceReport:
    """Check ``Cov(E, beta) = -k``, Cauchy-Schwarz, and ``Delta E Delta beta >= k``.

    Bands are ``n_sigma`` bootstrap standard errors.  The covariance identity
    relies on an integration by parts, so it is only asserted when the density
    vanishes at the support edges; otherwise a :class:`BoundaryTermWarning` is
    issued and only the two inequalities are checked.
    """
    E = np.asarray(sample.energies, dtype=float)
    b = np.asarray(sample.local_betas, dtype=float)
    w = np.asarray(sample.weights, dtype=float)
    if E.size < 1000:
        raise ValueError("covariance check needs at least 1000 macrostates")
    w = w / w.sum()
    cov, dE, db = _weighted_moments(E, b, w)
    k = sample.k
    rng = derive_rng(seed, "bootstrap/covariance", 0)
    boots = []
    uniform = bool(np.all(w == w[0]))
    uw = np.full(E.size, 1.0 / E.size)
    for _ in range(n_boot):
        idx = rng.integers(0, E.size, size=E.size) if uniform else rng.choice(E.size, size=E.size, p=w)
        c_, e_, b_ = _weighted_moments(E[idx], b[idx], uw)
        boots.append((c_, e_ * b_))
    boots = np.array(boots)
    cov_sigma = float(np.std(boots[:, 0], ddof=1))
    prod_sigma = float(np.std(boots[:, 1], ddof=1))
    product = dE * db

    # rounding guard: for exactly linear beta(E) both sides agree to a few ulps
    checks = {"cauchy_schwarz": bool(product >= abs(cov) * (1.0 - 1e-12))}
    conditional = {
        "covariance_identity": bool(abs(cov + k) <= n_sigma * cov_sigma),
        "uncertainty_relation": bool(product >= k - n_sigma * prod_sigma),
    }
    diagnostics = {}
    if sample.vanishing_boundary:
        checks.update(conditional)
    else:
        # both statements rest on the vanishing boundary term; report, do not assert
        diagnostics.update(conditional)
        warnings.warn("density does not vanish at the support boundary; Cov(E, beta) = -k is not asserted",
                      BoundaryTermWarning, stacklevel=2)
    return CovarianceReport(float(cov), dE, db, float(product), cov_sigma, prod_sigma, k,
                            sample.vanishing_boundary, checks, diagnostics)


def gamma_uncertainty_product(shape: float) -> float:
    """Closed-form ``Delta E Delta beta / k`` for ``E ~ Gamma(shape)``, ``beta = k (shape-1)/E``."""
    if shape <= 2:
        raise DomainError("Delta beta is infinite for shape <= 2")
    return math.sqrt(shape / (shape - 2.0))


# -- isolated-system energy exchange ----------------------------------------------

@dataclass
class ExchangeTrajectory:
    m: int
    n: int
    E_total: float
    steps: int
    exchange_rate: float
    record_every: int
    times: np.ndarray
    subsystem_energies: np.ndarray
    tracer_energies: np.ndarray
    final_energies: np.ndarray
    initial_sum: float
    tau_sub: float
    tau_fl: float
    k: float = 1.0

    @property
    def temperature_estimates(self) -> np.ndarray:
        """Per-subsystem ``T_hat = E_j / (n k)``; each unit carries ``k T`` on average."""
        return self.subsystem_energies / (self.n * self.k)

    @property
    def final_sum(self) -> float:
        return math.fsum(self.final_energies)

    @property
    def hierarchy_ok(self) -> bool:
        return self.tau_sub < self.tau_fl < self.steps


def _draw_pairs(rng, chunk, m, n, rate):
    units = m * n
    first_inter = rng.integers(0, units, size=chunk)
    other_sub = (first_inter // n + 1 + rng.integers(0, m - 1, size=chunk)) % m
    second_inter = other_sub * n + rng.integers(0, n, size=chunk)
    if n == 1:
        return first_inter, second_inter
    sub = rng.integers(0, m, size=chunk)
    off_a = rng.integers(0, n, size=chunk)
    off_b = (off_a + 1 + rng.integers(0, n - 1, size=chunk)) % n
    inter = rng.random(chunk) < rate
    first = np.where(inter, first_inter, sub * n + off_a)
    second = np.where(inter, second_inter, sub * n + off_b)
    return first, second


def subsystem_exchange_sim(m: int, n: int, E_total: float, steps: int, exchange_rate: float = 0.1,
                           seed: int = 0, record_every: int | None = None, units: Units = Units(),
                           chunk: int = 1 << 18, check_length: bool = True) -> ExchangeTrajectory:
    """Random pairwise energy exchange among ``m`` subsystems of ``n`` units.

    Each step picks a pair of units (from different subsystems with probability
    ``exchange_rate``, otherwise from the same subsystem; always different
    subsystems when ``n == 1``) and gives one of them a uniform random fraction
    of their combined energy.  The start is a draw from the stationary law
    (uniform on the energy simplex).  ``tau_sub`` is the integrated
    autocorrelation time of one unit's energy and ``tau_fl`` that of the
    subsystem energies, both in steps.
    """
    if m < 2 or n < 1:
        raise ParameterError("need m >= 2 subsystems and n >= 1 units each")
    if not E_total > 0:
        raise ParameterError("E_total must be positive")
    if not 0 < exchange_rate <= 1:
        raise ParameterError("exchange_rate must lie in (0, 1]")
    total_units = m * n
    if record_every is None:
        record_every = max(1, total_units // 8)
    rng = derive_rng(seed, "exchange", 0)
    energies = rng.dirichlet(np.ones(total_units)) * E_total
    initial_sum = math.fsum(energies)
    n_rec = steps // record_every
    sub_out = np.empty((n_rec, m))
    tracer = np.empty(n_rec)
    done = 0
    rec = 0
    while done < steps:
        size = min(chunk - chunk % record_every or record_every, steps - done)
        first, second = _draw_pairs(rng, size, m, n, exchange_rate)
        fractions = rng.random(size)
        k_rec = size // record_every
        part_sub = np.empty((k_rec, m))
        part_tr = np.empty(k_rec)
        _kernels.exchange_apply(energies, first.astype(np.int64), second.astype(np.int64), fractions,
                                record_every, n, part_sub, part_tr)
        sub_out[rec:rec + k_rec] = part_sub
        tracer[rec:rec + k_rec] = part_tr
        rec += k_rec
        done += size
    sub_out = sub_out[:rec]
    tracer = tracer[:rec]
    if rec < 10:
        raise ParameterError("too few recorded points to estimate timescales")
    tau_sub = integrated_time(tracer) * record_every
    tau_fl = float(np.mean([integrated_time(sub_out[:, j]) for j in range(m)])) * record_every
    if check_length and steps < 50 * tau_fl:
        raise ParameterError(f"steps={steps} < 50 * tau_fl ({tau_fl:.3g}); lengthen the run")
    return ExchangeTrajectory(m, n, E_total, steps, exchange_rate, record_every,
                              np.arange(1, rec + 1) * record_every, sub_out, tracer, energies,
                              initial_sum, float(tau_sub), float(tau_fl), units.k)


def finite_bath_subsystem_variance(m: int, n: int, E_total: float) -> float:
    """Variance of one subsystem's energy under the uniform-simplex law.

    The subsystem share is Beta(n, (m-1) n); the second moment is integrated
    numerically rather than taken from the Beta closed form.
    """
    from scipy import stats

    dist = stats.beta(n, (m - 1) * n)
    mean = integrate.quad(lambda x: x * dist.pdf(x), 0, 1, limit=200, epsabs=0, epsrel=1e-12)[0]
    second = integrate.quad(lambda x: x * x * dist.pdf(x), 0, 1, limit=200, epsabs=0, epsrel=1e-12)[0]
    return E_total**2 * (second - mean**2)


def write_trajectory_csv(traj: ExchangeTrajectory, path) -> None:
    """Columns: step, subsystem_id, energy, T_hat."""
    T = traj.temperature_estimates
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "subsystem_id", "energy", "T_hat"])
        for i, step in enumerate(traj.times):
            for j in range(traj.m):
                writer.writerow([int(step), j, repr(float(traj.subsystem_energies[i, j])), repr(float(T[i, j]))])
