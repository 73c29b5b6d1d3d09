"""The de Broglie clock and the time-energy uncertainty chain.

Relativistic clock and matter-wave kinematics, the temperature-time map
``k T = h nu_c`` (equivalently ``t_c = h theta``), stochastic clock ensembles
with phase integration, the Mandelstam-Tamm time uncertainty
``Delta t = Delta phi / |d<phi>/dt|``, and a numerical check of every
inequality on the route from ``Delta E Delta beta >= k`` to
``Delta E Delta t >= h``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .ensembles import DomainError, EnsembleModel, Units, _GammaFamily, energy_variance
from .fluctuation import (MacrostateEnvironment, gaussian_environment, power_law_environment,
                          sample_macrostates)
from .rng import derive_rng

logger = logging.getLogger(__name__)

R_MAX = 0.2
CLIP_FLOOR = 1e-6
MAX_CLIP_RATE = 1e-3


class SuperluminalError(ValueError):
    pass


class ZeroVelocityError(ValueError):
    pass


class StationaryPhaseError(ValueError):
    pass


class ValidityError(ValueError):
    """Relative frequency spread exceeds the Taylor-validity guard ``r_max``."""


class ClippingError(RuntimeError):
    """Too many frequency draws needed positivity clipping."""


class DegenerateSlopeError(ValueError):
    pass


# -- kinematics ---------------------------------------------------------------------

@dataclass(frozen=True)
class Kinematics:
    """A particle of rest mass ``m0`` moving at velocity ``v`` (``|v| < c``).

    Velocities are signed scalars along one axis.  Note that ``v / c`` (the
    relativistic velocity ratio) is unrelated to the inverse temperature.
    """

    m0: float
    v: float
    units: Units = Units()

    def __post_init__(self):
        if not self.m0 > 0:
            raise ValueError("rest mass must be positive")
        if not abs(self.v) < self.units.c:
            raise SuperluminalError(f"|v| = {abs(self.v)} is not below c = {self.units.c}")

    @property
    def gamma(self) -> float:
        return 1.0 / math.sqrt(1.0 - (self.v / self.units.c) ** 2)

    @property
    def rest_frequency(self) -> float:
        """``nu_0 = m0 c**2 / h``."""
        return self.m0 * self.units.c**2 / self.units.h

    @property
    def momentum(self) -> float:
        return self.gamma * self.m0 * self.v

    @property
    def energy(self) -> float:
        return self.gamma * self.m0 * self.units.c**2


def clock_frequency(kin: Kinematics) -> float:
    """Moving clock: ``nu_0 * sqrt(1 - (v/c)**2)`` (time dilation)."""
    return kin.rest_frequency * math.sqrt(1.0 - (kin.v / kin.units.c) ** 2)


def wave_frequency(kin: Kinematics) -> float:
    """Lab-frame frequency of the stationary wave: ``nu_0 / sqrt(1 - (v/c)**2)``."""
    return kin.rest_frequency / math.sqrt(1.0 - (kin.v / kin.units.c) ** 2)


def phase_velocity(kin: Kinematics) -> float:
    """``c**2 / v``, signed along the particle velocity (always superluminal in magnitude)."""
    if kin.v == 0:
        raise ZeroVelocityError("phase velocity is infinite at v = 0")
    return kin.units.c**2 / kin.v


def de_broglie_wavelength(kin: Kinematics) -> float:
    """Wavelength as ``|V_ph| / nu_wave``; equals ``h / p`` identically."""
    if kin.v == 0:
        raise ZeroVelocityError("wavelength is infinite at v = 0")
    return abs(phase_velocity(kin)) / wave_frequency(kin)


def guidance_velocity(phase_gradient, phase_time_derivative: float, units: Units = Units()) -> np.ndarray:
    """Particle velocity from the wave phase, ``-c**2 grad(phi) / d_t phi``."""
    if phase_time_derivative == 0:
        raise StationaryPhaseError("time derivative of the phase vanishes")
    grad = np.asarray(phase_gradient, dtype=float)
    return -units.c**2 * grad / phase_time_derivative


# -- temperature-time map -------------------------------------------------------------

def temperature_of_clock(nu_c: float, units: Units = Units()) -> float:
    """``T = h nu_c / k``."""
    if not nu_c > 0:
        raise DomainError("clock frequency must be positive")
    return units.h * nu_c / units.k


def clock_from_theta(theta: float, units: Units = Units()) -> tuple[float, float]:
    """``(nu_c, t_c)`` with ``t_c = h theta`` (since ``beta / k = theta``)."""
    if not theta > 0:
        raise DomainError("theta must be positive")
    t_c = units.h * theta
    return 1.0 / t_c, t_c


def clock_period_uncertainty_bound(delta_E: float, units: Units = Units()) -> float:
    """Lower bound ``h / Delta E`` on the spread of the clock period."""
    if not delta_E > 0:
        raise DomainError("energy spread must be positive")
    return units.h / delta_E


# -- stochastic clocks ----------------------------------------------------------------

@dataclass(frozen=True)
class StaticDisorder:
    """Each replica keeps a constant frequency."""

    name: str = "static"


@dataclass(frozen=True)
class MeanReverting:
    """Stationary Ornstein-Uhlenbeck frequency noise with the given correlation time."""

    correlation_time: float = 1.0
    name: str = "mean-reverting"

    def __post_init__(self):
        if not self.correlation_time > 0:
            raise ValueError("correlation_time must be positive")


@dataclass(frozen=True)
class ClockProcess:
    """Ensemble of clocks around ``mean_freq`` with relative spread ``rel_spread``.

    ``dt`` defaults to ``0.01 / mean_freq`` and ``horizon`` to ``100 / mean_freq``
    plus two steps (so that ``100 t_c`` is a grid-interior time).
    """

    mean_freq: float
    rel_spread: float
    model: StaticDisorder | MeanReverting = StaticDisorder()
    dt: float | None = None
    horizon: float | None = None
    replicas: int = 1000
    seed: int = 0
    r_max: float = R_MAX

    def __post_init__(self):
        if not self.mean_freq > 0:
            raise DomainError("mean_freq must be positive")
        if not self.rel_spread > 0:
            raise ValueError("rel_spread must be positive")
        if self.rel_spread > self.r_max:
            raise ValidityError(f"rel_spread {self.rel_spread} exceeds r_max {self.r_max}")
        if self.step > 0.01 / self.mean_freq * (1 + 1e-12):
            raise ValueError("dt must not exceed 0.01 / mean_freq")
        if self.total_time < 10.0 / self.mean_freq * (1 - 1e-12):
            raise ValueError("horizon must be at least 10 / mean_freq")
        if self.replicas < 100:
            raise ValueError("at least 100 replicas are required")

    @property
    def step(self) -> float:
        return self.dt if self.dt is not None else 0.01 / self.mean_freq

    @property
    def total_time(self) -> float:
        return self.horizon if self.horizon is not None else 100.0 / self.mean_freq + 2 * self.step

    @property
    def n_steps(self) -> int:
        return int(round(self.total_time / self.step))

    @property
    def t_c(self) -> float:
        return 1.0 / self.mean_freq

    def initial_frequencies(self) -> np.ndarray:
        """Gaussian static draws, prefix-stable in the replica count."""
        z = derive_rng(self.seed, "clock/static", 0).standard_normal(self.replicas)
        return self.mean_freq * (1.0 + self.rel_spread * z)


def _clip(nu, floor):
    low = nu < floor
    n = int(np.count_nonzero(low))
    if n:
        nu = np.where(low, floor, nu)
    return nu, n


@dataclass
class PhaseTrajectoryBatch:
    """Ensemble phases ``phi = 2 pi int_0^t nu``.

    Batch statistics (``mean_phase``, ``phase_spread``, ``freq_spread``,
    ``mean_freq``) are kept at every grid time; per-replica phases and
    frequencies only at ``record_index``.
    """

    times: np.ndarray
    mean_phase: np.ndarray
    phase_spread: np.ndarray
    freq_spread: np.ndarray
    mean_freq: np.ndarray
    record_index: np.ndarray
    phases: np.ndarray
    frequencies: np.ndarray
    dt: float
    t_c: float
    clip_count: int
    draws: int

    @property
    def record_times(self) -> np.ndarray:
        return self.times[self.record_index]

    def index_of(self, t: float) -> int:
        i = int(round(t / self.dt))
        if not (0 <= i < self.times.size) or abs(self.times[i] - t) > 1e-9 * self.dt + 1e-12 * abs(t):
            raise ValueError(f"t = {t} is not a grid time")
        return i

    def write_csv(self, path) -> None:
        """Columns: time, replica, phase (recorded times only)."""
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "replica", "phase"])
            for j, i in enumerate(self.record_index):
                t = repr(float(self.times[i]))
                for r in range(self.phases.shape[0]):
                    writer.writerow([t, r, repr(float(self.phases[r, j]))])


def simulate_phases(process: ClockProcess, frequencies=None, record_index=None,
                    block: int = 256) -> PhaseTrajectoryBatch:
    """Integrate clock phases with the trapezoid rule from ``phi(0) = 0``.

    ``frequencies`` optionally replaces the process's own Gaussian initial
    draws (one per replica).  Under :class:`MeanReverting` each frequency then
    follows the exact OU update toward ``process.mean_freq`` with stationary
    spread ``rel_spread * mean_freq``; every replica has its own noise stream.
    """
    dt = process.step
    n = process.n_steps
    mu = process.mean_freq
    floor = CLIP_FLOOR * mu
    nu = process.initial_frequencies() if frequencies is None else np.array(frequencies, dtype=float)
    R = nu.size
    nu, clipped = _clip(nu, floor)
    draws = R
    if record_index is None:
        record_index = np.unique(np.linspace(0, n, 201).round().astype(np.int64))
    record_index = np.asarray(record_index, dtype=np.int64)
    if record_index.min() < 0 or record_index.max() > n:
        raise ValueError("record indices outside the time grid")
    rec_pos = {int(i): j for j, i in enumerate(record_index)}

    times = np.arange(n + 1) * dt
    mean_phase = np.empty(n + 1)
    phase_spread = np.empty(n + 1)
    freq_spread = np.empty(n + 1)
    mean_freq = np.empty(n + 1)
    phases = np.empty((R, record_index.size))
    freqs = np.empty((R, record_index.size))
    phi = np.zeros(R)
    two_pi_half_dt = math.pi * dt

    mr = isinstance(process.model, MeanReverting)
    if mr:
        a = math.exp(-dt / process.model.correlation_time)
        kick = process.rel_spread * mu * math.sqrt(1.0 - a * a)
        gens = [derive_rng(process.seed, "clock/ou", r) for r in range(R)]
        noise = None
    static_spread = float(nu.std())
    static_mean = float(nu.mean())

    def record(i):
        mean_phase[i] = phi.mean()
        phase_spread[i] = phi.std()
        if mr:
            freq_spread[i] = nu.std()
            mean_freq[i] = nu.mean()
        else:
            freq_spread[i] = static_spread
            mean_freq[i] = static_mean
        j = rec_pos.get(i)
        if j is not None:
            phases[:, j] = phi
            freqs[:, j] = nu

    record(0)
    for i in range(1, n + 1):
        if mr:
            k = (i - 1) % block
            if k == 0:
                b = min(block, n - i + 1)
                noise = np.stack([g.standard_normal(b) for g in gens], axis=1)
            new = mu + (nu - mu) * a + kick * noise[k]
            new, c = _clip(new, floor)
            clipped += c
            draws += R
            phi = phi + two_pi_half_dt * (nu + new)
            nu = new
        else:
            phi = phi + (2.0 * two_pi_half_dt) * nu
        record(i)
    if clipped > MAX_CLIP_RATE * draws:
        raise ClippingError(f"{clipped} of {draws} frequency draws were clipped (> 0.1%)")
    return PhaseTrajectoryBatch(times, mean_phase, phase_spread, freq_spread, mean_freq, record_index,
                                phases, freqs, dt, process.t_c, clipped, draws)


def _slope(batch: PhaseTrajectoryBatch, i: int) -> float:
    if not 0 < i < batch.times.size - 1:
        raise ValueError("t must be a grid-interior time")
    return (batch.mean_phase[i + 1] - batch.mean_phase[i - 1]) / (2.0 * batch.dt)


def time_uncertainty(batch: PhaseTrajectoryBatch, t: float) -> float:
    """Mandelstam-Tamm ``Delta t = Delta phi(t) / |d<phi>/dt|`` for ``t >= t_c``."""
    if t < batch.t_c * (1 - 1e-12):
        raise DomainError(f"t = {t} is below the clock period t_c = {batch.t_c}")
    i = batch.index_of(t)
    slope = abs(_slope(batch, i))
    if slope < 1e-12 * abs(batch.mean_phase[i]) or slope == 0:
        raise DegenerateSlopeError("mean phase is not advancing")
    return float(batch.phase_spread[i] / slope)


# -- Taylor remainders ----------------------------------------------------------------

@dataclass
class TaylorReport:
    rel_spread: float
    scale: float
    mean_remainder: float
    spread_remainder: float
    C_mean: float
    C_spread: float
    C_max: float
    passed: bool


def taylor_remainder_check(process: ClockProcess, C_max: float = 2.0, frequencies=None) -> TaylorReport:
    """Compare ``<1/nu>`` with ``1/<nu>`` and ``Delta(1/nu)`` with ``Delta nu / <nu>**2``.

    Both remainders are measured on the replica ensemble and divided by
    ``Delta nu**2 / <nu>**3`` to give the fitted constants ``C_mean`` and
    ``C_spread``; the check passes when both are at most ``C_max``.
    """
    if process.rel_spread > process.r_max:
        raise ValidityError(f"rel_spread {process.rel_spread} exceeds r_max {process.r_max}")
    nu = process.initial_frequencies() if frequencies is None else np.asarray(frequencies, dtype=float)
    nu, clipped = _clip(nu, CLIP_FLOOR * process.mean_freq)
    if clipped > MAX_CLIP_RATE * nu.size:
        raise ClippingError("too many nonpositive frequencies")
    m = nu.mean()
    s = nu.std()
    inv = 1.0 / nu
    scale = s * s / m**3
    r1 = abs(inv.mean() - 1.0 / m)
    r2 = abs(inv.std() - s / m**2)
    c1 = r1 / scale
    c2 = r2 / scale
    return TaylorReport(float(s / m), float(scale), float(r1), float(r2), float(c1), float(c2), C_max,
                        bool(c1 <= C_max and c2 <= C_max))


# -- the chain --------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianBetaSpec:
    """Gaussian energy with a linear inverse-temperature response.

    ``E ~ N(E_mean, delta_E**2)`` and ``theta = theta_mean - product (E - E_mean) / delta_E**2``,
    so ``Delta E Delta beta = product * k``.  With ``product = 1`` this is
    exactly the local inverse temperature of the Gaussian fluctuation model.
    """

    theta_mean: float
    delta_E: float
    product: float = 1.0
    E_mean: float = 0.0

    def __post_init__(self):
        if not (self.theta_mean > 0 and self.delta_E > 0 and self.product > 0):
            raise ValueError("theta_mean, delta_E and product must be positive")


@dataclass
class InequalityRecord:
    name: str
    lhs: float
    rhs: float
    margin: float
    passed: bool
    band: float = 0.0
    t: float | None = None

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "margin": self.margin, "pass": self.passed}


@dataclass
class ChainReport:
    records: list
    taylor: InequalityRecord
    min_product: float
    min_product_sigma: float
    epsilon_mc: float
    t_c: float
    delta_E: float
    delta_beta: float
    rel_spread: float
    process: str
    replicas: int
    seed: int
    clip_count: int
    sweep: dict = field(default_factory=dict, repr=False)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def record(self, name: str) -> InequalityRecord:
        for r in self.records + [self.taylor]:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "records": [r.to_dict() for r in self.records],
            "taylor": self.taylor.to_dict(),
            "min_product": self.min_product,
            "min_product_sigma": self.min_product_sigma,
            "epsilon_mc": self.epsilon_mc,
            "t_c": self.t_c,
            "delta_E": self.delta_E,
            "delta_beta": self.delta_beta,
            "rel_spread": self.rel_spread,
            "process": self.process,
            "replicas": self.replicas,
            "seed": self.seed,
            "clip_count": self.clip_count,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


CHAIN_RECORDS = ("clock_period_bound", "integral_inequality", "time_precision", "time_energy")


def _draw_source(source, theta, replicas, seed, units):
    """Per-replica energies and ``theta`` values plus the spread ``Delta E`` used in the bounds."""
    if isinstance(source, GaussianBetaSpec):
        env = gaussian_environment(source.E_mean, source.delta_E, source.theta_mean)
        s = sample_macrostates(env, replicas, seed=seed, units=units)
        thetas = source.theta_mean - source.product * (s.energies - source.E_mean) / source.delta_E**2
        return s.energies, thetas, source.delta_E, True
    if isinstance(source, _GammaFamily):
        if theta is None:
            raise ValueError("theta is required for an ensemble model")
        env = power_law_environment(source.alpha - 1.0, theta)
        s = sample_macrostates(env, replicas, seed=seed, units=units)
        return s.energies, s.local_betas / units.k, math.sqrt(energy_variance(source, theta)), True
    if isinstance(source, EnsembleModel):
        raise TypeError(f"{source.name} has no smooth entropy, so the local inverse temperature is undefined")
    if isinstance(source, MacrostateEnvironment):
        s = sample_macrostates(source, replicas, seed=seed, units=units)
        return s.energies, s.local_betas / units.k, float(s.energies.std()), False
    raise TypeError("source must be a GaussianBetaSpec, a continuous ensemble model or a MacrostateEnvironment")


def _sweep_index(t_c, dt, n, points):
    lo = int(math.ceil(t_c / dt - 1e-9))
    hi = min(int(math.floor(100.0 * t_c / dt + 1e-9)), n - 1)
    if hi <= lo:
        raise ValueError("horizon too short for the t sweep")
    return np.unique(np.geomspace(lo, hi, points).round().astype(np.int64))


def _chain_quantities(E, freqs_at, phases_at, slope, delta_E, exact_dE, units):
    """Inequality sides at each swept time for one (possibly resampled) replica set."""
    dE = delta_E if exact_dE else E.std()
    periods = 1.0 / freqs_at                     # t_c per replica (= h theta)
    dtc = periods.std(axis=0)
    mean_nu = freqs_at.mean(axis=0)
    spread_int = phases_at.std(axis=0) / (2 * math.pi)
    dt_mt = phases_at.std(axis=0) / np.abs(slope)
    bound = units.h / dE
    return {
        "clock_period_bound": (dtc, np.full_like(dtc, bound)),
        "integral_inequality": (spread_int / mean_nu, dtc),
        "time_precision": (dt_mt, dtc),
        "time_energy": (dE * dt_mt, np.full_like(dtc, units.h)),
    }


def chain_verify(source, theta: float | None = None, process_model=StaticDisorder(), horizon: float | None = None,
                 replicas: int = 20000, seed: int = 0, units: Units = Units(), n_boot: int = 200,
                 points: int = 60, r_max: float = R_MAX, allow_invalid: bool = False,
                 n_sigma: float = 3.0) -> ChainReport:
    """Run the energy-spread to time-uncertainty chain and record every inequality.

    Per replica an energy and a local ``theta`` are drawn from ``source``, the
    clock frequency is ``nu_c = 1 / (h theta)``, phases are integrated, and at
    ``points`` log-spaced grid times in ``[t_c, 100 t_c]`` (``t_c = 1/<nu>``)
    four inequalities are evaluated:

    * ``clock_period_bound``: ``Delta t_c >= h / Delta E``
    * ``integral_inequality``: ``Delta(int nu) / <nu> >= Delta(1/nu)``
    * ``time_precision``: ``Delta t >= Delta t_c``
    * ``time_energy``: ``Delta E Delta t >= h``

    A record passes when its margin at every swept time is at least
    ``-n_sigma`` bootstrap standard errors; the stored lhs/rhs/margin are those
    of the worst time.  Failures are recorded, not raised.  ``Delta E`` is the
    exact model spread when the source provides one.
    """
    E, thetas, delta_E, exact_dE = _draw_source(source, theta, replicas, seed, units)
    with np.errstate(divide="ignore"):
        nu = np.where(thetas > 0, 1.0 / (units.h * np.where(thetas > 0, thetas, 1.0)), 0.0)
    mean_freq = float(nu[thetas > 0].mean())
    rel = float(nu.std() / nu.mean())
    if rel > r_max and not allow_invalid:
        raise ValidityError(f"relative frequency spread {rel:.4g} exceeds r_max {r_max}")
    process = ClockProcess(mean_freq=mean_freq, rel_spread=rel, model=process_model, horizon=horizon,
                           replicas=replicas, seed=seed, r_max=math.inf if allow_invalid else r_max)
    idx = _sweep_index(process.t_c, process.step, process.n_steps, points)
    batch = simulate_phases(process, frequencies=nu, record_index=idx)
    slope = np.array([_slope(batch, int(i)) for i in idx])
    times = batch.times[idx]

    quantities = _chain_quantities(E, batch.frequencies, batch.phases, slope, delta_E, exact_dE, units)
    rng = derive_rng(seed, "bootstrap/chain", 0)
    boot = {name: [] for name in CHAIN_RECORDS}
    boot_prod = []
    for _ in range(n_boot):
        sel = rng.integers(0, replicas, size=replicas)
        q = _chain_quantities(E[sel], batch.frequencies[sel], batch.phases[sel], slope, delta_E, exact_dE, units)
        for name in CHAIN_RECORDS:
            boot[name].append(q[name][0] - q[name][1])
        boot_prod.append(q["time_energy"][0] / units.h)

    records = []
    sweep = {"t": times}
    for name in CHAIN_RECORDS:
        lhs, rhs = quantities[name]
        margin = lhs - rhs
        band = n_sigma * np.std(np.asarray(boot[name]), axis=0, ddof=1)
        ok = margin >= -band
        worst = int(np.argmin(margin / np.where(band > 0, band, 1.0)))
        records.append(InequalityRecord(name, float(lhs[worst]), float(rhs[worst]), float(margin[worst]),
                                        bool(ok.all()), float(band[worst]), float(times[worst])))
        sweep[name] = {"lhs": lhs, "rhs": rhs, "margin": margin, "band": band}
        if not ok.all():
            level = logging.INFO if isinstance(process_model, MeanReverting) else logging.WARNING
            logger.log(level, "%s violated at %d of %d swept times (%s)", name, int((~ok).sum()), ok.size,
                       process_model.name)

    product = quantities["time_energy"][0] / units.h
    k_min = int(np.argmin(product))
    prod_sigma = float(np.std(np.asarray(boot_prod)[:, k_min], ddof=1))
    min_product = float(product[k_min])

    tay = taylor_remainder_check(process, frequencies=nu)
    bound = tay.C_max * tay.scale
    worst_rem = max(tay.mean_remainder, tay.spread_remainder)
    taylor = InequalityRecord("taylor_remainder", bound, worst_rem, bound - worst_rem, tay.passed)

    delta_beta = units.k * float(thetas.std())
    return ChainReport(records, taylor, min_product, prod_sigma, n_sigma * prod_sigma / min_product,
                       process.t_c, float(delta_E), delta_beta, rel, process_model.name, replicas, seed,
                       batch.clip_count, sweep)
