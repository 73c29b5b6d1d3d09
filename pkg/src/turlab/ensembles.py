"""Exactly solvable canonical-ensemble models.

All internal formulas use ``theta = 1/(k T)`` (inverse energy).  The canonical
law of the energy is

    P(E | theta) = sigma(E) * exp(-theta * E) / Z(theta)

Density-of-states constants
---------------------------
IdealGas / HarmonicOscillators
    ``sigma(E) = E**(alpha - 1)`` exactly (additive log-offset 0), so that
    ``Z(theta) = Gamma(alpha) * theta**(-alpha)``.  ``alpha = d*N/2`` for the
    ideal gas and ``alpha = N`` for classical 1-d oscillators.
TwoLevel / IsingChain
    Discrete spectra; :meth:`degeneracies` returns exact integer counts and
    ``Z`` is the plain sum over microstates.
"""

from __future__ import annotations

import math
import warnings
import dataclasses
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from . import _kernels
from .rng import derive_rng
from .stats import integrated_time


class DivergenceError(ValueError):
    """Partition function diverges for the requested theta."""


class DomainError(ValueError):
    """Argument outside the model's support or parameter domain."""


class ConvergenceWarning(RuntimeWarning):
    """Markov-chain samples look autocorrelated."""


@dataclass(frozen=True)
class Units:
    """Boltzmann constant ``k``, Planck constant ``h`` and light speed ``c``."""

    k: float = 1.0
    h: float = 1.0
    c: float = 1.0

    def __post_init__(self):
        for name in ("k", "h", "c"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"unit constant {name} must be positive, got {value!r}")


def theta_from_temperature(T: float, units: Units = Units()) -> float:
    if T <= 0:
        raise DomainError("temperature must be positive")
    return 1.0 / (units.k * T)


def temperature_from_theta(theta: float, units: Units = Units()) -> float:
    if theta <= 0:
        raise DomainError("theta must be positive")
    return 1.0 / (units.k * theta)


def beta_from_theta(theta: float, units: Units = Units()) -> float:
    """The inverse temperature ``beta = 1/T`` that carries ``k`` explicitly."""
    return units.k * theta


def theta_from_beta(beta: float, units: Units = Units()) -> float:
    return beta / units.k


class EnsembleModel:
    """Base class; concrete models are frozen dataclasses."""

    name: str = "model"
    bounded: bool = False
    continuous: bool = True

    def check_theta(self, theta: float) -> float:
        theta = float(theta)
        if not np.isfinite(theta):
            raise DomainError(f"theta must be finite, got {theta}")
        if self.bounded:
            if theta < 0:
                raise DomainError(f"{self.name}: theta must be >= 0, got {theta}")
        elif theta <= 0:
            raise DivergenceError(f"{self.name}: partition function diverges for theta={theta} <= 0")
        return theta

    def params(self) -> dict:
        raise NotImplementedError

    def energy_bounds(self) -> tuple[float, float]:
        raise NotImplementedError

    def log_partition(self, theta: float) -> float:
        raise NotImplementedError

    def mean_energy(self, theta: float) -> float:
        raise NotImplementedError

    def energy_variance(self, theta: float) -> float:
        raise NotImplementedError

    def in_support(self, E) -> np.ndarray:
        raise NotImplementedError

    def sample(self, theta: float, count: int, rng: np.random.Generator, **options) -> tuple[np.ndarray, dict]:
        raise NotImplementedError


class _GammaFamily(EnsembleModel):
    """Power-law density of states ``sigma(E) = E**(alpha-1)``; E ~ Gamma(alpha, 1/theta)."""

    @property
    def alpha(self) -> float:
        raise NotImplementedError

    def energy_bounds(self):
        return 0.0, math.inf

    def in_support(self, E):
        E = np.asarray(E, dtype=float)
        return np.isfinite(E) & (E > 0)

    def log_density_of_states(self, E):
        E = np.asarray(E, dtype=float)
        if np.any(~self.in_support(E)):
            raise DomainError(f"{self.name}: energy must lie in the open interval (0, inf)")
        out = (self.alpha - 1.0) * np.log(E)
        return float(out) if out.ndim == 0 else out

    def log_partition(self, theta):
        theta = self.check_theta(theta)
        return float(special.gammaln(self.alpha) - self.alpha * math.log(theta))

    def mean_energy(self, theta):
        theta = self.check_theta(theta)
        return self.alpha / theta

    def energy_variance(self, theta):
        theta = self.check_theta(theta)
        return self.alpha / theta**2

    def sample(self, theta, count, rng, **options):
        theta = self.check_theta(theta)
        return rng.gamma(self.alpha, 1.0 / theta, size=count), {"method": "gamma"}


@dataclass(frozen=True)
class IdealGas(_GammaFamily):
    N: int
    d: int = 3
    name: str = dataclasses.field(default="ideal_gas", init=False, repr=False)

    def __post_init__(self):
        if self.N < 1 or self.d < 1:
            raise ValueError("IdealGas requires N >= 1 and d >= 1")

    @property
    def alpha(self):
        return self.d * self.N / 2.0

    def params(self):
        return {"N": self.N, "d": self.d}


@dataclass(frozen=True)
class HarmonicOscillators(_GammaFamily):
    N: int
    name: str = dataclasses.field(default="harmonic", init=False, repr=False)

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("HarmonicOscillators requires N >= 1")

    @property
    def alpha(self):
        return float(self.N)

    def params(self):
        return {"N": self.N}


@dataclass(frozen=True)
class TwoLevel(EnsembleModel):
    """``N`` independent units, each with energies 0 and ``gap``."""

    N: int
    gap: float = 1.0
    name: str = dataclasses.field(default="two_level", init=False, repr=False)
    bounded = True
    continuous = False

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("TwoLevel requires N >= 1")
        if not self.gap > 0:
            raise ValueError("TwoLevel requires gap > 0")

    def params(self):
        return {"N": self.N, "gap": self.gap}

    def energy_bounds(self):
        return 0.0, self.N * self.gap

    def _p(self, theta):
        # excitation probability per unit
        return float(special.expit(-theta * self.gap))

    def log_partition(self, theta):
        theta = self.check_theta(theta)
        return self.N * float(np.logaddexp(0.0, -theta * self.gap))

    def mean_energy(self, theta):
        theta = self.check_theta(theta)
        return self.N * self.gap * self._p(theta)

    def energy_variance(self, theta):
        theta = self.check_theta(theta)
        p = self._p(theta)
        return self.N * self.gap**2 * p * (1.0 - p)

    def degeneracies(self):
        k = np.arange(self.N + 1)
        return k * self.gap, [math.comb(self.N, int(i)) for i in k]

    def _levels(self, E):
        E = np.asarray(E, dtype=float)
        n = E / self.gap
        idx = np.rint(n)
        ok = np.isfinite(n) & (np.abs(n - idx) <= 1e-9 * np.maximum(1.0, np.abs(n))) & (idx >= 0) & (idx <= self.N)
        return idx, ok

    def in_support(self, E):
        return self._levels(E)[1]

    def log_degeneracy(self, E):
        idx, ok = self._levels(E)
        if np.any(~ok):
            raise DomainError("energy is not a level of the two-level system")
        out = special.gammaln(self.N + 1) - special.gammaln(idx + 1) - special.gammaln(self.N - idx + 1)
        return float(out) if np.ndim(out) == 0 else out

    def sample(self, theta, count, rng, **options):
        theta = self.check_theta(theta)
        return self.gap * rng.binomial(self.N, self._p(theta), size=count).astype(float), {"method": "binomial"}


@dataclass(frozen=True)
class IsingChain(EnsembleModel):
    """Periodic 1-d Ising chain, ``E = -J sum s_i s_{i+1} - field sum s_i``."""

    N: int
    J: float = 1.0
    field: float = 0.0
    boundary: str = "periodic"
    name: str = dataclasses.field(default="ising", init=False, repr=False)
    bounded = True
    continuous = False

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("IsingChain requires N >= 1")
        if self.boundary != "periodic":
            raise ValueError("only periodic boundaries are supported")

    def params(self):
        return {"N": self.N, "J": self.J, "field": self.field}

    def energy(self, spins) -> np.ndarray:
        """Energy of spin configurations (last axis = sites)."""
        s = np.asarray(spins)
        bonds = np.sum(s * np.roll(s, -1, axis=-1), axis=-1)
        return -self.J * bonds - self.field * np.sum(s, axis=-1)

    def _energy_from_counts(self, bond, mag):
        return -self.J * np.asarray(bond, dtype=float) - self.field * np.asarray(mag, dtype=float)

    # -- transfer matrix ---------------------------------------------------
    def _log_lambda_and_ratio(self, theta):
        a = theta * self.J
        b = abs(theta * self.field)
        eb = math.exp(-2.0 * b)
        c = 0.5 * (1.0 + eb)
        s = 0.5 * (1.0 - eb)
        q = math.sqrt(s * s + math.exp(-4.0 * a - 2.0 * b))
        log_lp = a + b + math.log(c + q)
        ratio = eb * (-math.expm1(-4.0 * a)) / (c + q) ** 2
        return log_lp, ratio

    def log_partition(self, theta):
        """``ln Tr T**N`` from the two transfer-matrix eigenvalues."""
        theta = self.check_theta(theta)
        log_lp, ratio = self._log_lambda_and_ratio(theta)
        return self.N * log_lp + math.log1p(ratio**self.N)

    def _moments(self, theta):
        # Block upper-triangular power: blocks (0,1) and (0,2) of M**N are the
        # first derivative and half the second derivative of T(theta)**N.
        theta = self.check_theta(theta)
        log_lp, _ = self._log_lambda_and_ratio(theta)
        coeff = np.array([[self.J + self.field, -self.J], [-self.J, self.J - self.field]])

        T = np.exp(theta * coeff - log_lp)

        def pass_(shift):
            # the shift enters only the derivative factors, never the weights
            g = coeff + shift / self.N
            T1 = g * T
            T2 = 0.5 * g * g * T
            M = np.zeros((6, 6))
            for r in range(3):
                M[2 * r:2 * r + 2, 2 * r:2 * r + 2] = T
            M[0:2, 2:4] = T1
            M[2:4, 4:6] = T1
            M[0:2, 4:6] = T2
            P = np.linalg.matrix_power(M, self.N)
            z0 = np.trace(P[0:2, 0:2])
            z1 = np.trace(P[0:2, 2:4])
            z2 = 2.0 * np.trace(P[0:2, 4:6])
            return z1 / z0, z2 / z0

        m1, _ = pass_(0.0)
        mean = -m1
        d1, d2 = pass_(mean)
        return mean, max(d2 - d1 * d1, 0.0)

    def mean_energy(self, theta):
        return float(self._moments(theta)[0])

    def energy_variance(self, theta):
        return float(self._moments(theta)[1])

    # -- exact spectrum ------------------------------------------------------
    def _wall_up_counts(self):
        """Yield ``(walls, ups, count)`` over all periodic configurations."""
        N = self.N
        yield 0, 0, 1
        yield 0, N, 1
        for w in range(2, N + 1, 2):
            r = w // 2
            for u in range(r, N - r + 1):
                yield w, u, N * math.comb(u - 1, r - 1) * math.comb(N - u - 1, r - 1) // r

    @lru_cache(maxsize=None)
    def degeneracies(self):
        """Distinct energies and their exact microstate counts."""
        table = {}
        for w, u, count in self._wall_up_counts():
            E = -self.J * (self.N - 2 * w) - self.field * (2 * u - self.N)
            key = round(E, 9)
            prev = table.get(key)
            table[key] = (E, count) if prev is None else (prev[0], prev[1] + count)
        items = sorted(table.values())
        return np.array([e for e, _ in items]), [c for _, c in items]

    def energy_bounds(self):
        levels, _ = self.degeneracies()
        return float(levels[0]), float(levels[-1])

    def _lookup(self, E):
        levels, _ = self.degeneracies()
        E = np.atleast_1d(np.asarray(E, dtype=float))
        pos = np.clip(np.searchsorted(levels, E), 0, len(levels) - 1)
        best = pos.copy()
        lower = np.clip(pos - 1, 0, len(levels) - 1)
        closer = np.abs(levels[lower] - E) < np.abs(levels[pos] - E)
        best[closer] = lower[closer]
        scale = max(1.0, abs(self.J), abs(self.field)) * self.N
        ok = np.abs(levels[best] - E) <= 1e-9 * scale
        return best, ok

    def in_support(self, E):
        best, ok = self._lookup(E)
        return ok if np.ndim(E) else ok[0]

    def log_degeneracy(self, E):
        best, ok = self._lookup(E)
        if np.any(~ok):
            raise DomainError("energy is not a level of the Ising chain")
        _, counts = self.degeneracies()
        out = np.array([math.log(counts[i]) for i in best])
        return float(out[0]) if np.ndim(E) == 0 else out

    # -- Metropolis sampler ----------------------------------------------------
    def _accept_table(self, theta):
        table = np.empty((2, 3))
        for si, s in enumerate((-1, 1)):
            for ni, nb in enumerate((-2, 0, 2)):
                dE = 2.0 * s * (self.J * nb + self.field)
                table[si, ni] = 1.0 if dE <= 0 else math.exp(-theta * dE)
        return table

    def _run(self, spins, theta, flips, thin, rng, bond, mag, chunk=1 << 20):
        accept = self._accept_table(theta)
        bonds, mags = [], []
        remaining = flips
        while remaining > 0:
            step = max(thin, chunk - chunk % thin) if thin > 0 else chunk
            n = min(step, remaining)
            words = rng.bit_generator.random_raw(n)
            nrec = n // thin if thin > 0 else 0
            b_out = np.empty(nrec, dtype=np.int64)
            m_out = np.empty(nrec, dtype=np.int64)
            bond, mag = _kernels.metropolis_chain(spins, words, accept, thin, b_out, m_out, bond, mag)
            bonds.append(b_out)
            mags.append(m_out)
            remaining -= n
        bonds = np.concatenate(bonds) if bonds else np.empty(0, np.int64)
        mags = np.concatenate(mags) if mags else np.empty(0, np.int64)
        return bond, mag, bonds, mags

    def sample(self, theta, count, rng, burn_in_sweeps=None, thin="auto", pilot_rng=None,
               tau_threshold=1.5, **options):
        """Metropolis single-spin-flip draws.

        Burn-in defaults to ``100 * N`` sweeps.  ``thin`` is in flips; the
        default ``"auto"`` measures the integrated autocorrelation time of the
        energy on a pilot run (seeded by ``pilot_rng``) and thins by
        ``N * ceil(3 * tau)`` flips, never fewer than ``N``.  A
        :class:`ConvergenceWarning` is raised if the thinned series still has
        ``tau > tau_threshold``.
        """
        theta = self.check_theta(theta)
        N = self.N
        if N == 1:
            # two microstates; Metropolis has nothing to mix
            p_up = float(special.expit(2.0 * theta * self.field))
            up = rng.random(count) < p_up
            E = self._energy_from_counts(np.ones(count), np.where(up, 1, -1))
            return E, {"method": "exact-two-state"}
        burn = 100 * N if burn_in_sweeps is None else int(burn_in_sweeps)
        tau_pilot = None
        if thin == "auto":
            tau_pilot = self._pilot_tau(theta, pilot_rng if pilot_rng is not None else rng)
            thin = N * max(1, math.ceil(3.0 * tau_pilot))
        thin = int(thin)
        if thin < 1:
            raise ValueError("thin must be >= 1 flip")
        spins = np.where(rng.random(N) < 0.5, 1, -1).astype(np.int8)
        bond = int(np.sum(spins.astype(np.int64) * np.roll(spins, -1)))
        mag = int(spins.sum())
        bond, mag, _, _ = self._run(spins, theta, burn * N, 0, rng, bond, mag)
        _, _, bonds, mags = self._run(spins, theta, count * thin, thin, rng, bond, mag)
        E = self._energy_from_counts(bonds, mags)
        tau = integrated_time(E) if count >= 50 else float("nan")
        if count >= 50 and tau > tau_threshold:
            warnings.warn(
                f"Ising chain energies have integrated autocorrelation time {tau:.2f} "
                f"(> {tau_threshold}) at thin={thin} flips",
                ConvergenceWarning,
                stacklevel=3,
            )
        info = {"method": "metropolis", "burn_in_sweeps": burn, "thin_flips": thin, "tau_int": tau}
        if tau_pilot is not None:
            info["tau_pilot_sweeps"] = tau_pilot
        return E, info

    def _pilot_tau(self, theta, rng, sweeps=4000):
        spins = np.where(rng.random(self.N) < 0.5, 1, -1).astype(np.int8)
        bond = int(np.sum(spins.astype(np.int64) * np.roll(spins, -1)))
        mag = int(spins.sum())
        bond, mag, _, _ = self._run(spins, theta, 100 * self.N * self.N, 0, rng, bond, mag)
        _, _, bonds, mags = self._run(spins, theta, sweeps * self.N, self.N, rng, bond, mag)
        return integrated_time(self._energy_from_counts(bonds, mags))


MODELS = {
    "ideal_gas": IdealGas,
    "harmonic": HarmonicOscillators,
    "two_level": TwoLevel,
    "ising": IsingChain,
}


def make_model(name: str, **params) -> EnsembleModel:
    try:
        cls = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return cls(**params)


@dataclass
class EnergySample:
    """Energy draws with the model, seed and sampler settings needed to regenerate them."""

    values: np.ndarray
    model: EnsembleModel
    theta: float
    seed: int
    replica_id: int
    info: dict = dataclasses.field(default_factory=dict)

    def __len__(self):
        return len(self.values)


# -- module-level operations -------------------------------------------------

def log_partition(model: EnsembleModel, theta: float) -> float:
    return model.log_partition(theta)


def mean_energy(model: EnsembleModel, theta: float) -> float:
    """``-d ln Z / d theta``."""
    return model.mean_energy(theta)


def energy_variance(model: EnsembleModel, theta: float) -> float:
    """``d^2 ln Z / d theta^2``."""
    return model.energy_variance(theta)


def log_density_of_states(model: EnsembleModel, E):
    if not model.continuous:
        raise TypeError(f"{model.name} has a discrete spectrum; use degeneracies()")
    return model.log_density_of_states(E)


def degeneracies(model: EnsembleModel):
    if model.continuous:
        raise TypeError(f"{model.name} has a continuous spectrum; use log_density_of_states()")
    return model.degeneracies()


def canonical_log_pdf(model: EnsembleModel, E, theta: float):
    """Log density (continuous models) or log probability mass (discrete models)."""
    lz = model.log_partition(theta)
    if model.continuous:
        log_g = model.log_density_of_states(E)
    else:
        log_g = model.log_degeneracy(E)
    out = log_g - theta * np.asarray(E, dtype=float) - lz
    return float(out) if np.ndim(out) == 0 else out


def sample_energies(model: EnsembleModel, theta: float, count: int, seed: int = 0,
                    replica_id: int = 0, **options) -> EnergySample:
    """Draw ``count`` energies; bit-reproducible from ``(model, theta, seed, replica_id)``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    theta = model.check_theta(theta)
    rng = derive_rng(seed, f"energies/{model.name}", replica_id)
    if isinstance(model, IsingChain):
        options.setdefault("pilot_rng", derive_rng(seed, f"energies/{model.name}/pilot", 0))
    values, info = model.sample(theta, count, rng, **options)
    return EnergySample(np.asarray(values, dtype=float), model, theta, seed, replica_id, info)
