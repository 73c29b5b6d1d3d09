"""Small statistical helpers shared by the samplers and the verification checks."""

from __future__ import annotations

import numpy as np


def autocorrelation(x) -> np.ndarray:
    """Normalised autocorrelation function of a 1-d series (FFT based)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least two points")
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, n=size)
    acf = np.fft.irfft(f * np.conj(f), n=size)[:n]
    if acf[0] == 0.0:
        out = np.zeros(n)
        out[0] = 1.0
        return out
    return acf / acf[0]


def integrated_time(x, c: float = 5.0) -> float:
    """Integrated autocorrelation time ``1 + 2 * sum(rho_k)``.

    Uses Sokal's automatic window: the smallest ``W`` with ``W >= c * tau(W)``.
    An i.i.d. series gives values close to 1.  A constant series returns 1.
    """
    rho = autocorrelation(x)
    taus = 2.0 * np.cumsum(rho) - 1.0
    window = np.arange(taus.size) < c * taus
    idx = np.argmin(window) if not window.all() else taus.size - 1
    return float(max(taus[idx], 1e-12))


def bootstrap(statistic, data, rng: np.random.Generator, n_boot: int = 200) -> np.ndarray:
    """Evaluate ``statistic`` on ``n_boot`` row-resamples of ``data``.

    ``data`` may be a single array or a tuple of equal-length arrays resampled
    jointly.  Returns the array of bootstrap replicates.
    """
    arrays = data if isinstance(data, tuple) else (data,)
    n = len(arrays[0])
    out = []
    for _ in range(n_boot):
        idx = rng.integers(0, n, size=n)
        out.append(statistic(*(a[idx] for a in arrays)))
    return np.asarray(out)


def standard_error_of_variance(x) -> float:
    """Standard error of the unbiased sample variance (fourth-moment formula)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    d = x - x.mean()
    m2 = np.mean(d**2)
    m4 = np.mean(d**4)
    return float(np.sqrt(max(m4 - (n - 3) / (n - 1) * m2**2, 0.0) / n))


def loglog_slope(x, y) -> float:
    """Least-squares slope of log|y| against log x."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.abs(np.asarray(y, dtype=float)))
    return float(np.polyfit(lx, ly, 1)[0])
