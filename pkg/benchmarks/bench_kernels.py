"""Compare the compiled and pure-Python Monte Carlo kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--flips N] [--steps N] [--repeat K]

Both kernels see identical inputs; the script also confirms their outputs
agree bit for bit and reports the best-of-K wall time and the speedup.
"""

import argparse
import time

import numpy as np

from turlab import _kernels
from turlab.ensembles import IsingChain


def metropolis_case(flips, n=64, seed=0):
    rng = np.random.default_rng(seed)
    spins0 = np.where(rng.random(n) < 0.5, 1, -1).astype(np.int8)
    words = rng.bit_generator.random_raw(flips)
    accept = IsingChain(n, 1.0, 0.2)._accept_table(0.4)
    s = spins0.astype(np.int64)
    bond0, mag0 = int(np.sum(s * np.roll(s, -1))), int(s.sum())
    thin = n

    def run():
        spins = spins0.copy()
        b_out = np.empty(flips // thin, np.int64)
        m_out = np.empty(flips // thin, np.int64)
        bond, mag = _kernels.metropolis_chain(spins, words, accept, thin, b_out, m_out, bond0, mag0)
        return spins, b_out, m_out, np.array([bond, mag])

    return run


def exchange_case(steps, units=256, groups=4, seed=0):
    rng = np.random.default_rng(seed)
    energies0 = rng.random(units)
    first = rng.integers(0, units, steps).astype(np.int64)
    second = ((first + 1 + rng.integers(0, units - 1, steps)) % units).astype(np.int64)
    frac = rng.random(steps)
    every = 100

    def run():
        energies = energies0.copy()
        sub = np.empty((steps // every, groups))
        tracer = np.empty(steps // every)
        _kernels.exchange_apply(energies, first, second, frac, every, units // groups, sub, tracer)
        return energies, sub, tracer

    return run


def best_time(func, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = func()
        best = min(best, time.perf_counter() - t)
    return best, out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--flips", type=int, default=200_000)
    parser.add_argument("--steps", type=int, default=200_000)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)

    if not _kernels.HAVE_COMPILED:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
    saved = _kernels.backend()
    print(f"{'kernel':<12} {'work':>10} {'compiled s':>12} {'python s':>12} {'speedup':>9}  identical")
    try:
        for name, case, work in (("metropolis", metropolis_case(args.flips), args.flips),
                                 ("exchange", exchange_case(args.steps), args.steps)):
            timings = {}
            outputs = {}
            for backend in ("compiled", "python"):
                _kernels.use_backend(backend)
                timings[backend], outputs[backend] = best_time(case, args.repeat)
            same = all(np.array_equal(a, b) for a, b in zip(outputs["compiled"], outputs["python"]))
            print(f"{name:<12} {work:>10d} {timings['compiled']:>12.4f} {timings['python']:>12.4f} "
                  f"{timings['python'] / timings['compiled']:>8.1f}x  {same}")
    finally:
        _kernels.use_backend(saved)


if __name__ == "__main__":
    main()
