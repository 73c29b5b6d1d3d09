# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Monte Carlo inner loops.

Both kernels consume pre-drawn random numbers so that results are bit-identical
to the pure-Python versions in ``_pykernels``.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def metropolis_chain(signed char[::1] spins,
                     const cnp.uint64_t[::1] words,
                     const double[:, ::1] accept,
                     Py_ssize_t thin,
                     cnp.int64_t[::1] bonds_out,
                     cnp.int64_t[::1] mags_out,
                     cnp.int64_t bond,
                     cnp.int64_t mag):
    """Single-spin-flip Metropolis on a periodic chain (N >= 2).

    Each raw 64-bit word drives one flip attempt: the high 32 bits pick the
    site by multiply-shift, the low 32 bits give the uniform ``lo * 2**-32``.

    ``accept[(s + 1) // 2, nb // 2 + 1]`` holds min(1, exp(-theta * dE)) for a
    spin ``s`` whose neighbour sum is ``nb``.  Bond sum and magnetisation are
    tracked as integers and recorded after every ``thin`` flips (``thin <= 0``
    disables recording).  Returns the final ``(bond, mag)``.
    """
    cdef Py_ssize_t n = spins.shape[0]
    cdef Py_ssize_t nflips = words.shape[0]
    cdef Py_ssize_t f, i, left, right, rec = 0, count = 0
    cdef int s, nb, flip
    cdef cnp.uint64_t w
    cdef double u
    cdef double table[6]
    cdef signed char* sp = &spins[0]
    for f in range(6):
        table[f] = accept[f // 3, f % 3]
    with nogil:
        for f in range(nflips):
            w = words[f]
            i = <Py_ssize_t>(((w >> 32) * <cnp.uint64_t>n) >> 32)
            u = <double>(w & 0xFFFFFFFFULL) * 2.3283064365386963e-10
            left = i - 1 if i > 0 else n - 1
            right = i + 1 if i < n - 1 else 0
            s = sp[i]
            nb = sp[left] + sp[right]
            flip = u < table[((s + 1) >> 1) * 3 + (nb >> 1) + 1]
            sp[i] = <signed char>(s - 2 * s * flip)
            bond -= 2 * s * nb * flip
            mag -= 2 * s * flip
            if thin > 0:
                count += 1
                if count == thin:
                    bonds_out[rec] = bond
                    mags_out[rec] = mag
                    rec += 1
                    count = 0
    return bond, mag


def exchange_apply(double[::1] energies,
                   const cnp.int64_t[::1] first,
                   const cnp.int64_t[::1] second,
                   const double[::1] fractions,
                   Py_ssize_t record_every,
                   Py_ssize_t units_per_sub,
                   double[:, ::1] sub_out,
                   double[::1] tracer_out):
    """Pairwise uniform-fraction energy redistribution.

    The larger share is formed by multiplication and the smaller one by an
    exact (Sterbenz) subtraction, so each pair sum is preserved bit for bit.
    """
    cdef Py_ssize_t nsteps = first.shape[0]
    cdef Py_ssize_t nsub = sub_out.shape[1]
    cdef Py_ssize_t step, a, b, j, q, rec = 0, count = 0
    cdef double total, u, big, acc
    with nogil:
        for step in range(nsteps):
            a = <Py_ssize_t>first[step]
            b = <Py_ssize_t>second[step]
            total = energies[a] + energies[b]
            u = fractions[step]
            if u >= 0.5:
                big = u * total
                energies[a] = big
                energies[b] = total - big
            else:
                big = (1.0 - u) * total
                energies[b] = big
                energies[a] = total - big
            if record_every > 0:
                count += 1
                if count == record_every:
                    for j in range(nsub):
                        acc = 0.0
                        for q in range(j * units_per_sub, (j + 1) * units_per_sub):
                            acc = acc + energies[q]
                        sub_out[rec, j] = acc
                    tracer_out[rec] = energies[0]
                    rec += 1
                    count = 0
