"""Pure-Python twins of the compiled kernels (same arithmetic, same order)."""

from __future__ import annotations


def metropolis_chain(spins, words, accept, thin, bonds_out, mags_out, bond, mag):
    n = len(spins)
    spin_list = [int(s) for s in spins]
    table = [[float(x) for x in row] for row in accept]
    bond = int(bond)
    mag = int(mag)
    rec = 0
    count = 0
    for w in words.tolist():
        i = ((w >> 32) * n) >> 32
        u = (w & 0xFFFFFFFF) * 2.3283064365386963e-10
        s = spin_list[i]
        nb = spin_list[i - 1] + spin_list[(i + 1) % n]
        if u < table[(s + 1) // 2][nb // 2 + 1]:
            spin_list[i] = -s
            bond -= 2 * s * nb
            mag -= 2 * s
        if thin > 0:
            count += 1
            if count == thin:
                bonds_out[rec] = bond
                mags_out[rec] = mag
                rec += 1
                count = 0
    spins[:] = spin_list
    return bond, mag


def exchange_apply(energies, first, second, fractions, record_every, units_per_sub, sub_out, tracer_out):
    e = energies.tolist()
    nsub = sub_out.shape[1]
    rec = 0
    count = 0
    for a, b, u in zip(first.tolist(), second.tolist(), fractions.tolist()):
        total = e[a] + e[b]
        if u >= 0.5:
            big = u * total
            e[a] = big
            e[b] = total - big
        else:
            big = (1.0 - u) * total
            e[b] = big
            e[a] = total - big
        if record_every > 0:
            count += 1
            if count == record_every:
                for j in range(nsub):
                    acc = 0.0
                    for q in range(j * units_per_sub, (j + 1) * units_per_sub):
                        acc = acc + e[q]
                    sub_out[rec, j] = acc
                tracer_out[rec] = e[0]
                rec += 1
                count = 0
    energies[:] = e
