"""Independent reference evaluations used by the test-suite."""
import math

import numpy as np


def nt_xent_naive(z, tau):
    """Term-by-term double loop over anchors and candidates."""
    m = len(z)
    unit = [np.asarray(r, dtype=float) / math.sqrt(sum(v * v for v in r)) for r in z]

    def sim(i, j):
        return sum(a * b for a, b in zip(unit[i], unit[j]))

    total = 0.0
    for i in range(m):
        j = i + 1 if i % 2 == 0 else i - 1
        den = 0.0
        for k in range(m):
            if k != i:
                den += math.exp(sim(i, k) / tau)
        total += -math.log(math.exp(sim(i, j) / tau) / den)
    return total / m


def alignment_naive(zs, zu):
    def gram(z):
        u = [np.asarray(r, float) / math.sqrt(sum(v * v for v in r)) for r in z]
        return [[sum(a * b for a, b in zip(p, q)) for q in u] for p in u]

    ms, mu = gram(zs), gram(zu)
    n = len(zs)
    return sum((ms[i][j] - mu[i][j]) ** 2 for i in range(n) for j in range(n)) / n ** 2
