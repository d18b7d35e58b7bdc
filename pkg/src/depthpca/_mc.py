"""Seeded Monte-Carlo batching shared by the population calculators.

A panel of ``mc_n`` draws is cut into fixed-size batches, each with its
own generator spawned from ``SeedSequence(seed)``.  Batches are visited
in index order, so sums are reproducible bit for bit for a given seed
and batch size.
"""

import numpy as np

from .errors import InvalidInput

BATCH_SIZE = 50_000


def batches(mc_n, seed, batch_size=BATCH_SIZE):
    mc_n = int(mc_n)
    if mc_n < 1:
        raise InvalidInput(f"mc_n must be positive, got {mc_n}")
    nb = -(-mc_n // batch_size)
    children = np.random.SeedSequence(int(seed)).spawn(nb)
    for b, ss in enumerate(children):
        size = min(batch_size, mc_n - b * batch_size)
        yield np.random.default_rng(ss), size


class Accumulator:
    """Running sums for means and standard errors of vector-valued draws."""

    def __init__(self):
        self.n = 0
        self.s1 = 0.0
        self.s2 = 0.0

    def add(self, values):
        values = np.asarray(values, dtype=float)
        self.n += values.shape[0]
        self.s1 = self.s1 + values.sum(axis=0)
        self.s2 = self.s2 + (values * values).sum(axis=0)

    @property
    def mean(self):
        return self.s1 / self.n

    @property
    def se(self):
        var = np.maximum(self.s2 / self.n - self.mean ** 2, 0.0)
        return np.sqrt(var / max(self.n - 1, 1))
