"""
Zipf-like key selection using the Gray et al. generator
"""

import logging
from typing import Optional

import numpy as np
from scipy import stats


logger = logging.getLogger(__name__)


class BenchConfigError(Exception):
    """Invalid benchmark workload."""
    pass


def zeta(n: int, theta: float) -> float:
    ranks = np.arange(1, n + 1, dtype=np.float64)
    return float(np.sum(ranks ** -theta))


class ZipfGenerator:
    """
    Ranks 1..n where rank r is chosen roughly in proportion to (1/r)^theta.
    theta = 0 is uniform; values close to 1 concentrate on the first ranks.
    """

    def __init__(self, n: int, theta: float, rng: Optional[np.random.Generator] = None):
        if n < 1:
            raise BenchConfigError(f"Zipf needs at least one rank, got {n}")
        if not 0.0 <= theta < 1.0:
            raise BenchConfigError(f"Zipf theta must lie in [0, 1), got {theta}")
        self.n = n
        self.theta = theta
        self.rng = rng if rng is not None else np.random.default_rng()

        self.zetan = zeta(n, theta)
        self.alpha = 1.0 / (1.0 - theta)
        self.half_pow = 0.5 ** theta
        if n > 2:
            self.eta = (1.0 - (2.0 / n) ** (1.0 - theta)) / (1.0 - zeta(2, theta) / self.zetan)
        else:
            self.eta = 1.0

    def sample(self, size: int = 1) -> np.ndarray:
        u = self.rng.random(size)
        uz = u * self.zetan
        if self.n == 1:
            return np.ones(size, dtype=np.int64)
        if self.n == 2:
            return np.where(uz < 1.0, 1, 2).astype(np.int64)

        base = np.maximum(self.eta * u - self.eta + 1.0, 0.0)
        tail = 1 + (self.n * base ** self.alpha).astype(np.int64)
        ranks = np.where(uz < 1.0, 1, np.where(uz < 1.0 + self.half_pow, 2, tail))
        return np.clip(ranks, 1, self.n)

    def select(self) -> int:
        return int(self.sample(1)[0])

    def pmf(self) -> np.ndarray:
        """Exact probability of each rank under this generator (index 0 is rank 1)."""
        if self.n == 1:
            return np.ones(1)
        head = np.zeros(self.n)
        head[0] = 1.0 / self.zetan
        head[1] = self.half_pow / self.zetan
        if self.n == 2:
            return head / head.sum()

        # For u past the first two intervals the rank is 1 + floor(n * g(u)), g increasing
        start = (1.0 + self.half_pow) / self.zetan
        bounds = np.arange(0, self.n + 1, dtype=np.float64) / self.n
        u_at = ((bounds ** (1.0 - self.theta)) - 1.0 + self.eta) / self.eta
        u_at = np.clip(u_at, start, 1.0)
        return head + np.diff(u_at)


def goodness_of_fit(generator: ZipfGenerator, draws: int) -> float:
    """Chi-square p-value of draws from the generator against its exact pmf."""
    observed = np.bincount(generator.sample(draws), minlength=generator.n + 1)[1:]
    expected = generator.pmf() * draws
    keep = expected > 0
    expected = expected[keep] * observed[keep].sum() / expected[keep].sum()
    result = stats.chisquare(observed[keep], expected)
    logger.debug(f"Zipf n={generator.n} theta={generator.theta}: chi2={result.statistic:.2f} "
                 f"p={result.pvalue:.4f}")
    return float(result.pvalue)
