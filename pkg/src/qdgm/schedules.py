"""Two-time-scale diminishing step sequences.

The gradient step alpha_k = (4/mu)/(k+1) decays harmonically; the consensus
mixing weight beta_k = (4/(1-sigma2))/(k+1)^(3/4) decays more slowly, which
is what separates the two time scales. The raw beta sequence starts above 1,
so by default it is clamped at ``beta_clamp`` to keep every update a convex
combination; pass ``beta_clamp=None`` for the raw values.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class StepSchedule:
    mu: float
    spectral_gap: float
    beta_clamp: float | None = 1.0
    _alpha_partials: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.mu <= 0.0:
            raise ValueError("mu must be positive")
        if not (0.0 < self.spectral_gap <= 1.0):
            raise ValueError("spectral gap must be in (0, 1]")
        if self.beta_clamp is not None and self.beta_clamp <= 0.0:
            raise ValueError("beta clamp must be positive (or None to disable)")
        if self._alpha_partials is None:
            self._alpha_partials = np.zeros(1)

    def alpha(self, k: int) -> float:
        """Gradient step at round k."""
        return (4.0 / self.mu) / (k + 1)

    def beta(self, k: int) -> float:
        """Consensus weight at round k, clamped unless disabled."""
        raw = (4.0 / self.spectral_gap) / float(k + 1) ** 0.75
        if self.beta_clamp is None:
            return raw
        return min(raw, self.beta_clamp)

    def alpha_sum(self, k: int) -> float:
        """Sum of alpha_t for t < k, accumulated term by term.

        All range/bin-width computations must flow through this one cached
        cumulative sum so encoder, decoder, and diagnostics agree bitwise.
        """
        if k < 0:
            raise ValueError("k must be nonnegative")
        self._ensure_partials(k)
        return float(self._alpha_partials[k])

    def _ensure_partials(self, k: int) -> None:
        if k < len(self._alpha_partials):
            return
        # Recompute the whole prefix-sum array from scratch: the values must
        # depend only on k, never on the order earlier calls grew the cache.
        grow_to = max(k + 1, 2 * len(self._alpha_partials))
        terms = (4.0 / self.mu) / np.arange(1.0, grow_to, dtype=np.float64)
        self._alpha_partials = np.concatenate([[0.0], np.cumsum(terms)])
