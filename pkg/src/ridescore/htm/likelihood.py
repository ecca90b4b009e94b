"""Deviation likelihood from raw prediction errors.

The raw scores feed a long rolling window (mean rho, std sigma) and a
short recent window (mean rho_hat); the likelihood is the Gaussian tail
complement 1 - Q((rho_hat - rho) / sigma).  Until the long window fills,
the statistics use all available history.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass


def q_function(z: float) -> float:
    """Standard normal tail probability P(Z > z)."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


@dataclass(frozen=True)
class LikelihoodConfig:
    window: int = 4000
    short_window: int = 10
    sigma_floor: float = 1e-6
    # Sequence memories keep emitting sporadic prediction errors on flat
    # input; when the recent metric values are effectively constant the
    # stream is reported as baseline instead (standard practice in the
    # production implementations of this detector family).
    flat_metric_variance: float = 1.5e-5

    def __post_init__(self):
        if self.short_window < 1 or self.window <= self.short_window:
            raise ValueError(
                f"need window > short_window >= 1, got {self.window} / {self.short_window}"
            )
        if self.sigma_floor <= 0:
            raise ValueError(f"sigma_floor must be > 0, got {self.sigma_floor}")


class AnomalyLikelihood:
    def __init__(self, cfg: LikelihoodConfig = LikelihoodConfig()):
        self.cfg = cfg
        self.scores: deque[float] = deque()
        self._short: deque[float] = deque()
        self._metrics: deque[float] = deque()
        self._sum = 0.0
        self._sumsq = 0.0
        self._short_sum = 0.0

    def update(self, raw_score: float, metric: float | None = None) -> float:
        """Ingest one raw score and return the current likelihood in [0, 1].

        ``metric`` is the underlying stream value the score came from.
        When the recent metric window is flat, the ingested score is
        gated to zero: a value that has not moved is not a deviation, and
        sequence memories keep emitting sporadic maintenance errors on
        constant input that would otherwise pollute the error
        distribution.
        """
        if metric is not None:
            if len(self._metrics) == self.cfg.short_window:
                self._metrics.popleft()
            self._metrics.append(metric)
            if len(self._metrics) == self.cfg.short_window:
                mean = sum(self._metrics) / len(self._metrics)
                var = sum((m - mean) ** 2 for m in self._metrics) / len(self._metrics)
                if var < self.cfg.flat_metric_variance:
                    raw_score = 0.0

        if len(self.scores) == self.cfg.window:
            old = self.scores.popleft()
            self._sum -= old
            self._sumsq -= old * old
        self.scores.append(raw_score)
        self._sum += raw_score
        self._sumsq += raw_score * raw_score

        if len(self._short) == self.cfg.short_window:
            self._short_sum -= self._short.popleft()
        self._short.append(raw_score)
        self._short_sum += raw_score

        n = len(self.scores)
        rho = self._sum / n
        variance = max(self._sumsq / n - rho * rho, 0.0)
        sigma = max(math.sqrt(variance), self.cfg.sigma_floor)
        rho_hat = self._short_sum / len(self._short)

        z = (rho_hat - rho) / sigma
        likelihood = 1.0 - q_function(z)
        return min(max(likelihood, 0.0), 1.0)
