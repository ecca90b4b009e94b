"""Comparator detectors and comfort scales.

All streaming detectors share the same contract as the main detector:
construct with a value range, call ``step(x)`` per value, get a score in
[0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy import stats


class StreamingDetector(Protocol):
    def step(self, x: float) -> float: ...


@dataclass(frozen=True)
class RelativeEntropyConfig:
    window: int = 55
    bins: int = 10
    chi_threshold: float = 1.0

    def __post_init__(self):
        if not (self.window > self.bins >= 2):
            raise ValueError(f"need window > bins >= 2, got {self.window} / {self.bins}")


class RelativeEntropyDetector:
    """Multiple-hypothesis histogram test over a sliding window.

    Window contents are quantized into fixed bins; accepted hypotheses
    are bin-count profiles.  The score is the chi-square statistic of the
    current window against the closest accepted hypothesis, mapped
    through the chi-square CDF (bins - 1 dof) into [0, 1].  Windows whose
    statistic is at most ``chi_threshold`` merge into that hypothesis;
    otherwise the window becomes a new hypothesis.
    """

    def __init__(self, minimum: float, maximum: float, cfg: RelativeEntropyConfig = RelativeEntropyConfig()):
        if not maximum > minimum:
            raise ValueError(f"maximum must exceed minimum, got [{minimum}, {maximum}]")
        self.cfg = cfg
        self.minimum = minimum
        self.maximum = maximum
        self._values: list[float] = []
        self._hypotheses: list[np.ndarray] = []  # bin-count accumulators

    def _quantize(self, window: list[float]) -> np.ndarray:
        span = self.maximum - self.minimum
        idx = [
            min(int((v - self.minimum) / span * self.cfg.bins), self.cfg.bins - 1)
            for v in (min(max(v, self.minimum), self.maximum) for v in window)
        ]
        return np.bincount(idx, minlength=self.cfg.bins).astype(float)

    def _statistic(self, observed: np.ndarray, hypothesis: np.ndarray) -> float:
        # Pearson chi-square of the window counts against the hypothesis
        # frequencies; light smoothing keeps empty hypothesis bins finite.
        n = observed.sum()
        freq = (hypothesis + 1e-6) / (hypothesis.sum() + 1e-6 * len(hypothesis))
        expected = n * freq
        return float(((observed - expected) ** 2 / expected).sum())

    def step(self, x: float) -> float:
        self._values.append(float(x))
        cfg = self.cfg
        if len(self._values) < cfg.window:
            return 0.0
        window = self._values[-cfg.window:]
        observed = self._quantize(window)

        if not self._hypotheses:
            self._hypotheses.append(observed.copy())
            return 0.0

        best_idx = -1
        best_stat = math.inf
        for i, hyp in enumerate(self._hypotheses):
            stat = self._statistic(observed, hyp)
            if stat < best_stat:
                best_stat = stat
                best_idx = i
        if best_stat <= cfg.chi_threshold:
            self._hypotheses[best_idx] += observed
        else:
            self._hypotheses.append(observed.copy())
        return float(stats.chi2.cdf(best_stat, cfg.bins - 1))


@dataclass(frozen=True)
class ExposeConfig:
    decay: float = 0.01
    gamma: float = 0.5  # kernel bandwidth on z-scored values

    def __post_init__(self):
        if not (0.0 < self.decay < 1.0):
            raise ValueError(f"decay must lie in (0, 1), got {self.decay}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")


class ExposeDetector:
    """Decay variant of expected-similarity estimation.

    Score = 1 - similarity, where similarity is the exponentially decayed
    weighted mean of Gaussian kernel evaluations between the current
    point and all previous points, on causally z-scored values.  The
    first observation scores 1 (empty embedding).
    """

    def __init__(self, cfg: ExposeConfig = ExposeConfig()):
        self.cfg = cfg
        self._zs: list[float] = []
        self._n = 0
        self._mean = 0.0
        self._m2 = 0.0

    def _zscore(self, x: float) -> float:
        if self._n < 2:
            return 0.0
        std = math.sqrt(self._m2 / self._n)
        return (x - self._mean) / max(std, 1e-9)

    def _ingest(self, x: float) -> None:
        self._n += 1
        delta = x - self._mean
        self._mean += delta / self._n
        self._m2 += delta * (x - self._mean)

    def step(self, x: float) -> float:
        z = self._zscore(float(x))
        if not self._zs:
            self._ingest(float(x))
            self._zs.append(z)
            return 1.0
        decay = 1.0 - self.cfg.decay
        two_gamma_sq = 2.0 * self.cfg.gamma * self.cfg.gamma
        num = 0.0
        den = 0.0
        weight = 1.0
        for past in reversed(self._zs):
            num += weight * math.exp(-((z - past) ** 2) / two_gamma_sq)
            den += weight
            weight *= decay
        self._ingest(float(x))
        self._zs.append(z)
        return 1.0 - num / den


# -- comfort scales ------------------------------------------------------------

ISO_COMFORT_BANDS = (0.315, 0.5, 0.8, 1.25, 2.5)


def iso_comfort(ax: float, ay: float, az: float) -> tuple[float, int]:
    """Weighted RMS vibration total and its 6-level comfort band.

    a_v = sqrt((1.4 ax)^2 + (1.4 ay)^2 + az^2); level 1 (not
    uncomfortable) through 6 (extremely uncomfortable).
    """
    for name, v in (("ax", ax), ("ay", ay), ("az", az)):
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v!r}")
    a_v = math.sqrt((1.4 * ax) ** 2 + (1.4 * ay) ** 2 + az ** 2)
    level = 1 + sum(a_v > band for band in ISO_COMFORT_BANDS)
    return a_v, level


_FIVE_TO_THREE = {1: 1, 2: 1, 3: 2, 4: 3, 5: 3}
_SIX_TO_THREE = {1: 1, 2: 1, 3: 2, 4: 2, 5: 3, 6: 3}


def relabel(level: int, scheme: str) -> int:
    """Collapse a 5- or 6-point scale onto 3 points."""
    if scheme == "five_to_three":
        table = _FIVE_TO_THREE
    elif scheme == "six_to_three":
        table = _SIX_TO_THREE
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    if level not in table:
        raise ValueError(f"level {level} out of range for {scheme}")
    return table[level]
