"""Scalar encoder: a value becomes a contiguous block of active bits.

Nearby values share bits, so overlap decays smoothly with distance; the
output width is ``buckets + active_bits - 1`` and every encoding has
exactly ``active_bits`` on bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class ScalarEncoderConfig:
    minimum: float
    maximum: float
    buckets: int = 130
    active_bits: int = 21
    clip_out_of_range: bool = True

    def __post_init__(self):
        if not self.maximum > self.minimum:
            raise ValueError(f"maximum must exceed minimum, got [{self.minimum}, {self.maximum}]")
        if not (1 <= self.active_bits <= self.buckets):
            raise ValueError(
                f"active_bits must lie in [1, buckets], got {self.active_bits} / {self.buckets}"
            )
        if self.active_bits % 2 == 0:
            raise ValueError(f"active_bits must be odd, got {self.active_bits}")

    @property
    def width(self) -> int:
        return self.buckets + self.active_bits - 1


def encode(x: float, cfg: ScalarEncoderConfig) -> np.ndarray:
    """Active bit indices for ``x``: bits [b, b + active_bits) where the
    bucket b is linear in the (clamped) value."""
    if not math.isfinite(x):
        raise EncodingError(f"cannot encode non-finite value {x!r}")
    if cfg.clip_out_of_range:
        x = min(max(x, cfg.minimum), cfg.maximum)
    elif not (cfg.minimum <= x <= cfg.maximum):
        raise EncodingError(f"{x} outside [{cfg.minimum}, {cfg.maximum}] and clipping disabled")
    span = cfg.maximum - cfg.minimum
    bucket = int((x - cfg.minimum) / span * cfg.buckets)
    bucket = min(bucket, cfg.buckets - 1)
    return np.arange(bucket, bucket + cfg.active_bits, dtype=np.int64)
