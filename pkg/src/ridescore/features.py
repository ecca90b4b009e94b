"""Per-window feature extraction from a raw sample stream.

Each trip is tiled into fixed-length windows (default 5 s).  A window
observation carries the instantaneous trip features (elapsed time,
distance traveled, time-of-day zone) and the instantaneous values of the
three driving features: mean speed, jerk (slope of smoothed longitudinal
acceleration), and congestion level derived from stop-move cycles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .trips import SensorSample, TripRecord, haversine_km, parse_clock

STOP_SPEED_MPS = 0.5
STOP_HYSTERESIS_S = 5.0
MEDIUM_CONGESTION_S = 60.0
HIGH_CONGESTION_S = 300.0

ZONE_STARTS_MIN = (6 * 60, 10 * 60, 16 * 60, 22 * 60)  # 6AM, 10AM, 4PM, 10PM


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class SmootherConfig:
    kind: str = "moving_average"
    width: int = 5

    def __post_init__(self):
        if self.kind != "moving_average":
            raise ValueError(f"unknown smoother kind {self.kind!r}")
        if self.width < 1 or self.width % 2 == 0:
            raise ValueError(f"width must be odd and >= 1, got {self.width}")


@dataclass(frozen=True)
class WindowObservation:
    window_index: int
    t_mid: float
    speed: float            # m/s, mean over the window
    jerk: float             # m/s^3
    congestion: int         # 0 free, 1 medium, 2 high
    travel_time_s: float
    distance_km: float
    time_zone: int


def smooth(stream: Sequence[SensorSample], cfg: SmootherConfig) -> list[SensorSample]:
    """Centered moving average over accel_y; other fields unchanged.

    Edges use the truncated window, so output length equals input length.
    """
    if cfg.width == 1 or len(stream) <= 1:
        return list(stream)
    half = cfg.width // 2
    accel = [s.accel_y for s in stream]
    out = []
    n = len(stream)
    for i, s in enumerate(stream):
        lo = max(0, i - half)
        hi = min(n, i + half + 1)
        window_mean = sum(accel[lo:hi]) / (hi - lo)
        out.append(SensorSample(t=s.t, accel_y=window_mean, lat=s.lat, lon=s.lon, speed=s.speed))
    return out


def jerk(window: Sequence[SensorSample]) -> float:
    """Least-squares slope of accel_y against t over the window (m/s^3)."""
    if len(window) < 2:
        raise InsufficientDataError(f"jerk needs >= 2 samples, got {len(window)}")
    n = len(window)
    mean_t = sum(s.t for s in window) / n
    mean_a = sum(s.accel_y for s in window) / n
    sxx = sum((s.t - mean_t) ** 2 for s in window)
    sxy = sum((s.t - mean_t) * (s.accel_y - mean_a) for s in window)
    if sxx == 0.0:
        raise InsufficientDataError("jerk needs at least two distinct timestamps")
    return sxy / sxx


class CongestionTracker:
    """Stop-move cycle tracker.

    A stop begins once speed stays below 0.5 m/s for at least 5 s and ends
    once it stays at or above 0.5 m/s for at least 5 s.  The cycle time is
    measured from one stop's start to the next stop's start; the emitted
    level reflects the most recently completed cycle and is 0 until one
    completes (medium when the cycle spans at least 1 min, high at 5 min).
    """

    def __init__(self):
        self._stopped = False
        self._below_since: Optional[float] = None
        self._above_since: Optional[float] = None
        self._last_stop_start: Optional[float] = None
        self.level = 0

    def update(self, sample: SensorSample) -> int:
        speed = sample.speed
        if math.isnan(speed):
            return self.level
        if not self._stopped:
            if speed < STOP_SPEED_MPS:
                if self._below_since is None:
                    self._below_since = sample.t
                if sample.t - self._below_since >= STOP_HYSTERESIS_S:
                    self._enter_stop(self._below_since)
            else:
                self._below_since = None
        else:
            if speed >= STOP_SPEED_MPS:
                if self._above_since is None:
                    self._above_since = sample.t
                if sample.t - self._above_since >= STOP_HYSTERESIS_S:
                    self._stopped = False
                    self._below_since = None
            else:
                self._above_since = None
        return self.level

    def _enter_stop(self, stop_start: float) -> None:
        self._stopped = True
        self._above_since = None
        if self._last_stop_start is not None:
            cycle_s = stop_start - self._last_stop_start
            if cycle_s >= HIGH_CONGESTION_S:
                self.level = 2
            elif cycle_s >= MEDIUM_CONGESTION_S:
                self.level = 1
            else:
                self.level = 0
        self._last_stop_start = stop_start


def time_zone(start_clock: str, elapsed_s: float) -> int:
    """Zone of the wall-clock time ``start_clock + elapsed_s``.

    Zones (half-open): 6AM-10AM -> 0, 10AM-4PM -> 1, 4PM-10PM -> 2,
    10PM-6AM -> 3.
    """
    minute = (parse_clock(start_clock) + elapsed_s / 60.0) % 1440.0
    if ZONE_STARTS_MIN[0] <= minute < ZONE_STARTS_MIN[1]:
        return 0
    if ZONE_STARTS_MIN[1] <= minute < ZONE_STARTS_MIN[2]:
        return 1
    if ZONE_STARTS_MIN[2] <= minute < ZONE_STARTS_MIN[3]:
        return 2
    return 3


def windows(trip: TripRecord, smoother: SmootherConfig = SmootherConfig()) -> list[WindowObservation]:
    """One observation per complete sample window of the trip."""
    if not trip.samples:
        return []
    stream = smooth(trip.samples, smoother)
    w = trip.meta.sample_window
    n_windows = int(trip.duration() // w)
    if n_windows == 0:
        return []

    # Cumulative great-circle distance at each sample.
    cumdist = [0.0]
    for prev, cur in zip(stream, stream[1:]):
        cumdist.append(cumdist[-1] + haversine_km(prev.lat, prev.lon, cur.lat, cur.lon))

    tracker = CongestionTracker()
    out: list[WindowObservation] = []
    sample_idx = 0
    dist_idx = 0
    prev_speed = 0.0
    prev_jerk = 0.0
    n = len(stream)
    for k in range(n_windows):
        start = k * w
        end = (k + 1) * w
        t_mid = start + w / 2.0
        first = sample_idx
        while sample_idx < n and stream[sample_idx].t < end:
            tracker.update(stream[sample_idx])
            sample_idx += 1
        in_window = stream[first:sample_idx]

        speeds = [s.speed for s in in_window if not math.isnan(s.speed)]
        if speeds:
            v = sum(speeds) / len(speeds)
        elif len(in_window) >= 2 and in_window[-1].t > in_window[0].t:
            a, b = in_window[0], in_window[-1]
            v = haversine_km(a.lat, a.lon, b.lat, b.lon) * 1000.0 / (b.t - a.t)
        else:
            v = prev_speed
        prev_speed = v

        try:
            j = jerk(in_window)
        except InsufficientDataError:
            j = prev_jerk
        prev_jerk = j

        while dist_idx + 1 < n and stream[dist_idx + 1].t <= t_mid:
            dist_idx += 1
        d_t = cumdist[dist_idx]

        out.append(
            WindowObservation(
                window_index=k,
                t_mid=t_mid,
                speed=v,
                jerk=j,
                congestion=tracker.level,
                travel_time_s=t_mid,
                distance_km=d_t,
                time_zone=time_zone(trip.meta.start_clock, t_mid),
            )
        )
    return out
