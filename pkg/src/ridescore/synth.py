"""Synthetic trip generation.

Comfort-state feature streams are driven by self-exciting point
processes: a temporal process for speed-change events and space-time
processes (exponential decay in time, Gaussian kernel in space) for jerk
and congestion events.  A scenario script adds anomaly intervals that
multiply one feature's event intensity, and a simulated commuter profile
turns the rendered windows into sparse comfort labels.

Everything is deterministic given (script, seed).  Anomaly injection is
coupled across multiplier values: raising the multiplier only ever adds
events, so paired trips with the same seed are directly comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .features import SmootherConfig, WindowObservation, windows
from .trips import ComfortLabel, SensorSample, TripMeta, TripRecord, validate_trip

FEATURES = ("speed", "jerk", "congestion")

# Simulation canvas for the space-time processes (km).
REGION_KM = (0.0, 20.0, -0.5, 0.5)

# Highest supported anomaly multiplier; injection streams dominate up to here.
MULTIPLIER_CAP = 32.0

# Fixed substream indices so that every draw has a stable address.
STREAM_SPEED = 0
STREAM_JERK = 1
STREAM_CONGESTION = 2
STREAM_INJECT = 3
STREAM_ROUTE = 4
STREAM_NOISE = 5

_ORIGIN_LAT = 12.97
_ORIGIN_LON = 77.59
_KM_PER_DEG_LAT = 6371.0 * math.pi / 180.0


class UnstableProcessError(ValueError):
    pass


@dataclass(frozen=True)
class SeededRng:
    """Project-wide deterministic RNG root (PCG64 behind numpy's default_rng).

    Substreams are addressed by fixed spawn keys, so identical seeds
    reproduce identical trips byte for byte.
    """

    seed: int
    algorithm: str = "pcg64"

    def generator(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=tuple(key)))


def derive_seed(master_seed: int, index: int) -> int:
    """Deterministic 64-bit child seed for batch generation."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class TemporalHawkesParams:
    """Conditional intensity mu + sum(alpha * exp(-beta (t - t_i)))."""

    mu: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not self.mu > 0:
            raise UnstableProcessError(f"mu must be > 0, got {self.mu}")
        if self.alpha < 0:
            raise UnstableProcessError(f"alpha must be >= 0, got {self.alpha}")
        if not self.beta > 0:
            raise UnstableProcessError(f"beta must be > 0, got {self.beta}")
        if self.alpha / self.beta >= 1.0:
            raise UnstableProcessError(
                f"unstable process: branching ratio alpha/beta = {self.alpha / self.beta} >= 1"
            )

    def stationary_rate(self) -> float:
        return self.mu / (1.0 - self.alpha / self.beta)


@dataclass(frozen=True)
class SpatioTemporalHawkesParams:
    """Space-time intensity mu + sum(alpha * exp(-beta dt) * N(dr; sigma_s)).

    mu is a density per (s * km^2); the Gaussian kernel is the normalized
    bivariate density with isotropic bandwidth sigma_s km.
    """

    mu: float
    alpha: float
    beta: float
    sigma_s: float

    def __post_init__(self):
        if not self.mu > 0:
            raise UnstableProcessError(f"mu must be > 0, got {self.mu}")
        if self.alpha < 0:
            raise UnstableProcessError(f"alpha must be >= 0, got {self.alpha}")
        if not self.beta > 0:
            raise UnstableProcessError(f"beta must be > 0, got {self.beta}")
        if not self.sigma_s > 0:
            raise UnstableProcessError(f"sigma_s must be > 0, got {self.sigma_s}")
        if self.alpha / self.beta >= 1.0:
            raise UnstableProcessError(
                f"unstable process: branching ratio alpha/beta = {self.alpha / self.beta} >= 1"
            )

    def stationary_rate(self, area_km2: float) -> float:
        return self.mu * area_km2 / (1.0 - self.alpha / self.beta)


@dataclass(frozen=True)
class SpaceTimeEvent:
    t: float
    x: float
    y: float
    parent: int  # index of triggering event, -1 for background


def simulate_hawkes(
    params: TemporalHawkesParams, horizon: float, rng: np.random.Generator
) -> np.ndarray:
    """Event times in (0, horizon] by Ogata thinning.

    The excitation sum is tracked recursively, so each candidate costs
    O(1): between events the intensity only decays, which makes the value
    just after the current time a valid upper bound.
    """
    if horizon <= 0:
        return np.empty(0, dtype=float)
    t = 0.0
    excitation = 0.0  # sum of alpha * exp(-beta (t - t_i)) over past events
    out: list[float] = []
    while True:
        bound = params.mu + excitation
        t_cand = t + rng.exponential(1.0 / bound)
        if t_cand > horizon:
            break
        decay = math.exp(-params.beta * (t_cand - t))
        excitation *= decay
        t = t_cand
        if rng.uniform(0.0, bound) <= params.mu + excitation:
            out.append(t)
            excitation += params.alpha
    return np.asarray(out, dtype=float)


def _normal_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def _box_mass(x: float, y: float, sigma: float, region: tuple[float, float, float, float]) -> float:
    """Mass of an isotropic Gaussian centered at (x, y) inside the region."""
    x_lo, x_hi, y_lo, y_hi = region
    mx = _normal_cdf((x_hi - x) / sigma) - _normal_cdf((x_lo - x) / sigma)
    my = _normal_cdf((y_hi - y) / sigma) - _normal_cdf((y_lo - y) / sigma)
    return mx * my


def simulate_st_hawkes(
    params: SpatioTemporalHawkesParams,
    horizon: float,
    region: tuple[float, float, float, float],
    rng: np.random.Generator,
) -> list[SpaceTimeEvent]:
    """Space-time events by thinning, locations inside ``region``.

    Candidate times are thinned against the ground (space-integrated)
    intensity; an accepted event's location comes from the conditional
    spatial mixture: uniform for the background component, a truncated
    Gaussian around the triggering event otherwise.  ``parent`` records
    which component produced each event.
    """
    x_lo, x_hi, y_lo, y_hi = region
    area = (x_hi - x_lo) * (y_hi - y_lo)
    if area <= 0:
        raise ValueError(f"region must have positive area, got {region}")
    if horizon <= 0:
        return []

    background = params.mu * area
    events: list[SpaceTimeEvent] = []
    weights: list[float] = []  # per-event excitation alpha*exp(-beta dt), decayed in place
    masses: list[float] = []   # in-region Gaussian mass per event
    t = 0.0
    while True:
        bound = background + sum(weights)
        t_cand = t + rng.exponential(1.0 / bound)
        if t_cand > horizon:
            break
        decay = math.exp(-params.beta * (t_cand - t))
        weights = [w * decay for w in weights]
        t = t_cand
        ground = background + sum(w * q for w, q in zip(weights, masses))
        if rng.uniform(0.0, bound) > ground:
            continue
        pick = rng.uniform(0.0, ground)
        if pick < background:
            parent = -1
            x = rng.uniform(x_lo, x_hi)
            y = rng.uniform(y_lo, y_hi)
        else:
            pick -= background
            parent = len(events) - 1
            for j, (w, q) in enumerate(zip(weights, masses)):
                pick -= w * q
                if pick <= 0:
                    parent = j
                    break
            px, py = events[parent].x, events[parent].y
            while True:
                x = px + params.sigma_s * rng.standard_normal()
                y = py + params.sigma_s * rng.standard_normal()
                if x_lo <= x <= x_hi and y_lo <= y <= y_hi:
                    break
        events.append(SpaceTimeEvent(t=t, x=x, y=y, parent=parent))
        weights.append(params.alpha)
        masses.append(_box_mass(x, y, params.sigma_s, region))
    return events


@dataclass(frozen=True)
class AnomalyInterval:
    t_start: float
    t_end: float
    feature: str
    multiplier: float

    def __post_init__(self):
        if self.feature not in FEATURES:
            raise ValueError(f"feature must be one of {FEATURES}, got {self.feature!r}")
        if not (0 <= self.t_start < self.t_end):
            raise ValueError(f"bad interval [{self.t_start}, {self.t_end})")
        if not (0 < self.multiplier <= MULTIPLIER_CAP):
            raise ValueError(
                f"multiplier must lie in (0, {MULTIPLIER_CAP}], got {self.multiplier}"
            )


@dataclass(frozen=True)
class CommuterProfile:
    """Per-feature sensitivity weights plus the monotone thresholds that
    turn the latent discomfort score into levels 1..5."""

    w_speed: float = 1.0 / 3
    w_jerk: float = 1.0 / 3
    w_congestion: float = 1.0 / 3
    thresholds: tuple[float, float, float, float] = (3.0, 5.0, 8.0, 12.0)

    def __post_init__(self):
        ws = (self.w_speed, self.w_jerk, self.w_congestion)
        if any(w < 0 or w > 1 for w in ws):
            raise ValueError(f"weights must lie in [0,1], got {ws}")
        if abs(sum(ws) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {sum(ws)}")
        if len(self.thresholds) != 4 or list(self.thresholds) != sorted(self.thresholds):
            raise ValueError(f"thresholds must be 4 ascending values, got {self.thresholds}")


@dataclass(frozen=True)
class ScenarioScript:
    trip_duration_s: float
    trip_id: str = "trip"
    commuter_id: str = "c0"
    start_clock: str = "08:00"
    sample_rate_hz: float = 1.0
    sample_window_s: float = 5.0
    cruise_speed_mps: float = 12.0
    anomaly_intervals: tuple[AnomalyInterval, ...] = ()
    profile: CommuterProfile = field(default_factory=CommuterProfile)
    speed_process: TemporalHawkesParams = field(
        default_factory=lambda: TemporalHawkesParams(mu=0.01, alpha=0.2, beta=0.4)
    )
    jerk_process: SpatioTemporalHawkesParams = field(
        default_factory=lambda: SpatioTemporalHawkesParams(mu=0.002, alpha=0.1, beta=0.5, sigma_s=0.05)
    )
    congestion_process: SpatioTemporalHawkesParams = field(
        default_factory=lambda: SpatioTemporalHawkesParams(mu=8.4e-05, alpha=0.1, beta=0.5, sigma_s=0.2)
    )

    def __post_init__(self):
        if not self.trip_duration_s > 0:
            raise ValueError(f"trip_duration must be > 0, got {self.trip_duration_s}")
        if not self.sample_rate_hz > 0:
            raise ValueError(f"sample_rate must be > 0, got {self.sample_rate_hz}")
        for iv in self.anomaly_intervals:
            if iv.t_end > self.trip_duration_s:
                raise ValueError(f"interval [{iv.t_start}, {iv.t_end}) exceeds trip duration")


# --- scenario script file (flat key = value text) ---------------------------

_SCALARS = {
    "trip_id": str,
    "commuter_id": str,
    "start_clock": str,
    "trip_duration": float,
    "sample_rate": float,
    "sample_window": float,
    "cruise_speed": float,
}


def parse_scenario(text: str) -> ScenarioScript:
    values: dict[str, object] = {}
    anomalies: list[AnomalyInterval] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, rest = line.partition("=")
        if not sep:
            raise ValueError(f"scenario line {line_no}: expected key = value")
        key = key.strip()
        rest = rest.strip()
        try:
            if key in _SCALARS:
                values[key] = _SCALARS[key](rest)
            elif key == "weights":
                w = [float(v) for v in rest.split()]
                if len(w) != 3:
                    raise ValueError("weights needs 3 values (speed jerk congestion)")
                values["weights"] = w
            elif key == "thresholds":
                th = [float(v) for v in rest.split()]
                if len(th) != 4:
                    raise ValueError("thresholds needs 4 values")
                values["thresholds"] = th
            elif key == "speed_process":
                mu, alpha, beta = (float(v) for v in rest.split())
                values["speed_process"] = TemporalHawkesParams(mu, alpha, beta)
            elif key in ("jerk_process", "congestion_process"):
                mu, alpha, beta, sigma = (float(v) for v in rest.split())
                values[key] = SpatioTemporalHawkesParams(mu, alpha, beta, sigma)
            elif key == "anomaly":
                fields = rest.split()
                if len(fields) != 4:
                    raise ValueError("anomaly needs: t_start t_end feature multiplier")
                anomalies.append(
                    AnomalyInterval(float(fields[0]), float(fields[1]), fields[2], float(fields[3]))
                )
            else:
                raise ValueError(f"unknown key {key!r}")
        except (ValueError, UnstableProcessError) as exc:
            raise ValueError(f"scenario line {line_no}: {exc}") from None

    if "trip_duration" not in values:
        raise ValueError("scenario missing trip_duration")

    profile_kwargs = {}
    if "weights" in values:
        w = values.pop("weights")
        profile_kwargs.update(w_speed=w[0], w_jerk=w[1], w_congestion=w[2])
    if "thresholds" in values:
        profile_kwargs["thresholds"] = tuple(values.pop("thresholds"))

    kwargs = {
        "trip_duration_s": values.pop("trip_duration"),
        "profile": CommuterProfile(**profile_kwargs),
        "anomaly_intervals": tuple(anomalies),
    }
    rename = {
        "sample_rate": "sample_rate_hz",
        "sample_window": "sample_window_s",
        "cruise_speed": "cruise_speed_mps",
    }
    for key, value in values.items():
        kwargs[rename.get(key, key)] = value
    return ScenarioScript(**kwargs)


def load_scenario(path) -> ScenarioScript:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def format_scenario(script: ScenarioScript) -> str:
    p = script.profile
    sp, jp, cp = script.speed_process, script.jerk_process, script.congestion_process
    lines = [
        f"trip_id = {script.trip_id}",
        f"commuter_id = {script.commuter_id}",
        f"start_clock = {script.start_clock}",
        f"trip_duration = {script.trip_duration_s!r}",
        f"sample_rate = {script.sample_rate_hz!r}",
        f"sample_window = {script.sample_window_s!r}",
        f"cruise_speed = {script.cruise_speed_mps!r}",
        f"weights = {p.w_speed!r} {p.w_jerk!r} {p.w_congestion!r}",
        "thresholds = " + " ".join(repr(t) for t in p.thresholds),
        f"speed_process = {sp.mu!r} {sp.alpha!r} {sp.beta!r}",
        f"jerk_process = {jp.mu!r} {jp.alpha!r} {jp.beta!r} {jp.sigma_s!r}",
        f"congestion_process = {cp.mu!r} {cp.alpha!r} {cp.beta!r} {cp.sigma_s!r}",
    ]
    for iv in script.anomaly_intervals:
        lines.append(f"anomaly = {iv.t_start!r} {iv.t_end!r} {iv.feature} {iv.multiplier!r}")
    return "\n".join(lines) + "\n"


# --- rendering ---------------------------------------------------------------

_REGION_AREA = (REGION_KM[1] - REGION_KM[0]) * (REGION_KM[3] - REGION_KM[2])

# Injected event shapes (per feature).
_SPEED_SURGE_MPS = (2.5, 4.0)
_SPEED_TAU_S = 20.0
_JERK_IMPULSE_MPS2 = (2.0, 3.5)
_BASE_STOP_S = (15.0, 40.0)
# Injected congestion events spawn jams: alternating stop / crawl phases
# whose combined cycle time straddles the medium-congestion boundary, so
# the congestion level keeps changing while the jam lasts.
_JAM_TOTAL_S = (300.0, 360.0)
# Stop-go waves: cycle lengths alternate across the medium-congestion
# boundary (60 s), so the tracked level keeps flipping while the jam
# lasts instead of parking inside one band.
_JAM_LONG_CYCLE_S = (62.0, 75.0)
_JAM_SHORT_CYCLE_S = (32.0, 44.0)
_JAM_STOP_FRACTION = (0.5, 0.7)
_JAM_CRAWL_MPS = (1.2, 2.5)


def _intervals_for(script: ScenarioScript, feature: str) -> list[AnomalyInterval]:
    return [iv for iv in script.anomaly_intervals if iv.feature == feature]


def _keep_base(t: float, intervals: Sequence[AnomalyInterval], mark: float) -> bool:
    """Thin base events inside sub-unity multiplier intervals."""
    for iv in intervals:
        if iv.t_start <= t < iv.t_end and iv.multiplier < 1.0:
            return mark < iv.multiplier
    return True


def _injected_times(
    intervals: Sequence[AnomalyInterval],
    base_rate: float,
    rng: np.random.Generator,
) -> list[tuple[float, AnomalyInterval, np.random.Generator]]:
    """Extra event times for multiplier > 1 intervals.

    A dominating Poisson stream at (cap - 1) * base_rate is thinned per
    event by (multiplier - 1)/(cap - 1): a larger multiplier keeps a
    superset of events, which makes paired-seed trips monotone in the
    multiplier.  Each kept event gets its own child generator so its
    shape draws do not depend on how many events were kept.
    """
    out: list[tuple[float, AnomalyInterval, np.random.Generator]] = []
    dominate = (MULTIPLIER_CAP - 1.0) * base_rate
    for iv in intervals:
        length = iv.t_end - iv.t_start
        n_cand = rng.poisson(dominate * length)
        times = np.sort(rng.uniform(iv.t_start, iv.t_end, size=n_cand))
        marks = rng.uniform(0.0, 1.0, size=n_cand)
        streams = rng.spawn(n_cand) if n_cand else []
        if iv.multiplier <= 1.0:
            continue
        keep_p = (iv.multiplier - 1.0) / (MULTIPLIER_CAP - 1.0)
        for t, mark, stream in zip(times, marks, streams):
            if mark < keep_p:
                out.append((float(t), iv, stream))
    return out


def _interval_fade(ts: np.ndarray, iv: AnomalyInterval) -> np.ndarray:
    """Multiplier confining an injected effect to its interval: 1 inside,
    cosine fade to 0 at the interval end, 0 beyond.  Keeps the windows
    outside the interval identical across multiplier values."""
    ramp = min(4.0, (iv.t_end - iv.t_start) / 4.0)
    fade = np.zeros_like(ts)
    inside = (ts >= iv.t_start) & (ts < iv.t_end - ramp)
    fade[inside] = 1.0
    tail = (ts >= iv.t_end - ramp) & (ts < iv.t_end)
    fade[tail] = 0.5 * (1.0 + np.cos(math.pi * (ts[tail] - (iv.t_end - ramp)) / ramp))
    return fade


def render_trip(script: ScenarioScript, rng: SeededRng) -> TripRecord:
    """Render a full labeled trip from the scenario.

    Speed follows a cruise profile perturbed by speed-change events;
    accel_y is the speed derivative plus jerk-event impulses; congestion
    events insert stop episodes; GPS integrates the speed along a
    straight synthetic route.  Anomaly intervals scale the named
    feature's event intensity and define the per-window ground truth.
    """
    T = script.trip_duration_s
    dt = 1.0 / script.sample_rate_hz
    n = int(math.floor(T / dt)) + 1
    ts = np.arange(n) * dt

    speed_rng = rng.generator(STREAM_SPEED)
    jerk_rng = rng.generator(STREAM_JERK)
    cong_rng = rng.generator(STREAM_CONGESTION)
    inject_root = rng.generator(STREAM_INJECT)
    route_rng = rng.generator(STREAM_ROUTE)
    noise_rng = rng.generator(STREAM_NOISE)
    inject_speed, inject_jerk, inject_cong = inject_root.spawn(3)

    # Base event streams (identical across multiplier variations).
    speed_events = simulate_hawkes(script.speed_process, T, speed_rng)
    speed_marks = speed_rng.uniform(size=len(speed_events))
    speed_amp = speed_rng.uniform(0.5, 1.5, size=len(speed_events)) * speed_rng.choice(
        [-1.0, 1.0], size=len(speed_events)
    )
    jerk_events = simulate_st_hawkes(script.jerk_process, T, REGION_KM, jerk_rng)
    jerk_marks = jerk_rng.uniform(size=len(jerk_events))
    jerk_amp = jerk_rng.uniform(0.3, 0.8, size=len(jerk_events)) * jerk_rng.choice(
        [-1.0, 1.0], size=len(jerk_events)
    )
    cong_events = simulate_st_hawkes(script.congestion_process, T, REGION_KM, cong_rng)
    cong_marks = cong_rng.uniform(size=len(cong_events))
    cong_dur = cong_rng.uniform(*_BASE_STOP_S, size=len(cong_events))

    speed_ivs = _intervals_for(script, "speed")
    jerk_ivs = _intervals_for(script, "jerk")
    cong_ivs = _intervals_for(script, "congestion")

    # Speed trajectory: cruise + slow wobble + event perturbations.
    wobble_phase = route_rng.uniform(0.0, 2.0 * math.pi)
    v = script.cruise_speed_mps * (1.0 + 0.06 * np.sin(2.0 * math.pi * ts / 500.0 + wobble_phase))
    for t_e, mark, amp in zip(speed_events, speed_marks, speed_amp):
        if not _keep_base(t_e, speed_ivs, mark):
            continue
        tail = ts >= t_e
        v[tail] += amp * np.exp(-(ts[tail] - t_e) / _SPEED_TAU_S)
    for t_e, iv, stream in _injected_times(speed_ivs, script.speed_process.stationary_rate(), inject_speed):
        amp = stream.uniform(*_SPEED_SURGE_MPS)
        surge = np.zeros_like(v)
        tail = ts >= t_e
        surge[tail] = amp * np.exp(-(ts[tail] - t_e) / _SPEED_TAU_S)
        v += surge * _interval_fade(ts, iv)

    # Congestion: base events are brief stops; injected events spawn jams.
    # Each event contributes jam-active time; overlaps merge into blocks
    # and every block gets one coherent stop/crawl alternation so the
    # cycle structure survives event pile-ups.
    cap = np.full(n, np.inf)
    for ev, mark, dur in zip(cong_events, cong_marks, cong_dur):
        if _keep_base(ev.t, cong_ivs, mark):
            _cap_segment(cap, ts, ev.t, min(ev.t + dur, T), 0.0)
    cong_rate = script.congestion_process.stationary_rate(_REGION_AREA)
    jam_spans: dict[int, list[tuple[float, float]]] = {i: [] for i in range(len(cong_ivs))}
    for t_e, iv, stream in _injected_times(cong_ivs, cong_rate, inject_cong):
        total = stream.uniform(*_JAM_TOTAL_S)
        # The event marks the center of a congestion wave.
        start = max(t_e - total / 2.0, iv.t_start)
        end = min(t_e + total / 2.0, iv.t_end - 4.0, T)
        if end > start:
            jam_spans[cong_ivs.index(iv)].append((start, end))
    phase_streams = inject_cong.spawn(len(cong_ivs)) if cong_ivs else []
    for iv_index, spans in jam_spans.items():
        stream = phase_streams[iv_index]
        for start, end in _merge_spans(spans):
            _apply_jam_block(cap, ts, start, end, stream)
    v = np.minimum(v, cap)
    # Short centered smoothing turns the hard cap edges into 2-3 s ramps.
    v = np.convolve(np.clip(v, 0.0, None), np.ones(5) / 5.0, mode="same")
    np.clip(v, 0.0, None, out=v)

    # Longitudinal acceleration: speed derivative + jerk impulses + noise.
    accel = np.gradient(v, dt)
    for ev, mark, amp in zip(jerk_events, jerk_marks, jerk_amp):
        if not _keep_base(ev.t, jerk_ivs, mark):
            continue
        accel += amp * np.exp(-(((ts - ev.t) / 1.0) ** 2))
    jerk_rate = script.jerk_process.stationary_rate(_REGION_AREA)
    for t_e, iv, stream in _injected_times(jerk_ivs, jerk_rate, inject_jerk):
        amp = stream.uniform(*_JERK_IMPULSE_MPS2)
        # Keep the whole impulse inside the interval.
        t_e = min(t_e, iv.t_end - 3.0)
        if t_e >= iv.t_start:
            accel += amp * np.exp(-(((ts - t_e) / 1.0) ** 2))
    accel += noise_rng.normal(0.0, 0.05, size=n)

    # Straight eastward route integrated from speed.
    dist_m = np.concatenate([[0.0], np.cumsum((v[1:] + v[:-1]) / 2.0 * dt)])
    lat = np.full(n, _ORIGIN_LAT)
    lon = _ORIGIN_LON + (dist_m / 1000.0) / (_KM_PER_DEG_LAT * math.cos(math.radians(_ORIGIN_LAT)))

    samples = tuple(
        SensorSample(t=float(ts[i]), accel_y=float(accel[i]), lat=float(lat[i]),
                     lon=float(lon[i]), speed=float(v[i]))
        for i in range(n)
    )
    meta = TripMeta(
        trip_id=script.trip_id,
        commuter_id=script.commuter_id,
        start_clock=script.start_clock,
        sample_window=script.sample_window_s,
    )
    draft = TripRecord(meta=meta, samples=samples)
    obs = windows(draft, SmootherConfig())
    truth = ground_truth_flags(script, len(obs))
    labels = label_oracle(script, obs, truth)
    record = TripRecord(meta=meta, samples=samples, labels=tuple(labels), ground_truth_anomaly=truth)
    return validate_trip(record)


def _cap_segment(cap: np.ndarray, ts: np.ndarray, start: float, end: float, target: float) -> None:
    if end <= start:
        return
    span = (ts >= start) & (ts < end)
    cap[span] = np.minimum(cap[span], target)


def _merge_spans(spans: list[tuple[float, float]]) -> list[tuple[float, float]]:
    merged: list[list[float]] = []
    for start, end in sorted(spans):
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return [(s, e) for s, e in merged]


def _apply_jam_block(
    cap: np.ndarray, ts: np.ndarray, start: float, end: float, stream: np.random.Generator
) -> None:
    """Write one jam block onto the speed cap: stop / crawl cycles whose
    lengths alternate across the medium-congestion boundary."""
    pos = start
    long_cycle = True
    while pos < end:
        cycle = stream.uniform(*(_JAM_LONG_CYCLE_S if long_cycle else _JAM_SHORT_CYCLE_S))
        long_cycle = not long_cycle
        stop_d = cycle * stream.uniform(*_JAM_STOP_FRACTION)
        _cap_segment(cap, ts, pos, min(pos + stop_d, end), 0.0)
        crawl = stream.uniform(*_JAM_CRAWL_MPS)
        _cap_segment(cap, ts, pos + stop_d, min(pos + cycle, end), crawl)
        pos += cycle


def ground_truth_flags(script: ScenarioScript, n_windows: int) -> tuple[bool, ...]:
    """Window k is anomalous iff [k w, (k+1) w) overlaps an anomaly interval."""
    w = script.sample_window_s
    flags = []
    for k in range(n_windows):
        start, end = k * w, (k + 1) * w
        flags.append(
            any(start < iv.t_end and end > iv.t_start for iv in script.anomaly_intervals)
        )
    return tuple(flags)


# Congestion levels map to the latent deviation scale in big steps so a
# congestion-sensitive commuter reacts to level changes.
_CONGESTION_DEV_SCALE = 4.0


def oracle_levels(
    script: ScenarioScript,
    obs: Sequence[WindowObservation],
    truth: Sequence[bool],
) -> list[int]:
    """Per-window comfort level from the simulated commuter.

    Feature deviations are z-scores against the trip's own quiet windows,
    weighted by the profile and mapped through its thresholds.
    """
    if len(obs) != len(truth):
        raise ValueError("windows and truth flags must align")
    if not obs:
        return []
    p = script.profile
    quiet = [o for o, flagged in zip(obs, truth) if not flagged] or list(obs)
    # Speed and jerk baselines come from flowing windows: stop episodes
    # belong to the congestion feature and would otherwise swamp the scale.
    flowing = [o for o in quiet if o.speed > 0.5 * script.cruise_speed_mps] or quiet

    v_vals = np.array([o.speed for o in flowing])
    v_ref = float(v_vals.mean())
    v_scale = max(float(v_vals.std()), 0.5)
    j_vals = np.array([abs(o.jerk) for o in flowing])
    j_ref = float(j_vals.mean())
    j_scale = max(float(j_vals.std()), 0.05)

    levels = []
    for o in obs:
        z_speed = max(0.0, (o.speed - v_ref) / v_scale)
        z_jerk = max(0.0, (abs(o.jerk) - j_ref) / j_scale)
        z_cong = _CONGESTION_DEV_SCALE * o.congestion
        score = p.w_speed * z_speed + p.w_jerk * z_jerk + p.w_congestion * z_cong
        levels.append(1 + sum(score >= th for th in p.thresholds))
    return levels


def label_oracle(
    script: ScenarioScript,
    obs: Sequence[WindowObservation],
    truth: Sequence[bool],
) -> list[ComfortLabel]:
    """Sparse labels: one at t=0, then one whenever the level changes."""
    levels = oracle_levels(script, obs, truth)
    if not levels:
        return []
    labels = [ComfortLabel(t=0.0, level=levels[0])]
    w = script.sample_window_s
    for k in range(1, len(levels)):
        if levels[k] != levels[k - 1]:
            labels.append(ComfortLabel(t=k * w, level=levels[k]))
    return labels
