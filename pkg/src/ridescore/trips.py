"""Trip domain types, the line-delimited trip file format, and validation.

A trip file is UTF-8 text, one record per line:

    #meta trip_id=<s> commuter_id=<s> start_clock=<HH:MM> window=<float>
    S <t> <accel_y> <lat> <lon> <speed> [extra inertial fields, ignored]
    L <t> <level>
    A <window_index> <0|1>

All types are immutable after validation and safe to share across
concurrent trip pipelines.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass
from typing import Optional, Sequence

EARTH_RADIUS_KM = 6371.0

_CLOCK_RE = re.compile(r"^([01]\d|2[0-3]):([0-5]\d)$")


class TripValidationError(ValueError):
    """A trip record violates a type invariant. Names the offending field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


class TripParseError(ValueError):
    """A trip file line could not be parsed."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class SensorSample:
    """One timestamped reading from the ride stream.

    ``accel_y`` is acceleration along the vehicle's longitudinal axis in
    m/s^2 (streams are assumed pre-oriented).  ``speed`` is the
    GPS-reported speed in m/s; NaN marks a sample where the receiver gave
    no speed fix.
    """

    t: float
    accel_y: float
    lat: float
    lon: float
    speed: float = float("nan")


@dataclass(frozen=True)
class TripMeta:
    trip_id: str
    commuter_id: str
    start_clock: str = "08:00"
    sample_window: float = 5.0


@dataclass(frozen=True)
class ComfortLabel:
    """A comfort slider update: level 1 (most comfortable) .. 5 (most
    uncomfortable), in effect from ``t`` until the next update."""

    t: float
    level: int


@dataclass(frozen=True)
class TripRecord:
    meta: TripMeta
    samples: tuple[SensorSample, ...] = ()
    labels: tuple[ComfortLabel, ...] = ()
    ground_truth_anomaly: Optional[tuple[bool, ...]] = None

    def duration(self) -> float:
        return self.samples[-1].t if self.samples else 0.0


@dataclass(frozen=True)
class FeatureVector:
    """Model input for one window: three discomfort likelihoods plus the
    three directly measured trip features."""

    speed_likelihood: float
    jerk_likelihood: float
    congestion_likelihood: float
    travel_time_s: float
    distance_km: float
    time_zone: int

    def as_tuple(self) -> tuple[float, float, float, float, float, int]:
        return (
            self.speed_likelihood,
            self.jerk_likelihood,
            self.congestion_likelihood,
            self.travel_time_s,
            self.distance_km,
            self.time_zone,
        )


@dataclass(frozen=True)
class IndicatorVector:
    """Probabilities over comfort levels 1..5; must sum to 1."""

    p: tuple[float, float, float, float, float]

    def __post_init__(self):
        if len(self.p) != 5:
            raise TripValidationError("p", "needs exactly 5 probabilities")
        if any(not (0.0 <= v <= 1.0) for v in self.p):
            raise TripValidationError("p", "probabilities must lie in [0,1]")
        if abs(sum(self.p) - 1.0) > 1e-9:
            raise TripValidationError("p", "probabilities must sum to 1")

    def level(self) -> int:
        """Predicted comfort level: argmax with lowest-index tie-break."""
        best = max(self.p)
        return self.p.index(best) + 1

    def gap(self) -> float:
        """Difference between the highest and second-highest probability."""
        ordered = sorted(self.p, reverse=True)
        return ordered[0] - ordered[1]


def parse_clock(clock: str) -> int:
    """Return minutes since midnight for an HH:MM string."""
    m = _CLOCK_RE.match(clock)
    if m is None:
        raise TripValidationError("start_clock", f"not HH:MM: {clock!r}")
    return int(m.group(1)) * 60 + int(m.group(2))


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in km between two (lat, lon) points in degrees."""
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dphi = math.radians(lat2 - lat1)
    dlam = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return EARTH_RADIUS_KM * 2.0 * math.atan2(math.sqrt(a), math.sqrt(1.0 - a))


def _require_finite(field_name: str, value: float) -> None:
    if not math.isfinite(value):
        raise TripValidationError(field_name, f"must be finite, got {value!r}")


def _check_id(field_name: str, value: str) -> None:
    if not value:
        raise TripValidationError(field_name, "must be non-empty")
    if any(ch.isspace() for ch in value):
        raise TripValidationError(field_name, f"must not contain whitespace: {value!r}")


def validate_trip(record: TripRecord) -> TripRecord:
    """Check every type invariant; raises TripValidationError naming the
    violated field. Returns the record unchanged for chaining."""
    meta = record.meta
    _check_id("trip_id", meta.trip_id)
    _check_id("commuter_id", meta.commuter_id)
    parse_clock(meta.start_clock)
    if not (meta.sample_window > 0):
        raise TripValidationError("sample_window", f"must be > 0, got {meta.sample_window}")

    prev_t = -math.inf
    for s in record.samples:
        _require_finite("t", s.t)
        if s.t < 0:
            raise TripValidationError("t", f"must be non-negative, got {s.t}")
        if s.t <= prev_t:
            raise TripValidationError("t", f"t not increasing at t={s.t}")
        prev_t = s.t
        _require_finite("accel_y", s.accel_y)
        _require_finite("lat", s.lat)
        _require_finite("lon", s.lon)
        if abs(s.lat) > 90.0:
            raise TripValidationError("lat", f"|lat| must be <= 90, got {s.lat}")
        if abs(s.lon) > 180.0:
            raise TripValidationError("lon", f"|lon| must be <= 180, got {s.lon}")
        if not math.isnan(s.speed):
            _require_finite("speed", s.speed)
            if s.speed < 0:
                raise TripValidationError("speed", f"must be >= 0, got {s.speed}")

    last_t = record.duration()
    prev_label_t = -math.inf
    for lab in record.labels:
        if lab.level not in (1, 2, 3, 4, 5):
            raise TripValidationError("level", f"must be in 1..5, got {lab.level}")
        _require_finite("label t", lab.t)
        if not record.samples:
            raise TripValidationError("labels", "labels present but trip has no samples")
        if lab.t < 0 or lab.t > last_t:
            raise TripValidationError("label t", f"must lie in [0, {last_t}], got {lab.t}")
        if lab.t < prev_label_t:
            raise TripValidationError("labels", f"not sorted by t at t={lab.t}")
        prev_label_t = lab.t

    return record


def _fmt(x: float) -> str:
    """Shortest decimal text that round-trips the float exactly."""
    return repr(float(x))


def write_trip(record: TripRecord, path: str | os.PathLike) -> None:
    """Write a validated trip to ``path``.

    Output bytes are deterministic for identical input (atomic
    write-temp-then-rename).
    """
    validate_trip(record)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_trip(record))
    os.replace(tmp, path)


def format_trip(record: TripRecord) -> str:
    """Render a trip record to the wire text (no validation)."""
    m = record.meta
    out = [
        f"#meta trip_id={m.trip_id} commuter_id={m.commuter_id} "
        f"start_clock={m.start_clock} window={_fmt(m.sample_window)}"
    ]
    for s in record.samples:
        out.append(f"S {_fmt(s.t)} {_fmt(s.accel_y)} {_fmt(s.lat)} {_fmt(s.lon)} {_fmt(s.speed)}")
    for lab in record.labels:
        out.append(f"L {_fmt(lab.t)} {lab.level}")
    if record.ground_truth_anomaly is not None:
        for i, flag in enumerate(record.ground_truth_anomaly):
            out.append(f"A {i} {1 if flag else 0}")
    return "\n".join(out) + "\n"


def parse_trip(path: str | os.PathLike) -> TripRecord:
    """Parse and validate a trip file. Unknown meta fields and trailing
    sample columns are ignored."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_trip_text(text)


def parse_trip_text(text: str) -> TripRecord:
    meta: Optional[TripMeta] = None
    samples: list[SensorSample] = []
    labels: list[ComfortLabel] = []
    anomalies: dict[int, bool] = {}

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#meta"):
            if meta is not None:
                raise TripParseError(line_no, "duplicate #meta header")
            meta = _parse_meta(line, line_no)
            continue
        if line.startswith("#"):
            continue
        if meta is None:
            raise TripParseError(line_no, "data before #meta header")
        tag, _, rest = line.partition(" ")
        fields = rest.split()
        if tag == "S":
            if len(fields) < 5:
                raise TripParseError(line_no, f"sample needs 5 fields, got {len(fields)}")
            try:
                t, accel_y, lat, lon, speed = (float(v) for v in fields[:5])
            except ValueError as exc:
                raise TripParseError(line_no, f"bad sample number: {exc}") from None
            samples.append(SensorSample(t=t, accel_y=accel_y, lat=lat, lon=lon, speed=speed))
        elif tag == "L":
            if len(fields) != 2:
                raise TripParseError(line_no, f"label needs 2 fields, got {len(fields)}")
            try:
                t = float(fields[0])
                level = int(fields[1])
            except ValueError as exc:
                raise TripParseError(line_no, f"bad label: {exc}") from None
            labels.append(ComfortLabel(t=t, level=level))
        elif tag == "A":
            if len(fields) != 2:
                raise TripParseError(line_no, f"anomaly flag needs 2 fields, got {len(fields)}")
            try:
                idx = int(fields[0])
                flag = int(fields[1])
            except ValueError as exc:
                raise TripParseError(line_no, f"bad anomaly flag: {exc}") from None
            if flag not in (0, 1):
                raise TripParseError(line_no, f"anomaly flag must be 0 or 1, got {flag}")
            if idx in anomalies:
                raise TripParseError(line_no, f"duplicate anomaly window {idx}")
            anomalies[idx] = bool(flag)
        else:
            raise TripParseError(line_no, f"unknown record tag {tag!r}")

    if meta is None:
        raise TripParseError(1, "missing #meta header")

    truth: Optional[tuple[bool, ...]] = None
    if anomalies:
        expected = set(range(len(anomalies)))
        if set(anomalies) != expected:
            raise TripParseError(1, "anomaly window indices must cover 0..n-1")
        truth = tuple(anomalies[i] for i in range(len(anomalies)))

    record = TripRecord(
        meta=meta,
        samples=tuple(samples),
        labels=tuple(labels),
        ground_truth_anomaly=truth,
    )
    return validate_trip(record)


def _parse_meta(line: str, line_no: int) -> TripMeta:
    kv: dict[str, str] = {}
    for token in line.split()[1:]:
        key, sep, value = token.partition("=")
        if not sep:
            raise TripParseError(line_no, f"meta token without '=': {token!r}")
        kv[key] = value
    for required in ("trip_id", "commuter_id"):
        if required not in kv:
            raise TripParseError(line_no, f"meta missing {required}")
    try:
        window = float(kv.get("window", "5.0"))
    except ValueError:
        raise TripParseError(line_no, f"bad window: {kv['window']!r}") from None
    return TripMeta(
        trip_id=kv["trip_id"],
        commuter_id=kv["commuter_id"],
        start_clock=kv.get("start_clock", "08:00"),
        sample_window=window,
    )


def prevailing_level(labels: Sequence[ComfortLabel], t: float, default: int = 1) -> int:
    """Level in effect at time ``t``: the most recent label at or before it.

    Mirrors the slider semantics: the default level is 1 until the first
    update.
    """
    level = default
    for lab in labels:
        if lab.t <= t:
            level = lab.level
        else:
            break
    return level
