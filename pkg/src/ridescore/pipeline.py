"""End-to-end orchestration: trips -> windows -> per-feature deviation
likelihoods -> comfort predictions -> trip report.

The same pipeline functions back both the CLI and the HTTP service.
"""

from __future__ import annotations

import json
import math
import os
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import baselines, metrics, mtl
from .features import SmootherConfig, WindowObservation, windows
from .htm import (
    Detector,
    DetectorConfig,
    LikelihoodConfig,
    ScalarEncoderConfig,
    SpatialPoolerConfig,
    TemporalMemoryConfig,
)
from .synth import ScenarioScript, SeededRng, derive_seed, render_trip
from .trips import FeatureVector, TripRecord, prevailing_level, write_trip

FEATURES = ("speed", "jerk", "congestion")

DETECTOR_CHOICES = ("htm", "re", "expose")

INSUFFICIENT_TRIP_MESSAGE = "insufficient trip length"


class InsufficientTripLengthError(ValueError):
    def __init__(self, n_windows: int, needed: int):
        super().__init__(
            f"{INSUFFICIENT_TRIP_MESSAGE}: {n_windows} windows, bootstrap needs {needed}"
        )
        self.n_windows = n_windows
        self.needed = needed


@dataclass(frozen=True)
class FeatureRange:
    minimum: float
    maximum: float


@dataclass(frozen=True)
class PipelineConfig:
    trips_dir: str = "trips"
    models_dir: str = "models"
    reports_dir: str = "reports"
    detector: str = "htm"
    bootstrap_minutes: float = 10.0
    seed: int = 0
    epsilon: float = 1e-5
    gap_threshold: float = 0.1
    smoother_width: int = 5
    hidden: int = 32
    speed_range: FeatureRange = FeatureRange(0.0, 40.0)
    jerk_range: FeatureRange = FeatureRange(-4.0, 4.0)
    congestion_range: FeatureRange = FeatureRange(0.0, 2.0)
    train: mtl.TrainConfig = field(default_factory=mtl.TrainConfig)

    def __post_init__(self):
        if self.detector not in DETECTOR_CHOICES:
            raise ValueError(f"detector must be one of {DETECTOR_CHOICES}, got {self.detector!r}")
        if self.bootstrap_minutes < 0:
            raise ValueError("bootstrap_minutes must be >= 0")

    def feature_range(self, feature: str) -> FeatureRange:
        return {
            "speed": self.speed_range,
            "jerk": self.jerk_range,
            "congestion": self.congestion_range,
        }[feature]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @staticmethod
    def from_json(text: str) -> "PipelineConfig":
        data = json.loads(text)
        for key in ("speed_range", "jerk_range", "congestion_range"):
            if key in data:
                data[key] = FeatureRange(**data[key])
        if "train" in data:
            data["train"]["split"] = tuple(data["train"].get("split", (0.6, 0.2, 0.2)))
            data["train"] = mtl.TrainConfig(**data["train"])
        return PipelineConfig(**data)

    @staticmethod
    def load(path) -> "PipelineConfig":
        return PipelineConfig.from_json(Path(path).read_text(encoding="utf-8"))


# -- detector plumbing ---------------------------------------------------------


class _HtmStream:
    def __init__(self, rng_range: FeatureRange, seed: int):
        cfg = DetectorConfig(
            encoder=ScalarEncoderConfig(minimum=rng_range.minimum, maximum=rng_range.maximum),
            pooler=SpatialPoolerConfig(),
            memory=TemporalMemoryConfig(),
            likelihood=LikelihoodConfig(),
        )
        self.detector = Detector(cfg, seed=seed)

    def step(self, x: float) -> float:
        _, likelihood = self.detector.step(x)
        return likelihood


def make_feature_detector(detector: str, rng_range: FeatureRange, seed: int):
    """One streaming likelihood source per feature stream."""
    if detector == "htm":
        return _HtmStream(rng_range, seed)
    if detector == "re":
        return baselines.RelativeEntropyDetector(rng_range.minimum, rng_range.maximum)
    if detector == "expose":
        return baselines.ExposeDetector()
    raise ValueError(f"unknown detector {detector!r}")


def detector_seed(cfg: PipelineConfig, trip: TripRecord, feature: str) -> int:
    """Per-trip, per-feature detector seed; stable across reruns."""
    index = FEATURES.index(feature)
    base = derive_seed(cfg.seed, index)
    return derive_seed(base, zlib.crc32(trip.meta.trip_id.encode("utf-8")))


def feature_value(obs: WindowObservation, feature: str) -> float:
    if feature == "speed":
        return obs.speed
    if feature == "jerk":
        return obs.jerk
    return float(obs.congestion)


def feature_streams(
    trip: TripRecord, cfg: PipelineConfig
) -> tuple[list[WindowObservation], dict[str, list[float]]]:
    """Window observations and per-feature likelihood traces for a trip."""
    obs = windows(trip, SmootherConfig(width=cfg.smoother_width))
    likelihoods: dict[str, list[float]] = {}
    for feature in FEATURES:
        det = make_feature_detector(cfg.detector, cfg.feature_range(feature), detector_seed(cfg, trip, feature))
        likelihoods[feature] = [det.step(feature_value(o, feature)) for o in obs]
    return obs, likelihoods


def bootstrap_window_count(cfg: PipelineConfig, sample_window_s: float) -> int:
    return int(math.ceil(cfg.bootstrap_minutes * 60.0 / sample_window_s))


def assemble_feature_vectors(
    obs: Sequence[WindowObservation], likelihoods: dict[str, list[float]]
) -> list[FeatureVector]:
    return [
        FeatureVector(
            speed_likelihood=likelihoods["speed"][i],
            jerk_likelihood=likelihoods["jerk"][i],
            congestion_likelihood=likelihoods["congestion"][i],
            travel_time_s=o.travel_time_s,
            distance_km=o.distance_km,
            time_zone=o.time_zone,
        )
        for i, o in enumerate(obs)
    ]


# -- trip report ----------------------------------------------------------------


@dataclass(frozen=True)
class WindowResult:
    window_index: int
    t_mid: float
    level: int
    queried: bool


@dataclass(frozen=True)
class TripReport:
    trip_id: str
    commuter_id: str
    detector: str
    rating: int
    impacts: dict[str, float]  # speed / congestion / jerkiness, percent
    results: tuple[WindowResult, ...]
    bootstrap_windows: int
    total_windows: int

    def query_count(self) -> int:
        return sum(1 for r in self.results if r.queried)

    def to_kv_text(self) -> str:
        lines = [
            f"trip_id = {self.trip_id}",
            f"commuter_id = {self.commuter_id}",
            f"detector = {self.detector}",
            f"rating = {self.rating}",
            f"impact_speed = {self.impacts['speed']:.3f}",
            f"impact_congestion = {self.impacts['congestion']:.3f}",
            f"impact_jerkiness = {self.impacts['jerkiness']:.3f}",
            f"windows = {self.total_windows}",
            f"bootstrap_windows = {self.bootstrap_windows}",
            f"queries = {self.query_count()}",
        ]
        return "\n".join(lines) + "\n"


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def rating_from_levels(levels: Sequence[int]) -> int:
    """Trip rating: arithmetic mean of per-window levels, rounded half-up
    and clamped to 1..5."""
    if not levels:
        raise ValueError("no levels to rate")
    return min(5, max(1, round_half_up(sum(levels) / len(levels))))


def impact_percentages(likelihoods: dict[str, list[float]], start: int) -> dict[str, float]:
    """Share of each feature's mean post-bootstrap likelihood, in percent."""
    means = {f: float(np.mean(traces[start:])) if len(traces) > start else 0.0
             for f, traces in likelihoods.items()}
    total = sum(means.values())
    if total <= 0:
        return {"speed": 100.0 / 3, "congestion": 100.0 / 3, "jerkiness": 100.0 / 3}
    return {
        "speed": means["speed"] / total * 100.0,
        "congestion": means["congestion"] / total * 100.0,
        "jerkiness": means["jerk"] / total * 100.0,
    }


def run_trip(
    trip: TripRecord,
    model: mtl.MtlModel,
    cfg: PipelineConfig,
    queue: Optional[mtl.FeedbackQueue] = None,
) -> TripReport:
    """Score one trip with a trained model.

    Comfort predictions start after the bootstrap stretch; ambiguous
    indicator vectors raise ground-truth queries (rate-limited per trip
    and 5-minute span).
    """
    obs, likelihoods = feature_streams(trip, cfg)
    needed = bootstrap_window_count(cfg, trip.meta.sample_window)
    if len(obs) <= needed:
        raise InsufficientTripLengthError(len(obs), needed)
    fvs = assemble_feature_vectors(obs, likelihoods)

    results: list[WindowResult] = []
    for i in range(needed, len(obs)):
        iv = model.forward(trip.meta.commuter_id, fvs[i])
        queried = False
        if mtl.should_query(iv, cfg.gap_threshold) and queue is not None:
            queried = queue.request(
                mtl.PendingQuery(
                    commuter_id=trip.meta.commuter_id,
                    trip_id=trip.meta.trip_id,
                    window_index=obs[i].window_index,
                    t_mid=obs[i].t_mid,
                    features=fvs[i],
                )
            )
        results.append(
            WindowResult(
                window_index=obs[i].window_index,
                t_mid=obs[i].t_mid,
                level=iv.level(),
                queried=queried,
            )
        )

    return TripReport(
        trip_id=trip.meta.trip_id,
        commuter_id=trip.meta.commuter_id,
        detector=cfg.detector,
        rating=rating_from_levels([r.level for r in results]),
        impacts=impact_percentages(likelihoods, needed),
        results=tuple(results),
        bootstrap_windows=needed,
        total_windows=len(obs),
    )


def features_csv(trip: TripRecord, cfg: PipelineConfig) -> str:
    """Per-window instantaneous features as CSV (no detectors)."""
    obs = windows(trip, SmootherConfig(width=cfg.smoother_width))
    out = ["window_index,t_mid,speed,jerk,congestion,travel_time_s,distance_km,time_zone"]
    for o in obs:
        out.append(
            f"{o.window_index},{o.t_mid!r},{o.speed!r},{o.jerk!r},{o.congestion},"
            f"{o.travel_time_s!r},{o.distance_km!r},{o.time_zone}"
        )
    return "\n".join(out) + "\n"


def trace_csv(trip: TripRecord, cfg: PipelineConfig) -> str:
    """Per-window trace of features, likelihoods, and deviation flags."""
    from .htm import is_anomalous

    obs, likelihoods = feature_streams(trip, cfg)
    out = ["window_index,t_mid,speed,jerk,congestion,travel_time_s,distance_km,time_zone,"
           "likelihood_speed,likelihood_jerk,likelihood_congestion,"
           "flag_speed,flag_jerk,flag_congestion"]
    for i, o in enumerate(obs):
        flags = [int(is_anomalous(likelihoods[f][i], cfg.epsilon)) for f in FEATURES]
        out.append(
            f"{o.window_index},{o.t_mid!r},{o.speed!r},{o.jerk!r},{o.congestion},"
            f"{o.travel_time_s!r},{o.distance_km!r},{o.time_zone},"
            f"{likelihoods['speed'][i]!r},{likelihoods['jerk'][i]!r},{likelihoods['congestion'][i]!r},"
            f"{flags[0]},{flags[1]},{flags[2]}"
        )
    return "\n".join(out) + "\n"


# -- dataset assembly and training ------------------------------------------------


def trip_rows(trip: TripRecord, cfg: PipelineConfig) -> list[mtl.Row]:
    """Labeled training rows for one trip: post-bootstrap windows tagged
    with the prevailing comfort label at their midpoint."""
    if not trip.labels:
        raise ValueError(f"trip {trip.meta.trip_id!r} has no comfort labels")
    obs, likelihoods = feature_streams(trip, cfg)
    needed = bootstrap_window_count(cfg, trip.meta.sample_window)
    if len(obs) <= needed:
        raise InsufficientTripLengthError(len(obs), needed)
    fvs = assemble_feature_vectors(obs, likelihoods)
    cid = trip.meta.commuter_id
    return [
        (cid, fvs[i], prevailing_level(trip.labels, obs[i].t_mid))
        for i in range(needed, len(obs))
    ]


def oracle_rating(trip: TripRecord, cfg: PipelineConfig) -> int:
    """Trip rating implied by the stored comfort labels."""
    obs = windows(trip, SmootherConfig(width=cfg.smoother_width))
    needed = bootstrap_window_count(cfg, trip.meta.sample_window)
    levels = [prevailing_level(trip.labels, o.t_mid) for o in obs[needed:]]
    return rating_from_levels(levels)


def split_trips(
    trips: Sequence[TripRecord], split: tuple[float, float, float], seed: int
) -> tuple[list[TripRecord], list[TripRecord], list[TripRecord]]:
    """Deterministic per-commuter 60/20/20 split by whole trips."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3,)))
    by_commuter: dict[str, list[TripRecord]] = {}
    for t in sorted(trips, key=lambda t: t.meta.trip_id):
        by_commuter.setdefault(t.meta.commuter_id, []).append(t)
    train_set: list[TripRecord] = []
    val_set: list[TripRecord] = []
    test_set: list[TripRecord] = []
    for cid in sorted(by_commuter):
        group = by_commuter[cid]
        order = rng.permutation(len(group))
        shuffled = [group[i] for i in order]
        n = len(shuffled)
        n_train = max(1, round(split[0] * n))
        n_val = min(n - n_train, max(0, round(split[1] * n)))
        train_set.extend(shuffled[:n_train])
        val_set.extend(shuffled[n_train : n_train + n_val])
        test_set.extend(shuffled[n_train + n_val :])
    return train_set, val_set, test_set


@dataclass
class TrainOutcome:
    model: mtl.MtlModel
    result: mtl.TrainResult
    train_trips: list[str]
    val_trips: list[str]
    test_trips: list[str]


def train_pipeline(trips: Sequence[TripRecord], cfg: PipelineConfig) -> TrainOutcome:
    """Train a multi-task model on a labeled trip set (split by trip)."""
    missing = [t.meta.trip_id for t in trips if not t.labels]
    if missing:
        raise ValueError(f"trips without comfort labels: {', '.join(sorted(missing))}")
    train_set, val_set, test_set = split_trips(trips, cfg.train.split, cfg.train.seed)
    train_rows = [row for t in train_set for row in trip_rows(t, cfg)]
    val_rows = [row for t in val_set for row in trip_rows(t, cfg)]
    commuters = sorted({t.meta.commuter_id for t in train_set})
    model = mtl.MtlModel(commuters, hidden=cfg.hidden, seed=cfg.train.seed)
    result = mtl.train(model, train_rows, cfg.train, val_rows=val_rows or None)
    return TrainOutcome(
        model=model,
        result=result,
        train_trips=[t.meta.trip_id for t in train_set],
        val_trips=[t.meta.trip_id for t in val_set],
        test_trips=[t.meta.trip_id for t in test_set],
    )


def eval_pipeline(
    test_trips: Sequence[TripRecord],
    model: mtl.MtlModel,
    cfg: PipelineConfig,
    sobol_n: int = 1024,
) -> dict[str, float]:
    """Metrics on held-out trips: one-vs-all AUC per level, macro AUC,
    rating concordance, and total-order feature importances."""
    if not test_trips:
        raise ValueError("no trips to evaluate (is the test split empty?)")
    indicators: list[tuple[float, ...]] = []
    levels: list[int] = []
    predicted_ratings: list[float] = []
    oracle_ratings: list[float] = []
    all_fvs: list[FeatureVector] = []
    for trip in test_trips:
        rows = trip_rows(trip, cfg)
        trip_levels = []
        for cid, fv, level in rows:
            iv = model.forward(cid, fv)
            indicators.append(iv.p)
            levels.append(level)
            trip_levels.append(iv.level())
            all_fvs.append(fv)
        predicted_ratings.append(rating_from_levels(trip_levels))
        oracle_ratings.append(oracle_rating(trip, cfg))

    out: dict[str, float] = {}
    roc = metrics.multiclass_auc(indicators, levels)
    for level, auc in sorted(roc.per_class.items()):
        out[f"auc_level_{level}"] = auc
    out["auc_macro"] = roc.macro
    if len(test_trips) >= 2:
        out["kendall_w"] = metrics.kendall_w([predicted_ratings, oracle_ratings])

    spans = _observed_spans(all_fvs)
    try:
        sobol = metrics.sobol_total_order(
            _sobol_target(model),
            spans,
            n_base=sobol_n,
            rng=np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(4,))),
        )
    except metrics.UndefinedMetricError:
        # A model that predicts one level over the whole input box has no
        # variance to decompose; the importance entries are undefined.
        return out
    names = (
        "sobol_speed_likelihood",
        "sobol_jerk_likelihood",
        "sobol_congestion_likelihood",
        "sobol_travel_time",
        "sobol_distance",
        "sobol_time_zone",
    )
    for name, value in zip(names, sobol.total_order):
        out[name] = value
    return out


def _observed_spans(fvs: Sequence[FeatureVector]) -> list[tuple[float, float]]:
    arr = np.array([fv.as_tuple() for fv in fvs], dtype=float)
    spans = []
    for j in range(5):
        lo, hi = float(arr[:, j].min()), float(arr[:, j].max())
        if hi <= lo:
            hi = lo + 1e-6
        spans.append((lo, hi))
    spans.append((0.0, 4.0))  # time zone index, floored to 0..3
    return spans


def _sobol_target(model: mtl.MtlModel):
    """Scalar sensitivity target: predicted level averaged over heads."""

    def f(x: np.ndarray) -> np.ndarray:
        n = len(x)
        enc = np.zeros((n, mtl.INPUT_WIDTH))
        enc[:, 0:3] = x[:, 0:3]
        enc[:, 3] = x[:, 3] / model.t_max
        enc[:, 4] = x[:, 4] / model.d_max
        zones = np.clip(x[:, 5].astype(int), 0, 3)
        enc[np.arange(n), 5 + zones] = 1.0
        total = np.zeros(n)
        for k in range(len(model.head_w)):
            probs = model.forward_batch(enc, np.full(n, k, dtype=int))
            total += probs.argmax(axis=1) + 1
        return total / len(model.head_w)

    return f


def metrics_kv_text(values: dict[str, float]) -> str:
    return "".join(f"{k} = {values[k]!r}\n" for k in sorted(values))


# -- synthesis ------------------------------------------------------------------


def synth_batch(
    script: ScenarioScript, count: int, master_seed: int, out_dir: str | os.PathLike
) -> list[Path]:
    """Render ``count`` trips with per-trip derived seeds and write them
    as trip files named <trip_id>_<index>.trip."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        seed = derive_seed(master_seed, i)
        trip_script = replace(
            script,
            trip_id=f"{script.trip_id}_{i:03d}",
        )
        record = render_trip(trip_script, SeededRng(seed))
        path = out / f"{trip_script.trip_id}.trip"
        write_trip(record, path)
        paths.append(path)
    return paths


def feedback_pass(
    trips: Sequence[TripRecord],
    model: mtl.MtlModel,
    cfg: PipelineConfig,
) -> mtl.FeedbackQueue:
    """Collect ground-truth queries over trips and answer them from the
    trips' stored labels (the synthetic commuter).

    Registered commuters are queried on ambiguous predictions; unknown
    commuters are queried at every admissible window, mirroring a new
    user joining the system.
    """
    queue = mtl.FeedbackQueue()
    for trip in trips:
        obs, likelihoods = feature_streams(trip, cfg)
        needed = bootstrap_window_count(cfg, trip.meta.sample_window)
        if len(obs) <= needed:
            continue
        fvs = assemble_feature_vectors(obs, likelihoods)
        cid = trip.meta.commuter_id
        registered = cid in model.registry
        for i in range(needed, len(obs)):
            if registered:
                iv = model.forward(cid, fvs[i])
                if not mtl.should_query(iv, cfg.gap_threshold):
                    continue
            query = mtl.PendingQuery(
                commuter_id=cid,
                trip_id=trip.meta.trip_id,
                window_index=obs[i].window_index,
                t_mid=obs[i].t_mid,
                features=fvs[i],
            )
            if queue.request(query):
                queue.answer(query, prevailing_level(trip.labels, obs[i].t_mid))
    return queue
