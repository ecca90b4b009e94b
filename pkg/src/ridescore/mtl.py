"""Personalized comfort-level prediction.

A small multi-task network: one shared hidden layer over the 9-wide
input (three deviation likelihoods, scaled travel time and distance, and
the time zone as a 4-way one-hot), plus one softmax head per commuter.
The shared layer receives gradients from every commuter's data; each
head only from its own.  Training is plain mini-batch gradient descent
with a fixed learning rate, deterministic under a fixed seed.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .trips import FeatureVector, IndicatorVector

INPUT_WIDTH = 9
N_LEVELS = 5
N_ZONES = 4

# At most one pending query per trip per this many seconds.
QUERY_SPAN_S = 300.0


class UnknownCommuterError(KeyError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)

    def __post_init__(self):
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {self.split}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


@dataclass
class TrainResult:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)


Row = tuple[str, FeatureVector, int]  # (commuter_id, features, level 1..5)


class MtlModel:
    """Shared trunk + per-commuter heads.

    Head initialization depends only on (seed, head index), so a commuter
    registered later gets the same head no matter when registration
    happens.
    """

    def __init__(self, commuters: Sequence[str], hidden: int = 32, seed: int = 0):
        self.hidden = hidden
        self.seed = seed
        self.t_max = 1.0
        self.d_max = 1.0
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
        bound = 1.0 / np.sqrt(INPUT_WIDTH)
        self.w1 = rng.uniform(-bound, bound, size=(INPUT_WIDTH, hidden))
        self.b1 = np.zeros(hidden)
        self.registry: dict[str, int] = {}
        self.head_w: list[np.ndarray] = []
        self.head_b: list[np.ndarray] = []
        for cid in commuters:
            self.register(cid)

    def register(self, commuter_id: str) -> int:
        if commuter_id in self.registry:
            return self.registry[commuter_id]
        index = len(self.head_w)
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(1, index)))
        bound = 1.0 / np.sqrt(self.hidden)
        self.head_w.append(rng.uniform(-bound, bound, size=(self.hidden, N_LEVELS)))
        self.head_b.append(np.zeros(N_LEVELS))
        self.registry[commuter_id] = index
        return index

    def clone(self) -> "MtlModel":
        out = MtlModel([], hidden=self.hidden, seed=self.seed)
        out.t_max = self.t_max
        out.d_max = self.d_max
        out.w1 = self.w1.copy()
        out.b1 = self.b1.copy()
        out.registry = dict(self.registry)
        out.head_w = [w.copy() for w in self.head_w]
        out.head_b = [b.copy() for b in self.head_b]
        return out

    # -- encoding ---------------------------------------------------------

    def encode(self, fv: FeatureVector) -> np.ndarray:
        x = np.zeros(INPUT_WIDTH)
        x[0] = fv.speed_likelihood
        x[1] = fv.jerk_likelihood
        x[2] = fv.congestion_likelihood
        x[3] = fv.travel_time_s / self.t_max
        x[4] = fv.distance_km / self.d_max
        zone = int(fv.time_zone)
        if not (0 <= zone < N_ZONES):
            raise ValueError(f"time zone must lie in 0..{N_ZONES - 1}, got {zone}")
        x[5 + zone] = 1.0
        return x

    def update_normalization(self, rows: Sequence[Row]) -> None:
        """Track the running per-dataset maxima used to scale T_t and d_t."""
        for _, fv, _ in rows:
            self.t_max = max(self.t_max, fv.travel_time_s)
            self.d_max = max(self.d_max, fv.distance_km)

    # -- forward ------------------------------------------------------------

    def forward_batch(self, x: np.ndarray, head_idx: np.ndarray) -> np.ndarray:
        h = np.maximum(x @ self.w1 + self.b1, 0.0)
        w2 = np.stack(self.head_w)[head_idx]
        b2 = np.stack(self.head_b)[head_idx]
        logits = np.einsum("nh,nhk->nk", h, w2) + b2
        logits -= logits.max(axis=1, keepdims=True)
        exp = np.exp(logits)
        return exp / exp.sum(axis=1, keepdims=True)

    def forward(self, commuter_id: str, fv: FeatureVector) -> IndicatorVector:
        if commuter_id not in self.registry:
            raise UnknownCommuterError(f"commuter {commuter_id!r} is not registered")
        idx = np.array([self.registry[commuter_id]])
        probs = self.forward_batch(self.encode(fv)[None, :], idx)[0]
        return IndicatorVector(p=tuple(float(v) for v in probs))


def _prepare(model: MtlModel, rows: Sequence[Row]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.vstack([model.encode(fv) for _, fv, _ in rows])
    y = np.array([level - 1 for _, _, level in rows], dtype=int)
    head_idx = np.array([model.registry[cid] for cid, _, _ in rows], dtype=int)
    if (y < 0).any() or (y >= N_LEVELS).any():
        raise ValueError("levels must lie in 1..5")
    return x, y, head_idx


def dataset_loss(model: MtlModel, rows: Sequence[Row]) -> float:
    """Mean cross-entropy of the model on labeled rows."""
    x, y, head_idx = _prepare(model, rows)
    probs = model.forward_batch(x, head_idx)
    return float(-np.mean(np.log(probs[np.arange(len(y)), y] + 1e-300)))


def gradients(model: MtlModel, rows: Sequence[Row]) -> dict[str, np.ndarray]:
    """Mean cross-entropy gradients for every parameter (heads that got
    no rows have zero gradient)."""
    x, y, head_idx = _prepare(model, rows)
    n = len(rows)
    h_pre = x @ model.w1 + model.b1
    h = np.maximum(h_pre, 0.0)
    w2 = np.stack(model.head_w)[head_idx]
    b2 = np.stack(model.head_b)[head_idx]
    logits = np.einsum("nh,nhk->nk", h, w2) + b2
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    probs = exp / exp.sum(axis=1, keepdims=True)

    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n

    grads: dict[str, np.ndarray] = {}
    for k in range(len(model.head_w)):
        mask = head_idx == k
        if mask.any():
            grads[f"head_w_{k}"] = h[mask].T @ dlogits[mask]
            grads[f"head_b_{k}"] = dlogits[mask].sum(axis=0)
        else:
            grads[f"head_w_{k}"] = np.zeros_like(model.head_w[k])
            grads[f"head_b_{k}"] = np.zeros_like(model.head_b[k])

    dh = np.einsum("nk,nhk->nh", dlogits, w2)
    dh[h_pre <= 0.0] = 0.0
    grads["w1"] = x.T @ dh
    grads["b1"] = dh.sum(axis=0)
    return grads


def _apply(model: MtlModel, grads: dict[str, np.ndarray], lr: float) -> None:
    model.w1 -= lr * grads["w1"]
    model.b1 -= lr * grads["b1"]
    for k in range(len(model.head_w)):
        model.head_w[k] -= lr * grads[f"head_w_{k}"]
        model.head_b[k] -= lr * grads[f"head_b_{k}"]


def train(
    model: MtlModel,
    rows: Sequence[Row],
    cfg: TrainConfig,
    val_rows: Optional[Sequence[Row]] = None,
) -> TrainResult:
    """Mini-batch gradient descent over all tasks jointly; batches mix
    commuters.  Mutates the model in place and reports per-epoch losses."""
    if not rows:
        raise ValueError("training needs at least one labeled row")
    present = {cid for cid, _, _ in rows}
    for cid in model.registry:
        if cid not in present:
            warnings.warn(f"commuter {cid!r} has no training rows; head left as-is", stacklevel=2)
    for cid in sorted(present):
        if cid not in model.registry:
            raise UnknownCommuterError(f"commuter {cid!r} is not registered")

    model.update_normalization(rows)
    if val_rows:
        model.update_normalization(val_rows)

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2,)))
    result = TrainResult()
    order = np.arange(len(rows))
    for _ in range(cfg.epochs):
        rng.shuffle(order)
        for start in range(0, len(order), cfg.batch_size):
            batch = [rows[i] for i in order[start : start + cfg.batch_size]]
            _apply(model, gradients(model, batch), cfg.learning_rate)
        result.train_loss.append(dataset_loss(model, rows))
        result.val_loss.append(dataset_loss(model, val_rows) if val_rows else float("nan"))
    return result


def stl_train(
    commuter_id: str,
    rows: Sequence[Row],
    cfg: TrainConfig,
    hidden: int = 32,
) -> tuple[MtlModel, TrainResult]:
    """Single-task comparator: the same architecture with exactly one
    head, trained on one commuter in isolation."""
    only = [r for r in rows if r[0] == commuter_id]
    if not only:
        raise ValueError(f"no rows for commuter {commuter_id!r}")
    model = MtlModel([commuter_id], hidden=hidden, seed=cfg.seed)
    result = train(model, only, cfg)
    return model, result


def should_query(iv: IndicatorVector, gap_threshold: float = 0.1) -> bool:
    """Ask for ground truth when the top-two probabilities are closer
    than the threshold (strict inequality)."""
    return iv.gap() < gap_threshold


@dataclass(frozen=True)
class PendingQuery:
    commuter_id: str
    trip_id: str
    window_index: int
    t_mid: float
    features: FeatureVector


@dataclass(frozen=True)
class AnsweredQuery:
    query: PendingQuery
    level: int


class FeedbackQueue:
    """Pending ground-truth requests plus collected answers.

    The survey-fatigue guard admits at most one pending query per trip
    per 5-minute span.
    """

    def __init__(self):
        self.pending: list[PendingQuery] = []
        self.answered: list[AnsweredQuery] = []
        self._spans: set[tuple[str, int]] = set()

    def request(self, query: PendingQuery) -> bool:
        span = (query.trip_id, int(query.t_mid // QUERY_SPAN_S))
        if span in self._spans:
            return False
        self._spans.add(span)
        self.pending.append(query)
        return True

    def answer(self, query: PendingQuery, level: int) -> None:
        if level not in (1, 2, 3, 4, 5):
            raise ValueError(f"level must lie in 1..5, got {level}")
        self.pending.remove(query)
        self.answered.append(AnsweredQuery(query=query, level=level))

    def answered_rows(self) -> list[Row]:
        return [(a.query.commuter_id, a.query.features, a.level) for a in self.answered]


def retrain(
    model: MtlModel,
    queue: FeedbackQueue,
    cfg: TrainConfig,
    base_rows: Sequence[Row] = (),
    val_rows: Optional[Sequence[Row]] = None,
) -> tuple[MtlModel, Optional[TrainResult]]:
    """Warm-start retraining on the base dataset plus answered queries.

    Returns a new model snapshot; the input model is untouched.  An empty
    answer set returns the model unchanged (no training pass).
    """
    new_rows = queue.answered_rows()
    if not new_rows:
        return model, None
    out = model.clone()
    for cid, _, _ in new_rows:
        out.register(cid)
    rows = list(base_rows) + new_rows
    result = train(out, rows, cfg, val_rows=val_rows)
    return out, result


# -- checkpointing --------------------------------------------------------------


def save_model(model: MtlModel, path: str | os.PathLike) -> None:
    payload = {
        "version": 1,
        "hidden": model.hidden,
        "seed": model.seed,
        "t_max": model.t_max,
        "d_max": model.d_max,
        "registry": model.registry,
        "w1": model.w1.tolist(),
        "b1": model.b1.tolist(),
        "head_w": [w.tolist() for w in model.head_w],
        "head_b": [b.tolist() for b in model.head_b],
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
    os.replace(tmp, path)


def load_model(path: str | os.PathLike) -> MtlModel:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("version") != 1:
        raise ValueError(f"unsupported model checkpoint version {payload.get('version')!r}")
    model = MtlModel([], hidden=payload["hidden"], seed=payload["seed"])
    model.t_max = payload["t_max"]
    model.d_max = payload["d_max"]
    model.registry = {str(k): int(v) for k, v in payload["registry"].items()}
    model.w1 = np.array(payload["w1"], dtype=float)
    model.b1 = np.array(payload["b1"], dtype=float)
    model.head_w = [np.array(w, dtype=float) for w in payload["head_w"]]
    model.head_b = [np.array(b, dtype=float) for b in payload["head_b"]]
    return model
