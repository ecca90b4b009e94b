"""One streaming detector per feature stream: encoder -> spatial pooler
-> temporal memory -> deviation likelihood.

Checkpoints are a versioned binary container (JSON header + raw arrays)
whose bytes are deterministic and whose load restores bit-identical
behavior, including the learning RNG state.
"""

from __future__ import annotations

import json
import os
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from .encoder import ScalarEncoderConfig, encode
from .likelihood import AnomalyLikelihood, LikelihoodConfig
from .spatial_pooler import SpatialPooler, SpatialPoolerConfig
from .temporal_memory import TemporalMemory, TemporalMemoryConfig

_MAGIC = b"RSDETv1\n"

DEFAULT_EPSILON = 1e-5


@dataclass(frozen=True)
class DetectorConfig:
    encoder: ScalarEncoderConfig
    pooler: SpatialPoolerConfig = field(default_factory=SpatialPoolerConfig)
    memory: TemporalMemoryConfig = field(default_factory=TemporalMemoryConfig)
    likelihood: LikelihoodConfig = field(default_factory=LikelihoodConfig)


def is_anomalous(likelihood: float, epsilon: float = DEFAULT_EPSILON) -> bool:
    """Deviation flag: likelihood >= 1 - epsilon (boundary inclusive)."""
    return likelihood >= 1.0 - epsilon


class Detector:
    """Single-owner mutable streaming state for one feature stream.

    Learning is on from the first step and stays on (continuous
    learning); consumers decide from ``steps`` whether the detector has
    seen enough of the trip to trust its likelihoods.
    """

    def __init__(self, cfg: DetectorConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        sp_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
        tm_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
        self.pooler = SpatialPooler(cfg.encoder.width, cfg.pooler, sp_rng)
        self.memory = TemporalMemory(cfg.pooler.columns, cfg.memory, tm_rng)
        self.likelihood = AnomalyLikelihood(cfg.likelihood)
        self.steps = 0
        self.learning = True

    def step(self, x: float) -> tuple[float, float]:
        """Process one value; returns (raw prediction error, likelihood).

        The raw score compares the pooled representation of ``x`` with
        the columns the memory predicted at the previous step: 0 when the
        prediction covered all active columns, 1 when disjoint.  The very
        first step has no prediction and scores 1 by definition.
        """
        bits = encode(x, self.cfg.encoder)
        active = self.pooler.compute(bits, learn=self.learning)
        predicted = self.memory.predicted_columns
        if self.steps == 0:
            raw = 1.0
        else:
            hits = sum(1 for col in active.tolist() if col in predicted)
            raw = 1.0 - hits / len(active)
        self.memory.compute(active, learn=self.learning)
        score = self.likelihood.update(raw, metric=x)
        self.steps += 1
        return raw, score

    def run(self, values) -> tuple[list[float], list[float]]:
        raws, scores = [], []
        for x in values:
            raw, score = self.step(x)
            raws.append(raw)
            scores.append(score)
        return raws, scores


def bootstrap(detector: Detector, prefix) -> Detector:
    """Step the detector through the opening stretch of a trip with
    learning on; likelihoods during this phase are for warm-up only."""
    for x in prefix:
        detector.step(x)
    return detector


# -- checkpointing ------------------------------------------------------------


def save_detector(detector: Detector, path: str | os.PathLike) -> None:
    header, arrays = _pack(detector)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(len(blob).to_bytes(8, "big"))
        fh.write(blob)
        for arr in arrays:
            fh.write(arr.tobytes())
    os.replace(tmp, path)


def load_detector(path: str | os.PathLike) -> Detector:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"not a detector checkpoint: bad magic {magic!r}")
        header_len = int.from_bytes(fh.read(8), "big")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        arrays = {}
        for spec in header["arrays"]:
            dtype = np.dtype(spec["dtype"])
            count = int(np.prod(spec["shape"])) if spec["shape"] else 1
            data = fh.read(count * dtype.itemsize)
            arrays[spec["name"]] = np.frombuffer(data, dtype=dtype).reshape(spec["shape"]).copy()
    return _unpack(header, arrays)


def _pack(detector: Detector) -> tuple[dict, list[np.ndarray]]:
    tm = detector.memory
    sp = detector.pooler
    lik = detector.likelihood

    syn_seg, syn_presyn, syn_perm = [], [], []
    for seg, synapses in enumerate(tm.seg_synapses):
        for presyn, perm in sorted(synapses.items()):
            syn_seg.append(seg)
            syn_presyn.append(presyn)
            syn_perm.append(perm)

    arrays = [
        ("sp_potential", sp.potential.astype(np.uint8)),
        ("sp_permanences", sp.permanences.astype(np.float64)),
        ("tm_seg_owner", np.asarray(tm.seg_owner, dtype=np.int64)),
        ("tm_syn_seg", np.asarray(syn_seg, dtype=np.int64)),
        ("tm_syn_presyn", np.asarray(syn_presyn, dtype=np.int64)),
        ("tm_syn_perm", np.asarray(syn_perm, dtype=np.float64)),
        ("tm_prev_active", np.asarray(sorted(tm.prev_active_cells), dtype=np.int64)),
        ("tm_prev_winners", np.asarray(tm.prev_winner_cells, dtype=np.int64)),
        ("lik_scores", np.asarray(lik.scores, dtype=np.float64)),
        ("lik_metrics", np.asarray(lik._metrics, dtype=np.float64)),
    ]
    header = {
        "version": 1,
        "config": {
            "encoder": asdict(detector.cfg.encoder),
            "pooler": asdict(detector.cfg.pooler),
            "memory": asdict(detector.cfg.memory),
            "likelihood": asdict(detector.cfg.likelihood),
        },
        "seed": detector.seed,
        "steps": detector.steps,
        "learning": detector.learning,
        # Running sums as hex floats: recomputing them from the window
        # would differ in the last bit from the accumulated values.
        "lik_sums": {
            "sum": lik._sum.hex(),
            "sumsq": lik._sumsq.hex(),
            "short_sum": lik._short_sum.hex(),
        },
        "tm_rng_state": _rng_state_to_json(tm.rng),
        "arrays": [
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)}
            for name, arr in arrays
        ],
    }
    return header, [arr for _, arr in arrays]


def _unpack(header: dict, arrays: dict[str, np.ndarray]) -> Detector:
    cfg = DetectorConfig(
        encoder=ScalarEncoderConfig(**header["config"]["encoder"]),
        pooler=SpatialPoolerConfig(**header["config"]["pooler"]),
        memory=TemporalMemoryConfig(**header["config"]["memory"]),
        likelihood=LikelihoodConfig(**header["config"]["likelihood"]),
    )
    detector = Detector(cfg, seed=header["seed"])
    detector.steps = header["steps"]
    detector.learning = header["learning"]

    sp = detector.pooler
    sp.potential = arrays["sp_potential"].astype(bool)
    sp.permanences = arrays["sp_permanences"]
    sp._rebuild_connected()

    tm = detector.memory
    tm.seg_owner = arrays["tm_seg_owner"].tolist()
    tm.seg_synapses = [{} for _ in tm.seg_owner]
    tm.cell_segments.clear()
    for seg, owner in enumerate(tm.seg_owner):
        tm.cell_segments[owner].append(seg)
    for seg, presyn, perm in zip(
        arrays["tm_syn_seg"].tolist(),
        arrays["tm_syn_presyn"].tolist(),
        arrays["tm_syn_perm"].tolist(),
    ):
        tm.seg_synapses[seg][presyn] = perm
    tm.rebuild_indexes()
    tm.prev_active_cells = set(arrays["tm_prev_active"].tolist())
    tm.prev_winner_cells = arrays["tm_prev_winners"].tolist()
    tm.rng = _rng_state_from_json(header["tm_rng_state"])
    tm._refresh_predictions()

    lik = detector.likelihood
    lik.scores = deque(arrays["lik_scores"].tolist())
    lik._metrics = deque(arrays["lik_metrics"].tolist())
    lik._sum = float.fromhex(header["lik_sums"]["sum"])
    lik._sumsq = float.fromhex(header["lik_sums"]["sumsq"])
    lik._short_sum = float.fromhex(header["lik_sums"]["short_sum"])
    short = list(lik.scores)[-min(cfg.likelihood.short_window, len(lik.scores)):]
    lik._short = deque(short)
    return detector


def _rng_state_to_json(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "state": str(state["state"]["state"]),
        "inc": str(state["state"]["inc"]),
        "has_uint32": state["has_uint32"],
        "uinteger": state["uinteger"],
    }


def _rng_state_from_json(payload: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": payload["bit_generator"],
        "state": {"state": int(payload["state"]), "inc": int(payload["inc"])},
        "has_uint32": payload["has_uint32"],
        "uinteger": payload["uinteger"],
    }
    return rng
