"""Evaluation metrics: one-vs-all ROC AUC, Kendall's coefficient of
concordance, and Sobol total-order sensitivity indices."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class RocResult:
    per_class: dict[int, float]
    macro: float
    skipped: tuple[int, ...] = ()


@dataclass(frozen=True)
class SobolResult:
    total_order: tuple[float, ...]
    half_width: tuple[float, ...]
    n_base: int


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties given the average of their positions."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=float)
    i = 0
    sorted_vals = values[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability that a random positive outranks a random negative,
    counting ties as 0.5 (Mann-Whitney formulation)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same length")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC undefined: both classes must be present")
    ranks = _average_ranks(scores)
    rank_sum_pos = ranks[labels == 1].sum()
    return float((rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def multiclass_auc(indicators: Sequence[Sequence[float]], levels: Sequence[int]) -> RocResult:
    """One-vs-all AUC per comfort level, using the level's predicted
    probability as the score, macro-averaged over levels present with both
    classes. Levels with a single class are skipped and noted."""
    probs = np.asarray(indicators, dtype=float)
    levels = np.asarray(levels, dtype=int)
    if probs.ndim != 2 or probs.shape[1] != 5:
        raise ValueError("indicators must be an (n, 5) array")
    if len(set(levels.tolist())) < 2:
        raise UndefinedMetricError("need at least two distinct levels")
    per_class: dict[int, float] = {}
    skipped: list[int] = []
    for level in range(1, 6):
        binary = (levels == level).astype(int)
        if binary.sum() == 0 or binary.sum() == len(binary):
            skipped.append(level)
            continue
        per_class[level] = roc_auc(probs[:, level - 1], binary)
    macro = float(np.mean(list(per_class.values())))
    return RocResult(per_class=per_class, macro=macro, skipped=tuple(skipped))


def kendall_w(ratings: Sequence[Sequence[float]]) -> float:
    """Kendall's coefficient of concordance for m rating systems over n
    items: W = 12 * sum((R_i - mean R)^2) / (m^2 (n^3 - n)), with each
    system's scores converted to average ranks."""
    mat = np.asarray(ratings, dtype=float)
    if mat.ndim != 2:
        raise ValueError("ratings must be an (m, n) matrix")
    m, n = mat.shape
    if m < 2 or n < 2:
        raise UndefinedMetricError(f"need m >= 2 systems and n >= 2 items, got {m}x{n}")
    ranks = np.vstack([_average_ranks(row) for row in mat])
    totals = ranks.sum(axis=0)
    deviation = ((totals - totals.mean()) ** 2).sum()
    return float(12.0 * deviation / (m * m * (n ** 3 - n)))


def sobol_total_order(
    model: Callable[[np.ndarray], np.ndarray],
    ranges: Sequence[tuple[float, float]],
    n_base: int,
    rng: np.random.Generator,
    n_bootstrap: int = 100,
) -> SobolResult:
    """Total-order indices by Saltelli sampling with the Jansen estimator.

    ``model`` maps an (n, k) array of inputs to an (n,) array of outputs.
    S_Ti = E[(f(A) - f(A_B^i))^2] / (2 Var f), with bootstrap half-widths
    (1.96 sigma) over resampled rows.
    """
    if n_base < 256:
        raise ValueError(f"n_base must be >= 256, got {n_base}")
    k = len(ranges)
    lo = np.array([r[0] for r in ranges], dtype=float)
    hi = np.array([r[1] for r in ranges], dtype=float)
    a = lo + (hi - lo) * rng.random((n_base, k))
    b = lo + (hi - lo) * rng.random((n_base, k))
    y_a = np.asarray(model(a), dtype=float)
    y_b = np.asarray(model(b), dtype=float)
    sq_diff = np.empty((k, n_base), dtype=float)
    for i in range(k):
        ab_i = a.copy()
        ab_i[:, i] = b[:, i]
        y_abi = np.asarray(model(ab_i), dtype=float)
        sq_diff[i] = (y_a - y_abi) ** 2

    pooled = np.concatenate([y_a, y_b])
    variance = float(np.var(pooled))
    if variance == 0.0:
        raise UndefinedMetricError("model output has zero variance over the sampled inputs")
    totals = sq_diff.mean(axis=1) / (2.0 * variance)

    estimates = np.empty((n_bootstrap, k), dtype=float)
    for r in range(n_bootstrap):
        idx = rng.integers(0, n_base, size=n_base)
        v = float(np.var(np.concatenate([y_a[idx], y_b[idx]])))
        if v == 0.0:
            estimates[r] = totals
            continue
        estimates[r] = sq_diff[:, idx].mean(axis=1) / (2.0 * v)
    half = 1.96 * estimates.std(axis=0)

    return SobolResult(
        total_order=tuple(float(t) for t in totals),
        half_width=tuple(float(h) for h in half),
        n_base=n_base,
    )
