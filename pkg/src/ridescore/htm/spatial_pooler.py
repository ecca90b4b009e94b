"""Spatial pooler: maps an input bit set to a fixed-sparsity set of
active columns through learned permanences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SpatialPoolerConfig:
    columns: int = 2048
    potential_fraction: float = 0.8
    perm_connected: float = 0.2
    perm_inc: float = 0.03
    perm_dec: float = 0.015
    sparsity: float = 0.02

    def __post_init__(self):
        if self.columns < 1:
            raise ValueError(f"columns must be >= 1, got {self.columns}")
        if not (0.0 < self.potential_fraction <= 1.0):
            raise ValueError(f"potential_fraction must lie in (0, 1], got {self.potential_fraction}")
        if not (0.0 < self.perm_connected < 1.0):
            raise ValueError(f"perm_connected must lie in (0, 1), got {self.perm_connected}")
        if round(self.sparsity * self.columns) < 1:
            raise ValueError(f"sparsity {self.sparsity} activates no columns")

    @property
    def active_columns(self) -> int:
        return int(round(self.sparsity * self.columns))


class SpatialPooler:
    """Permanence init spreads around the connected threshold so roughly
    half the potential synapses start connected; no boosting."""

    def __init__(self, input_width: int, cfg: SpatialPoolerConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.input_width = input_width
        self.potential = rng.random((cfg.columns, input_width)) < cfg.potential_fraction
        spread = rng.uniform(-0.15, 0.15, size=(cfg.columns, input_width))
        self.permanences = np.clip(cfg.perm_connected + spread, 0.0, 1.0)
        self.permanences[~self.potential] = 0.0
        self._rebuild_connected()

    def _rebuild_connected(self) -> None:
        self.connected = self.potential & (self.permanences >= self.cfg.perm_connected)

    def compute(self, active_bits: np.ndarray, learn: bool = True) -> np.ndarray:
        """Active column indices (sorted): the top-k columns by overlap
        with the input, ties broken toward lower column index."""
        overlaps = self.connected[:, active_bits].sum(axis=1)
        k = self.cfg.active_columns
        # lexsort: primary key -overlap, secondary column index.
        order = np.lexsort((np.arange(self.cfg.columns), -overlaps))
        active = np.sort(order[:k])
        if learn:
            self._learn(active, active_bits)
        return active

    def _learn(self, active_columns: np.ndarray, active_bits: np.ndarray) -> None:
        cfg = self.cfg
        delta = np.full(self.input_width, -cfg.perm_dec)
        delta[active_bits] = cfg.perm_inc
        block = self.permanences[active_columns] + delta[None, :]
        pot = self.potential[active_columns]
        np.clip(block, 0.0, 1.0, out=block)
        block[~pot] = 0.0
        self.permanences[active_columns] = block
        self.connected[active_columns] = pot & (block >= cfg.perm_connected)
