"""Temporal memory: sequence learning over active columns.

Cells within a column learn distal segments targeting previously active
cells; cells whose segments match the current activity become
depolarized and constitute the prediction for the next input.

Two reverse indexes (presynaptic cell -> segments with a potential /
connected synapse to it) keep each step proportional to the activity
actually reachable from active cells, and the potential-overlap counts
from the prediction pass double as the growth budget on the next step.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TemporalMemoryConfig:
    cells_per_column: int = 32
    activation_threshold: int = 13
    initial_perm: float = 0.21
    perm_connected: float = 0.5
    min_threshold: int = 10
    max_new_synapses: int = 20
    perm_inc: float = 0.1
    perm_dec: float = 0.1
    max_segments_per_cell: int = 128
    max_synapses_per_segment: int = 32

    def __post_init__(self):
        bound = self.max_synapses_per_segment
        for name in ("activation_threshold", "min_threshold", "max_new_synapses"):
            value = getattr(self, name)
            if value < 1 or value > bound:
                raise ValueError(f"{name}={value} must lie in [1, {bound}] (synapse bound)")
        if self.min_threshold > self.activation_threshold:
            raise ValueError("min_threshold must not exceed activation_threshold")
        if self.cells_per_column < 1:
            raise ValueError(f"cells_per_column must be >= 1, got {self.cells_per_column}")


class TemporalMemory:
    def __init__(self, columns: int, cfg: TemporalMemoryConfig, rng: np.random.Generator):
        self.columns = columns
        self.cfg = cfg
        self.rng = rng

        self.seg_owner: list[int] = []
        self.seg_synapses: list[dict[int, float]] = []
        self.cell_segments: dict[int, list[int]] = defaultdict(list)
        self.presyn_potential: dict[int, set[int]] = defaultdict(set)
        self.presyn_connected: dict[int, set[int]] = defaultdict(set)

        self.prev_active_cells: set[int] = set()
        self.prev_winner_cells: list[int] = []
        self.predictive_cells: set[int] = set()
        self.predicted_columns: set[int] = set()
        self._predictive_by_col: dict[int, list[int]] = {}
        self._active_segments_by_cell: dict[int, list[int]] = {}
        self._matching_by_column: dict[int, tuple[int, int]] = {}
        self._pot_counts: Counter[int] = Counter()

    # -- stepping -------------------------------------------------------

    def compute(self, active_columns: np.ndarray, learn: bool = True) -> None:
        """Activate cells for the given columns, learn, and refresh the
        prediction for the next step."""
        cpc = self.cfg.cells_per_column
        prev_active = self.prev_active_cells
        prev_winners = self.prev_winner_cells
        pot_counts = self._pot_counts  # potential overlaps vs prev_active

        active_cells: list[int] = []
        winner_cells: list[int] = []
        for col in active_columns.tolist():
            base = col * cpc
            predicted = self._predictive_by_col.get(col)
            if predicted:
                active_cells.extend(predicted)
                winner_cells.extend(predicted)
                if learn:
                    for cell in predicted:
                        for seg in self._active_segments_by_cell.get(cell, ()):
                            self._adapt(seg, prev_active)
                            self._grow(seg, pot_counts.get(seg, 0), prev_winners)
            else:
                active_cells.extend(range(base, base + cpc))
                match = self._matching_by_column.get(col)
                if match is not None:
                    seg, overlap = match
                    winner = self.seg_owner[seg]
                    if learn:
                        self._adapt(seg, prev_active)
                        self._grow(seg, overlap, prev_winners)
                else:
                    winner = self._least_used_cell(col)
                    if learn and prev_winners:
                        self._create_segment(winner, prev_winners)
                winner_cells.append(winner)

        self.prev_active_cells = set(active_cells)
        self.prev_winner_cells = winner_cells
        self._refresh_predictions()

    def _refresh_predictions(self) -> None:
        """Recompute segment activity against the current active cells."""
        cfg = self.cfg
        act: Counter[int] = Counter()
        pot: Counter[int] = Counter()
        connected_index = self.presyn_connected
        potential_index = self.presyn_potential
        for cell in self.prev_active_cells:
            segs = connected_index.get(cell)
            if segs:
                act.update(segs)
            segs = potential_index.get(cell)
            if segs:
                pot.update(segs)

        by_col: dict[int, list[int]] = {}
        active_segments: dict[int, list[int]] = defaultdict(list)
        predictive: set[int] = set()
        cpc = cfg.cells_per_column
        for seg, count in act.items():
            if count >= cfg.activation_threshold:
                cell = self.seg_owner[seg]
                predictive.add(cell)
                active_segments[cell].append(seg)
        for segs in active_segments.values():
            segs.sort()
        for cell in sorted(predictive):
            by_col.setdefault(cell // cpc, []).append(cell)

        matching: dict[int, tuple[int, int]] = {}
        for seg, count in pot.items():
            if count < cfg.min_threshold:
                continue
            col = self.seg_owner[seg] // cpc
            best = matching.get(col)
            if best is None or count > best[1] or (count == best[1] and seg < best[0]):
                matching[col] = (seg, count)

        self.predictive_cells = predictive
        self._predictive_by_col = by_col
        self._active_segments_by_cell = active_segments
        self._matching_by_column = matching
        self._pot_counts = pot
        self.predicted_columns = set(by_col)

    # -- learning primitives ---------------------------------------------

    def _adapt(self, seg: int, prev_active: set[int]) -> None:
        cfg = self.cfg
        synapses = self.seg_synapses[seg]
        inc, dec, conn = cfg.perm_inc, cfg.perm_dec, cfg.perm_connected
        dead: list[int] | None = None
        for presyn, perm in synapses.items():
            if presyn in prev_active:
                new = perm + inc
                if new > 1.0:
                    new = 1.0
                if perm < conn <= new:
                    self.presyn_connected[presyn].add(seg)
                synapses[presyn] = new
            else:
                new = perm - dec
                if new <= 0.0:
                    if dead is None:
                        dead = []
                    dead.append(presyn)
                else:
                    if new < conn <= perm:
                        self.presyn_connected[presyn].discard(seg)
                    synapses[presyn] = new
        if dead:
            for presyn in dead:
                del synapses[presyn]
                self.presyn_potential[presyn].discard(seg)
                self.presyn_connected[presyn].discard(seg)

    def _grow(self, seg: int, active_potential: int, prev_winners: list[int]) -> None:
        cfg = self.cfg
        synapses = self.seg_synapses[seg]
        want = cfg.max_new_synapses - active_potential
        room = cfg.max_synapses_per_segment - len(synapses)
        if room < want:
            want = room
        if want <= 0:
            return
        owner = self.seg_owner[seg]
        candidates = [w for w in prev_winners if w not in synapses and w != owner]
        if not candidates:
            return
        if len(candidates) > want:
            picked = self.rng.choice(len(candidates), size=want, replace=False)
            chosen = [candidates[i] for i in sorted(picked.tolist())]
        else:
            chosen = candidates
        initial = cfg.initial_perm
        connected = initial >= cfg.perm_connected
        for presyn in chosen:
            synapses[presyn] = initial
            self.presyn_potential[presyn].add(seg)
            if connected:
                self.presyn_connected[presyn].add(seg)

    def _create_segment(self, cell: int, prev_winners: list[int]) -> None:
        if len(self.cell_segments[cell]) >= self.cfg.max_segments_per_cell:
            return
        seg = len(self.seg_owner)
        self.seg_owner.append(cell)
        self.seg_synapses.append({})
        self.cell_segments[cell].append(seg)
        self._grow(seg, 0, prev_winners)

    def _least_used_cell(self, col: int) -> int:
        cpc = self.cfg.cells_per_column
        base = col * cpc
        counts = [len(self.cell_segments.get(base + i, ())) for i in range(cpc)]
        least = min(counts)
        pool = [base + i for i, c in enumerate(counts) if c == least]
        if len(pool) == 1:
            return pool[0]
        return pool[int(self.rng.integers(len(pool)))]

    # -- introspection ----------------------------------------------------

    def rebuild_indexes(self) -> None:
        """Reconstruct the reverse indexes from seg_synapses (for loaders)."""
        self.presyn_potential = defaultdict(set)
        self.presyn_connected = defaultdict(set)
        conn = self.cfg.perm_connected
        for seg, synapses in enumerate(self.seg_synapses):
            for presyn, perm in synapses.items():
                self.presyn_potential[presyn].add(seg)
                if perm >= conn:
                    self.presyn_connected[presyn].add(seg)

    def segment_count(self) -> int:
        return len(self.seg_owner)

    def synapse_count(self) -> int:
        return sum(len(s) for s in self.seg_synapses)
