"""Episodic memory: the append-only store every model reads from.

Records are kept whole (failures included -- a failed episode is still
evidence) and indexed per outcome space for nearest-neighbor lookup.  The
memory also maintains rolling per-primitive transition buffers (action, value
deltas, context features) that coupling detection consumes, and per-space
one-step displacement statistics used to size planning steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from hiertask.core import DomainError, EpisodeRecord, OutcomeSpace


class MemoryRejection(DomainError):
    """An episode record failed validation and was not stored."""


class _Growable:
    """A 2-D float buffer that doubles capacity; rows are immutable once added."""

    def __init__(self, dim: int, capacity: int = 64):
        self._data = np.empty((capacity, dim), dtype=float)
        self._n = 0

    def append(self, row: np.ndarray) -> None:
        if self._n == self._data.shape[0]:
            grown = np.empty((2 * self._data.shape[0], self._data.shape[1]), dtype=float)
            grown[: self._n] = self._data[: self._n]
            self._data = grown
        self._data[self._n] = row
        self._n += 1

    def view(self) -> np.ndarray:
        return self._data[: self._n]

    def __len__(self) -> int:
        return self._n


@dataclass(frozen=True)
class NearestHit:
    """One nearest-neighbor result: the owning record and the distance from
    the query to that record's reached value in the queried space."""

    record: EpisodeRecord
    distance: float
    value: np.ndarray


class EpisodicMemory:
    def __init__(self, spaces: dict[str, OutcomeSpace], step_window: int = 1000):
        self.spaces = dict(spaces)
        self.records: list[EpisodeRecord] = []
        self._values: dict[str, _Growable] = {
            sid: _Growable(sp.dim) for sid, sp in spaces.items()
        }
        self._record_ids: dict[str, list[int]] = {sid: [] for sid in spaces}
        # rolling per-primitive transition window, shared across spaces
        self.step_window = int(step_window)
        self._step_actions: list[np.ndarray] = []
        self._step_deltas: dict[str, list[np.ndarray]] = {sid: [] for sid in spaces}
        self._step_contexts: list[np.ndarray] = []
        self._step_episodes: list[int] = []
        # nonzero one-step displacement norms, per space
        self._disp: dict[str, list[float]] = {sid: [] for sid in spaces}
        # every primitive ever executed (pool for local action exploration)
        self._prims: Optional[_Growable] = None
        # record ids whose controllable sequence is a procedure, per goal space
        self._proc_ids: dict[str, list[int]] = {sid: [] for sid in spaces}

    # -- writing ----------------------------------------------------------

    def record(self, rec: EpisodeRecord) -> int:
        """Validate and append one episode; returns its index in the store."""
        rec.validate()
        for sid, out in rec.reached.items():
            if sid not in self.spaces:
                raise MemoryRejection(f"unknown outcome space {sid!r}")
            if out is not None and not self.spaces[sid].contains(out.value):
                raise MemoryRejection(
                    f"reached outcome for {sid!r} out of bounds: {out.value}"
                )
        if rec.episode != len(self.records):
            raise MemoryRejection(
                f"episode index {rec.episode} does not follow store size "
                f"{len(self.records)}"
            )
        idx = len(self.records)
        self.records.append(rec)
        for sid, out in rec.reached.items():
            if out is not None:
                self._values[sid].append(out.value)
                self._record_ids[sid].append(idx)
        if self._prims is None:
            self._prims = _Growable(rec.action.dim)
        for prim in rec.action.primitives:
            self._prims.append(prim.params)
        if rec.uses_procedure():
            self._proc_ids[rec.goal.space].append(idx)
        self._ingest_steps(rec)
        return idx

    def _ingest_steps(self, rec: EpisodeRecord) -> None:
        if not rec.stepwise:
            return
        n = len(rec.action)
        deltas = {}
        for sid, traj in rec.stepwise.items():
            d = np.diff(traj, axis=0)
            deltas[sid] = d
            norms = np.linalg.norm(d, axis=1)
            for v in norms[norms > 1e-12]:
                self._disp[sid].append(float(v))
        ctx = rec.step_context
        for i, prim in enumerate(rec.action.primitives):
            self._step_actions.append(prim.params)
            for sid in self._step_deltas:
                row = deltas.get(sid)
                self._step_deltas[sid].append(
                    row[i] if row is not None else np.zeros(self.spaces[sid].dim)
                )
            self._step_contexts.append(
                ctx[i] if ctx is not None and i < len(ctx) else np.zeros(0)
            )
            self._step_episodes.append(rec.episode)
        overflow = len(self._step_actions) - self.step_window
        if overflow > 0:
            del self._step_actions[:overflow]
            del self._step_contexts[:overflow]
            del self._step_episodes[:overflow]
            for sid in self._step_deltas:
                del self._step_deltas[sid][:overflow]

    # -- reading ----------------------------------------------------------

    def __len__(self) -> int:
        return len(self.records)

    def size(self, space_id: str) -> int:
        return len(self._values[space_id])

    def nearest(self, space_id: str, value, k: int = 1) -> list[NearestHit]:
        """The k stored outcomes in one space closest to ``value`` (Euclidean),
        nearest first; ties break toward the older episode.  Returns fewer
        than k hits when the space holds fewer records, and [] when empty."""
        if space_id not in self._values:
            raise DomainError(f"unknown outcome space {space_id!r}")
        buf = self._values[space_id]
        n = len(buf)
        if n == 0 or k < 1:
            return []
        q = np.asarray(value, dtype=float)
        pts = buf.view()
        dists = np.linalg.norm(pts - q[None, :], axis=1)
        ids = np.asarray(self._record_ids[space_id])
        order = np.lexsort((ids, dists))[: min(k, n)]
        return [
            NearestHit(self.records[int(ids[i])], float(dists[i]), pts[i].copy())
            for i in order
        ]

    def values(self, space_id: str) -> np.ndarray:
        return self._values[space_id].view()

    def record_ids(self, space_id: str) -> list[int]:
        return list(self._record_ids[space_id])

    def primitive_pool(self) -> np.ndarray:
        """Every primitive executed so far, one row each (possibly empty)."""
        if self._prims is None:
            return np.zeros((0, 0))
        return self._prims.view()

    def procedure_records(self, goal_space: str) -> list[int]:
        """Record ids whose controllable sequence was a procedure for goals in
        the given space, in insertion order."""
        return list(self._proc_ids[goal_space])

    def reach_r95(self, space_id: str) -> Optional[float]:
        """95th percentile of the nonzero one-step displacements seen in a
        space; None until any motion has been observed."""
        d = self._disp[space_id]
        if not d:
            return None
        return float(np.percentile(np.asarray(d), 95))

    def recent_steps(self, n: int):
        """Last n per-primitive transitions as dense arrays:
        (actions, {space: deltas}, contexts, episode ids)."""
        n = min(n, len(self._step_actions))
        if n == 0:
            dim_a = 0
            return (
                np.zeros((0, dim_a)),
                {sid: np.zeros((0, self.spaces[sid].dim)) for sid in self._step_deltas},
                np.zeros((0, 0)),
                np.zeros(0, dtype=int),
            )
        actions = np.asarray(self._step_actions[-n:])
        deltas = {
            sid: np.asarray(rows[-n:]) for sid, rows in self._step_deltas.items()
        }
        ctx_rows = self._step_contexts[-n:]
        width = max((r.size for r in ctx_rows), default=0)
        contexts = np.zeros((n, width))
        for i, r in enumerate(ctx_rows):
            contexts[i, : r.size] = r
        episodes = np.asarray(self._step_episodes[-n:], dtype=int)
        return actions, deltas, contexts, episodes

    # -- export -----------------------------------------------------------

    def iter_log_rows(self):
        """Episode log rows with a fixed key order, ready for JSON lines."""
        for rec in self.records:
            reached = rec.reached_goal_value
            yield {
                "episode": rec.episode,
                "strategy": rec.strategy,
                "goal_space": rec.goal.space,
                "goal": [float(x) for x in rec.goal.value],
                "action_length": len(rec.action),
                "reached": None if reached is None else [float(x) for x in reached],
                "competence": float(rec.competence),
            }
