"""Common scaffolding for the simulated worlds.

A world runs one episode at a time: ``reset`` seeds the layout and returns the
episode context vector, ``step`` advances the physics by one primitive (a
fixed number of interpolation substeps), and ``observe`` maps the finished
episode to one outcome per observable space (None where the episode produced
nothing in that space).  The base class records, per primitive, the live value
of every steppable space and the context features at step start; those feed
the transition buffers in episodic memory.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from hiertask.core import ActionPrimitive, DomainError, Outcome, OutcomeSpace, PRIMITIVE_NODE


@dataclass(frozen=True)
class GroundTruth:
    """The designed dependency structure of a world, for evaluation only:
    edges run from the enabling node to the space it enables, and a space's
    level is its distance from the motor node."""

    edges: tuple[tuple[str, str], ...]
    levels: dict[str, int]

    def to_dot(self, name: str = "ground_truth") -> str:
        nodes = [PRIMITIVE_NODE] + [s for s in self.levels]
        lines = [f"digraph {name} {{", "  rankdir=LR;"]
        for n in nodes:
            shape = "box" if n == PRIMITIVE_NODE else "ellipse"
            lines.append(f'  "{n}" [shape={shape}];')
        for src, dst in self.edges:
            lines.append(f'  "{src}" -> "{dst}";')
        lines.append("}")
        return "\n".join(lines) + "\n"


class World:
    env_id: str = ""
    primitive_dim: int = 0
    substeps: int = 20
    step_feature_names: tuple[str, ...] = ()

    def __init__(self):
        self.spaces: dict[str, OutcomeSpace] = {}
        self._history: dict[str, list[np.ndarray]] = {}
        self._features: list[np.ndarray] = []
        self._n_steps = 0
        self._was_reset = False

    # -- subclass surface --------------------------------------------------

    def _do_reset(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _advance(self, params: np.ndarray) -> None:
        raise NotImplementedError

    def _live_values(self) -> dict[str, np.ndarray]:
        """Current value of every space that has a per-step reading."""
        raise NotImplementedError

    def _step_features(self) -> np.ndarray:
        raise NotImplementedError

    def observe(self) -> dict[str, Optional[Outcome]]:
        raise NotImplementedError

    def null_primitive(self) -> ActionPrimitive:
        """A safe do-nothing motion used when resolution fails outright."""
        raise NotImplementedError

    def ground_truth(self) -> GroundTruth:
        raise NotImplementedError

    # -- episode driving ---------------------------------------------------

    def reset(self, seed) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self._was_reset = True
        self._n_steps = 0
        self._features = []
        context = self._do_reset(rng)
        self._history = {sid: [v.copy()] for sid, v in self._live_values().items()}
        return context

    def step(self, prim: ActionPrimitive) -> None:
        if not self._was_reset:
            raise DomainError("step before reset")
        if prim.dim != self.primitive_dim:
            raise DomainError(
                f"{self.env_id} takes {self.primitive_dim}-dim primitives, got {prim.dim}"
            )
        self._features.append(self._step_features())
        self._advance(prim.params)
        for sid, v in self._live_values().items():
            self._history[sid].append(v.copy())
        self._n_steps += 1

    @property
    def n_steps(self) -> int:
        return self._n_steps

    def current_values(self) -> dict[str, np.ndarray]:
        return {sid: v.copy() for sid, v in self._live_values().items()}

    def step_features_now(self) -> np.ndarray:
        return self._step_features()

    def stepwise(self) -> dict[str, np.ndarray]:
        return {sid: np.asarray(rows) for sid, rows in self._history.items()}

    def step_context_matrix(self) -> Optional[np.ndarray]:
        if not self._features:
            return None
        return np.asarray(self._features)

    def clipped_outcome(self, space_id: str, value: np.ndarray) -> Outcome:
        clipped, changed = self.spaces[space_id].clip(value)
        return Outcome(space_id, clipped, clipped=changed)
