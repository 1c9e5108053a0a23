"""Shared domain types: actions, outcomes, procedures, the task-dependency graph,
and the episode record that ties one roll-out together.

Values are plain numpy vectors; every type validates its own invariants at
construction so that downstream code never has to re-check shapes or bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

#: Graph node standing in for the raw motor space (the only non-outcome node).
PRIMITIVE_NODE = "primitive"


class DomainError(ValueError):
    """Raised when a domain-type invariant is violated."""


def _vector(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise DomainError(f"{name} must be a nonempty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DomainError(f"{name} must be finite")
    return v


@dataclass(frozen=True, eq=False)
class ActionPrimitive:
    """A single motion step: normalized actuator targets, each in [-1, 1]."""

    params: np.ndarray

    def __post_init__(self):
        p = _vector(self.params, "params")
        if np.any(np.abs(p) > 1.0 + 1e-9):
            raise DomainError(f"primitive parameters out of [-1, 1]: {p}")
        object.__setattr__(self, "params", np.clip(p, -1.0, 1.0))

    @property
    def dim(self) -> int:
        return self.params.size

    def __repr__(self):
        return f"ActionPrimitive({np.array2string(self.params, precision=3)})"


@dataclass(frozen=True, eq=False)
class CompoundAction:
    """An ordered, nonempty sequence of primitives sharing one parameter dimension."""

    primitives: tuple[ActionPrimitive, ...]

    def __post_init__(self):
        prims = tuple(self.primitives)
        if len(prims) < 1:
            raise DomainError("compound action needs at least one primitive")
        dims = {p.dim for p in prims}
        if len(dims) != 1:
            raise DomainError(f"primitives must share one dimension, got {sorted(dims)}")
        object.__setattr__(self, "primitives", prims)

    def __len__(self) -> int:
        return len(self.primitives)

    def __iter__(self):
        return iter(self.primitives)

    @property
    def dim(self) -> int:
        return self.primitives[0].dim


def concat(actions: Sequence[CompoundAction]) -> CompoundAction:
    """Concatenate compound actions in order.

    Associative, preserves total primitive count, and rejects an empty
    argument list (there is no empty compound action to return).
    """
    if len(actions) == 0:
        raise DomainError("cannot concatenate zero compound actions")
    prims: list[ActionPrimitive] = []
    for a in actions:
        prims.extend(a.primitives)
    return CompoundAction(tuple(prims))


@dataclass(frozen=True, eq=False)
class OutcomeSpace:
    """A named, box-bounded observable task space."""

    space_id: str
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _vector(self.lower, "lower")
        hi = _vector(self.upper, "upper")
        if lo.size != hi.size:
            raise DomainError("lower/upper bound dimensions differ")
        if np.any(lo >= hi):
            raise DomainError(f"degenerate bounds for space {self.space_id!r}")
        if not self.space_id or self.space_id == PRIMITIVE_NODE:
            raise DomainError(f"bad space id {self.space_id!r}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def diameter(self) -> float:
        """Euclidean length of the box diagonal; the normalizer for distances."""
        return float(np.linalg.norm(self.upper - self.lower))

    def contains(self, value: np.ndarray, atol: float = 1e-9) -> bool:
        v = np.asarray(value, dtype=float)
        return bool(
            v.shape == self.lower.shape
            and np.all(v >= self.lower - atol)
            and np.all(v <= self.upper + atol)
        )

    def clip(self, value) -> tuple[np.ndarray, bool]:
        """Clip a raw observation into bounds; second element reports whether
        clipping actually changed it."""
        v = _vector(value, "value")
        if v.size != self.dim:
            raise DomainError(f"value dimension {v.size} != space dimension {self.dim}")
        clipped = np.clip(v, self.lower, self.upper)
        return clipped, bool(np.any(clipped != v))

    def uniform(self, rng: np.random.Generator) -> np.ndarray:
        return self.lower + rng.random(self.dim) * (self.upper - self.lower)


@dataclass(frozen=True, eq=False)
class Outcome:
    """A point in one outcome space, tagged with that space's id."""

    space: str
    value: np.ndarray
    clipped: bool = False

    def __post_init__(self):
        object.__setattr__(self, "value", _vector(self.value, "value"))

    @property
    def dim(self) -> int:
        return self.value.size

    def __repr__(self):
        return f"Outcome({self.space}, {np.array2string(self.value, precision=3)})"


#: What the learner can issue directly: a motor primitive, or a target point in
#: a space it already knows how to reach.
Controllable = Union[ActionPrimitive, Outcome]


def is_primitive(c: Controllable) -> bool:
    return isinstance(c, ActionPrimitive)


@dataclass(frozen=True, eq=False)
class Procedure:
    """An ordered sequence of at least two outcome targets, to be reached one
    after the other.  A procedure aimed at some goal space must not itself
    contain a component in that space (that would be circular)."""

    components: tuple[Outcome, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) < 2:
            raise DomainError("a procedure needs at least two components")
        if not all(isinstance(c, Outcome) for c in comps):
            raise DomainError("procedure components must be outcomes")
        object.__setattr__(self, "components", comps)

    def __len__(self) -> int:
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    @property
    def spaces(self) -> tuple[str, ...]:
        return tuple(c.space for c in self.components)

    def check_goal_space(self, goal_space: str) -> None:
        if goal_space in self.spaces:
            raise DomainError(
                f"procedure for goal space {goal_space!r} contains a component "
                f"in that same space"
            )


class HierarchyGraph:
    """Directed weighted graph from each goal space to its candidate ordered
    decompositions into other spaces.

    An edge (goal -> (s1, ..., sk)) carries a weight in [0, 1].  Edges at or
    below ``prune_threshold`` are kept but treated as pruned: they never win
    ``best_decomposition`` and do not count for the acyclicity guarantee.
    Weight updates that would create a cycle among above-threshold edges are
    capped at the threshold instead.
    """

    def __init__(self, prune_threshold: float = 0.05):
        self.prune_threshold = float(prune_threshold)
        self.nodes: list[str] = [PRIMITIVE_NODE]
        self._edges: dict[str, dict[tuple[str, ...], float]] = {}
        self.applied_episodes: set[int] = set()

    # -- construction -----------------------------------------------------

    def add_node(self, space_id: str) -> None:
        if space_id not in self.nodes:
            self.nodes.append(space_id)

    def add_edge(self, goal: str, decomposition: Sequence[str], weight: float) -> None:
        decomp = tuple(decomposition)
        if goal in decomp:
            raise DomainError(f"decomposition of {goal!r} may not contain itself")
        if not decomp:
            raise DomainError("empty decomposition")
        w = float(weight)
        if not 0.0 <= w <= 1.0:
            raise DomainError(f"edge weight {w} outside [0, 1]")
        self.add_node(goal)
        for s in decomp:
            self.add_node(s)
        self._edges.setdefault(goal, {})[decomp] = w

    def densely_connect(self, spaces: Sequence[str], length: int = 2) -> None:
        """Give every goal space every ordered pair of *other* spaces as a
        candidate decomposition, initialized exactly at the pruning threshold
        (so the active subgraph starts empty and trivially acyclic)."""
        if length != 2:
            raise DomainError("only length-2 decompositions are generated")
        for goal in spaces:
            for s1 in spaces:
                if s1 == goal:
                    continue
                for s2 in spaces:
                    if s2 == goal:
                        continue
                    self.add_edge(goal, (s1, s2), self.prune_threshold)

    # -- queries ----------------------------------------------------------

    def decompositions(self, goal: str) -> dict[tuple[str, ...], float]:
        return dict(self._edges.get(goal, {}))

    def weight(self, goal: str, decomposition: Sequence[str]) -> float:
        return self._edges.get(goal, {}).get(tuple(decomposition), 0.0)

    def is_active(self, goal: str, decomposition: Sequence[str]) -> bool:
        return self.weight(goal, decomposition) > self.prune_threshold

    def best_decomposition(self, goal: str) -> Optional[tuple[str, ...]]:
        """Highest-weight decomposition strictly above the pruning threshold.

        Ties break lexicographically on the decomposition tuple so the answer
        is deterministic.  Returns None when every candidate is pruned.
        """
        cands = self._edges.get(goal, {})
        best: Optional[tuple[str, ...]] = None
        best_w = self.prune_threshold
        for decomp in sorted(cands):
            w = cands[decomp]
            if w > best_w:
                best, best_w = decomp, w
        return best

    def _active_successors(self, extra: Optional[tuple[str, tuple[str, ...]]] = None):
        succ: dict[str, set[str]] = {}
        for goal, cands in self._edges.items():
            for decomp, w in cands.items():
                if w > self.prune_threshold:
                    succ.setdefault(goal, set()).update(decomp)
        if extra is not None:
            succ.setdefault(extra[0], set()).update(extra[1])
        return succ

    def _has_cycle(self, extra: Optional[tuple[str, tuple[str, ...]]] = None) -> bool:
        succ = self._active_successors(extra)
        seen: dict[str, int] = {}  # 1 = on stack, 2 = done

        def visit(node: str) -> bool:
            state = seen.get(node, 0)
            if state == 1:
                return True
            if state == 2:
                return False
            seen[node] = 1
            for nxt in sorted(succ.get(node, ())):
                if visit(nxt):
                    return True
            seen[node] = 2
            return False

        return any(visit(n) for n in sorted(succ))

    def check_acyclic(self) -> None:
        if self._has_cycle():
            raise DomainError("active hierarchy edges contain a cycle")

    # -- learning ---------------------------------------------------------

    def update_weight(
        self,
        goal: str,
        decomposition: Sequence[str],
        competence: float,
        rate: float = 0.1,
    ) -> float:
        """Move an edge weight toward (1 + competence) by an exponential step.

        Competence lives in [-1, 0], so the target lives in [0, 1] and the
        weight stays in [0, 1].  If the step would lift a pruned edge above
        the threshold and doing so would close a cycle among active edges,
        the weight is capped at the threshold instead.
        """
        decomp = tuple(decomposition)
        if goal not in self._edges or decomp not in self._edges[goal]:
            self.add_edge(goal, decomp, self.prune_threshold)
        w = self._edges[goal][decomp]
        target = 1.0 + float(competence)
        target = min(1.0, max(0.0, target))
        new_w = w + rate * (target - w)
        new_w = min(1.0, max(0.0, new_w))
        if new_w > self.prune_threshold >= w:
            if self._has_cycle(extra=(goal, decomp)):
                new_w = self.prune_threshold
        self._edges[goal][decomp] = new_w
        return new_w

    # -- export -----------------------------------------------------------

    def to_dot(self, name: str = "hierarchy") -> str:
        """Graphviz rendering of the active (above-threshold) subgraph; pruned
        candidates are omitted for legibility."""
        lines = [f"digraph {name} {{"]
        lines.append("  rankdir=LR;")
        for n in self.nodes:
            shape = "box" if n == PRIMITIVE_NODE else "ellipse"
            lines.append(f'  "{n}" [shape={shape}];')
        for goal in sorted(self._edges):
            for decomp in sorted(self._edges[goal]):
                w = self._edges[goal][decomp]
                if w > self.prune_threshold:
                    label = "(" + ",".join(decomp) + f") w={w:.3f}"
                    for s in decomp:
                        lines.append(f'  "{goal}" -> "{s}" [label="{label}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


@dataclass(eq=False)
class EpisodeRecord:
    """Everything one roll-out produced, as stored in episodic memory.

    ``controllables`` is the sequence the strategy issued; ``action`` is what
    actually ran on the motors after resolution.  ``reached`` has one entry
    per observed space, with None marking "this episode did not produce that
    outcome".  ``stepwise`` holds, per observable space, the value after reset
    and after each primitive (shape: n_primitives + 1 by dim); ``step_context``
    holds per-primitive context features measured at the start of each step.
    """

    episode: int
    context: np.ndarray
    strategy: str
    goal: Outcome
    controllables: tuple[Controllable, ...]
    action: CompoundAction
    reached: dict[str, Optional[Outcome]]
    competence: float
    stepwise: dict[str, np.ndarray] = field(default_factory=dict)
    step_context: Optional[np.ndarray] = None
    failure: str = ""

    def validate(self) -> None:
        if self.episode < 0:
            raise DomainError("episode index must be >= 0")
        if len(self.controllables) < 1:
            raise DomainError("episode must carry a nonempty controllable sequence")
        if len(self.action) < 1:
            raise DomainError("episode must carry a nonempty executed action")
        if self.goal.space not in self.reached:
            raise DomainError(
                f"reached outcomes carry no entry for goal space {self.goal.space!r}"
            )
        if not (-1.0 <= self.competence <= 0.0):
            raise DomainError(f"competence {self.competence} outside [-1, 0]")
        n = len(self.action)
        for sid, traj in self.stepwise.items():
            if traj.shape[0] != n + 1:
                raise DomainError(
                    f"stepwise trajectory for {sid!r} has {traj.shape[0]} rows, "
                    f"expected {n + 1}"
                )

    @property
    def reached_goal_value(self) -> Optional[np.ndarray]:
        out = self.reached.get(self.goal.space)
        return None if out is None else out.value

    def uses_procedure(self) -> bool:
        return len(self.controllables) >= 2 and all(
            isinstance(c, Outcome) for c in self.controllables
        )

    def procedure_spaces(self) -> Optional[tuple[str, ...]]:
        if not self.uses_procedure():
            return None
        return tuple(c.space for c in self.controllables)
