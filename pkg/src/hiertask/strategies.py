"""Data-collection strategies: how a (strategy, goal) choice becomes a
controllable sequence to execute.

Autonomous strategies explore the motor space, replay-and-perturb past
solutions near the goal, or assemble two-step outcome procedures guided by
the task-dependency graph.  Mimicry strategies query a demonstration
repertoire and copy the answer with local noise.  All of them are pure
functions of (inputs, rng), which keeps whole runs replayable.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from hiertask.config import ExperimentConfig
from hiertask.core import (
    ActionPrimitive,
    CompoundAction,
    Controllable,
    HierarchyGraph,
    Outcome,
    OutcomeSpace,
    Procedure,
    is_primitive,
)
from hiertask.memory import EpisodicMemory


class StrategyError(RuntimeError):
    """A strategy outside the active set, or with unusable inputs."""


class StrategyUnavailable(RuntimeError):
    """The strategy cannot run yet (e.g. no other space has data); the
    caller should fall back to another strategy."""


def _noise_clip(rng: np.random.Generator, params: np.ndarray, std: float) -> np.ndarray:
    return np.clip(params + rng.normal(0.0, std, size=params.shape), -1.0, 1.0)


def _perturb_outcome(
    rng: np.random.Generator, out: Outcome, space: OutcomeSpace, rel_std: float
) -> Outcome:
    # relative noise: std is a fraction of each dimension's extent
    std_vec = rel_std * (space.upper - space.lower) / 2.0
    value = out.value + rng.normal(0.0, 1.0, size=out.value.shape) * std_vec
    value = np.clip(value, space.lower, space.upper)
    return Outcome(out.space, value)


def explore_action_space(
    mem: EpisodicMemory,
    cfg: ExperimentConfig,
    rng: np.random.Generator,
    primitive_dim: int,
) -> tuple[Controllable, ...]:
    """One random primitive: fresh uniform with probability
    ``action_fresh_prob`` (always when nothing is stored), else a stored
    primitive with Gaussian noise."""
    pool = mem.primitive_pool()
    fresh = pool.shape[0] == 0 or rng.random() < cfg.action_fresh_prob
    if fresh:
        params = rng.uniform(-1.0, 1.0, size=primitive_dim)
        return (ActionPrimitive(params),)
    base = pool[int(rng.integers(pool.shape[0]))]
    return (ActionPrimitive(_noise_clip(rng, base, cfg.action_noise_std)),)


def explore_outcome(
    goal: Outcome,
    mem: EpisodicMemory,
    cfg: ExperimentConfig,
    rng: np.random.Generator,
    primitive_dim: int,
    controllable_spaces: frozenset[str] = frozenset(),
) -> tuple[Controllable, ...]:
    """Goal-directed exploration of one outcome space.

    If the goal's space is already controllable (a discovered coupling
    outputs into it), the goal itself is issued and the execution layer plans
    toward it.  Otherwise the nearest record's controllable sequence is
    replayed with noise that grows with the distance to that record (local
    optimization far from data degrades into free exploration).  An empty
    space falls back to motor exploration.
    """
    if goal.space in controllable_spaces:
        return (Outcome(goal.space, goal.value),)
    hits = mem.nearest(goal.space, goal.value, k=1)
    if not hits:
        return explore_action_space(mem, cfg, rng, primitive_dim)
    hit = hits[0]
    diam = mem.spaces[goal.space].diameter
    std = cfg.outcome_noise_std * (1.0 + hit.distance / diam)
    out: list[Controllable] = []
    for c in hit.record.controllables:
        if is_primitive(c):
            out.append(ActionPrimitive(_noise_clip(rng, c.params, std)))
        else:
            out.append(_perturb_outcome(rng, c, mem.spaces[c.space], std))
    return tuple(out)


def explore_procedure(
    goal: Outcome,
    hierarchy: HierarchyGraph,
    mem: EpisodicMemory,
    cfg: ExperimentConfig,
    rng: np.random.Generator,
) -> tuple[Controllable, ...]:
    """Assemble a two-component outcome procedure for the goal.

    The ordered space pair is drawn with probability proportional to its
    current edge weight (uniform at dense initialization).  Components copy
    the past procedure of this pair whose produced outcome landed nearest the
    goal -- the best precedent for goals around here -- perturbed with noise
    that grows with that distance; with no precedent they are uniform random
    points in the pair's spaces.
    """
    others = [sid for sid in mem.spaces if sid != goal.space]
    if not any(mem.size(sid) > 0 for sid in others):
        raise StrategyUnavailable(
            f"no outcome space besides {goal.space!r} has data yet"
        )
    pairs = [(s1, s2) for s1 in others for s2 in others]
    weights = np.array(
        [max(hierarchy.weight(goal.space, pair), 0.0) for pair in pairs]
    )
    if weights.sum() <= 0.0:
        weights = np.ones(len(pairs))
    probs = weights / weights.sum()
    pair = pairs[int(rng.choice(len(pairs), p=probs))]

    goal_space = mem.spaces[goal.space]
    candidates = []
    for rid in mem.procedure_records(goal.space):
        rec = mem.records[rid]
        if rec.procedure_spaces() != pair:
            continue
        out = rec.reached.get(goal.space)
        if out is not None:
            d = float(np.linalg.norm(out.value - goal.value))
        else:
            # never produced the outcome: rank behind every record that did,
            # ordered by how close its own target was
            d = goal_space.diameter + float(
                np.linalg.norm(rec.goal.value - goal.value)
            )
        candidates.append((d, rid, rec))
    candidates.sort(key=lambda t: (t[0], t[1]))
    if candidates:
        d_nn, _, rec = candidates[0]
        std = cfg.outcome_noise_std * (1.0 + d_nn / goal_space.diameter)
        comps = tuple(
            _perturb_outcome(rng, c, mem.spaces[c.space], std)
            for c in rec.controllables
        )
    else:
        comps = tuple(
            Outcome(sid, mem.spaces[sid].uniform(rng)) for sid in pair
        )
    proc = Procedure(comps)
    proc.check_goal_space(goal.space)
    return tuple(proc.components)


def mimic_action(
    goal: Outcome, teacher, cfg: ExperimentConfig, rng: np.random.Generator
) -> tuple[Controllable, ...]:
    demo = teacher.demo(goal.value)
    if not isinstance(demo, CompoundAction):
        raise StrategyError(f"teacher {teacher.teacher_id!r} does not hold action demos")
    return tuple(
        ActionPrimitive(_noise_clip(rng, p.params, cfg.mimic_noise_std))
        for p in demo.primitives
    )


def mimic_procedure(
    goal: Outcome,
    teacher,
    mem: EpisodicMemory,
    cfg: ExperimentConfig,
    rng: np.random.Generator,
) -> tuple[Controllable, ...]:
    demo = teacher.demo(goal.value)
    if not isinstance(demo, Procedure):
        raise StrategyError(
            f"teacher {teacher.teacher_id!r} does not hold procedure demos"
        )
    if any(c.space == goal.space for c in demo.components):
        # a procedure may not decompose a goal into its own space; this
        # teacher only helps goals outside its component spaces
        raise StrategyUnavailable(
            f"teacher {teacher.teacher_id!r} cannot serve goals in {goal.space!r}"
        )
    comps = tuple(
        _perturb_outcome(rng, c, mem.spaces[c.space], cfg.mimic_noise_std)
        for c in demo.components
    )
    proc = Procedure(comps)
    proc.check_goal_space(goal.space)
    return tuple(proc.components)


def apply(
    strategy_id: str,
    goal: Outcome,
    mem: EpisodicMemory,
    hierarchy: HierarchyGraph,
    teachers: dict[str, object],
    cfg: ExperimentConfig,
    rng: np.random.Generator,
    primitive_dim: int,
    controllable_spaces: frozenset[str] = frozenset(),
) -> tuple[Controllable, ...]:
    """Dispatch a strategy id to its implementation; always returns a
    nonempty controllable sequence or raises."""
    active = cfg.strategy_ids()
    if strategy_id not in active:
        raise StrategyError(
            f"strategy {strategy_id!r} is not active for variant {cfg.variant}"
        )
    if strategy_id == "action-explore":
        return explore_action_space(mem, cfg, rng, primitive_dim)
    if strategy_id == "outcome-explore":
        return explore_outcome(
            goal, mem, cfg, rng, primitive_dim, controllable_spaces
        )
    if strategy_id == "procedure-explore":
        return explore_procedure(goal, hierarchy, mem, cfg, rng)
    if strategy_id.startswith("mimic-action:"):
        return mimic_action(goal, teachers[strategy_id], cfg, rng)
    if strategy_id.startswith("mimic-procedure:"):
        return mimic_procedure(goal, teachers[strategy_id], mem, cfg, rng)
    raise StrategyError(f"unknown strategy id {strategy_id!r}")
