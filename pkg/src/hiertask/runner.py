"""Experiment driver: the per-episode learning loop and its artifacts.

Every episode runs the same closed cycle: pick (strategy, space, goal) from
the interest map, turn the strategy into a controllable sequence, ground that
sequence to motor commands and run it, store the full roll-out, score
competence, update the structural models (task-dependency graph or coupling
registry, per variant), and feed competence back into the interest map.

Runs are reproducible bit-for-bit: one root seed feeds separate named streams
for the learner and for each episode's environment layout, and every artifact
(episode log, metrics, exports) is written with stable ordering and float
formatting.  Evaluation replays benchmark goals on a fresh environment with
the fixed evaluation layout and never mutates learner state.
"""

from __future__ import annotations

import json
import pickle
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from hiertask import strategies
from hiertask.affordance import AffordanceSet, detect, execute_sequence, refine
from hiertask.config import ExperimentConfig, dump_config
from hiertask.core import (
    ActionPrimitive,
    CompoundAction,
    DomainError,
    EpisodeRecord,
    HierarchyGraph,
    Outcome,
    is_primitive,
)
from hiertask.envs import make_env
from hiertask.interest import InterestMap, competence
from hiertask.memory import EpisodicMemory
from hiertask.models import ResolutionError, resolve, update_models
from hiertask.strategies import StrategyUnavailable
from hiertask.teachers import build_benchmark, build_teacher

FALLBACK_STRATEGY = "outcome-explore"  # present in every variant's strategy set
MAX_EPISODE_PRIMITIVES = 60

LOOP_STAGES = ("select", "apply", "execute", "record", "update", "interest")


@dataclass
class MetricsRow:
    """One evaluation row: a space's benchmark performance at a snapshot."""

    episode: int
    space: str
    n_goals: int
    mean_error: float
    mean_length: float
    strategy_counts: dict[str, int] = field(default_factory=dict)


class Learner:
    """Holds every model the agent learns plus the run bookkeeping."""

    def __init__(self, cfg: ExperimentConfig):
        cfg.validate()
        self.cfg = cfg
        self.env = make_env(cfg.env)
        self.spaces = self.env.spaces
        self.primitive_dim = self.env.null_primitive().params.size
        self.mem = EpisodicMemory(
            self.spaces, step_window=max(1000, cfg.coupling_window)
        )
        self.hierarchy = HierarchyGraph(cfg.prune_threshold)
        for sid in self.spaces:
            self.hierarchy.add_node(sid)
        if cfg.variant in ("IM-PB", "SGIM-PB"):
            self.hierarchy.densely_connect(list(self.spaces))
        self.affordances = AffordanceSet()
        self.teachers = {
            spec.strategy_id(): build_teacher(cfg.env, spec.kind, spec.space, spec.grid)
            for spec in cfg.teachers
        }
        ids = cfg.strategy_ids()
        self.interest = InterestMap(
            self.spaces,
            ids,
            {s: cfg.strategy_cost(s) for s in ids},
            window=cfg.interest_window,
            capacity=cfg.region_capacity,
            novelty_bonus=cfg.novelty_bonus,
            exploit_prob=cfg.exploit_prob,
            uniform_prob=cfg.uniform_prob,
            random_prob=cfg.random_prob,
        )
        self.rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
        self.episode = 0
        self.strategy_counts = {s: 0 for s in ids}
        self.fallback_count = 0
        self.counters = {stage: 0 for stage in LOOP_STAGES}
        self._prev_controllables: frozenset[str] = frozenset()

    # -- one episode -------------------------------------------------------

    def _execute_resolved(self, sequence) -> tuple[list[ActionPrimitive], str]:
        """Ground a controllable sequence with the memory-based inverse models
        and run it; unresolvable elements are skipped and noted."""
        executed: list[ActionPrimitive] = []
        notes: list[str] = []
        for c in sequence:
            if len(executed) >= MAX_EPISODE_PRIMITIVES:
                notes.append("length-capped")
                break
            if is_primitive(c):
                self.env.step(c)
                executed.append(c)
                continue
            try:
                act = resolve(self.mem, c, self.cfg.resolve_depth)
            except ResolutionError as e:
                notes.append(f"{c.space}:{e.kind}")
                continue
            for p in act.primitives:
                if len(executed) >= MAX_EPISODE_PRIMITIVES:
                    notes.append("length-capped")
                    break
                self.env.step(p)
                executed.append(p)
        return executed, (" ".join(notes) if notes else "")

    def run_episode(self, checks: bool = False) -> EpisodeRecord:
        cfg = self.cfg
        ep = self.episode
        context = self.env.reset(np.random.SeedSequence([cfg.seed, 1, ep]))

        strategy, space_id, goal_value = self.interest.select(self.rng)
        goal = Outcome(space_id, goal_value)
        self.counters["select"] += 1

        controllable = frozenset(self.affordances.controllable_spaces())
        try:
            seq = strategies.apply(
                strategy,
                goal,
                self.mem,
                self.hierarchy,
                self.teachers,
                cfg,
                self.rng,
                self.primitive_dim,
                controllable,
            )
        except StrategyUnavailable:
            self.fallback_count += 1
            strategy = FALLBACK_STRATEGY
            seq = strategies.apply(
                strategy,
                goal,
                self.mem,
                self.hierarchy,
                self.teachers,
                cfg,
                self.rng,
                self.primitive_dim,
                controllable,
            )
        self.counters["apply"] += 1

        failure = ""
        if cfg.variant == "CHIME":
            res = execute_sequence(seq, self.affordances, self.env, self.mem, cfg)
            executed = res.executed
            if not res.ok:
                failure = res.reason
        else:
            executed, failure = self._execute_resolved(seq)
        if not executed:
            # the episode still happened: run an explicit no-op so the record
            # carries a real (null) motor trace and a full observation
            null = self.env.null_primitive()
            self.env.step(null)
            executed = [null]
            failure = failure or "nothing executable"
        self.counters["execute"] += 1

        observed = self.env.observe()
        reached = observed[goal.space]
        comp = competence(
            goal,
            None if reached is None else reached.value,
            self.spaces[goal.space],
        )
        rec = EpisodeRecord(
            episode=ep,
            context=context,
            strategy=strategy,
            goal=goal,
            controllables=tuple(seq),
            action=CompoundAction(tuple(executed)),
            reached=observed,
            competence=comp,
            stepwise=self.env.stepwise(),
            step_context=self.env.step_context_matrix(),
            failure=failure,
        )
        self.mem.record(rec)
        self.strategy_counts[strategy] += 1
        self.counters["record"] += 1

        if cfg.variant in ("IM-PB", "SGIM-PB"):
            update_models(self.mem, self.hierarchy, rec, cfg.hierarchy_rate)
        else:
            fresh = detect(self.mem, self.affordances, self.spaces, cfg, self.rng, ep)
            if fresh is not None:
                self.affordances.add(fresh)
            for aff in self.affordances.affordances:
                if aff.created_episode == ep:
                    continue  # its buffer already covers this episode's window
                refine(aff, rec, cfg, ep)
        self.counters["update"] += 1

        self.interest.update(goal, strategy, comp, ep)
        self.counters["interest"] += 1

        self.episode += 1
        if checks:
            self.check_invariants()
        return rec

    # -- invariants --------------------------------------------------------

    def check_invariants(self) -> None:
        """Structural health checks, cheap enough to run after every episode
        in test mode; raises DomainError on the first violation."""
        self.interest.check_partition()
        self.hierarchy.check_acyclic()
        for goal_space, cands in self.hierarchy._edges.items():
            for decomp, w in cands.items():
                if not 0.0 <= w <= 1.0:
                    raise DomainError(
                        f"edge {goal_space}->{decomp} weight {w} outside [0, 1]"
                    )
        if len(set(self.counters.values())) != 1 or self.counters["select"] != self.episode:
            raise DomainError(f"loop stage counters diverged: {self.counters}")
        if len(self.mem) != self.episode:
            raise DomainError(
                f"memory holds {len(self.mem)} records after {self.episode} episodes"
            )
        current = frozenset(self.affordances.controllable_spaces())
        if not self._prev_controllables <= current:
            raise DomainError("a space stopped being controllable")
        self._prev_controllables = current
        for aff in self.affordances.affordances:
            if self.affordances.would_cycle(aff.input_space, aff.output_space):
                raise DomainError("coupling registry contains a cycle")
        if self.mem.records:
            rec = self.mem.records[-1]
            for sid, out in rec.reached.items():
                if out is None:
                    continue
                sp = self.spaces[sid]
                if np.any(out.value < sp.lower - 1e-9) or np.any(
                    out.value > sp.upper + 1e-9
                ):
                    raise DomainError(f"stored outcome in {sid!r} escapes its bounds")


# ----------------------------------------------------------------------
# evaluation


def _evaluate_goal(learner: Learner, space_id: str, goal_value: np.ndarray):
    """Error (normalized, capped at 1) and executed length for one benchmark
    goal, on a fresh environment with the evaluation layout."""
    cfg = learner.cfg
    env = make_env(cfg.env)
    env.reset(cfg.eval_seed)
    if cfg.variant == "CHIME":
        res = execute_sequence(
            (Outcome(space_id, np.asarray(goal_value, float)),),
            learner.affordances,
            env,
            learner.mem,
            cfg,
        )
        length = len(res.executed) if res.executed else None
    else:
        try:
            act = resolve(
                learner.mem,
                Outcome(space_id, np.asarray(goal_value, float)),
                cfg.resolve_depth,
                blend=True,
            )
        except (ResolutionError, DomainError):
            return 1.0, None
        for p in act.primitives:
            env.step(p)
        length = len(act)
    out = env.observe()[space_id]
    if out is None:
        return 1.0, length
    err = float(
        np.linalg.norm(out.value - np.asarray(goal_value))
        / learner.spaces[space_id].diameter
    )
    return min(1.0, err), length


def evaluate(learner: Learner, benchmark: dict[str, np.ndarray]) -> list[MetricsRow]:
    """Benchmark every space; pure with respect to the learner (models and
    memory untouched, environments are fresh throwaways)."""
    rows = []
    for space_id in sorted(benchmark):
        goals = benchmark[space_id]
        errs, lengths = [], []
        for g in goals:
            e, length = _evaluate_goal(learner, space_id, g)
            errs.append(e)
            if length is not None:
                lengths.append(length)
        rows.append(
            MetricsRow(
                episode=learner.episode,
                space=space_id,
                n_goals=len(goals),
                mean_error=float(np.mean(errs)) if errs else float("nan"),
                mean_length=float(np.mean(lengths)) if lengths else 0.0,
                strategy_counts=dict(learner.strategy_counts),
            )
        )
    return rows


# ----------------------------------------------------------------------
# artifacts


def metrics_csv(rows: list[MetricsRow], strategy_ids: list[str]) -> str:
    cols = ["episode", "space", "mean_error", "mean_length"] + [
        f"n_{s}" for s in strategy_ids
    ]
    lines = [",".join(cols)]
    for r in rows:
        vals = [
            str(r.episode),
            r.space,
            repr(float(r.mean_error)),
            repr(float(r.mean_length)),
        ] + [str(r.strategy_counts.get(s, 0)) for s in strategy_ids]
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def write_artifacts(learner: Learner, rows: list[MetricsRow], out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = learner.cfg
    (out_dir / "config.txt").write_text(dump_config(cfg), encoding="utf-8")
    with open(out_dir / "episodes.jsonl", "w", encoding="utf-8") as fh:
        for row in learner.mem.iter_log_rows():
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")
    (out_dir / "metrics.csv").write_text(
        metrics_csv(rows, cfg.strategy_ids()), encoding="utf-8"
    )
    (out_dir / "regions.txt").write_text(learner.interest.export_tree(), encoding="utf-8")
    (out_dir / "ground_truth.dot").write_text(
        learner.env.ground_truth().to_dot(), encoding="utf-8"
    )
    if cfg.variant == "CHIME":
        names = getattr(learner.env, "step_feature_names", None)
        (out_dir / "couplings.txt").write_text(
            learner.affordances.export_text(names), encoding="utf-8"
        )
        (out_dir / "couplings.dot").write_text(
            learner.affordances.to_dot(), encoding="utf-8"
        )
    else:
        (out_dir / "hierarchy.dot").write_text(
            learner.hierarchy.to_dot(), encoding="utf-8"
        )
    with open(out_dir / "snapshot.pkl", "wb") as fh:
        pickle.dump({"config": cfg, "learner": learner, "metrics": rows}, fh)


def save_snapshot(learner: Learner, rows: list[MetricsRow], path) -> None:
    with open(path, "wb") as fh:
        pickle.dump({"config": learner.cfg, "learner": learner, "metrics": rows}, fh)


def load_snapshot(path) -> dict:
    with open(path, "rb") as fh:
        data = pickle.load(fh)
    if not isinstance(data, dict) or "learner" not in data:
        raise DomainError(f"{path} is not a run snapshot")
    return data


def run(
    cfg: ExperimentConfig,
    out_dir,
    checks: bool = False,
    progress=None,
) -> tuple[Learner, list[MetricsRow]]:
    """Full experiment: learn for ``cfg.episodes`` episodes, evaluating on the
    scripted benchmark every ``cfg.snapshot_period``, then write artifacts."""
    learner = Learner(cfg)
    benchmark = build_benchmark(cfg.env, cfg.eval_seed)
    rows: list[MetricsRow] = []
    for ep in range(cfg.episodes):
        learner.run_episode(checks=checks)
        if (ep + 1) % cfg.snapshot_period == 0:
            rows.extend(evaluate(learner, benchmark))
            if progress is not None:
                last = {r.space: r.mean_error for r in rows if r.episode == ep + 1}
                progress(ep + 1, last)
    write_artifacts(learner, rows, Path(out_dir))
    return learner, rows
