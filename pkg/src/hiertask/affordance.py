"""Emergent couplings between spaces, discovered from step transitions.

A coupling ("affordance") links an input the agent can already produce — raw
motor commands or a space it has an affordance chain into — to the step-wise
displacement of an output space.  Detection fits a linear map over a recent
transition window and demands a high variance-weighted R^2 on the rows where
the output actually moved; the linear fit is only the detection statistic.
The working model kept afterwards is nearest-neighbour regression over the
buffered (input, context, displacement) samples, optionally conditioned on a
learned subset of context features.  When fresh episodes contradict the model
(error spikes versus its running record), refinement searches single context
features by leave-one-out error and keeps one only if it helps clearly.

Goal reaching chains couplings greedily: repeated bounded subgoal steps
through each affordance's input space down to motor commands.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from hiertask.core import (
    PRIMITIVE_NODE,
    ActionPrimitive,
    Controllable,
    EpisodeRecord,
    Outcome,
    OutcomeSpace,
)
from hiertask.memory import EpisodicMemory

_EPS = 1e-6


class AffordanceError(RuntimeError):
    pass


class PlanFailed(AffordanceError):
    """Raised when greedy chaining hits its step cap; carries the partial plan."""

    def __init__(self, partial: tuple):
        super().__init__(f"plan step cap reached after {len(partial)} subgoals")
        self.partial = partial


def variance_weighted_r2(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Multi-output R^2 pooled over dimensions (sums of squares pooled, not
    averaged per-column), so a dimension that never varies cannot poison the
    score.  Degenerate target variance scores 1.0 on a perfect fit else 0.0."""
    resid = float(np.sum((y_true - y_pred) ** 2))
    total = float(np.sum((y_true - np.mean(y_true, axis=0)) ** 2))
    if total < 1e-18:
        return 1.0 if resid < 1e-18 else 0.0
    return 1.0 - resid / total


def linear_fit_r2(x: np.ndarray, y: np.ndarray) -> float:
    xb = np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)
    coef, *_ = np.linalg.lstsq(xb, y, rcond=None)
    return variance_weighted_r2(y, xb @ coef)


def crossval_r2(x: np.ndarray, y: np.ndarray, episodes: np.ndarray) -> float:
    """Leave-one-episode-out predicted R^2.  Each episode's rows are predicted
    by a linear map fit on the other episodes only, then scored together.

    Steps within one episode are heavily autocorrelated (a primitive held for
    many steps yields near-duplicate rows), so an in-sample fit can look
    excellent while encoding nothing beyond per-episode means.  Holding out
    whole episodes is the standard defence: a coupling that is real must
    predict situations it was not fit on.  Windows covering fewer than two
    episodes, or leaving an underdetermined fit, score -inf (unvalidatable).
    """
    uniq = np.unique(episodes)
    if len(uniq) < 2:
        return -np.inf
    xb = np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)
    preds = np.empty_like(y)
    for e in uniq:
        hold = episodes == e
        rest = ~hold
        if int(rest.sum()) <= xb.shape[1]:
            return -np.inf
        coef, *_ = np.linalg.lstsq(xb[rest], y[rest], rcond=None)
        preds[hold] = xb[hold] @ coef
    return variance_weighted_r2(y, preds)


@dataclass
class Affordance:
    """One discovered input->output coupling with its sample buffer."""

    input_space: str  # space id, or the motor-command node
    output_space: str
    inputs: np.ndarray  # (n, p) motor params or input-space displacements
    outputs: np.ndarray  # (n, q) output-space displacements
    contexts: np.ndarray  # (n, f) step features at the transition
    context_dims: list[int] = field(default_factory=list)
    created_episode: int = 0
    detection_r2: float = 0.0
    error_history: list[float] = field(default_factory=list)
    refinements: list[tuple[int, int, float]] = field(default_factory=list)
    # (episode, added feature index, fractional error drop)

    in_scale: float = field(init=False)
    out_scale: float = field(init=False)

    def __post_init__(self):
        # fixed at creation so stored errors stay comparable over time
        self.in_scale = max(_EPS, float(np.median(np.linalg.norm(self.inputs, axis=1))))
        self.out_scale = max(
            _EPS, float(np.median(np.linalg.norm(self.outputs, axis=1)))
        )

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    def _distances(self, inp: np.ndarray, ctx: Optional[np.ndarray], dims) -> np.ndarray:
        d = np.linalg.norm(self.inputs - inp[None, :], axis=1) / self.in_scale
        if dims and ctx is not None and ctx.size >= max(dims) + 1:
            d = d + np.linalg.norm(
                self.contexts[:, dims] - ctx[list(dims)][None, :], axis=1
            )
        return d

    def _knn(self, d: np.ndarray, values: np.ndarray, k: int = 3, skip: int = -1):
        order = np.lexsort((np.arange(d.size), d))
        picked = []
        for i in order:
            if i != skip:
                picked.append(i)
                if len(picked) == k:
                    break
        w = 1.0 / (d[picked] + _EPS)
        w = w / w.sum()
        return w @ values[picked]

    def forward(self, inp: np.ndarray, context: Optional[np.ndarray]) -> np.ndarray:
        """Predicted output displacement for an input, k-NN weighted."""
        d = self._distances(np.asarray(inp, float), context, self.context_dims)
        return self._knn(d, self.outputs)

    def inverse(self, delta_out: np.ndarray, context: Optional[np.ndarray]) -> np.ndarray:
        """Input expected to displace the output by ``delta_out``: k-NN over
        stored outputs (context-conditioned), averaging the stored inputs."""
        delta_out = np.asarray(delta_out, float)
        d = np.linalg.norm(self.outputs - delta_out[None, :], axis=1) / self.out_scale
        if self.context_dims and context is not None:
            dims = self.context_dims
            if context.size >= max(dims) + 1:
                d = d + np.linalg.norm(
                    self.contexts[:, dims] - context[list(dims)][None, :], axis=1
                )
        return self._knn(d, self.inputs)

    def prediction_error(self, inp, out, context) -> float:
        pred = self.forward(inp, context)
        return float(np.linalg.norm(pred - np.asarray(out)) / self.out_scale)

    def loo_error(self, dims: list[int]) -> float:
        """Mean leave-one-out forward error using a candidate context set.
        Scored on an evenly spaced subsample of rows (predictions still use
        the full buffer), which is what makes repeated refinement searches
        affordable; the subsample is deterministic and shared across the
        candidate sets being compared, so the comparison stays fair."""
        n = self.n_samples
        din = (
            np.linalg.norm(
                self.inputs[:, None, :] - self.inputs[None, :, :], axis=2
            )
            / self.in_scale
        )
        if dims:
            c = self.contexts[:, dims]
            din = din + np.linalg.norm(c[:, None, :] - c[None, :, :], axis=2)
        probe = np.unique(np.linspace(0, n - 1, min(n, 80)).astype(int))
        errs = np.empty(probe.size)
        for j, i in enumerate(probe):
            pred = self._knn(din[i], self.outputs, skip=int(i))
            errs[j] = np.linalg.norm(pred - self.outputs[i]) / self.out_scale
        return float(np.mean(errs))

    def absorb(self, inputs: np.ndarray, outputs: np.ndarray, contexts: np.ndarray, cap: int):
        if inputs.shape[0] == 0:
            return
        self.inputs = np.concatenate([self.inputs, inputs])[-cap:]
        self.outputs = np.concatenate([self.outputs, outputs])[-cap:]
        self.contexts = np.concatenate([self.contexts, contexts])[-cap:]


class AffordanceSet:
    """Registry of discovered couplings.  A given (input, output) pair exists
    at most once, but one output space may gather several models rooted in
    different inputs; the dependency edges always form a DAG grounded in
    motor commands."""

    def __init__(self):
        self.affordances: list[Affordance] = []

    def __len__(self):
        return len(self.affordances)

    def has_pair(self, input_space: str, output_space: str) -> bool:
        return any(
            a.input_space == input_space and a.output_space == output_space
            for a in self.affordances
        )

    def all_for_output(self, space_id: str) -> list[Affordance]:
        return [a for a in self.affordances if a.output_space == space_id]

    def depth(self, space_id: str) -> int:
        """Longest dependency chain from a space down to motor commands."""
        if space_id == PRIMITIVE_NODE:
            return 0
        best = 0
        for a in self.all_for_output(space_id):
            best = max(best, 1 + self.depth(a.input_space))
        return best

    def for_output(self, space_id: str) -> Optional[Affordance]:
        """The model used to act into a space.  A model rooted in another
        outcome space beats one rooted in raw motor commands (its subgoals
        can be corrected closed-loop at the lower level); among equals the
        most recently created wins."""
        cands = self.all_for_output(space_id)
        if not cands:
            return None
        return max(cands, key=lambda a: (self.depth(a.input_space), a.created_episode))

    def controllable_spaces(self) -> list[str]:
        return sorted({a.output_space for a in self.affordances})

    def would_cycle(self, input_space: str, output_space: str) -> bool:
        """Would output -> input close a loop in the dependency DAG?  True
        when the proposed input already depends, transitively, on the
        proposed output (or is that output)."""
        if input_space == output_space:
            return True
        stack = [input_space]
        seen = set()
        while stack:
            cur = stack.pop()
            if cur == output_space:
                return True
            if cur == PRIMITIVE_NODE or cur in seen:
                continue
            seen.add(cur)
            stack.extend(a.input_space for a in self.all_for_output(cur))
        return False

    def add(self, aff: Affordance):
        if self.has_pair(aff.input_space, aff.output_space):
            raise AffordanceError(
                f"duplicate coupling {aff.input_space!r} -> {aff.output_space!r}"
            )
        if aff.input_space != PRIMITIVE_NODE and not self.all_for_output(
            aff.input_space
        ):
            raise AffordanceError(
                f"input space {aff.input_space!r} is not yet controllable"
            )
        if self.would_cycle(aff.input_space, aff.output_space):
            raise AffordanceError("coupling would create a dependency cycle")
        self.affordances.append(aff)

    def export_text(self, feature_names: Optional[list[str]] = None) -> str:
        lines = ["couplings %d" % len(self.affordances)]
        for a in self.affordances:
            dims = a.context_dims
            if feature_names and dims:
                ctx = ",".join(feature_names[d] for d in dims)
            else:
                ctx = ",".join(str(d) for d in dims) if dims else "-"
            lines.append(
                f"{a.input_space} -> {a.output_space} | samples {a.n_samples}"
                f" | detection_r2 {a.detection_r2:.4f} | context {ctx}"
                f" | created_ep {a.created_episode}"
            )
            for ep, dim, gain in a.refinements:
                name = (
                    feature_names[dim]
                    if feature_names and dim < len(feature_names)
                    else str(dim)
                )
                lines.append(f"  refined ep {ep}: +{name} ({gain:.1%} error drop)")
        return "\n".join(lines) + "\n"

    def to_dot(self) -> str:
        lines = ["digraph couplings {"]
        nodes = {PRIMITIVE_NODE}
        for a in self.affordances:
            nodes.add(a.input_space)
            nodes.add(a.output_space)
        for n in sorted(nodes):
            lines.append(f'  "{n}";')
        for a in sorted(self.affordances, key=lambda a: a.output_space):
            lines.append(
                f'  "{a.input_space}" -> "{a.output_space}"'
                f' [label="r2={a.detection_r2:.2f}"];'
            )
        lines.append("}")
        return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------
# detection

def detect(
    mem: EpisodicMemory,
    affset: AffordanceSet,
    spaces: dict[str, OutcomeSpace],
    cfg,
    rng: np.random.Generator,
    episode: int,
) -> Optional[Affordance]:
    """Test a few random candidate couplings against the recent transition
    window; returns a new affordance when one fits linearly well enough.

    Creation takes two gates: the in-sample fit must reach
    ``coupling_r2_threshold``, and the same map must keep predictive skill on
    held-out episodes (``crossval_r2`` >= ``coupling_holdout_min``).  The
    second gate is what verifies the coupling is coherent across situations
    rather than an artifact of one rollout's geometry.

    When a raw motor-command candidate passes for some output, every already
    controllable space is checked on the same window first, and one that also
    passes takes its place as the input.  Nested models are the point of the
    architecture: an effect explained by a space the agent can already reach
    is rooted there, keeping motor space reserved for effects nothing else
    accounts for.

    Sample rows differ by input kind.  A motor command spans its whole step,
    so every step that moved the output is a valid paired change.  A coupling
    between two spaces only transmits while the physical interaction lasts,
    and an interaction that starts partway through a step yields a change
    pair contaminated by the unknown onset phase -- so space-input candidates
    pair only steps whose output was already moving in the previous step of
    the same episode (interaction interiors)."""
    actions, deltas, contexts, step_eps = mem.recent_steps(cfg.coupling_window)
    if actions.shape[0] == 0:
        return None
    inputs = [PRIMITIVE_NODE] + affset.controllable_spaces()
    cands = [
        (ci, oj)
        for ci in inputs
        for oj in sorted(spaces)
        if oj != ci
        and not affset.has_pair(ci, oj)
        and not affset.would_cycle(ci, oj)
    ]
    if not cands:
        return None

    def passes(x: np.ndarray, y: np.ndarray, eps: np.ndarray):
        r2 = linear_fit_r2(x, y)
        if r2 >= cfg.coupling_r2_threshold and (
            crossval_r2(x, y, eps) >= cfg.coupling_holdout_min
        ):
            return r2
        return None

    order = rng.permutation(len(cands))[: cfg.coupling_candidates]
    for idx in order:
        ci, oj = cands[idx]
        y = deltas[oj]
        moving = np.linalg.norm(y, axis=1) > 1e-9
        interior = moving.copy()
        interior[0] = False
        interior[1:] = moving[1:] & moving[:-1] & (step_eps[1:] == step_eps[:-1])
        mask = moving if ci == PRIMITIVE_NODE else interior
        if int(mask.sum()) < cfg.coupling_min_samples:
            continue
        x = actions if ci == PRIMITIVE_NODE else deltas[ci]
        r2 = passes(x[mask], y[mask], step_eps[mask])
        if r2 is None:
            continue
        xm, ym, cm = x[mask], y[mask], contexts[mask]
        if ci == PRIMITIVE_NODE and int(interior.sum()) >= cfg.coupling_min_samples:
            for alt in affset.controllable_spaces():
                if (
                    alt == oj
                    or affset.has_pair(alt, oj)
                    or affset.would_cycle(alt, oj)
                ):
                    continue
                alt_r2 = passes(
                    deltas[alt][interior], y[interior], step_eps[interior]
                )
                if alt_r2 is not None:
                    ci, r2 = alt, alt_r2
                    xm, ym, cm = (
                        deltas[alt][interior],
                        y[interior],
                        contexts[interior],
                    )
                    break
        return Affordance(
            input_space=ci,
            output_space=oj,
            inputs=xm.copy(),
            outputs=ym.copy(),
            contexts=cm.copy(),
            created_episode=episode,
            detection_r2=r2,
        )
    return None


# ----------------------------------------------------------------------
# refinement

@dataclass
class RefineReport:
    tested: bool
    contradicted: bool = False
    added_dim: Optional[int] = None
    improvement: float = 0.0
    episode_error: float = 0.0


def _record_rows(aff: Affordance, record: EpisodeRecord):
    """The record's step transitions in this affordance's (input, output,
    context) shape, restricted to rows where the output moved -- and, for a
    space-rooted model, to interaction interiors (the previous step moved the
    output too), matching the sampling rule used at detection time."""
    if record.stepwise is None or record.step_context is None:
        return None
    dy = np.diff(record.stepwise[aff.output_space], axis=0)
    if aff.input_space == PRIMITIVE_NODE:
        x = np.stack([p.params for p in record.action.primitives])
    else:
        x = np.diff(record.stepwise[aff.input_space], axis=0)
    ctx = record.step_context
    mask = np.linalg.norm(dy, axis=1) > 1e-9
    if aff.input_space != PRIMITIVE_NODE:
        interior = mask.copy()
        interior[0] = False
        interior[1:] = mask[1:] & mask[:-1]
        mask = interior
    if not mask.any():
        return None
    return x[mask], dy[mask], ctx[mask]


def refine(
    aff: Affordance, record: EpisodeRecord, cfg, episode: int
) -> RefineReport:
    """Score the new episode against the model; on a contradiction, try to
    explain it away with one extra context feature (kept only if leave-one-out
    error drops by the configured fraction).  The new samples are absorbed
    either way."""
    rows = _record_rows(aff, record)
    if rows is None:
        return RefineReport(tested=False)
    x, y, ctx = rows
    errs = [aff.prediction_error(x[i], y[i], ctx[i]) for i in range(x.shape[0])]
    ep_err = float(np.mean(errs))
    history = list(aff.error_history)
    report = RefineReport(tested=True, episode_error=ep_err)
    if len(history) >= 5:
        med = float(np.median(history))
        if med > 0 and ep_err > cfg.contradiction_factor * med:
            report.contradicted = True
            n_feats = aff.contexts.shape[1]
            base = aff.loo_error(aff.context_dims)
            best_dim, best_err = None, base
            for dim in range(n_feats):
                if dim in aff.context_dims:
                    continue
                e = aff.loo_error(sorted(aff.context_dims + [dim]))
                if e < best_err:
                    best_dim, best_err = dim, e
            if (
                best_dim is not None
                and base > 0
                and (base - best_err) / base >= cfg.context_gain
            ):
                aff.context_dims = sorted(aff.context_dims + [best_dim])
                report.added_dim = best_dim
                report.improvement = (base - best_err) / base
                aff.refinements.append((episode, best_dim, report.improvement))
    aff.error_history.append(ep_err)
    if len(aff.error_history) > 100:
        del aff.error_history[0]
    aff.absorb(x, y, ctx, cap=cfg.coupling_window)
    return report


# ----------------------------------------------------------------------
# planning and execution

def _subgoal_radius(mem: EpisodicMemory, space: OutcomeSpace, space_id: str) -> float:
    r = mem.reach_r95(space_id)
    if r is None or r <= 0:
        r = 0.1 * space.diameter
    return r


def plan(
    goal: Outcome,
    affset: AffordanceSet,
    current: dict[str, np.ndarray],
    context: Optional[np.ndarray],
    mem: EpisodicMemory,
    spaces: dict[str, OutcomeSpace],
    cfg,
) -> tuple[Controllable, ...]:
    """Open-loop greedy chaining: march the output toward the goal in steps
    bounded by typical one-transition reach, inverting each affordance to a
    motor command or an input-space subgoal."""
    aff = affset.for_output(goal.space)
    if aff is None:
        raise AffordanceError(f"no affordance produces space {goal.space!r}")
    space = spaces[goal.space]
    tol = cfg.plan_tolerance * space.diameter
    reach = _subgoal_radius(mem, space, goal.space)
    cur = np.array(current[goal.space], dtype=float)
    cur_in = (
        None
        if aff.input_space == PRIMITIVE_NODE
        else np.array(current.get(aff.input_space, np.zeros(aff.inputs.shape[1])), float)
    )
    seq: list[Controllable] = []
    for _ in range(cfg.plan_step_cap):
        gap = goal.value - cur
        dist = float(np.linalg.norm(gap))
        if dist <= tol:
            return tuple(seq)
        step = gap if dist <= reach else gap * (reach / dist)
        inp = aff.inverse(step, context)
        if aff.input_space == PRIMITIVE_NODE:
            seq.append(ActionPrimitive(np.clip(inp, -1.0, 1.0)))
        else:
            cur_in = cur_in + inp
            cur_in, _ = spaces[aff.input_space].clip(cur_in)
            seq.append(Outcome(aff.input_space, cur_in.copy()))
        cur = cur + step
    if float(np.linalg.norm(goal.value - cur)) <= tol:
        return tuple(seq)
    raise PlanFailed(tuple(seq))


@dataclass
class ExecResult:
    executed: list[ActionPrimitive]
    ok: bool
    reason: str = ""


def execute_sequence(
    sequence,
    affset: AffordanceSet,
    env,
    mem: EpisodicMemory,
    cfg,
) -> ExecResult:
    """Run a controllable sequence closed-loop: primitives go straight to the
    environment; outcome elements are chased by re-planning one bounded
    subgoal at a time from live state, recursing through input spaces."""
    budget = 3 * cfg.plan_step_cap
    res = ExecResult(executed=[], ok=True)

    def run_primitive(p: ActionPrimitive) -> bool:
        if len(res.executed) >= budget:
            res.ok, res.reason = False, "primitive budget exhausted"
            return False
        env.step(p)
        res.executed.append(p)
        return True

    def chase(target: Outcome, depth: int) -> bool:
        aff = affset.for_output(target.space)
        if aff is None:
            res.ok, res.reason = False, f"no affordance into {target.space}"
            return False
        if depth <= 0:
            res.ok, res.reason = False, "chain depth exhausted"
            return False
        space = env.spaces[target.space]
        tol = cfg.plan_tolerance * space.diameter
        reach = _subgoal_radius(mem, space, target.space)
        for _ in range(cfg.plan_step_cap):
            cur = np.asarray(env.current_values()[target.space], dtype=float)
            gap = target.value - cur
            dist = float(np.linalg.norm(gap))
            if dist <= tol:
                return True
            step = gap if dist <= reach else gap * (reach / dist)
            inp = aff.inverse(step, env.step_features_now())
            if aff.input_space == PRIMITIVE_NODE:
                if not run_primitive(ActionPrimitive(np.clip(inp, -1.0, 1.0))):
                    return False
            else:
                base = np.asarray(env.current_values()[aff.input_space], dtype=float)
                sub, _ = env.spaces[aff.input_space].clip(base + inp)
                if not chase(Outcome(aff.input_space, sub), depth - 1):
                    return False
        cur = np.asarray(env.current_values()[target.space], dtype=float)
        if float(np.linalg.norm(target.value - cur)) <= tol:
            return True
        res.ok, res.reason = False, f"step cap chasing {target.space}"
        return False

    for element in sequence:
        if isinstance(element, ActionPrimitive):
            if not run_primitive(element):
                break
        else:
            if not chase(element, depth=len(affset.affordances) + 1):
                break
    return res
