"""Memory-based task models.

There are no trained parametric models: the forward model is a
distance-weighted k-nearest average over stored samples, and the inverse
model answers a goal from stored records -- replaying the best nearby
record's controllable sequence (recursing on any element that is itself an
outcome target), or blending the motor parameters of same-shape neighboring
records through a locally weighted linear fit when they form one consistent
motor family.  Everything is a pure function of the memory snapshot, which
keeps exploitation deterministic.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from hiertask.core import (
    ActionPrimitive,
    CompoundAction,
    Controllable,
    DomainError,
    EpisodeRecord,
    HierarchyGraph,
    Outcome,
    OutcomeSpace,
    concat,
    is_primitive,
)
from hiertask.memory import EpisodicMemory

WEIGHT_EPS = 1e-6
# exploitation retrieval: neighborhood size, and the fraction of the space
# diameter by which a farther-but-cheaper record may miss the nearest one
K_RETRIEVE = 10
RETRIEVAL_SLACK = 0.05


class ResolutionError(RuntimeError):
    """A goal could not be turned into motor commands.

    ``kind`` is one of "no-data", "depth-exceeded", "cyclic".
    """

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def _single_controllable(rec: EpisodeRecord) -> Optional[Controllable]:
    if len(rec.controllables) == 1:
        return rec.controllables[0]
    return None


def _controllable_distance(
    c_query: Controllable, c_stored: Controllable, spaces: dict[str, OutcomeSpace]
) -> Optional[float]:
    """Distance between two controllables, or None when incomparable.
    Outcome values are normalized by their space diameter so distances are
    commensurate with primitive parameters."""
    if is_primitive(c_query) and is_primitive(c_stored):
        if c_query.dim != c_stored.dim:
            return None
        return float(np.linalg.norm(c_query.params - c_stored.params))
    if isinstance(c_query, Outcome) and isinstance(c_stored, Outcome):
        if c_query.space != c_stored.space:
            return None
        diam = spaces[c_query.space].diameter
        return float(np.linalg.norm(c_query.value - c_stored.value) / diam)
    return None


def forward_predict(
    mem: EpisodicMemory,
    space_id: str,
    context: Optional[np.ndarray],
    c: Controllable,
    k: int = 3,
) -> Optional[np.ndarray]:
    """Predict the outcome in one space of issuing one controllable.

    Averages the reached values of the k nearest stored samples, weighted by
    1/(d + 1e-6) and renormalized; the distance runs over the controllable and
    (when given) the episode context.  Returns None when the space holds no
    comparable sample ("unknown")."""
    ids = mem.record_ids(space_id)
    if not ids:
        return None
    cands: list[tuple[float, int, np.ndarray]] = []
    for pos, rid in enumerate(ids):
        rec = mem.records[rid]
        stored = _single_controllable(rec)
        if stored is None:
            continue
        d = _controllable_distance(c, stored, mem.spaces)
        if d is None:
            continue
        if context is not None and rec.context.size == np.asarray(context).size:
            d += float(np.linalg.norm(np.asarray(context) - rec.context))
        cands.append((d, rid, mem.values(space_id)[pos]))
    if not cands:
        return None
    cands.sort(key=lambda t: (t[0], t[1]))
    top = cands[: min(k, len(cands))]
    weights = np.array([1.0 / (d + WEIGHT_EPS) for d, _, _ in top])
    weights = weights / weights.sum()
    stacked = np.stack([v for _, _, v in top])
    return weights @ stacked


def infer_controllables(
    mem: EpisodicMemory, space_id: str, goal_value: np.ndarray
) -> tuple[Controllable, ...]:
    """Exploitation-mode inverse lookup: the controllable sequence of the
    record whose reached outcome in this space is nearest the goal."""
    hits = mem.nearest(space_id, goal_value, k=1)
    if not hits:
        raise ResolutionError("no-data", f"no data for space {space_id!r}")
    return hits[0].record.controllables


def _is_procedural(rec: EpisodeRecord) -> bool:
    return not all(is_primitive(c) for c in rec.controllables)


def _best_record(
    mem: EpisodicMemory, space_id: str, goal_value: np.ndarray, k: int
) -> Optional[EpisodeRecord]:
    """The record to replay for a goal, arbitrating between answer families.

    Hits within a small distance slack of the nearest stored outcome are
    treated as interchangeable answers.  When both answer families -- direct
    motor sequences and procedural decompositions -- are represented among
    them, records that themselves targeted this space vote by achieved
    competence and the family with the better local mean wins (ties to
    direct answers, whose verbatim replay is exact in a deterministic
    world).  The surviving pool's cheapest answer -- fewest motor
    primitives -- is replayed: simple goals keep short answers, and a short
    answer also chains more cleanly when a procedure re-grounds it from a
    mid-episode state instead of the rest state it was recorded from."""
    hits = mem.nearest(space_id, goal_value, k=k)
    if not hits:
        return None
    cap = hits[0].distance + RETRIEVAL_SLACK * mem.spaces[space_id].diameter
    near = [h for h in hits if h.distance <= cap]
    if any(_is_procedural(h.record) for h in near) and not all(
        _is_procedural(h.record) for h in near
    ):
        prim_comps: list[float] = []
        proc_comps: list[float] = []
        for hit in hits:
            rec = hit.record
            if rec.goal.space != space_id:
                continue
            (proc_comps if _is_procedural(rec) else prim_comps).append(rec.competence)
        if prim_comps and proc_comps:
            use_proc = float(np.mean(proc_comps)) > float(np.mean(prim_comps))
        elif prim_comps or proc_comps:
            use_proc = bool(proc_comps)
        else:
            use_proc = None
        if use_proc is not None:
            near = [h for h in near if _is_procedural(h.record) == use_proc] or near
    best = min(near, key=lambda h: (len(h.record.action.primitives), h.distance))
    return best.record


# local linear inverse: candidate window for gathering the motor family, max
# motor-parameter distance (per coordinate) from the anchor's parameters for
# a neighbor to count as the same family, the nearest-outcome distance
# (fraction of the space diameter) below which verbatim replay is already
# good and blending is not attempted, and the max per-parameter fit residual
# before the family is declared inconsistent
INTERP_K = 64
INTERP_FAMILY_SPAN = 0.5
INTERP_MIN_GAP = 0.05
INTERP_BOX_MARGIN = 0.2
INTERP_RESIDUAL_TOL = 0.02


def _interpolated_action(
    mem: EpisodicMemory, space_id: str, goal_value: np.ndarray, anchor: EpisodeRecord
) -> Optional[CompoundAction]:
    """Locally weighted inverse: blend one motor family's answers at the goal.

    Direct records whose motor sequences have the anchor's shape and whose
    parameters lie near the anchor's form one motor family -- answers from
    the same basin of the (many-branched) motor-to-outcome map.  Within one
    family the parameters are locally linear in the reached outcome wherever
    the world is smooth, so a distance-weighted linear fit evaluated at the
    goal lands between stored answers instead of on one of them.

    Replaying a stored direct answer reproduces its outcome exactly in a
    deterministic world, so its error equals the retrieval distance: when
    the nearest outcome is already close, replay is provably good and no fit
    is attempted.  When it is far, the fit must still be strictly
    interpolative -- an overdetermined family, goal inside its bounding box,
    full rank, and a small training residual; a larger residual means the
    map bends too much across the family's span, and the caller replays a
    record verbatim instead.
    """
    L = len(anchor.action.primitives)
    if L == 0:
        return None
    hits = mem.nearest(space_id, goal_value, k=INTERP_K)
    if not hits or hits[0].distance <= INTERP_MIN_GAP * mem.spaces[space_id].diameter:
        return None
    anchor_params = np.concatenate([p.params for p in anchor.action.primitives])
    family: list[tuple[float, np.ndarray, np.ndarray]] = []
    for h in hits:
        rec = h.record
        if _is_procedural(rec) or len(rec.action.primitives) != L:
            continue
        params = np.concatenate([p.params for p in rec.action.primitives])
        if np.max(np.abs(params - anchor_params)) <= INTERP_FAMILY_SPAN:
            family.append((h.distance, np.asarray(h.value, dtype=float), params))
    dim = mem.spaces[space_id].dim
    if len(family) < dim + 1:
        return None
    goal = np.asarray(goal_value, dtype=float)
    X = np.array([v for _, v, _ in family])
    Y = np.array([p for _, _, p in family])
    if len(family) == dim + 1:
        # exactly determined: the family spans a simplex, and the fit is only
        # trusted strictly inside it (all barycentric weights nonnegative),
        # where it is a convex combination of stored answers
        try:
            bary = np.linalg.solve(
                np.vstack([X.T, np.ones(len(family))]), np.concatenate([goal, [1.0]])
            )
        except np.linalg.LinAlgError:
            return None
        if np.any(bary < 0.0):
            return None
        params = np.clip(bary @ Y, -1.0, 1.0)
        return _reshape_action(params, anchor)
    lo, hi = X.min(axis=0), X.max(axis=0)
    margin = INTERP_BOX_MARGIN * (hi - lo)
    if np.any(goal < lo - margin) or np.any(goal > hi + margin):
        return None
    sw = np.sqrt(1.0 / (np.array([d for d, _, _ in family]) + WEIGHT_EPS))
    design = np.hstack([X, np.ones((len(family), 1))])
    coef, _, rank, _ = np.linalg.lstsq(
        design * sw[:, None], Y * sw[:, None], rcond=None
    )
    if rank < dim + 1:
        return None
    if float(np.max(np.abs(design @ coef - Y))) > INTERP_RESIDUAL_TOL:
        return None
    params = np.clip(np.concatenate([goal, [1.0]]) @ coef, -1.0, 1.0)
    return _reshape_action(params, anchor)


def _reshape_action(params: np.ndarray, anchor: EpisodeRecord) -> CompoundAction:
    """Cut a flat parameter vector back into the anchor's primitive shapes."""
    prims, start = [], 0
    for p in anchor.action.primitives:
        width = len(p.params)
        prims.append(ActionPrimitive(params[start : start + width]))
        start += width
    return CompoundAction(tuple(prims))


def resolve(
    mem: EpisodicMemory,
    goal: Outcome,
    depth: int = 5,
    blend: bool = False,
    _visited: frozenset[str] = frozenset(),
) -> CompoundAction:
    """Recursively turn a goal outcome into a compound action.

    The nearest record's controllable sequence is replayed: primitives are
    kept, outcome elements are re-resolved against the current memory with a
    decremented depth budget.  The visited-space set is threaded along each
    recursion path so a chain never revisits a space (two same-space
    components of one procedure are fine: they are siblings, not ancestors).

    Which record is replayed is decided by ``_best_record``: same-space
    records near the goal vote by achieved competence between direct motor
    answers and procedural decompositions, and the winning family's cheapest
    near-equivalent answer is used.  With ``blend`` set (benchmark
    answering), a goal far from every stored outcome may instead get the
    locally weighted inverse -- its nearby motor family's parameters blended
    at the goal (``_interpolated_action``); episode execution keeps verbatim
    replay, whose outcomes are exactly reproducible, and adds its own
    strategy noise on top.  At the last depth level the lookup degrades to
    the plain nearest record, so a depth budget of 1 replays exactly the
    nearest record's motor sequence.

    When an outcome element cannot be regrounded (no data deeper, depth
    budget gone, or the chain would revisit a space), the record's own
    executed motor sequence is replayed literally instead: it is what
    actually produced the nearby outcome, so a stale decomposition never
    makes a reachable goal unreachable.
    """
    if depth < 1:
        raise ResolutionError("depth-exceeded", "resolution depth exceeded")
    if goal.space not in mem.spaces:
        raise DomainError(f"unknown outcome space {goal.space!r}")
    if goal.space in _visited:
        raise ResolutionError("cyclic", f"cyclic decomposition through {goal.space!r}")
    rec = _best_record(mem, goal.space, goal.value, k=K_RETRIEVE if depth > 1 else 1)
    if rec is None:
        raise ResolutionError("no-data", f"no data for space {goal.space!r}")
    if blend and depth > 1:
        blended = _interpolated_action(mem, goal.space, goal.value, rec)
        if blended is not None:
            return blended
    visited = _visited | {goal.space}
    parts: list[CompoundAction] = []
    grounded = True
    for c in rec.controllables:
        if is_primitive(c):
            parts.append(CompoundAction((c,)))
            continue
        if depth - 1 < 1:
            grounded = False
            break
        try:
            parts.append(resolve(mem, c, depth - 1, blend, visited))
        except ResolutionError:
            grounded = False
            break
    if grounded and parts:
        return concat(parts)
    if len(rec.action) == 0:
        raise ResolutionError(
            "no-data", f"nearest record for {goal.space!r} holds no motor trace"
        )
    return CompoundAction(rec.action.primitives)


def update_models(
    mem: EpisodicMemory,
    hierarchy: HierarchyGraph,
    record: EpisodeRecord,
    rate: float = 0.1,
) -> None:
    """Per-episode model update.

    The sample itself already lives in episodic memory (the models are views
    over it); what changes here is the task-dependency graph: the edge this
    episode exercised -- goal space to the ordered spaces of its procedure --
    moves toward the achieved competence.  Idempotent per episode id.
    """
    if record.episode in hierarchy.applied_episodes:
        return
    hierarchy.applied_episodes.add(record.episode)
    spaces = record.procedure_spaces()
    if spaces is None:
        return
    if record.goal.space in spaces:
        # replaying e.g. a (tilt, tilt) sequence against a tilt goal is a
        # legal episode but not a decomposition -- no edge to learn
        return
    hierarchy.update_weight(record.goal.space, spaces, record.competence, rate=rate)
