"""Scripted experts: demonstration repertoires and benchmark goal sets.

Demonstrations come from closed-form or simulation-refined scripted solvers
(inverse kinematics for the arm, turn/drive/push scripts for the mobile
robot), never from a pre-trained learner.  Action demos are replay-validated
on the environment at construction; grid goals no script can reach are
dropped and reported.  The same solvers back the benchmark: a goal enters the
benchmark only if a scripted solution of at most four primitives reaches it
within tolerance, so every benchmark goal is known to be achievable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from hiertask.core import ActionPrimitive, CompoundAction, Outcome, Procedure
from hiertask.envs import make_env
from hiertask.envs.arm import JOYSTICK_POS, PEN_START, CONTACT_RADIUS, CURSOR_GAIN
from hiertask.envs.pusher import (
    OBSTACLE_POS,
    OBSTACLE_RADIUS,
    ROBOT_RADIUS,
    SPEED_GAIN,
    START_POSE,
    TURN_GAIN,
)

VALIDATION_TOL = 0.05  # fraction of the space diameter a demo may miss by
BENCH_MAX_PRIMS = 4

Demo = Union[CompoundAction, Procedure]


class TeacherError(RuntimeError):
    pass


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


# ----------------------------------------------------------------------
# arm scripts


def arm_ik(target) -> Optional[ActionPrimitive]:
    """Joint targets whose forward kinematics land on ``target``.

    The wrist joint is kept at zero so links 2 and 3 act as one 0.5 link;
    with both effective links 0.5 the whole unit disk is reachable.  Returns
    None outside it."""
    x, y = float(target[0]), float(target[1])
    d = math.hypot(x, y)
    if d > 1.0 + 1e-12:
        return None
    half = 0.5
    cos_elbow = min(1.0, max(-1.0, (d * d - 2 * half * half) / (2 * half * half)))
    elbow = math.acos(cos_elbow)
    shoulder = math.atan2(y, x) - math.atan2(
        half * math.sin(elbow), half + half * math.cos(elbow)
    )
    q1 = _wrap_angle(shoulder) / math.pi
    q2 = _wrap_angle(elbow) / math.pi
    return ActionPrimitive(np.array([q1, q2, 0.0]))


def _arm_action_candidates(space_id: str, goal: np.ndarray) -> list[CompoundAction]:
    cands: list[CompoundAction] = []
    if space_id == "effector":
        p = arm_ik(goal)
        if p is not None:
            cands.append(CompoundAction((p,)))
    elif space_id == "pen":
        p = arm_ik(goal)
        grab = arm_ik(PEN_START)
        if p is not None:
            # a single sweep sometimes grabs the pen on the way; try it first
            cands.append(CompoundAction((p,)))
            if grab is not None:
                cands.append(CompoundAction((grab, p)))
    elif space_id == "tilt":
        if float(np.linalg.norm(goal)) <= 1.0:
            # aim a hair inside the contact radius so a full deflection does
            # not land exactly on the touch boundary
            p = arm_ik(JOYSTICK_POS + CONTACT_RADIUS * 0.999 * np.asarray(goal))
            if p is not None:
                cands.append(CompoundAction((p,)))
    elif space_id == "cursor":
        g = np.asarray(goal, dtype=float)
        norm = float(np.linalg.norm(g))
        n = max(1, math.ceil(norm / CURSOR_GAIN - 1e-9))
        tilt = g / (CURSOR_GAIN * n) if norm > 0 else np.zeros(2)
        if float(np.linalg.norm(tilt)) <= 1.0 + 1e-9:
            tilt = tilt / max(1.0, float(np.linalg.norm(tilt)) * (1.0 + 1e-3))
            p = arm_ik(JOYSTICK_POS + CONTACT_RADIUS * tilt)
            if p is not None:
                cands.append(CompoundAction((p,) * n))
    elif space_id == "drawing":
        pa, pb = np.asarray(goal[:2]), np.asarray(goal[2:])
        ia, ib = arm_ik(pa), arm_ik(pb)
        grab = arm_ik(PEN_START)
        if ia is not None and ib is not None:
            cands.append(CompoundAction((ia, ib)))
            if grab is not None:
                cands.append(CompoundAction((grab, ia, ib)))
    return cands


# ----------------------------------------------------------------------
# pusher scripts


def _turn_primitive(delta_heading: float) -> Optional[ActionPrimitive]:
    u = delta_heading / TURN_GAIN
    if abs(u) > 1.0 + 1e-9:
        return None
    u = min(1.0, max(-1.0, u))
    return ActionPrimitive(np.array([-u, u]))


def _drive_primitives(dist: float, sign: float) -> Optional[list[ActionPrimitive]]:
    prims = []
    remaining = dist
    while remaining > 1e-9:
        w = min(1.0, remaining / SPEED_GAIN)
        prims.append(ActionPrimitive(np.array([w * sign, w * sign])))
        remaining -= w * SPEED_GAIN
        if len(prims) > 6:
            return None
    return prims


def _navigate(start_pose: np.ndarray, target: np.ndarray) -> Optional[list[ActionPrimitive]]:
    """Turn once, then drive straight (forward or backward, whichever needs
    the smaller turn)."""
    delta = np.asarray(target) - start_pose[:2]
    dist = float(np.linalg.norm(delta))
    if dist < 1e-9:
        return []
    bearing = math.atan2(delta[1], delta[0])
    fwd = _wrap_angle(bearing - start_pose[2])
    back = _wrap_angle(bearing + math.pi - start_pose[2])
    options = []
    for turn, sign in ((fwd, 1.0), (back, -1.0)):
        t = _turn_primitive(turn)
        if t is None:
            continue
        drives = _drive_primitives(dist, sign)
        if drives is None:
            continue
        prims = ([t] if abs(turn) > 1e-9 else []) + drives
        options.append((len(prims), abs(turn), prims))
    if not options:
        return None
    options.sort(key=lambda o: (o[0], o[1]))
    return options[0][2]


def _replay_pose(env_id: str, layout_seed: int, prims: list[ActionPrimitive]) -> np.ndarray:
    env = make_env(env_id)
    env.reset(layout_seed)
    for p in prims:
        env.step(p)
    return np.concatenate([env.pose[:2], [env.pose[2]]])


def _tuned_push(
    prefix: list[ActionPrimitive],
    layout_seed: int,
    goal: np.ndarray,
    obj_index: int,
    sign: float = 1.0,
) -> CompoundAction:
    """Append one straight drive whose speed is ternary-searched so the
    chosen object ends as close to the goal as the script allows (the
    error-vs-speed curve is V-shaped: undershoot, then overshoot)."""

    def final_error(speed: float) -> float:
        env = make_env("mobile-pusher")
        env.reset(layout_seed)
        for p in prefix:
            env.step(p)
        env.step(ActionPrimitive(np.array([sign * speed, sign * speed])))
        return float(np.linalg.norm(env.objects[obj_index] - goal))

    lo, hi = 0.02, 1.0
    for _ in range(32):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if final_error(m1) <= final_error(m2):
            hi = m2
        else:
            lo = m1
    w = 0.5 * (lo + hi)
    return CompoundAction(
        tuple(prefix + [ActionPrimitive(np.array([sign * w, sign * w]))])
    )


def _pusher_push_candidates(
    space_id: str, goal: np.ndarray, layout_seed: int
) -> list[CompoundAction]:
    """Scripted pushes for the object spaces, two families:

    * plow: turn to face the object from the start pose and drive straight
      through it, carrying it along the start->object ray (object 1 only);
    * approach: navigate behind the object on the goal line, turn to face it,
      then push once.

    The last drive's speed is simulation-tuned; every candidate is still
    replay-validated by the caller, so a family that does not suit the layout
    simply contributes nothing."""
    probe = make_env("mobile-pusher")
    ctx = probe.reset(layout_seed)
    obj1 = ctx[0:2]
    r1 = float(ctx[2])
    obj2 = ctx[3:5]
    r2 = float(ctx[5])
    goal = np.asarray(goal, dtype=float)
    cands: list[CompoundAction] = []

    if space_id == "object1":
        push_line = goal - obj1
        length = float(np.linalg.norm(push_line))
        if length < 1e-6:
            return []
        push_dir = push_line / length

        # plow family: head straight for the contact point behind the object
        # on the goal line, and keep driving -- the push then runs along the
        # goal line from the moment of contact
        contact_pt = obj1 - push_dir * (ROBOT_RADIUS + r1)
        to_p = contact_pt - START_POSE[:2]
        d_p = float(np.linalg.norm(to_p))
        if d_p > 1e-6:
            bearing = math.atan2(to_p[1], to_p[0])
            for offset, sign in ((0.0, 1.0), (math.pi, -1.0)):
                t = _turn_primitive(_wrap_angle(bearing + offset - START_POSE[2]))
                if t is None:
                    continue
                base = [t] if abs(float(t.params[1])) > 1e-9 else []
                travel = d_p + length  # rough drive budget to the goal
                for k in range(1, 4):
                    if (k - 1) * SPEED_GAIN > travel:
                        break
                    prefix = base + [ActionPrimitive(np.array([sign, sign]))] * (k - 1)
                    cands.append(_tuned_push(prefix, layout_seed, goal, 0, sign=sign))
                break  # prefer the option with the feasible (smaller) turn

        # approach family
        approach = obj1 - push_dir * (ROBOT_RADIUS + r1 + 0.005)
        strike_from, obj_index = obj1, 0
    else:  # object2: strike object 1 into object 2 along the goal line
        strike_line = goal - obj2
        length = float(np.linalg.norm(strike_line))
        if length < 1e-6:
            return []
        strike_dir = strike_line / length
        contact = obj2 - strike_dir * (r1 + r2 + 0.005)
        to_contact = contact - obj1
        gap = float(np.linalg.norm(to_contact))
        push_dir = strike_dir if gap < 1e-6 else to_contact / gap
        # the carom only works if object 1 travels roughly along the strike line
        if float(push_dir @ strike_dir) < math.cos(math.radians(25.0)):
            return []
        approach = obj1 - push_dir * (ROBOT_RADIUS + r1 + 0.005)
        strike_from, obj_index = obj1, 1

    nav = _navigate(START_POSE, approach)
    if nav is not None:
        pose_after = _replay_pose("mobile-pusher", layout_seed, nav)
        to_obj = strike_from - pose_after[:2]
        obj_bearing = math.atan2(to_obj[1], to_obj[0])
        # push nose-first or tail-first, whichever face turn is feasible
        for offset, sign in ((0.0, 1.0), (math.pi, -1.0)):
            face = _turn_primitive(_wrap_angle(obj_bearing + offset - pose_after[2]))
            if face is None:
                continue
            prefix = nav + ([face] if abs(float(face.params[1])) > 1e-9 else [])
            cands.append(_tuned_push(prefix, layout_seed, goal, obj_index, sign=sign))
    cands.sort(key=len)
    return cands


def _pusher_action_candidates(
    space_id: str, goal: np.ndarray, layout_seed: int
) -> list[CompoundAction]:
    if space_id == "robot":
        target = np.clip(goal, ROBOT_RADIUS, 1.0 - ROBOT_RADIUS)
        if np.linalg.norm(target - OBSTACLE_POS) <= ROBOT_RADIUS + OBSTACLE_RADIUS:
            return []
        nav = _navigate(START_POSE, target)
        if not nav:
            return []
        return [CompoundAction(tuple(nav))]
    return _pusher_push_candidates(space_id, goal, layout_seed)


# ----------------------------------------------------------------------
# shared construction machinery


def scripted_action_candidates(
    env_id: str, space_id: str, goal: np.ndarray, layout_seed: int
) -> list[CompoundAction]:
    if env_id == "arm-pen":
        return _arm_action_candidates(space_id, goal)
    if env_id == "mobile-pusher":
        return _pusher_action_candidates(space_id, goal, layout_seed)
    raise TeacherError(f"no scripts for environment {env_id!r}")


def replay_error(
    env_id: str, layout_seed: int, action: CompoundAction, space_id: str, goal: np.ndarray
) -> float:
    """Normalized distance between the goal and what the action actually
    produces from a fresh reset; 1.0 when the space is not produced at all."""
    env = make_env(env_id)
    env.reset(layout_seed)
    for p in action.primitives:
        env.step(p)
    out = env.observe()[space_id]
    if out is None:
        return 1.0
    return float(
        np.linalg.norm(out.value - np.asarray(goal)) / env.spaces[space_id].diameter
    )


def validated_action(
    env_id: str,
    space_id: str,
    goal: np.ndarray,
    layout_seed: int,
    max_prims: Optional[int] = None,
    tol: float = VALIDATION_TOL,
) -> Optional[CompoundAction]:
    """First scripted candidate that, replayed, lands within tolerance."""
    for cand in scripted_action_candidates(env_id, space_id, goal, layout_seed):
        if max_prims is not None and len(cand) > max_prims:
            continue
        if replay_error(env_id, layout_seed, cand, space_id, goal) <= tol:
            return cand
    return None


def _grid_goals(lower: np.ndarray, upper: np.ndarray, grid: int) -> np.ndarray:
    axes = [np.linspace(lower[d], upper[d], grid) for d in range(lower.size)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def drawing_goal_pairs(n_pairs: int, seed: int) -> np.ndarray:
    """Seeded reachable stroke pairs: both endpoints inside the disk, the
    first stroke long enough to register from the pen's home position, the
    second stroke long enough to register from the first."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 911]))
    pairs = []
    while len(pairs) < n_pairs:
        pa = rng.uniform(-0.9, 0.9, size=2)
        pb = rng.uniform(-0.9, 0.9, size=2)
        if np.linalg.norm(pa) > 0.9 or np.linalg.norm(pb) > 0.9:
            continue
        if np.linalg.norm(pa - PEN_START) < 0.15:
            continue
        if not 0.25 <= np.linalg.norm(pb - pa) <= 0.7:
            continue
        pairs.append(np.concatenate([pa, pb]))
    return np.stack(pairs)


def _procedure_demo(
    env_id: str, space_id: str, goal: np.ndarray, layout_seed: int
) -> Optional[Procedure]:
    if env_id == "arm-pen" and space_id == "drawing":
        return Procedure(
            (Outcome("pen", goal[:2].copy()), Outcome("pen", goal[2:].copy()))
        )
    if env_id == "arm-pen" and space_id == "cursor":
        g = np.asarray(goal, dtype=float)
        tilt = g / (2.0 * CURSOR_GAIN)
        norm = float(np.linalg.norm(tilt))
        if norm > 1.0:
            tilt = tilt / norm
        return Procedure((Outcome("tilt", tilt.copy()), Outcome("tilt", tilt.copy())))
    if env_id == "mobile-pusher" and space_id == "object2":
        probe = make_env(env_id)
        ctx = probe.reset(layout_seed)
        obj1, r1 = ctx[0:2], float(ctx[2])
        obj2, r2 = ctx[3:5], float(ctx[5])
        line = np.asarray(goal) - obj2
        length = float(np.linalg.norm(line))
        if length < 1e-6:
            return None
        strike = line / length
        contact = obj2 - strike * (r1 + r2 + 0.005)
        through = contact + strike * min(length, 0.1)
        return Procedure(
            (Outcome("object1", contact.copy()), Outcome("object1", through.copy()))
        )
    return None


@dataclass
class Teacher:
    """A frozen demonstration repertoire for one space."""

    teacher_id: str
    kind: str  # "action" | "procedure"
    space: str
    goals: np.ndarray
    demos: list[Demo]
    dropped: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if len(self.demos) == 0:
            raise TeacherError(f"teacher {self.teacher_id!r} has an empty repertoire")
        if self.goals.shape[0] != len(self.demos):
            raise TeacherError("goals/demos length mismatch")

    def demo(self, goal_value) -> Demo:
        """The repertoire entry whose goal is nearest the query; a query of
        the wrong dimension deterministically earns the first entry."""
        q = np.asarray(goal_value, dtype=float)
        if q.shape != (self.goals.shape[1],):
            return self.demos[0]
        d = np.linalg.norm(self.goals - q[None, :], axis=1)
        return self.demos[int(np.lexsort((np.arange(len(d)), d))[0])]

    def serialize(self) -> str:
        lines = [
            f"teacher {self.teacher_id}",
            f"kind {self.kind}",
            f"space {self.space}",
            f"demos {len(self.demos)}",
        ]
        for g, demo in zip(self.goals, self.demos):
            gtxt = " ".join(f"{x:.6f}" for x in g)
            if isinstance(demo, CompoundAction):
                dtxt = " ; ".join(
                    " ".join(f"{x:.6f}" for x in p.params) for p in demo.primitives
                )
                lines.append(f"goal {gtxt} | action {dtxt}")
            else:
                dtxt = " ; ".join(
                    c.space + " " + " ".join(f"{x:.6f}" for x in c.value)
                    for c in demo.components
                )
                lines.append(f"goal {gtxt} | procedure {dtxt}")
        for g in self.dropped:
            lines.append("dropped " + " ".join(f"{x:.6f}" for x in g))
        return "\n".join(lines) + "\n"


def build_teacher(
    env_id: str, kind: str, space_id: str, grid: int, layout_seed: int = 0
) -> Teacher:
    """Construct and validate one repertoire from scripted solutions on a
    goal grid (or seeded pairs for the 4-D drawing space)."""
    if grid < 1:
        raise TeacherError("grid size must be >= 1")
    env = make_env(env_id)
    if space_id not in env.spaces:
        raise TeacherError(f"{env_id} has no space {space_id!r}")
    sp = env.spaces[space_id]
    if space_id == "drawing":
        goal_list = drawing_goal_pairs(grid * grid, layout_seed)
    else:
        goal_list = _grid_goals(sp.lower, sp.upper, grid)
    goals, demos, dropped = [], [], []
    for g in goal_list:
        if kind == "action":
            demo = validated_action(env_id, space_id, g, layout_seed)
        elif kind == "procedure":
            demo = _procedure_demo(env_id, space_id, g, layout_seed)
        else:
            raise TeacherError(f"unknown teacher kind {kind!r}")
        if demo is None:
            dropped.append(g)
        else:
            goals.append(g)
            demos.append(demo)
    if not demos:
        raise TeacherError(
            f"no reachable goals for {kind} teacher on {env_id}/{space_id}"
        )
    return Teacher(
        teacher_id=f"{kind}:{space_id}",
        kind=kind,
        space=space_id,
        goals=np.stack(goals),
        demos=demos,
        dropped=dropped,
    )


DEFAULT_TEACHER_SETS = {
    "arm-pen": (
        ("action", "effector", 5),
        ("action", "pen", 5),
        ("action", "tilt", 5),
        ("procedure", "drawing", 4),
        ("procedure", "cursor", 5),
    ),
    "mobile-pusher": (
        ("action", "robot", 5),
        ("action", "object1", 5),
        ("procedure", "object2", 5),
    ),
}


# ----------------------------------------------------------------------
# benchmarks


_BENCHMARK_CACHE: dict[tuple[str, int], dict[str, np.ndarray]] = {}


def build_benchmark(env_id: str, eval_seed: int) -> dict[str, np.ndarray]:
    """Per-space goal sets for evaluation: grids (or seeded stroke pairs)
    filtered down to goals a scripted solution of <= 4 primitives reaches
    within tolerance on the evaluation layout.  A space no script can serve
    keeps an empty goal array (reported as unmeasurable, never silently
    dropped from the metrics shape).  Deterministic, so cached per
    (environment, seed)."""
    key = (env_id, int(eval_seed))
    if key in _BENCHMARK_CACHE:
        return {sid: g.copy() for sid, g in _BENCHMARK_CACHE[key].items()}
    env = make_env(env_id)
    bench: dict[str, np.ndarray] = {}
    for sid, sp in env.spaces.items():
        if sid == "drawing":
            cand_goals = drawing_goal_pairs(16, eval_seed)
        else:
            cand_goals = _grid_goals(sp.lower, sp.upper, 5)
        kept = [
            g
            for g in cand_goals
            if validated_action(env_id, sid, g, eval_seed, max_prims=BENCH_MAX_PRIMS)
            is not None
        ]
        bench[sid] = np.stack(kept) if kept else np.zeros((0, sp.dim))
    _BENCHMARK_CACHE[key] = bench
    return {sid: g.copy() for sid, g in bench.items()}
