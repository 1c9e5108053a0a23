"""A differential-drive robot pushing objects in a walled square arena.

Primitives are (left, right) wheel commands held for one motion of fixed
duration, integrated in substeps.  The arena holds two movable discs ("green"
objects, radii drawn per episode) and one fixed disc (the "red" obstacle)
that nothing can move.  Object 2 is too heavy for the robot to push directly:
it only moves when object 1 is shoved into it, so the second object can only
be controlled through the first.

Observable spaces are the robot position and the two object positions; the
episode context records the object layout (positions and radii).
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from hiertask.core import ActionPrimitive, Outcome, OutcomeSpace
from hiertask.envs.base import GroundTruth, World

ARENA = 1.0
ROBOT_RADIUS = 0.05
OBSTACLE_POS = np.array([0.8, 0.2])
OBSTACLE_RADIUS = 0.06
RADIUS_RANGE = (0.03, 0.08)
SPEED_GAIN = 0.25  # arena units of travel for a full-speed straight primitive
TURN_GAIN = math.pi / 2  # radians of heading change for a full-speed spin
START_POSE = np.array([0.5, 0.5, 0.0])
MAX_RESOLVE_PASSES = 25


class MobilePusherWorld(World):
    env_id = "mobile-pusher"
    primitive_dim = 2
    step_feature_names = (
        "heading_cos",
        "heading_sin",
        "radius1",
        "radius2",
        "bearing1_cos",
        "bearing1_sin",
        "bearing2_cos",
        "bearing2_sin",
    )

    def __init__(self):
        super().__init__()
        lo = np.array([0.0, 0.0])
        hi = np.array([ARENA, ARENA])
        self.spaces = {
            "robot": OutcomeSpace("robot", lo, hi),
            "object1": OutcomeSpace("object1", lo, hi),
            "object2": OutcomeSpace("object2", lo, hi),
        }

    # -- layout ------------------------------------------------------------

    def _do_reset(self, rng: np.random.Generator) -> np.ndarray:
        self.pose = START_POSE.copy()
        self.radii = np.array(
            [
                rng.uniform(*RADIUS_RANGE),
                rng.uniform(*RADIUS_RANGE),
            ]
        )
        placed = []
        for i in range(2):
            r = self.radii[i]
            for _ in range(200):
                # central half of the arena: close enough to the start pose
                # that short exploratory rollouts make contact regularly
                p = rng.uniform(0.3, 0.7, size=2)
                clear = (
                    np.linalg.norm(p - self.pose[:2]) > r + ROBOT_RADIUS + 0.05
                    and np.linalg.norm(p - OBSTACLE_POS) > r + OBSTACLE_RADIUS + 0.02
                    and all(
                        np.linalg.norm(p - q) > r + pr + 0.02 for q, pr in placed
                    )
                )
                if clear:
                    break
            placed.append((p, r))
        self.objects = np.array([placed[0][0], placed[1][0]])
        return np.array(
            [
                self.objects[0, 0],
                self.objects[0, 1],
                self.radii[0],
                self.objects[1, 0],
                self.objects[1, 1],
                self.radii[1],
            ]
        )

    # -- physics -----------------------------------------------------------

    def _advance(self, params: np.ndarray) -> None:
        left, right = float(params[0]), float(params[1])
        v = SPEED_GAIN * 0.5 * (left + right)
        w = TURN_GAIN * 0.5 * (right - left)
        dt = 1.0 / self.substeps
        for _ in range(self.substeps):
            self.pose[2] += w * dt
            self.pose[0] += v * math.cos(self.pose[2]) * dt
            self.pose[1] += v * math.sin(self.pose[2]) * dt
            self._resolve_contacts()

    def _resolve_contacts(self) -> None:
        # scalar arithmetic throughout: this runs every substep and numpy
        # overhead on 2-vectors dominates the whole simulation otherwise
        rob_r = ROBOT_RADIUS
        r1, r2 = float(self.radii[0]), float(self.radii[1])
        rx, ry = float(self.pose[0]), float(self.pose[1])
        x1, y1 = float(self.objects[0, 0]), float(self.objects[0, 1])
        x2, y2 = float(self.objects[1, 0]), float(self.objects[1, 1])
        obx, oby = float(OBSTACLE_POS[0]), float(OBSTACLE_POS[1])
        share_rob1 = rob_r / (rob_r + r1)
        share_12 = r1 / (r1 + r2)
        for _ in range(MAX_RESOLVE_PASSES):
            moved = False
            # walls first: hard clamps
            cx = min(max(rx, rob_r), ARENA - rob_r)
            cy = min(max(ry, rob_r), ARENA - rob_r)
            if cx != rx or cy != ry:
                rx, ry = cx, cy
                moved = True
            cx = min(max(x1, r1), ARENA - r1)
            cy = min(max(y1, r1), ARENA - r1)
            if cx != x1 or cy != y1:
                x1, y1 = cx, cy
                moved = True
            cx = min(max(x2, r2), ARENA - r2)
            cy = min(max(y2, r2), ARENA - r2)
            if cx != x2 or cy != y2:
                x2, y2 = cx, cy
                moved = True
            # the obstacle moves nothing and stops everything
            for which, px, py, pr in ((0, rx, ry, rob_r), (1, x1, y1, r1), (2, x2, y2, r2)):
                dx, dy = px - obx, py - oby
                dist = math.sqrt(dx * dx + dy * dy)
                overlap = OBSTACLE_RADIUS + pr - dist
                if overlap > 1e-12:
                    if dist < 1e-12:
                        nx, ny = 1.0, 0.0
                    else:
                        nx, ny = dx / dist, dy / dist
                    px, py = px + overlap * nx, py + overlap * ny
                    if which == 0:
                        rx, ry = px, py
                    elif which == 1:
                        x1, y1 = px, py
                    else:
                        x2, y2 = px, py
                    moved = True
            # robot vs object 2: the robot yields entirely
            dx, dy = rx - x2, ry - y2
            dist = math.sqrt(dx * dx + dy * dy)
            overlap = r2 + rob_r - dist
            if overlap > 1e-12:
                if dist < 1e-12:
                    nx, ny = 1.0, 0.0
                else:
                    nx, ny = dx / dist, dy / dist
                rx, ry = rx + overlap * nx, ry + overlap * ny
                moved = True
            # robot vs object 1: split by radius (small objects are easy to shove)
            dx, dy = x1 - rx, y1 - ry
            dist = math.sqrt(dx * dx + dy * dy)
            overlap = rob_r + r1 - dist
            if overlap > 1e-12:
                if dist < 1e-12:
                    nx, ny = 1.0, 0.0
                else:
                    nx, ny = dx / dist, dy / dist
                rx -= (1.0 - share_rob1) * overlap * nx
                ry -= (1.0 - share_rob1) * overlap * ny
                x1 += share_rob1 * overlap * nx
                y1 += share_rob1 * overlap * ny
                moved = True
            # object 1 vs object 2: same rule between the two objects
            dx, dy = x2 - x1, y2 - y1
            dist = math.sqrt(dx * dx + dy * dy)
            overlap = r1 + r2 - dist
            if overlap > 1e-12:
                if dist < 1e-12:
                    nx, ny = 1.0, 0.0
                else:
                    nx, ny = dx / dist, dy / dist
                x1 -= (1.0 - share_12) * overlap * nx
                y1 -= (1.0 - share_12) * overlap * ny
                x2 += share_12 * overlap * nx
                y2 += share_12 * overlap * ny
                moved = True
            if not moved:
                break
        self.pose[0], self.pose[1] = rx, ry
        self.objects[0, 0], self.objects[0, 1] = x1, y1
        self.objects[1, 0], self.objects[1, 1] = x2, y2

    # -- readings ----------------------------------------------------------

    def _live_values(self) -> dict[str, np.ndarray]:
        return {
            "robot": self.pose[:2],
            "object1": self.objects[0],
            "object2": self.objects[1],
        }

    def _step_features(self) -> np.ndarray:
        th = float(self.pose[2])
        feats = [math.cos(th), math.sin(th), self.radii[0] / RADIUS_RANGE[1], self.radii[1] / RADIUS_RANGE[1]]
        for i in range(2):
            rel = self.objects[i] - self.pose[:2]
            bearing = math.atan2(rel[1], rel[0]) - th
            feats.extend([math.cos(bearing), math.sin(bearing)])
        return np.array(feats)

    def observe(self) -> dict[str, Optional[Outcome]]:
        hist = self.stepwise()
        # an object's outcome counts as produced only if the episode moved it
        moved = {
            sid: bool(
                np.linalg.norm(hist[sid][-1] - hist[sid][0]) > 1e-9
            )
            for sid in ("object1", "object2")
        }
        return {
            "robot": self.clipped_outcome("robot", self.pose[:2]),
            "object1": (
                self.clipped_outcome("object1", self.objects[0])
                if moved["object1"]
                else None
            ),
            "object2": (
                self.clipped_outcome("object2", self.objects[1])
                if moved["object2"]
                else None
            ),
        }

    def null_primitive(self) -> ActionPrimitive:
        return ActionPrimitive(np.zeros(2))

    def ground_truth(self) -> GroundTruth:
        return GroundTruth(
            edges=(
                ("primitive", "robot"),
                ("robot", "object1"),
                ("object1", "object2"),
            ),
            levels={"robot": 0, "object1": 1, "object2": 2},
        )

    # convenience for scripted controllers and tests
    @property
    def heading(self) -> float:
        return float(self.pose[2])
