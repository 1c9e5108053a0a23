"""A planar 3-link arm with a magnetic pen and a spring-loaded joystick.

Primitives are normalized joint targets; each primitive interpolates the
joints linearly from the current pose over a fixed number of substeps.  The
world exposes five observable spaces:

* ``effector``  -- end-effector position after the episode,
* ``pen``       -- pen position; the pen snaps to the end effector once it is
                   approached within the grasp radius and stays held,
* ``drawing``   -- the pen positions after each primitive of the first pair of
                   consecutive primitives that both displaced the pen far
                   enough to count as strokes (a 4-D outcome),
* ``tilt``      -- joystick tilt, written while the end effector is inside the
                   contact radius and latched afterwards,
* ``cursor``    -- a video-game cursor the joystick drives: each primitive adds
                   a fixed gain times the end-of-primitive tilt.

Geometry is fixed across episodes: the arm is shoulder-mounted at the origin
with unit total length, so the end effector sweeps the unit disk.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from hiertask.core import ActionPrimitive, Outcome, OutcomeSpace
from hiertask.envs.base import GroundTruth, World

LINK_LENGTHS = (0.5, 0.3, 0.2)
PEN_START = np.array([0.6, 0.4])
JOYSTICK_POS = np.array([-0.5, 0.5])
GRASP_RADIUS = 0.05
CONTACT_RADIUS = 0.05
CURSOR_GAIN = 0.2
STROKE_MIN = 0.1  # pen displacement per primitive that counts as a stroke


def forward_kinematics(joints: np.ndarray) -> np.ndarray:
    """End-effector position for absolute joint angles (radians, relative to
    the previous link)."""
    a1 = joints[0]
    a2 = a1 + joints[1]
    a3 = a2 + joints[2]
    x = LINK_LENGTHS[0] * math.cos(a1) + LINK_LENGTHS[1] * math.cos(a2) + LINK_LENGTHS[2] * math.cos(a3)
    y = LINK_LENGTHS[0] * math.sin(a1) + LINK_LENGTHS[1] * math.sin(a2) + LINK_LENGTHS[2] * math.sin(a3)
    return np.array([x, y])


class ArmPenWorld(World):
    env_id = "arm-pen"
    primitive_dim = 3
    step_feature_names = ("hand_cos", "hand_sin")

    def __init__(self):
        super().__init__()
        flat = OutcomeSpace
        self.spaces = {
            "effector": flat("effector", np.array([-1.0, -1.0]), np.array([1.0, 1.0])),
            "pen": flat("pen", np.array([-1.0, -1.0]), np.array([1.0, 1.0])),
            "drawing": flat(
                "drawing",
                np.array([-1.0, -1.0, -1.0, -1.0]),
                np.array([1.0, 1.0, 1.0, 1.0]),
            ),
            "tilt": flat("tilt", np.array([-1.0, -1.0]), np.array([1.0, 1.0])),
            "cursor": flat("cursor", np.array([-1.0, -1.0]), np.array([1.0, 1.0])),
        }

    # -- physics -----------------------------------------------------------

    def _do_reset(self, rng: np.random.Generator) -> np.ndarray:
        self.joints = np.zeros(3)
        self.effector = forward_kinematics(self.joints)
        self.pen = PEN_START.copy()
        self.grasped = False
        self.tilt = np.zeros(2)
        self.touched_joystick = False
        self.cursor = np.zeros(2)
        self.cursor_engaged = False
        self._prev_stroke: Optional[np.ndarray] = None  # pen pos after a stroke step
        self.drawing: Optional[np.ndarray] = None
        return np.concatenate([PEN_START, JOYSTICK_POS])

    def _advance(self, params: np.ndarray) -> None:
        target = params * math.pi
        start = self.joints.copy()
        pen_at_step_start = self.pen.copy()
        for i in range(1, self.substeps + 1):
            self.joints = start + (target - start) * (i / self.substeps)
            self.effector = forward_kinematics(self.joints)
            if not self.grasped and np.linalg.norm(self.effector - self.pen) <= GRASP_RADIUS:
                self.grasped = True
            if self.grasped:
                self.pen = self.effector.copy()
            offset = self.effector - JOYSTICK_POS
            if np.linalg.norm(offset) <= CONTACT_RADIUS:
                self.tilt = np.clip(offset / CONTACT_RADIUS, -1.0, 1.0)
                self.touched_joystick = True
        # the stick latches where it was left, and the character keeps
        # walking while it is tilted: every primitive after first contact
        # advances the cursor by a fixed gain times the current tilt
        if self.touched_joystick:
            self.cursor = np.clip(self.cursor + CURSOR_GAIN * self.tilt, -1.0, 1.0)
            self.cursor_engaged = True
        # stroke bookkeeping for the drawing outcome
        stroke = (
            self.grasped
            and np.linalg.norm(self.pen - pen_at_step_start) >= STROKE_MIN
        )
        if stroke:
            if self._prev_stroke is not None and self.drawing is None:
                self.drawing = np.concatenate([self._prev_stroke, self.pen])
            self._prev_stroke = self.pen.copy()
        else:
            self._prev_stroke = None

    def _live_values(self) -> dict[str, np.ndarray]:
        return {
            "effector": self.effector,
            "pen": self.pen,
            "tilt": self.tilt,
            "cursor": self.cursor,
        }

    def _step_features(self) -> np.ndarray:
        hand = float(np.sum(self.joints))
        return np.array([math.cos(hand), math.sin(hand)])

    # -- outcomes ----------------------------------------------------------

    def observe(self) -> dict[str, Optional[Outcome]]:
        out: dict[str, Optional[Outcome]] = {
            "effector": self.clipped_outcome("effector", self.effector),
            "pen": self.clipped_outcome("pen", self.pen) if self.grasped else None,
            "drawing": (
                self.clipped_outcome("drawing", self.drawing)
                if self.drawing is not None
                else None
            ),
            "tilt": (
                self.clipped_outcome("tilt", self.tilt)
                if self.touched_joystick
                else None
            ),
            "cursor": (
                self.clipped_outcome("cursor", self.cursor)
                if self.cursor_engaged
                else None
            ),
        }
        return out

    def null_primitive(self) -> ActionPrimitive:
        return ActionPrimitive(np.zeros(3))

    def ground_truth(self) -> GroundTruth:
        return GroundTruth(
            edges=(
                ("primitive", "effector"),
                ("effector", "pen"),
                ("pen", "drawing"),
                ("effector", "tilt"),
                ("tilt", "cursor"),
            ),
            levels={"effector": 0, "pen": 1, "tilt": 1, "drawing": 2, "cursor": 2},
        )
