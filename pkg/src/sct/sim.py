"""Deterministic synthetic tabletop pick-and-place world.

A square workspace is rendered onto a 64x64 grayscale canvas as shaded
blobs: a dim goal patch, one or two objects, and the gripper (two finger
blobs when open or empty, one solid blob when holding). The scripted
policies share a rate-limited go-to-target controller and differ in their
defect:

* clean            exact targets, settles after placing
* biased           seed-drawn grasp-target offset plus a fine-motion
                   dither; a seed-drawn fraction also keeps fidgeting
                   after placing instead of settling
* wobbly           exact targets but strong injected motion noise
* non_terminating  exact targets, but after placing it keeps cycling
                   re-grasp / wiggle / release forever, so the goal state
                   never stays settled

The environment reports success only once the goal predicate (all objects
placed, nothing held) has held for settle_steps consecutive steps; the
instantaneous predicate is exposed separately so early stops can be
graded. Everything is a pure function of (task_id, seed, action stream).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .geometry import Pose, quaternion_from_rotation_vector, quaternion_multiply
from .loop import StepResult
from .memory import Action
from .rng import derive_seed, uniforms

WORKSPACE = 0.64          # metres; square table mapped onto the canvas
CANVAS = 64               # pixels per side, 1 cm per pixel
TRANSLATION_SCALE = 0.05  # metres of gripper motion per unit of action
ROTATION_SCALE = 0.1      # radians per unit of action
GRIP_THRESHOLD = 0.5
SETTLE_STEPS = 3

DEFAULT_GRASP_TOLERANCE = 0.02
DEFAULT_PLACE_TOLERANCE = 0.03
GRASP_PHASE_RADIUS_FACTOR = 3.0

# controller limits (action units per step); gentle enough that the clean
# policy's jerk cost stays small at the default score sensitivities
_V_MAX = 0.3
_ACCEL_LIMIT = 0.03
_BRAKE = 0.05
_CLOSE_RANGE = 0.03
_PLACE_TRIGGER = 0.015

# renderer geometry (metres) and intensities; peaks are chosen so that no
# stack of goal + object blobs reaches the held-pixel level without the
# solid held-gripper blob
_BACKGROUND = 0.08
_GOAL_RADIUS, _GOAL_PEAK = 0.070, 0.25
_OBJECT_RADIUS = 0.05
_OBJECT_PEAKS = (0.55, 0.45)
_FINGER_RADIUS, _FINGER_PEAK = 0.042, 1.0
_FINGER_OFFSET = 0.055
_HELD_RADIUS, _HELD_PEAK = 0.032, 1.0
_HELD_PIXEL_LEVEL = 0.9  # rendered gripper pixel exceeds this only while holding

TASK_FAMILIES = ("goal", "object", "spatial", "long")
POLICY_KINDS = ("clean", "biased", "wobbly", "non_terminating")


@dataclass(frozen=True)
class SimWorld:
    """Full world state; immutable, advanced by :func:`step`."""

    object_positions: tuple[np.ndarray, ...]
    goal_position: np.ndarray
    gripper: Pose
    held: int | None = None
    grasp_tolerance: float = DEFAULT_GRASP_TOLERANCE
    place_tolerance: float = DEFAULT_PLACE_TOLERANCE
    settle_steps: int = SETTLE_STEPS
    settle_count: int = 0

    def __post_init__(self):
        if not (self.grasp_tolerance > 0.0 and self.place_tolerance > 0.0):
            raise ValidationError("tolerances must be positive")
        objs = tuple(np.asarray(p, dtype=float) for p in self.object_positions)
        object.__setattr__(self, "object_positions", objs)
        object.__setattr__(self, "goal_position", np.asarray(self.goal_position, dtype=float))

    def goal_reached(self) -> bool:
        """Instantaneous predicate: everything placed and nothing held."""
        if self.held is not None:
            return False
        return all(
            float(np.linalg.norm(p - self.goal_position)) <= self.place_tolerance
            for p in self.object_positions
        )


@dataclass(frozen=True)
class StepFlags:
    success: bool
    goal_reached: bool
    grasp_phase: bool


_GRID = (np.arange(CANVAS) + 0.5) / CANVAS * WORKSPACE
_CELL = WORKSPACE / CANVAS


def _add_blob(canvas: np.ndarray, center, radius: float, peak: float) -> None:
    # restrict the quadratic falloff to the blob's bounding box
    lo_c = max(0, int((center[0] - radius) / _CELL))
    hi_c = min(CANVAS, int((center[0] + radius) / _CELL) + 1)
    lo_r = max(0, int((center[1] - radius) / _CELL))
    hi_r = min(CANVAS, int((center[1] + radius) / _CELL) + 1)
    if lo_c >= hi_c or lo_r >= hi_r:
        return
    dx = _GRID[lo_c:hi_c] - center[0]
    dy = _GRID[lo_r:hi_r] - center[1]
    d2 = dy[:, None] ** 2 + dx[None, :] ** 2
    canvas[lo_r:hi_r, lo_c:hi_c] += peak * np.maximum(0.0, 1.0 - d2 / (radius * radius))


def render(world: SimWorld) -> np.ndarray:
    """Deterministic 64x64 grayscale frame of the world, values in [0, 1]."""
    canvas = np.full((CANVAS, CANVAS), _BACKGROUND)
    _add_blob(canvas, world.goal_position, _GOAL_RADIUS, _GOAL_PEAK)
    for i, pos in enumerate(world.object_positions):
        _add_blob(canvas, pos, _OBJECT_RADIUS, _OBJECT_PEAKS[i % len(_OBJECT_PEAKS)])
    g = world.gripper.position
    if world.held is None:
        _add_blob(canvas, (g[0] - _FINGER_OFFSET, g[1]), _FINGER_RADIUS, _FINGER_PEAK)
        _add_blob(canvas, (g[0] + _FINGER_OFFSET, g[1]), _FINGER_RADIUS, _FINGER_PEAK)
    else:
        _add_blob(canvas, g, _HELD_RADIUS, _HELD_PEAK)
    return np.clip(canvas, 0.0, 1.0)


def write_pgm(frame: np.ndarray, path) -> None:
    """Export a frame as a binary PGM file for debugging."""
    data = np.clip(np.asarray(frame) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    header = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def gripper_pixel(position) -> tuple[int, int]:
    """(row, col) canvas cell containing a world position."""
    col = min(CANVAS - 1, max(0, int(position[0] / WORKSPACE * CANVAS)))
    row = min(CANVAS - 1, max(0, int(position[1] / WORKSPACE * CANVAS)))
    return row, col


def step(world: SimWorld, action: Action) -> tuple[SimWorld, np.ndarray, Pose, StepFlags]:
    """Advance the world by one action; total for any in-bounds action.

    Gripper translation is scaled and clamped to the workspace; a grip
    command above the threshold within grasp tolerance of an object
    attaches it, a command at or below the threshold releases. The held
    object tracks the gripper. The success flag requires the goal
    predicate to hold for settle_steps consecutive steps; grasp_phase
    flags active grasp attempts (not holding, gripping, near an object).
    """
    vals = action.values
    new_pos = np.clip(
        world.gripper.position + vals[:3] * TRANSLATION_SCALE, 0.0, WORKSPACE
    )
    rotvec = vals[3:6] * ROTATION_SCALE
    new_q = quaternion_multiply(world.gripper.orientation, quaternion_from_rotation_vector(rotvec))
    grip = float(vals[6])
    gripping = grip > GRIP_THRESHOLD

    held = world.held
    objects = list(world.object_positions)
    dists = [float(np.linalg.norm(p - new_pos)) for p in objects]

    was_free = held is None
    if held is not None:
        objects[held] = new_pos
        if not gripping:
            held = None
    elif gripping:
        nearest = int(np.argmin(dists))
        if dists[nearest] <= world.grasp_tolerance:
            held = nearest
            objects[nearest] = new_pos

    grasp_phase = (
        was_free
        and gripping
        and min(dists) <= GRASP_PHASE_RADIUS_FACTOR * world.grasp_tolerance
    )

    new_world = replace(
        world,
        object_positions=tuple(objects),
        gripper=Pose(new_pos, new_q),
        held=held,
    )
    goal_now = new_world.goal_reached()
    settle = new_world.settle_count + 1 if goal_now else 0
    new_world = replace(new_world, settle_count=settle)

    flags = StepFlags(
        success=settle >= world.settle_steps,
        goal_reached=goal_now,
        grasp_phase=grasp_phase,
    )
    return new_world, render(new_world), new_world.gripper, flags


class SimEnvironment:
    """Adapter exposing the simulator through the control-loop protocol."""

    def __init__(self, world: SimWorld):
        self._initial = world
        self.world = world

    def reset(self) -> tuple[np.ndarray, Pose]:
        self.world = self._initial
        return render(self.world), self.world.gripper

    def step(self, action: Action) -> StepResult:
        self.world, observation, pose, flags = step(self.world, action)
        return StepResult(
            observation=observation,
            pose=pose,
            success=flags.success,
            goal_reached=flags.goal_reached,
            grasp_phase=flags.grasp_phase,
        )


class ScriptedPolicy:
    """Stateful scripted pick-and-place controller with seeded defects.

    Detects whether it is actually holding an object from the rendered
    observation (the held gripper renders as one saturated blob, the open
    or empty gripper as two fingers), which is what lets the biased
    variant keep retrying a missed grasp instead of carrying air away.
    """

    def __init__(self, kind: str, object_starts, goal_position, noise_seed: int):
        if kind not in POLICY_KINDS:
            raise ValidationError(f"unknown policy kind {kind!r}, expected one of {POLICY_KINDS}")
        self.kind = kind
        self.noise_seed = int(noise_seed)
        self._objects = [np.asarray(p, dtype=float) for p in object_starts]
        self._goal = np.asarray(goal_position, dtype=float)

        u = uniforms(derive_seed(self.noise_seed, "policy", kind), 16)
        self._offset = np.zeros(3)
        self._dither_amp = 0.0
        self._settles = True
        if kind == "biased":
            magnitude = 0.01 + 0.04 * u[0]
            angle = 2.0 * math.pi * u[1]
            self._offset = np.array([magnitude * math.cos(angle), magnitude * math.sin(angle), 0.0])
            self._dither_amp = 0.08 + 0.08 * u[2]
            self._settles = u[3] < 0.6
        elif kind == "non_terminating":
            self._settles = False
        self._dither_phase = 2.0 * math.pi * u[4:7]
        self._wobble_phase = 2.0 * math.pi * u[7:13]

        self._phase = "approach"
        self._target_index = 0
        self._delta = np.zeros(3)
        self._t = 0
        self._post_t = 0

    def _is_holding(self, observation: np.ndarray, pose: Pose) -> bool:
        row, col = gripper_pixel(pose.position)
        return float(observation[row, col]) >= _HELD_PIXEL_LEVEL

    def _close_range(self) -> float:
        return 0.04 if self.kind == "wobbly" else _CLOSE_RANGE

    def _motion_delta(self, position: np.ndarray, target: np.ndarray) -> np.ndarray:
        to_target = (target - position) / TRANSLATION_SCALE
        dist = float(np.linalg.norm(to_target))
        if dist < 1e-9:
            desired = np.zeros(3)
        else:
            speed = min(_V_MAX, math.sqrt(2.0 * _BRAKE * dist), dist)
            desired = to_target / dist * speed
        change = desired - self._delta
        magnitude = float(np.linalg.norm(change))
        if magnitude > _ACCEL_LIMIT:
            desired = self._delta + change / magnitude * _ACCEL_LIMIT
        self._delta = desired
        return desired

    def _dither(self, t: int, scale: float = 1.0) -> np.ndarray:
        if self._dither_amp == 0.0:
            return np.zeros(3)
        wave = np.sin(2.0 * math.pi * t / 5.0 + self._dither_phase)
        return scale * self._dither_amp * wave * np.array([1.0, 1.0, 0.0])

    def _wobble(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        if self.kind != "wobbly":
            return np.zeros(3), np.zeros(3)
        p = self._wobble_phase
        trans = 0.22 * np.sin(2.0 * math.pi * t / 7.0 + p[:3]) + 0.15 * np.sin(
            2.0 * math.pi * t / 11.0 + p[3:]
        )
        rot = 0.15 * np.sin(2.0 * math.pi * t / 9.0 + p[:3])
        return trans, rot

    def _fidget(self) -> Action:
        """Re-grasp / wiggle / release cycle around the goal; never settles."""
        cycle = self._post_t % 6
        self._post_t += 1
        move = np.zeros(3)
        grip = 1.0
        if cycle in (1, 2):
            move = 0.1 * np.array([1.0 if cycle == 1 else -1.0, -0.5 if cycle == 1 else 0.5, 0.0])
        elif cycle == 3:
            move = self._motion_delta_raw_toward_goal()
        elif cycle in (4, 5):
            grip = -1.0
        return self._make_action(move, np.zeros(3), grip)

    def _motion_delta_raw_toward_goal(self) -> np.ndarray:
        to_goal = (self._goal - self._last_position) / TRANSLATION_SCALE
        dist = float(np.linalg.norm(to_goal))
        if dist < 1e-9:
            return np.zeros(3)
        return to_goal / dist * min(0.2, dist)

    @staticmethod
    def _make_action(translation, rotation, grip) -> Action:
        vals = np.empty(7)
        vals[:3] = np.clip(translation, -1.0, 1.0)
        vals[3:6] = np.clip(rotation, -1.0, 1.0)
        vals[6] = grip
        return Action(vals)

    def propose(self, observation: np.ndarray, pose: Pose) -> Action:
        t = self._t
        self._t += 1
        self._last_position = pose.position
        holding = self._is_holding(observation, pose)

        if self._phase in ("approach", "grasp") and holding:
            self._phase = "carry"
        elif self._phase == "carry" and not holding:
            # dropped mid-carry: fall back to re-approaching the pick point
            self._phase = "approach"

        if self._phase == "post":
            if self._settles:
                return self._make_action(np.zeros(3), np.zeros(3), -1.0)
            return self._fidget()

        perceived = self._objects[self._target_index] + self._offset
        wobble_t, wobble_r = self._wobble(t)

        if self._phase == "approach":
            if float(np.linalg.norm(pose.position - perceived)) <= self._close_range():
                self._phase = "grasp"
        if self._phase in ("approach", "grasp"):
            delta = self._motion_delta(pose.position, perceived)
            delta = delta + self._dither(t) + wobble_t
            grip = 1.0 if self._phase == "grasp" else -1.0
            return self._make_action(delta, wobble_r, grip)

        # carry
        if float(np.linalg.norm(pose.position - self._goal)) <= _PLACE_TRIGGER:
            self._delta = np.zeros(3)
            self._target_index += 1
            if self._target_index >= len(self._objects):
                self._phase = "post"
            else:
                self._phase = "approach"
            return self._make_action(np.zeros(3), np.zeros(3), -1.0)
        delta = self._motion_delta(pose.position, self._goal)
        delta = delta + self._dither(t, scale=0.5) + wobble_t
        return self._make_action(delta, wobble_r, 1.0)


_START = np.array([0.14, 0.14, 0.0])


def _along(direction: np.ndarray, dist: float, perp: float = 0.0) -> np.ndarray:
    """Point at dist metres from the start along direction, offset sideways."""
    d = direction / np.linalg.norm(direction)
    n = np.array([-d[1], d[0], 0.0])
    return _START + d * dist + n * perp


def _layout(family: str, seed: int) -> tuple[tuple[np.ndarray, ...], np.ndarray, np.ndarray]:
    """Object starts, goal position and gripper start for a seeded task.

    Start, object and goal are kept near-collinear so the nominal route of
    a well-behaved policy is straight; the goal is fixed per family (per
    site for spatial) so terminal success views are comparable across
    seeds. Only the object start varies with the seed.
    """
    u = uniforms(derive_seed(seed, "world", family), 8)
    if family == "goal":
        direction = np.array([0.36, 0.18, 0.0])
        objects = (_along(direction, 0.05 + 0.02 * u[0], 0.008 * (u[1] - 0.5)),)
        goal = _along(direction, 0.40)
    elif family == "object":
        direction = np.array([1.0, 1.0, 0.0])
        objects = (_along(direction, 0.13 + 0.04 * u[0], 0.016 * (u[1] - 0.5)),)
        goal = _along(direction, 0.33)
    elif family == "spatial":
        angles = (0.35, 0.79, 1.22)
        angle = angles[int(u[2] * 3.0) % 3]
        direction = np.array([math.cos(angle), math.sin(angle), 0.0])
        objects = (_along(direction, 0.14 + 0.05 * u[0], 0.016 * (u[1] - 0.5)),)
        goal = _along(direction, 0.36)
    elif family == "long":
        direction = np.array([1.0, 1.0, 0.0])
        objects = (
            _along(direction, 0.12 + 0.03 * u[0], 0.012 * (u[1] - 0.5)),
            np.array([0.18 + 0.04 * u[3], 0.38 + 0.04 * u[4], 0.0]),
        )
        goal = _along(direction, 0.30)
    else:
        raise ValidationError(f"unknown task family {family!r}, expected one of {TASK_FAMILIES}")
    return objects, goal, _START.copy()


def make_task(task_id: str, seed: int) -> tuple[SimWorld, ScriptedPolicy]:
    """Instantiate a deterministic world plus its scripted policy.

    task_id is "family" or "family:kind" with families goal / object /
    spatial / long and kinds clean / biased / wobbly / non_terminating
    (bare family means clean). Worlds depend only on (family, seed), so
    the same seed compares policy kinds on identical worlds.
    """
    family, _, kind = str(task_id).partition(":")
    kind = kind or "clean"
    objects, goal, gripper = _layout(family, seed)
    if kind not in POLICY_KINDS:
        raise ValidationError(f"unknown policy kind {kind!r}, expected one of {POLICY_KINDS}")
    world = SimWorld(
        object_positions=objects,
        goal_position=goal,
        gripper=Pose(gripper, np.array([1.0, 0.0, 0.0, 0.0])),
    )
    policy = ScriptedPolicy(kind, objects, goal, noise_seed=derive_seed(seed, family, kind))
    return world, policy
