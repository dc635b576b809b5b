"""
Category-level grasps resolved into robot base targets, and Cartesian
waypoint plans for the primitive tasks.

Gripper frame convention: z is the approach axis, x the closing axis.

Frame chain: a grasp defined in the canonical object frame is scaled to
the instance (`denormalize_grasp`), moved into the camera frame with the
estimated object pose and into the base frame with the camera extrinsics:

    g_base = camera_in_base @ object_in_camera @ g_object
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

from catpose.assets import Scale3
from catpose.errors import (InvalidConfigError, MalformedFileError,
                            MissingGraspError, MissingPlaceTargetError,
                            UnknownPhaseError, WorkspaceViolationError)
from catpose.formats import write_json
from catpose.geometry import Se3Pose

PHASES = ('pregrasp', 'grasp', 'lift', 'transport', 'release', 'retreat')
PLACING_TASKS = ('pick_place', 'stack', 'tidy')
HANDOVER_TASK = 'handover'

DEFAULT_PREGRASP_OFFSET = 0.10
DEFAULT_LIFT_HEIGHT = 0.08
DEFAULT_REACH = 0.9
DEFAULT_STACK_CLEARANCE = 0.005
DEFAULT_HANDOVER_POSE = {'quat_wxyz': [0.0, 1.0, 0.0, 0.0],
                         'translation': [0.45, 0.0, 0.45]}


def _unit(v, name):
    v = np.asarray(v, dtype=np.float64).reshape(3)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0:
        raise InvalidConfigError(f"`{name}` should be a non-zero vector")
    return v / n


@dataclass(frozen=True, eq=False)
class GraspSpec:
    category: str
    task: str
    grasp_pose: Se3Pose
    approach_axis: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    pregrasp_offset: float = DEFAULT_PREGRASP_OFFSET
    # extents of the canonical shape the grasp was authored on
    canonical_extents: Scale3 = Scale3(1.0, 1.0, 1.0)

    def __post_init__(self):
        if not self.grasp_pose.is_valid():
            raise InvalidConfigError(f"Invalid grasp pose for "
                                     f"{self.category}/{self.task}")
        if not self.pregrasp_offset > 0:
            raise InvalidConfigError(
                f"pregrasp_offset should be > 0, not {self.pregrasp_offset}")
        object.__setattr__(self, 'approach_axis',
                           _unit(self.approach_axis, 'approach_axis'))
        if not isinstance(self.canonical_extents, Scale3):
            object.__setattr__(self, 'canonical_extents',
                               Scale3.from_array(self.canonical_extents))

    def __repr__(self):
        return f'<GraspSpec {self.category}/{self.task}>'

    @classmethod
    def from_dict(cls, d):
        try:
            category = d['category']
            grasp = Se3Pose.from_dict(d['grasp'])
            extents = Scale3.from_array(d.get('canonical_extents',
                                              (1.0, 1.0, 1.0)))
            offset = float(d.get('pregrasp_offset_m',
                                 DEFAULT_PREGRASP_OFFSET))
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidConfigError(f"Invalid grasp entry {d!r}: {e}")
        return cls(category, d.get('task', '*'), grasp,
                   d.get('approach_axis', (0.0, 0.0, 1.0)), offset,
                   extents)

    def to_dict(self):
        return {'category': self.category,
                'task': self.task,
                'grasp': self.grasp_pose.to_dict(),
                'approach_axis': self.approach_axis.tolist(),
                'pregrasp_offset_m': self.pregrasp_offset,
                'canonical_extents': self.canonical_extents.as_array()
                .tolist()}


class GraspLibrary:
    """Grasp specs keyed on (category, task). A spec with task `"*"`
    serves every task of its category."""

    def __init__(self, specs: List[GraspSpec]):
        self._specs: Dict[Tuple[str, str], GraspSpec] = {}
        for s in specs:
            key = (s.category, s.task)
            if key in self._specs:
                raise InvalidConfigError(f"Duplicate grasp entry {key}")
            self._specs[key] = s

    def __len__(self):
        return len(self._specs)

    @classmethod
    def from_file(cls, filename):
        with open(filename, encoding='utf-8') as f:
            try:
                entries = json.load(f)
            except json.JSONDecodeError as e:
                raise MalformedFileError(f"{filename}: {e}")
        if isinstance(entries, dict):
            entries = entries.get('grasps', [])
        return cls([GraspSpec.from_dict(e) for e in entries])

    def get(self, category, task) -> GraspSpec:
        for key in ((category, task), (category, '*')):
            if key in self._specs:
                return self._specs[key]
        raise MissingGraspError(f"No grasp for category '{category}' "
                                f"and task '{task}'")


@dataclass(frozen=True, eq=False)
class FrameChain:
    object_in_camera: Se3Pose
    object_scale: Scale3
    camera_in_base: Se3Pose

    def __post_init__(self):
        for name in ('object_in_camera', 'camera_in_base'):
            if not getattr(self, name).is_valid(1e-6):
                raise InvalidConfigError(f"`{name}` is not a rigid transform")

    @property
    def object_in_base(self):
        return self.camera_in_base @ self.object_in_camera


def camera_in_base_from_hand_eye(base_T_ee: Se3Pose,
                                 ee_T_camera: Se3Pose) -> Se3Pose:
    """Camera extrinsics of an eye-in-hand setup from the flange pose and
    the hand-eye calibration."""
    return base_T_ee @ ee_T_camera


@dataclass(frozen=True, eq=False)
class PlannerConfig:
    lift_height: float = DEFAULT_LIFT_HEIGHT
    reach: float = DEFAULT_REACH
    up_axis: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    stack_clearance: float = DEFAULT_STACK_CLEARANCE
    retreat_offset: float = DEFAULT_PREGRASP_OFFSET
    handover_pose: Se3Pose = field(
        default_factory=lambda: Se3Pose.from_dict(DEFAULT_HANDOVER_POSE))

    def __post_init__(self):
        for name in ('lift_height', 'reach', 'retreat_offset'):
            if not getattr(self, name) > 0:
                raise InvalidConfigError(f"`{name}` should be > 0")
        if not self.stack_clearance >= 0:
            raise InvalidConfigError("`stack_clearance` should be >= 0")
        object.__setattr__(self, 'up_axis', _unit(self.up_axis, 'up_axis'))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {'lift_height_m', 'reach_m', 'up_axis',
                            'stack_clearance_m', 'retreat_offset_m',
                            'handover_pose'}
        if unknown:
            raise InvalidConfigError(f"Unknown planner settings {unknown}")
        return cls(float(d.get('lift_height_m', DEFAULT_LIFT_HEIGHT)),
                   float(d.get('reach_m', DEFAULT_REACH)),
                   d.get('up_axis', (0.0, 0.0, 1.0)),
                   float(d.get('stack_clearance_m',
                               DEFAULT_STACK_CLEARANCE)),
                   float(d.get('retreat_offset_m', DEFAULT_PREGRASP_OFFSET)),
                   Se3Pose.from_dict(d.get('handover_pose',
                                           DEFAULT_HANDOVER_POSE)))

    def to_dict(self):
        return {'lift_height_m': self.lift_height,
                'reach_m': self.reach,
                'up_axis': self.up_axis.tolist(),
                'stack_clearance_m': self.stack_clearance,
                'retreat_offset_m': self.retreat_offset,
                'handover_pose': self.handover_pose.to_dict()}

    def moved(self, q: Se3Pose) -> 'PlannerConfig':
        """The same config expressed in a base frame moved by `q`."""
        return PlannerConfig(self.lift_height, self.reach,
                             q.apply_rotation(self.up_axis),
                             self.stack_clearance, self.retreat_offset,
                             q @ self.handover_pose)


def check_workspace(pose: Se3Pose, reach, origin=(0, 0, 0), label='pose'):
    d = float(np.linalg.norm(pose.translation - np.asarray(origin)))
    if d > reach:
        raise WorkspaceViolationError(
            f"{label} is {d:.3f} m from the base, reach is {reach} m")


def denormalize_grasp(spec: GraspSpec, scale: Scale3) -> Se3Pose:
    """Grasp in the instance frame. The translation scales componentwise
    with the instance extents, the rotation is kept."""
    factor = scale.as_array() / spec.canonical_extents.as_array()
    return Se3Pose(spec.grasp_pose.rotation,
                   spec.grasp_pose.translation * factor)


def resolve_grasp(spec: GraspSpec, chain: FrameChain,
                  reach=DEFAULT_REACH, origin=(0, 0, 0)) -> Se3Pose:
    g = chain.camera_in_base @ (chain.object_in_camera @
                                denormalize_grasp(spec, chain.object_scale))
    check_workspace(g, reach, origin, label='grasp')
    return g


@dataclass(frozen=True, eq=False)
class Waypoint:
    phase: str
    pose: Se3Pose

    def to_dict(self):
        return {'phase': self.phase, 'pose': self.pose.to_dict()}


@dataclass
class WaypointPlan:
    task: str
    waypoints: List[Waypoint] = field(default_factory=list)

    def __len__(self):
        return len(self.waypoints)

    @property
    def phases(self):
        return [w.phase for w in self.waypoints]

    def pose(self, phase) -> Se3Pose:
        for w in self.waypoints:
            if w.phase == phase:
                return w.pose
        raise UnknownPhaseError(
            f"No '{phase}' waypoint in the {self.task} plan")

    def validate(self, reach=DEFAULT_REACH, origin=(0, 0, 0)):
        ranks = [PHASES.index(p) for p in self.phases]
        if ranks != sorted(ranks) or len(set(ranks)) != len(ranks):
            raise ValueError(f"Phases out of order: {self.phases}")
        for w in self.waypoints:
            check_workspace(w.pose, reach, origin, label=w.phase)
        return self

    def to_dict(self):
        return {'task': self.task,
                'waypoints': [w.to_dict() for w in self.waypoints]}


def plan_task(task, grasp: Se3Pose, place_target: Optional[Se3Pose] = None,
              config: PlannerConfig = None,
              approach_axis=(0.0, 0.0, 1.0),
              pregrasp_offset=DEFAULT_PREGRASP_OFFSET,
              grasped_scale: Optional[Scale3] = None,
              target_scale: Optional[Scale3] = None,
              object_center=None,
              origin=(0, 0, 0)) -> WaypointPlan:
    """Cartesian waypoints in the base frame.

    `place_target` is where the grasped object's center should end up
    (pick_place, tidy) or the pose of the object to stack onto (stack,
    with both scales). The gripper keeps its grasp orientation while
    carrying. `object_center` is the grasped object's center in the base
    frame and defaults to the grasp position.
    """
    config = config or PlannerConfig()
    if task != HANDOVER_TASK and task not in PLACING_TASKS:
        raise InvalidConfigError(f"Unknown task '{task}'")
    if not pregrasp_offset > 0:
        raise InvalidConfigError("pregrasp_offset should be > 0")

    up = config.up_axis
    approach = grasp.apply_rotation(_unit(approach_axis, 'approach_axis'))
    waypoints = [
        Waypoint('pregrasp', grasp.translated(-pregrasp_offset * approach)),
        Waypoint('grasp', grasp),
        Waypoint('lift', grasp.translated(config.lift_height * up)),
    ]

    if task == HANDOVER_TASK:
        if place_target is not None:
            logger.debug("Handover ignores the place target")
        waypoints.append(Waypoint('transport', config.handover_pose))
    else:
        if place_target is None:
            raise MissingPlaceTargetError(f"Task '{task}' needs a place "
                                          "target")
        center = grasp.translation if object_center is None else \
            np.asarray(object_center, dtype=np.float64)
        grip_offset = grasp.translation - center

        release_center = place_target.translation
        if task == 'stack':
            if grasped_scale is None or target_scale is None:
                raise MissingPlaceTargetError(
                    "Stacking needs the extents of both objects")
            height = (target_scale.sz / 2 + grasped_scale.sz / 2 +
                      config.stack_clearance)
            release_center = release_center + height * up

        release = Se3Pose(grasp.rotation, release_center + grip_offset)
        retreat_dir = release.apply_rotation(
            _unit(approach_axis, 'approach_axis'))
        waypoints += [
            Waypoint('transport', release.translated(config.lift_height * up)),
            Waypoint('release', release),
            Waypoint('retreat',
                     release.translated(-config.retreat_offset * retreat_dir)),
        ]

    return WaypointPlan(task, waypoints).validate(config.reach, origin)


def plan_sequence(steps, config: PlannerConfig = None) -> List[WaypointPlan]:
    """Plans for consecutive primitive tasks. Each step is a dict of
    `plan_task` keyword arguments (at least `task` and `grasp`)."""
    config = config or PlannerConfig()
    plans = []
    for i, step in enumerate(steps):
        step = dict(step)
        step.setdefault('config', config)
        plan = plan_task(**step)
        logger.debug(f"Step {i}: {plan.task} with {len(plan)} waypoints")
        plans.append(plan)
    return plans


def write_plans(plans, filename):
    return write_json({'plans': [p.to_dict() for p in plans]},
                      Path(filename))
