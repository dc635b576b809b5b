"""
Camera viewpoints on a Fibonacci sphere.

Camera frame convention: +Z forward (optical axis), +X right, +Y down in the
image. Camera poses are camera-to-world; the instance pose of an object
placed at the world origin is the inverse camera pose.
"""
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from loguru import logger

from catpose.errors import (DegenerateViewError, InvalidConfigError,
                            InvalidCountError)
from catpose.geometry import Se3Pose, rotation_z

GOLDEN_ANGLE = np.pi * (3 - np.sqrt(5))
UP_FALLBACKS = (np.array([0., 0., 1.]), np.array([1., 0., 0.]))
DEGENERATE_UP_TOL = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidConfigError("Focal lengths should be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvalidConfigError(
                f"Principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image")

    @classmethod
    def from_dict(cls, d):
        return cls(float(d['fx']), float(d['fy']),
                   float(d['cx']), float(d['cy']),
                   int(d['width']), int(d['height']))

    def to_dict(self):
        return {'fx': self.fx, 'fy': self.fy, 'cx': self.cx, 'cy': self.cy,
                'width': self.width, 'height': self.height}

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def matrix(self):
        return np.array([[self.fx, 0, self.cx],
                         [0, self.fy, self.cy],
                         [0, 0, 1.]])

    def scaled(self, factor):
        """Intrinsics of the same camera at a different resolution."""
        return CameraIntrinsics(self.fx * factor, self.fy * factor,
                                self.cx * factor, self.cy * factor,
                                int(round(self.width * factor)),
                                int(round(self.height * factor)))


@dataclass(frozen=True)
class ViewSamplingConfig:
    n_views: int = 300
    radius: float = 0.6
    roll_range: Tuple[float, float] = (-np.pi, np.pi)
    rng_seed: int = 0
    hemisphere_only: bool = False

    def __post_init__(self):
        if int(self.n_views) < 1:
            raise InvalidConfigError("n_views should be >= 1")
        if not self.radius > 0:
            raise InvalidConfigError("radius should be > 0")
        lo, hi = (float(v) for v in self.roll_range)
        if not (-np.pi <= lo <= hi <= np.pi):
            raise InvalidConfigError(
                f"roll_range {self.roll_range} should be an ordered "
                "interval within [-pi, pi]")
        object.__setattr__(self, 'roll_range', (lo, hi))

    @classmethod
    def from_dict(cls, d):
        return cls(n_views=int(d.get('n_views', 300)),
                   radius=float(d.get('radius_m', 0.6)),
                   roll_range=(float(d.get('roll_min_rad', -np.pi)),
                               float(d.get('roll_max_rad', np.pi))),
                   rng_seed=int(d.get('seed', 0)),
                   hemisphere_only=bool(d.get('hemisphere_only', False)))

    def to_dict(self):
        return {'n_views': self.n_views,
                'radius_m': self.radius,
                'roll_min_rad': self.roll_range[0],
                'roll_max_rad': self.roll_range[1],
                'seed': self.rng_seed,
                'hemisphere_only': self.hemisphere_only}


@dataclass(frozen=True, eq=False)
class Viewpoint:
    """A sampled view. `lattice_index` is the position in the full-sphere
    lattice, kept stable when the hemisphere filter drops points."""
    lattice_index: int
    camera_pose: Se3Pose
    instance_pose: Se3Pose
    roll: float

    def __iter__(self):
        return iter((self.camera_pose, self.instance_pose))


def fibonacci_sphere(n):
    if n < 1:
        raise InvalidCountError(f"Need at least one point, got {n}")
    i = np.arange(n, dtype=np.float64)
    z = 1 - 2 * (i + 0.5) / n
    r = np.sqrt(1 - z * z)
    theta = i * GOLDEN_ANGLE
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def _choose_up(forward, up_hint):
    candidates = [np.asarray(up_hint, dtype=np.float64)]
    candidates.extend(UP_FALLBACKS)
    for k, up in enumerate(candidates):
        up = up / np.linalg.norm(up)
        if abs(float(forward @ up)) <= 1 - DEGENERATE_UP_TOL:
            if k > 0:
                logger.debug(f"Degenerate up hint, falling back to {up}")
            return up
    # unreachable: forward cannot be parallel to both fallbacks
    raise DegenerateViewError("No usable up vector")


def look_at_pose(position, target=(0, 0, 0), up_hint=(0, 1, 0)) -> Se3Pose:
    """Camera-to-world pose at `position` with the optical axis (+Z)
    pointing at `target`."""
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - position
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise DegenerateViewError("Camera position equals the target")
    forward = forward / norm

    up = _choose_up(forward, up_hint)
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)

    rotation = np.stack([right, down, forward], axis=1)
    return Se3Pose(rotation, position)


def apply_inplane_roll(pose: Se3Pose, angle) -> Se3Pose:
    """Rotate the camera about its own optical axis."""
    return Se3Pose(pose.rotation @ rotation_z(angle), pose.translation)


def instance_pose_from_camera(camera_pose: Se3Pose) -> Se3Pose:
    return camera_pose.inverse()


def view_rng(seed, lattice_index):
    """Counter-based generator keyed on (seed, lattice index)."""
    ss = np.random.SeedSequence([int(seed), int(lattice_index)])
    return np.random.Generator(np.random.Philox(ss))


def sample_viewpoints(config: ViewSamplingConfig) -> List[Viewpoint]:
    """Fibonacci-lattice viewpoints looking at the origin with a seeded
    in-plane roll. With `hemisphere_only` the full-sphere lattice is built
    and filtered to z >= 0, so the result is a subset of the full one."""
    if not isinstance(config, ViewSamplingConfig):
        raise InvalidConfigError(f"Expected ViewSamplingConfig, got "
                                 f"{type(config).__name__}")

    lattice = fibonacci_sphere(config.n_views)
    lo, hi = config.roll_range

    views = []
    for idx, direction in enumerate(lattice):
        if config.hemisphere_only and direction[2] < 0:
            continue
        position = config.radius * direction
        pose = look_at_pose(position)
        roll = float(view_rng(config.rng_seed, idx).uniform(lo, hi)) \
            if hi > lo else lo
        camera_pose = apply_inplane_roll(pose, roll)
        views.append(Viewpoint(idx, camera_pose,
                               instance_pose_from_camera(camera_pose),
                               roll))
    return views
