"""
Rigid transforms.

`Se3Pose` stores a 3x3 rotation matrix and a translation in meters. Poses
compose right-to-left like homogeneous matrices: `a.compose(b)` maps a point
first through `b`, then through `a`.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

ROTATION_TOL = 1e-9


def _as_vector(v, name='vector'):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"`{name}` should have shape (3,), not {v.shape}")
    return v


def canonical_quat_wxyz(q):
    """Flip the quaternion sign so that w >= 0 (first non-zero component
    positive when w == 0)."""
    q = np.asarray(q, dtype=np.float64)
    for c in q:
        if c != 0:
            return q if c > 0 else -q
    return q


@dataclass(frozen=True, eq=False)
class Se3Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=np.float64)
        if rotation.shape != (3, 3):
            raise ValueError("`rotation` should be a 3x3 matrix, "
                             f"not {rotation.shape}")
        translation = _as_vector(self.translation, 'translation')
        rotation.setflags(write=False)
        translation = translation.copy()
        translation.setflags(write=False)
        object.__setattr__(self, 'rotation', rotation)
        object.__setattr__(self, 'translation', translation)

    def __repr__(self):
        q = np.round(self.quat_wxyz, 6).tolist()
        t = np.round(self.translation, 6).tolist()
        return f'<Se3Pose quat_wxyz={q} translation={t}>'

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (4, 4):
            raise ValueError(f"Expected a 4x4 matrix, not {matrix.shape}")
        return cls(matrix[:3, :3], matrix[:3, 3])

    @classmethod
    def from_quat_wxyz(cls, quat_wxyz, translation=(0, 0, 0)):
        w, x, y, z = np.asarray(quat_wxyz, dtype=np.float64)
        rotation = Rotation.from_quat([x, y, z, w]).as_matrix()
        return cls(rotation, translation)

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0, 0, 0)):
        return cls(Rotation.from_rotvec(rotvec).as_matrix(), translation)

    @classmethod
    def about_axis(cls, axis, angle, translation=(0, 0, 0)):
        axis = _as_vector(axis, 'axis')
        axis = axis / np.linalg.norm(axis)
        return cls.from_rotvec(axis * angle, translation)

    @classmethod
    def from_translation(cls, translation):
        return cls(np.eye(3), translation)

    @property
    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def quat_wxyz(self):
        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        return canonical_quat_wxyz(np.array([w, x, y, z]))

    def inverse(self):
        rt = self.rotation.T
        return Se3Pose(rt, -rt @ self.translation)

    def compose(self, other: 'Se3Pose'):
        return Se3Pose(self.rotation @ other.rotation,
                       self.rotation @ other.translation + self.translation)

    def __matmul__(self, other):
        return self.compose(other)

    def apply(self, points):
        """Transform (N, 3) points (or a single point)."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def apply_rotation(self, vectors):
        vectors = np.asarray(vectors, dtype=np.float64)
        return vectors @ self.rotation.T

    def translated(self, offset):
        return Se3Pose(self.rotation, self.translation + _as_vector(offset))

    def is_valid(self, tol=ROTATION_TOL):
        r = self.rotation
        if not (np.all(np.isfinite(r)) and
                np.all(np.isfinite(self.translation))):
            return False
        orthonormal = np.allclose(r.T @ r, np.eye(3), atol=tol, rtol=0)
        return bool(orthonormal and abs(np.linalg.det(r) - 1) <= tol)

    def allclose(self, other: 'Se3Pose', atol=ROTATION_TOL):
        return bool(np.allclose(self.rotation, other.rotation,
                                atol=atol, rtol=0) and
                    np.allclose(self.translation, other.translation,
                                atol=atol, rtol=0))

    def to_dict(self, digits=9):
        # a pose read from a dict writes back the same rounded values, so
        # rewriting a file never drifts in the last digit
        wire = getattr(self, '_wire', None)
        if wire is not None and wire[0] == digits:
            return {k: list(v) for k, v in wire[1].items()}
        return _rounded_dict(self.quat_wxyz, self.translation, digits)

    @classmethod
    def from_dict(cls, d, digits=9):
        pose = cls.from_quat_wxyz(d['quat_wxyz'], d['translation'])
        q = canonical_quat_wxyz(np.asarray(d['quat_wxyz'], dtype=np.float64))
        object.__setattr__(pose, '_wire',
                           (digits, _rounded_dict(q, d['translation'],
                                                  digits)))
        return pose


def _rounded_dict(quat_wxyz, translation, digits):
    return {'quat_wxyz': [round_sig(v, digits) for v in quat_wxyz],
            'translation': [round_sig(v, digits) for v in translation]}


def round_sig(value, digits=9):
    """Round to `digits` significant digits, returned as a python float."""
    value = float(value)
    if value == 0 or not np.isfinite(value):
        return 0.0 if value == 0 else value
    return float(f'{value:.{digits}g}')


def rotation_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.],
                     [s, c, 0.],
                     [0., 0., 1.]])


def random_pose(rng, max_translation=1.0):
    """Uniformly random rotation and a translation in a cube."""
    rotation = Rotation.random(random_state=rng).as_matrix()
    translation = rng.uniform(-max_translation, max_translation, 3)
    return Se3Pose(rotation, translation)


POINTCLOUD_FRAMES = ('camera', 'object', 'canonical')


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    frame: str = 'camera'

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(points)):
            raise ValueError("PointCloud coordinates should be finite")
        if self.frame not in POINTCLOUD_FRAMES:
            raise ValueError(f"Unknown frame '{self.frame}'. Should be one "
                             f"of {POINTCLOUD_FRAMES}")
        points.setflags(write=False)
        object.__setattr__(self, 'points', points)

    def __len__(self):
        return self.points.shape[0]

    def __repr__(self):
        return f'<PointCloud n={len(self)} frame={self.frame}>'

    @property
    def centroid(self):
        return self.points.mean(axis=0)

    @property
    def extents(self):
        return self.points.max(axis=0) - self.points.min(axis=0)

    def transformed(self, pose: Se3Pose, frame=None):
        return PointCloud(pose.apply(self.points), frame or self.frame)
