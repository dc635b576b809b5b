"""
Pose error metrics: geodesic rotation error, translation error, oriented
box IoU and thresholded accuracy.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from catpose.assets import Scale3
from catpose.errors import EmptyInputError, InvalidConfigError
from catpose.formats import write_json
from catpose.geometry import Se3Pose

DEFAULT_ROT_THRESH_DEG = 5.0
DEFAULT_TRANS_THRESH_M = 0.05
DEFAULT_IOU_THRESH = 0.25
DEFAULT_IOU_SAMPLES = 100_000
MIN_IOU_SAMPLES = 10_000
IOU_BATCH = 1 << 18


def _rotation(r):
    if isinstance(r, Se3Pose):
        return r.rotation
    return np.asarray(r, dtype=np.float64)


def rotation_error_deg(r1, r2):
    r1, r2 = _rotation(r1), _rotation(r2)
    cos = (np.trace(r1.T @ r2) - 1) / 2
    return float(np.rad2deg(np.arccos(np.clip(cos, -1.0, 1.0))))


def translation_error(t1, t2):
    if isinstance(t1, Se3Pose):
        t1 = t1.translation
    if isinstance(t2, Se3Pose):
        t2 = t2.translation
    return float(np.linalg.norm(np.asarray(t1, float) - np.asarray(t2, float)))


def identity_group():
    return np.eye(3)[None]


def axial_symmetry_group(axis=(0, 0, 1), steps=360):
    """Continuous symmetry about `axis`, discretized in `steps` rotations."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    angles = 2 * np.pi * np.arange(steps) / steps
    return Rotation.from_rotvec(angles[:, None] * axis).as_matrix()


def cube_symmetry_group():
    """The 24 proper rotations of the cube."""
    return Rotation.create_group('O').as_matrix()


def box_symmetry_group():
    """4-fold about z, 2-fold about a horizontal axis (8 rotations)."""
    return Rotation.create_group('D4', axis='Z').as_matrix()


CATEGORY_SYMMETRIES = {
    'Bottle': axial_symmetry_group,
    'Box': box_symmetry_group,
    'Packaging': box_symmetry_group,
}


def symmetry_group_for(category):
    return CATEGORY_SYMMETRIES.get(category, identity_group)()


def symmetry_aware_rotation_error(r_est, r_gt, symmetry_group):
    """Smallest geodesic error between `r_est` and `r_gt @ s` over the
    group."""
    r_est, r_gt = _rotation(r_est), _rotation(r_gt)
    group = np.asarray(symmetry_group, dtype=np.float64).reshape(-1, 3, 3)
    # trace(r_est^T r_gt s) for every s at once
    m = r_est.T @ r_gt
    traces = np.einsum('ij,gji->g', m, group)
    cos = np.clip((traces.max() - 1) / 2, -1.0, 1.0)
    return float(np.rad2deg(np.arccos(cos)))


@dataclass(frozen=True, eq=False)
class OrientedBox3:
    center: np.ndarray
    rotation: np.ndarray
    extents: Scale3

    def __post_init__(self):
        object.__setattr__(self, 'center',
                           np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, 'rotation',
                           np.asarray(self.rotation, dtype=np.float64))
        if not isinstance(self.extents, Scale3):
            object.__setattr__(self, 'extents',
                               Scale3.from_array(self.extents))

    def __repr__(self):
        return (f'<OrientedBox3 center={np.round(self.center, 4).tolist()} '
                f'extents={np.round(self.extents.as_array(), 4).tolist()}>')

    @classmethod
    def from_pose(cls, pose: Se3Pose, scale: Scale3):
        return cls(pose.translation, pose.rotation, scale)

    @property
    def half_extents(self):
        return self.extents.as_array() / 2

    @property
    def volume(self):
        return float(np.prod(self.extents.as_array()))

    def corners(self):
        signs = np.array([[sx, sy, sz]
                          for sx in (-1, 1)
                          for sy in (-1, 1)
                          for sz in (-1, 1)], dtype=np.float64)
        return self.center + (signs * self.half_extents) @ self.rotation.T

    def contains(self, points):
        local = (np.atleast_2d(points) - self.center) @ self.rotation
        return np.all(np.abs(local) <= self.half_extents, axis=1)


@dataclass(frozen=True)
class IouEstimate:
    value: float
    stderr: float
    n_samples: int


def iou3d_estimate(a: OrientedBox3, b: OrientedBox3,
                   n_samples=DEFAULT_IOU_SAMPLES, seed=0) -> IouEstimate:
    """Monte-Carlo IoU from uniform samples in the axis-aligned bounds of
    both boxes."""
    if n_samples < MIN_IOU_SAMPLES:
        raise InvalidConfigError(
            f"n_samples should be >= {MIN_IOU_SAMPLES}, not {n_samples}")
    corners = np.concatenate([a.corners(), b.corners()])
    lo, hi = corners.min(axis=0), corners.max(axis=0)

    rng = np.random.default_rng(seed)
    inter = union = 0
    done = 0
    while done < n_samples:
        n = min(IOU_BATCH, n_samples - done)
        pts = lo + rng.random((n, 3)) * (hi - lo)
        in_a = a.contains(pts)
        in_b = b.contains(pts)
        inter += int(np.count_nonzero(in_a & in_b))
        union += int(np.count_nonzero(in_a | in_b))
        done += n

    if union == 0:
        return IouEstimate(0.0, 0.0, n_samples)
    p = inter / union
    return IouEstimate(p, float(np.sqrt(p * (1 - p) / union)), n_samples)


def iou3d(a, b, n_samples=DEFAULT_IOU_SAMPLES, seed=0):
    return iou3d_estimate(a, b, n_samples, seed).value


@dataclass(frozen=True)
class PoseError:
    rotation_error_deg: float
    translation_error_m: float
    iou3d: float
    diameter_m: float = float('nan')

    def __post_init__(self):
        if not 0 <= self.rotation_error_deg <= 180:
            raise ValueError("rotation_error_deg should be in [0, 180]")
        if not self.translation_error_m >= 0:
            raise ValueError("translation_error_m should be >= 0")
        if not 0 <= self.iou3d <= 1:
            raise ValueError("iou3d should be in [0, 1]")

    def passes(self, rot_thresh_deg, trans_thresh_m, iou_thresh):
        return (self.rotation_error_deg <= rot_thresh_deg and
                self.translation_error_m <= trans_thresh_m and
                self.iou3d >= iou_thresh)


def accuracy_at(errors: List[PoseError],
                rot_thresh_deg=DEFAULT_ROT_THRESH_DEG,
                trans_thresh_m=DEFAULT_TRANS_THRESH_M,
                iou_thresh=DEFAULT_IOU_THRESH,
                trans_relative=False):
    """Fraction of records within all three thresholds. With
    `trans_relative` the translation threshold is a fraction of each
    record's object diameter."""
    if not errors:
        raise EmptyInputError("No pose errors to score")
    if not (rot_thresh_deg > 0 and trans_thresh_m > 0 and iou_thresh > 0):
        raise InvalidConfigError("Thresholds should be positive")

    passed = 0
    for e in errors:
        t = trans_thresh_m * e.diameter_m if trans_relative \
            else trans_thresh_m
        passed += e.passes(rot_thresh_deg, t, iou_thresh)
    return passed / len(errors)


def evaluate_estimate(est_pose: Se3Pose, est_scale: Scale3,
                      gt_pose: Se3Pose, gt_scale: Scale3, category=None,
                      n_samples=DEFAULT_IOU_SAMPLES, seed=0) -> PoseError:
    """Errors of one estimate. The rotation channel uses the category
    symmetry group."""
    rot = symmetry_aware_rotation_error(est_pose.rotation, gt_pose.rotation,
                                        symmetry_group_for(category))
    iou = iou3d(OrientedBox3.from_pose(est_pose, est_scale),
                OrientedBox3.from_pose(gt_pose, gt_scale),
                n_samples=n_samples, seed=seed)
    return PoseError(rot, translation_error(est_pose, gt_pose), iou,
                     gt_scale.diagonal)


@dataclass
class EvaluationReport:
    thresholds: Dict[str, float]
    rows: List[dict] = field(default_factory=list)
    skipped: int = 0
    missing: int = 0

    def add(self, key: str, category: str, error: PoseError,
            visibility: Optional[float] = None):
        self.rows.append({'record': key,
                          'category': category,
                          'rotation_error_deg': error.rotation_error_deg,
                          'translation_error_m': error.translation_error_m,
                          'iou3d': error.iou3d,
                          'diameter_m': error.diameter_m,
                          'visibility': visibility})

    @property
    def errors(self):
        return [PoseError(r['rotation_error_deg'], r['translation_error_m'],
                          r['iou3d'], r['diameter_m']) for r in self.rows]

    def accuracy(self, category=None):
        errors = [e for e, r in zip(self.errors, self.rows)
                  if category is None or r['category'] == category]
        return accuracy_at(errors, self.thresholds['rotation_deg'],
                           self.thresholds['translation'],
                           self.thresholds['iou'],
                           trans_relative=bool(
                               self.thresholds.get('translation_relative')))

    def to_dataframe(self):
        return pd.DataFrame(self.rows, columns=[
            'record', 'category', 'rotation_error_deg',
            'translation_error_m', 'iou3d', 'diameter_m', 'visibility'])

    def summary(self):
        df = self.to_dataframe()
        channels = ['rotation_error_deg', 'translation_error_m', 'iou3d']
        stats = {c: {'mean': float(df[c].mean()),
                     'median': float(df[c].median())} for c in channels}
        categories = sorted(df['category'].unique())
        return {'thresholds': self.thresholds,
                'n_records': len(self.rows),
                'skipped': self.skipped,
                'missing': self.missing,
                'accuracy': self.accuracy(),
                'per_category_accuracy': {c: self.accuracy(c)
                                          for c in categories},
                'stats': stats}

    def to_dict(self):
        return {'summary': self.summary(), 'records': self.rows}

    def write_json(self, filename):
        return write_json(self.to_dict(), filename)

    def write_csv(self, filename):
        self.to_dataframe().to_csv(filename, index=False,
                                   float_format='%.9g')
        return Path(filename)
