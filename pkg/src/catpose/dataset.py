"""
Rendered dataset records, manifest and validation.

Layout:

    root/manifest.json
    root/<category>/<instance_id>/<view_index:06d>.depth.png
                                                  .mask.png
                                                  .cloud.ply
                                                  .pose.json
                                                  .rgb.png (optional)
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from loguru import logger

from catpose.assets import Scale3
from catpose.errors import (CatposeError, CorruptPayloadError,
                            MissingFileError, SchemaMismatchError)
from catpose.formats import (read_cloud_ply, read_depth_png, read_json,
                             read_mask_png, write_cloud_ply, write_depth_png,
                             write_json, write_mask_png, write_rgb_png)
from catpose.geometry import PointCloud, Se3Pose, round_sig
from catpose.views import CameraIntrinsics

SCHEMA_VERSION = 1
DATASET_VERSION = 1
MANIFEST_NAME = 'manifest.json'
POSE_INVERSE_TOL = 1e-6
QUAT_NORM_TOL = 1e-6

VIOLATION_KINDS = ('MissingFile', 'SchemaMismatch', 'CorruptPayload',
                   'PoseInverse', 'MaskMismatch', 'CloudMismatch',
                   'CountMismatch')


def record_stem(view_index):
    return f'{int(view_index):06d}'


def record_file(category, instance_id, view_index, suffix):
    """Root-relative path of one record payload, e.g. `rgb.png`."""
    return f'{category}/{instance_id}/{record_stem(view_index)}.{suffix}'


@dataclass(frozen=True, eq=False)
class ViewRecord:
    """One rendered sample. Paths are relative to the dataset root."""
    category: str
    instance_id: str
    view_index: int
    intrinsics: CameraIntrinsics
    camera_pose: Se3Pose
    instance_pose: Se3Pose
    scale: Scale3
    bbox_center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    visibility: float = 1.0
    depth_path: Optional[str] = None
    mask_path: Optional[str] = None
    cloud_path: Optional[str] = None
    rgb_path: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, 'bbox_center',
                           np.asarray(self.bbox_center, dtype=np.float64))
        for k, suffix in (('depth_path', 'depth.png'),
                          ('mask_path', 'mask.png'),
                          ('cloud_path', 'cloud.ply')):
            if getattr(self, k) is None:
                object.__setattr__(self, k, record_file(
                    self.category, self.instance_id, self.view_index,
                    suffix))

    def __repr__(self):
        return (f'<ViewRecord {self.category}/{self.instance_id} '
                f'view={self.view_index}>')

    @property
    def key(self):
        return (self.category, self.instance_id, self.view_index)

    @property
    def pose_path(self):
        return record_file(self.category, self.instance_id,
                           self.view_index, 'pose.json')

    @property
    def centered_instance_pose(self):
        """Pose of the bounding-box-centered object frame in the camera,
        the frame templates and estimates are expressed in."""
        return self.instance_pose @ Se3Pose.from_translation(
            self.bbox_center)

    def pose_inverse_error(self):
        err = (self.camera_pose @ self.instance_pose).matrix - np.eye(4)
        return float(np.abs(err).max())

    def to_dict(self):
        files = {'depth': Path(self.depth_path).name,
                 'mask': Path(self.mask_path).name,
                 'cloud': Path(self.cloud_path).name}
        if self.rgb_path is not None:
            files['rgb'] = Path(self.rgb_path).name
        return {'schema_version': SCHEMA_VERSION,
                'category': self.category,
                'instance_id': self.instance_id,
                'view_index': int(self.view_index),
                'intrinsics': self.intrinsics.to_dict(),
                'camera_pose': self.camera_pose.to_dict(),
                'instance_pose': self.instance_pose.to_dict(),
                'scale_m': [round_sig(v) for v in self.scale.as_array()],
                'bbox_center_m': [round_sig(v) for v in self.bbox_center],
                'visibility': round_sig(self.visibility),
                'files': files}

    @classmethod
    def from_dict(cls, d, source=''):
        if d.get('schema_version') != SCHEMA_VERSION:
            raise SchemaMismatchError(
                f"{source}: unsupported schema_version "
                f"{d.get('schema_version')}")
        try:
            for k in ('camera_pose', 'instance_pose'):
                q = np.asarray(d[k]['quat_wxyz'], dtype=np.float64)
                if q.shape != (4,) or \
                        abs(np.linalg.norm(q) - 1) > QUAT_NORM_TOL:
                    raise SchemaMismatchError(
                        f"{source}: {k} quaternion is not unit norm")

            base = f"{d['category']}/{d['instance_id']}"
            files = d['files']
            return cls(category=d['category'],
                       instance_id=d['instance_id'],
                       view_index=int(d['view_index']),
                       intrinsics=CameraIntrinsics.from_dict(d['intrinsics']),
                       camera_pose=Se3Pose.from_dict(d['camera_pose']),
                       instance_pose=Se3Pose.from_dict(d['instance_pose']),
                       scale=Scale3.from_array(d['scale_m']),
                       bbox_center=d.get('bbox_center_m', [0, 0, 0]),
                       visibility=float(d.get('visibility', 1.0)),
                       depth_path=f"{base}/{files['depth']}",
                       mask_path=f"{base}/{files['mask']}",
                       cloud_path=f"{base}/{files['cloud']}",
                       rgb_path=(f"{base}/{files['rgb']}"
                                 if 'rgb' in files else None))
        except SchemaMismatchError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaMismatchError(f"{source}: {e!r}") from e


def write_record(record: ViewRecord, depth, mask, cloud, root, rgb=None):
    """Write the record payloads and its pose JSON. Returns the written
    paths keyed by payload name."""
    root = Path(root)
    folder = root / record.category / record.instance_id
    folder.mkdir(parents=True, exist_ok=True)

    if rgb is not None and record.rgb_path is None:
        raise ValueError(f"{record!r} has no rgb_path for the color image")

    points = cloud.points if isinstance(cloud, PointCloud) else cloud

    paths = {'depth': write_depth_png(depth, root / record.depth_path),
             'mask': write_mask_png(mask, root / record.mask_path),
             'cloud': write_cloud_ply(points, root / record.cloud_path)}
    if rgb is not None:
        paths['rgb'] = write_rgb_png(rgb, root / record.rgb_path)
    paths['pose'] = write_json(record.to_dict(), root / record.pose_path)
    return paths


@dataclass(frozen=True, eq=False)
class RecordPayload:
    record: ViewRecord
    depth: np.ndarray
    mask: np.ndarray
    cloud: PointCloud

    def __iter__(self):
        return iter((self.record, self.depth, self.mask, self.cloud))


def read_record(pose_path) -> RecordPayload:
    """Read a record from its pose JSON; payload paths resolve against the
    dataset root (two levels above the record folder)."""
    pose_path = Path(pose_path)
    root = pose_path.parent.parent.parent
    record = ViewRecord.from_dict(read_json(pose_path), source=pose_path)

    depth = read_depth_png(root / record.depth_path)
    mask = read_mask_png(root / record.mask_path)
    points = read_cloud_ply(root / record.cloud_path)
    if record.rgb_path is not None and \
            not (root / record.rgb_path).is_file():
        raise MissingFileError(f"{root / record.rgb_path} not found")
    return RecordPayload(record, depth, mask, PointCloud(points, 'camera'))


@dataclass
class Manifest:
    dataset_version: int
    categories: List[str]
    instances: Dict[str, List[str]]
    records: Dict[str, List[int]]
    config: dict = field(default_factory=dict)
    sampling: str = 'sphere'

    def __post_init__(self):
        if len(set(self.categories)) != len(self.categories):
            raise SchemaMismatchError("Duplicated category names")

    @property
    def record_count(self):
        return sum(len(v) for v in self.records.values())

    @classmethod
    def from_records(cls, records, config=None, sampling='sphere'):
        per_instance = {}
        for r in sorted(records, key=lambda r: r.key):
            per_instance.setdefault(f'{r.category}/{r.instance_id}',
                                    []).append(int(r.view_index))
        instances = {}
        for key in per_instance:
            category, instance_id = key.split('/', 1)
            instances.setdefault(category, []).append(instance_id)
        return cls(DATASET_VERSION, sorted(instances), instances,
                   per_instance, config or {}, sampling)

    def to_dict(self):
        return {'dataset_version': self.dataset_version,
                'categories': list(self.categories),
                'instances': self.instances,
                'records': self.records,
                'record_count': self.record_count,
                'sampling': self.sampling,
                'config': self.config}

    @classmethod
    def from_dict(cls, d):
        try:
            manifest = cls(int(d['dataset_version']), list(d['categories']),
                           dict(d['instances']),
                           {k: [int(i) for i in v]
                            for k, v in d['records'].items()},
                           d.get('config', {}), d.get('sampling', 'sphere'))
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaMismatchError(f"Invalid manifest: {e!r}") from e
        if manifest.dataset_version != DATASET_VERSION:
            raise SchemaMismatchError(
                f"Unsupported dataset_version {manifest.dataset_version}")
        return manifest

    def pose_paths(self, root):
        root = Path(root)
        for key, views in self.records.items():
            for view_index in views:
                yield root / key / f'{record_stem(view_index)}.pose.json'


def write_manifest(root, records, config=None, sampling='sphere'):
    manifest = Manifest.from_records(records, config, sampling)
    write_json(manifest.to_dict(), Path(root) / MANIFEST_NAME)
    return manifest


def read_manifest(root):
    return Manifest.from_dict(read_json(Path(root) / MANIFEST_NAME))


@dataclass(frozen=True)
class Violation:
    kind: str
    path: str
    detail: str = ''

    def to_dict(self):
        return {'kind': self.kind, 'path': self.path, 'detail': self.detail}


@dataclass
class ValidationReport:
    root: str
    records_checked: int = 0
    violations: List[Violation] = field(default_factory=list)
    per_category: Dict[str, int] = field(default_factory=dict)

    @property
    def ok(self):
        return not self.violations

    def add(self, kind, path, detail=''):
        self.violations.append(Violation(kind, str(path), detail))

    def count(self, kind):
        return sum(v.kind == kind for v in self.violations)

    def to_dict(self):
        return {'root': self.root,
                'records_checked': self.records_checked,
                'per_category': self.per_category,
                'ok': self.ok,
                'violations': [v.to_dict() for v in self.violations]}


def _violation_kind(exc):
    if isinstance(exc, MissingFileError):
        return 'MissingFile'
    if isinstance(exc, CorruptPayloadError):
        return 'CorruptPayload'
    return 'SchemaMismatch'


def validate_dataset(root) -> ValidationReport:
    """Check the manifest against the files on disk and every record
    against its invariants. Failures are collected, never raised."""
    root = Path(root)
    report = ValidationReport(str(root))

    try:
        manifest = read_manifest(root)
    except CatposeError as e:
        report.add(_violation_kind(e), root / MANIFEST_NAME, str(e))
        return report

    for pose_path in manifest.pose_paths(root):
        report.records_checked += 1
        try:
            record, depth, mask, cloud = read_record(pose_path)
        except CatposeError as e:
            report.add(_violation_kind(e), pose_path, str(e))
            continue

        if record.pose_inverse_error() > POSE_INVERSE_TOL:
            report.add('PoseInverse', pose_path,
                       f"camera_pose @ instance_pose deviates from identity "
                       f"by {record.pose_inverse_error():.2e}")
        if depth.shape != mask.shape or np.any(mask != (depth > 0)):
            report.add('MaskMismatch', pose_path,
                       "mask differs from depth > 0")
        elif len(cloud) != int(mask.sum()):
            report.add('CloudMismatch', pose_path,
                       f"{len(cloud)} points for {int(mask.sum())} masked "
                       "pixels")

    for category in manifest.categories:
        expected = sum(len(manifest.records.get(f'{category}/{inst}', []))
                       for inst in manifest.instances.get(category, []))
        on_disk = len(list((root / category).glob('*/*.pose.json')))
        report.per_category[category] = on_disk
        if expected != on_disk:
            report.add('CountMismatch', root / category,
                       f"manifest lists {expected} records, "
                       f"{on_disk} on disk")

    if report.ok:
        logger.info(f"{root}: {report.records_checked} records, "
                    "no violations")
    else:
        logger.warning(f"{root}: {len(report.violations)} violations in "
                       f"{report.records_checked} records")
    return report
