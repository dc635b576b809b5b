"""
Category templates: canonicalized instance surface, Poisson-disk sampled
and reduced with farthest point sampling.
"""
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from loguru import logger
from scipy.spatial import KDTree

from catpose.assets import ModelAsset, TriangleMesh, merge_parts
from catpose.errors import (DegenerateExtentError, InvalidConfigError,
                            InvalidKError, RadiusTooLargeError)
from catpose.formats import (read_cloud_ply, read_json, write_cloud_ply,
                             write_json)
from catpose.geometry import PointCloud, Se3Pose

DEFAULT_K = 512
DEFAULT_POISSON_RADIUS = 0.015
MIN_POISSON_SAMPLES = 4
CANDIDATE_FACTOR = 5
MAX_CANDIDATES = 2_000_000


@dataclass(frozen=True, eq=False)
class CanonicalizationResult:
    """`canonical = applied_scale * applied_transform.apply(original)`"""
    canonical_mesh: TriangleMesh
    applied_transform: Se3Pose
    applied_scale: float


@dataclass(frozen=True, eq=False)
class TemplatePointCloud:
    category: str
    points: np.ndarray
    source_instance_id: str
    poisson_radius: float = DEFAULT_POISSON_RADIUS
    seed: int = 0

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        points.setflags(write=False)
        object.__setattr__(self, 'points', points)

    def __repr__(self):
        return (f'<TemplatePointCloud {self.category} k={self.k} '
                f'source={self.source_instance_id}>')

    @property
    def k(self):
        return self.points.shape[0]

    @property
    def extents(self):
        return self.points.max(axis=0) - self.points.min(axis=0)

    def as_pointcloud(self):
        return PointCloud(self.points, frame='canonical')

    def sidecar(self):
        return {'category': self.category,
                'k': self.k,
                'source_instance_id': self.source_instance_id,
                'poisson_radius': self.poisson_radius,
                'seed': self.seed}


def canonicalize(mesh: TriangleMesh) -> CanonicalizationResult:
    """Move the bounding-box center to the origin and scale uniformly to a
    unit bounding-box diagonal. Axes are kept as modeled."""
    bounds = mesh.bounds
    if np.any(bounds.extents <= 0):
        raise DegenerateExtentError(
            f"Cannot canonicalize flat geometry, extents "
            f"{bounds.extents.tolist()}")
    transform = Se3Pose.from_translation(-bounds.center)
    scale = 1.0 / bounds.diagonal
    canonical = TriangleMesh((mesh.vertices - bounds.center) * scale,
                             mesh.faces)
    return CanonicalizationResult(canonical, transform, scale)


@numba.njit(nogil=True, cache=True)
def _greedy_accept(n, pair_ptr, pair_dst):
    """Accept candidates in order, dropping later ones too close to an
    accepted one. Pairs are in CSR form keyed on the earlier index."""
    rejected = np.zeros(n, dtype=np.bool_)
    accepted = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        if rejected[i]:
            continue
        accepted[i] = True
        for j in range(pair_ptr[i], pair_ptr[i + 1]):
            rejected[pair_dst[j]] = True
    return accepted


def sample_surface(mesh: TriangleMesh, n, rng):
    """Area-weighted uniform surface samples."""
    return mesh.sample_surface(n, rng)[0]


def poisson_disk_sample(mesh: TriangleMesh, radius, seed=0,
                        frame='object') -> PointCloud:
    """Dart throwing: area-weighted candidates accepted greedily when
    further than `radius` from every accepted sample."""
    if not radius > 0:
        raise InvalidConfigError(f"radius should be > 0, not {radius}")

    bound = 4 * mesh.area / (np.pi * radius ** 2)
    n = int(min(max(np.ceil(CANDIDATE_FACTOR * bound), 64), MAX_CANDIDATES))
    if n == MAX_CANDIDATES:
        logger.warning(f"Poisson radius {radius} is small for the surface "
                       f"area, candidates capped at {MAX_CANDIDATES}")

    rng = np.random.default_rng(seed)
    candidates = sample_surface(mesh, n, rng)

    # slightly inflated query so borderline pairs count as conflicts
    pairs = KDTree(candidates).query_pairs(radius * (1 + 1e-9),
                                           output_type='ndarray')
    pairs = np.sort(pairs, axis=1)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    pairs = pairs[order]
    pair_ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(pair_ptr, pairs[:, 0] + 1, 1)
    pair_ptr = np.cumsum(pair_ptr)

    accepted = _greedy_accept(n, pair_ptr,
                              np.ascontiguousarray(pairs[:, 1],
                                                   dtype=np.int64))
    points = candidates[accepted]
    if points.shape[0] < MIN_POISSON_SAMPLES:
        raise RadiusTooLargeError(
            f"Only {points.shape[0]} samples fit at radius {radius}")

    logger.debug(f"Poisson sampling kept {points.shape[0]} of {n} "
                 f"candidates (radius {radius})")
    return PointCloud(points, frame=frame)


@numba.njit(nogil=True, cache=True)
def _fps(points, k, start):
    n = points.shape[0]
    selected = np.empty(k, dtype=np.int64)
    min_d = np.full(n, np.inf)
    current = start
    for i in range(k):
        selected[i] = current
        px, py, pz = points[current, 0], points[current, 1], \
            points[current, 2]
        best = -1.0
        best_j = 0
        for j in range(n):
            dx = points[j, 0] - px
            dy = points[j, 1] - py
            dz = points[j, 2] - pz
            d = dx * dx + dy * dy + dz * dz
            if d < min_d[j]:
                min_d[j] = d
            if min_d[j] > best:
                best = min_d[j]
                best_j = j
        current = best_j
    return selected


def _start_index(points, start):
    if isinstance(start, str):
        if start != 'centroid':
            raise InvalidConfigError(f"Unknown start rule '{start}'")
        d = np.linalg.norm(points - points.mean(axis=0), axis=1)
        return int(np.argmin(d))
    start = int(start)
    if not 0 <= start < points.shape[0]:
        raise InvalidKError(f"Start index {start} out of range")
    return start


def farthest_point_indices(points, k, start='centroid'):
    points = np.ascontiguousarray(
        points.points if isinstance(points, PointCloud) else points,
        dtype=np.float64)
    n = points.shape[0]
    if n < 1 or not 1 <= k <= n:
        raise InvalidKError(f"k={k} is invalid for {n} points")
    return _fps(points, int(k), _start_index(points, start))


def farthest_point_sample(points, k, start='centroid') -> PointCloud:
    """Greedy farthest point sampling, output in selection order. `start`
    is an index or 'centroid' (the point nearest the mean, lowest index on
    ties)."""
    frame = points.frame if isinstance(points, PointCloud) else 'object'
    arr = points.points if isinstance(points, PointCloud) else \
        np.asarray(points, dtype=np.float64)
    idx = farthest_point_indices(arr, k, start)
    return PointCloud(arr[idx], frame=frame)


def build_template(model: ModelAsset, k=DEFAULT_K,
                   poisson_radius=DEFAULT_POISSON_RADIUS,
                   seed=0) -> TemplatePointCloud:
    canonical = canonicalize(merge_parts(model)).canonical_mesh
    cloud = poisson_disk_sample(canonical, poisson_radius, seed,
                                frame='canonical')
    if len(cloud) < k:
        raise InvalidKError(
            f"Poisson stage produced {len(cloud)} points, fewer than k={k}. "
            "Use a smaller poisson_radius")
    sampled = farthest_point_sample(cloud, k)
    logger.info(f"Template {model.category} from {model.instance_id}: "
                f"{k} of {len(cloud)} Poisson samples")
    return TemplatePointCloud(model.category, sampled.points,
                              model.instance_id, poisson_radius, seed)


def save_template(template: TemplatePointCloud, filename):
    """Binary little-endian PLY plus a JSON sidecar with the same stem."""
    filename = Path(filename).with_suffix('.ply')
    filename.parent.mkdir(parents=True, exist_ok=True)
    write_cloud_ply(template.points, filename)
    write_json(template.sidecar(), filename.with_suffix('.json'))
    return filename


def load_template(filename) -> TemplatePointCloud:
    filename = Path(filename).with_suffix('.ply')
    meta = read_json(filename.with_suffix('.json'))
    points = read_cloud_ply(filename)
    if points.shape[0] != meta['k']:
        raise InvalidKError(f"{filename} holds {points.shape[0]} points, "
                            f"sidecar says {meta['k']}")
    return TemplatePointCloud(meta['category'], points,
                              meta['source_instance_id'],
                              meta['poisson_radius'], meta['seed'])
