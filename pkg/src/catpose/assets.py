"""
Model assets: triangle meshes, multi-part models, bounding boxes and scales.

A model is described by a JSON manifest (`<name>.model.json`) standing in
for URDF files:

    {"category": "Bottle",
     "instance_id": "bottle_0001",
     "scale": 1.0,
     "parts": [{"mesh_path": "body.obj",
                "transform": {"quat_wxyz": [1, 0, 0, 0],
                              "translation": [0, 0, 0]}}]}

`mesh_path` is relative to the manifest. `scale` converts the asset units
to meters and applies to vertices and part translations. Part transforms
are fixed, joints are not articulated.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np
from loguru import logger
from plyfile import PlyData

from catpose.errors import (DegenerateExtentError, EmptyMeshError,
                            InvalidConfigError, MalformedFileError)
from catpose.geometry import Se3Pose

CATEGORIES = ["Bottle", "Box", "Dispenser", "Remote", "Camera", "Clock",
              "Eyeglasses", "Fan", "Faucet", "Globe", "Kettle", "Keyboard",
              "Knife", "Lamp", "Laptop", "Mouse", "Pen", "Phone", "Pliers",
              "Scissors", "Stapler", "USB", "Packaging", "Sponge"]

MESH_SUFFIXES = ('.obj', '.ply')
MANIFEST_SUFFIX = '.model.json'


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.array(self.faces, dtype=np.int64).reshape(-1, 3)

        if faces.shape[0] == 0:
            raise EmptyMeshError("Mesh has no faces")
        if not np.all(np.isfinite(vertices)):
            raise MalformedFileError("Mesh has non-finite coordinates")
        if faces.min() < 0 or faces.max() >= vertices.shape[0]:
            raise MalformedFileError(
                f"Face index out of range for {vertices.shape[0]} vertices "
                f"(min {faces.min()}, max {faces.max()})")

        vertices.setflags(write=False)
        faces.setflags(write=False)
        object.__setattr__(self, 'vertices', vertices)
        object.__setattr__(self, 'faces', faces)

        if not np.any(self.face_areas > 0):
            raise EmptyMeshError("Mesh has no face with positive area")

    def __repr__(self):
        return (f'<TriangleMesh vertices={self.vertices.shape[0]} '
                f'faces={self.faces.shape[0]}>')

    @property
    def triangles(self):
        """(M, 3, 3) array of triangle corners."""
        return self.vertices[self.faces]

    @property
    def face_areas(self):
        tris = self.triangles
        cross = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    @property
    def area(self):
        return float(self.face_areas.sum())

    @property
    def bounds(self):
        return Aabb(self.vertices.min(axis=0), self.vertices.max(axis=0))

    def transformed(self, pose: Se3Pose = None, scale=1.0):
        """Scale about the origin, then apply `pose`."""
        vertices = self.vertices * scale
        if pose is not None:
            vertices = pose.apply(vertices)
        return TriangleMesh(vertices, self.faces)

    def sample_surface(self, n, rng):
        """Area-weighted uniform surface samples and their face indices."""
        areas = self.face_areas
        faces = rng.choice(areas.size, size=n, p=areas / areas.sum())
        r1 = np.sqrt(rng.random(n))
        r2 = rng.random(n)
        tris = self.triangles[faces]
        points = ((1 - r1)[:, None] * tris[:, 0] +
                  (r1 * (1 - r2))[:, None] * tris[:, 1] +
                  (r1 * r2)[:, None] * tris[:, 2])
        return points, faces


@dataclass(frozen=True, eq=False)
class Aabb:
    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        mn = np.array(self.min_corner, dtype=np.float64).reshape(3)
        mx = np.array(self.max_corner, dtype=np.float64).reshape(3)
        if np.any(mn > mx):
            raise ValueError(f"min_corner {mn} exceeds max_corner {mx}")
        object.__setattr__(self, 'min_corner', mn)
        object.__setattr__(self, 'max_corner', mx)

    def __repr__(self):
        return (f'<Aabb min={self.min_corner.tolist()} '
                f'max={self.max_corner.tolist()}>')

    @property
    def center(self):
        return (self.min_corner + self.max_corner) / 2

    @property
    def extents(self):
        return self.max_corner - self.min_corner

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.extents))

    def union(self, other: 'Aabb'):
        return Aabb(np.minimum(self.min_corner, other.min_corner),
                    np.maximum(self.max_corner, other.max_corner))

    def contains(self, points, tol=0.0):
        points = np.atleast_2d(points)
        return np.all((points >= self.min_corner - tol) &
                      (points <= self.max_corner + tol), axis=1)


@dataclass(frozen=True)
class Scale3:
    sx: float
    sy: float
    sz: float

    def __post_init__(self):
        values = [float(v) for v in (self.sx, self.sy, self.sz)]
        if not all(np.isfinite(v) and v > 0 for v in values):
            raise DegenerateExtentError(
                f"Scale components should be positive, not {values}")
        for name, v in zip(('sx', 'sy', 'sz'), values):
            object.__setattr__(self, name, v)

    @classmethod
    def from_array(cls, values):
        return cls(*np.asarray(values, dtype=np.float64).reshape(3))

    def as_array(self):
        return np.array([self.sx, self.sy, self.sz])

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.as_array()))


@dataclass(frozen=True, eq=False)
class PartAsset:
    mesh: TriangleMesh
    local_transform: Se3Pose = field(default_factory=Se3Pose.identity)

    def __post_init__(self):
        if not self.local_transform.is_valid():
            raise ValueError("Part local_transform is not a valid rigid "
                             "transform")

    @property
    def model_vertices(self):
        return self.local_transform.apply(self.mesh.vertices)


@dataclass(frozen=True, eq=False)
class ModelAsset:
    category: str
    instance_id: str
    parts: Tuple[PartAsset, ...]

    def __post_init__(self):
        parts = tuple(self.parts)
        if not parts:
            raise ValueError("A model needs at least one part")
        if not self.category:
            raise ValueError("A model needs a non-empty category")
        object.__setattr__(self, 'parts', parts)

    def __repr__(self):
        return (f'<ModelAsset {self.category}/{self.instance_id} '
                f'parts={len(self.parts)}>')

    @classmethod
    def from_mesh(cls, mesh, category, instance_id):
        return cls(category, instance_id, (PartAsset(mesh),))


def _parse_obj_index(token, n_vertices, lineno):
    idx = token.split('/')[0]
    try:
        i = int(idx)
    except ValueError:
        raise MalformedFileError(f"line {lineno}: bad face index '{token}'")
    if i > 0:
        return i - 1
    if i < 0:
        return n_vertices + i
    raise MalformedFileError(f"line {lineno}: face index 0 is invalid")


def _read_obj(path):
    vertices = []
    faces = []
    with open(path, 'r', encoding='utf-8', errors='replace') as f:
        for lineno, line in enumerate(f, start=1):
            tokens = line.split()
            if not tokens or tokens[0].startswith('#'):
                continue
            if tokens[0] == 'v':
                try:
                    vertices.append([float(x) for x in tokens[1:4]])
                except ValueError:
                    raise MalformedFileError(
                        f"{path}:{lineno}: bad vertex record")
                if len(vertices[-1]) != 3:
                    raise MalformedFileError(
                        f"{path}:{lineno}: vertex needs 3 coordinates")
            elif tokens[0] == 'f':
                idx = [_parse_obj_index(t, len(vertices), lineno)
                       for t in tokens[1:]]
                if len(idx) < 3:
                    raise MalformedFileError(
                        f"{path}:{lineno}: face needs 3 vertices")
                # fan triangulation of polygons
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])

    return (np.array(vertices, dtype=np.float64).reshape(-1, 3),
            np.array(faces, dtype=np.int64).reshape(-1, 3))


def _read_ply(path):
    try:
        ply = PlyData.read(str(path))
        vertex = ply['vertex']
        vertices = np.stack([vertex['x'], vertex['y'], vertex['z']],
                            axis=1).astype(np.float64)
    except Exception as e:
        raise MalformedFileError(f"Could not parse PLY {path}: {e}") from e

    faces = []
    if 'face' in ply:
        face = ply['face']
        names = face.data.dtype.names
        key = 'vertex_indices' if 'vertex_indices' in names \
            else 'vertex_index'
        for poly in face[key]:
            poly = [int(i) for i in poly]
            for k in range(1, len(poly) - 1):
                faces.append([poly[0], poly[k], poly[k + 1]])

    return vertices, np.array(faces, dtype=np.int64).reshape(-1, 3)


def load_mesh(path) -> TriangleMesh:
    """Load an OBJ or PLY triangle mesh. Vertex order follows the file,
    polygons are fan-triangulated."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Mesh file not found: {path}")

    suffix = path.suffix.lower()
    if suffix == '.obj':
        vertices, faces = _read_obj(path)
    elif suffix == '.ply':
        vertices, faces = _read_ply(path)
    else:
        raise MalformedFileError(f"Unsupported mesh format '{suffix}'. "
                                 f"Should be one of {MESH_SUFFIXES}")

    if faces.shape[0] == 0:
        raise EmptyMeshError(f"{path} has no faces")

    return TriangleMesh(vertices, faces)


def _read_manifest(manifest_path):
    manifest_path = Path(manifest_path)
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise MalformedFileError(
            f"Invalid model manifest {manifest_path}: {e}") from e

    for k in ('category', 'instance_id', 'parts'):
        if k not in manifest:
            raise MalformedFileError(
                f"Model manifest {manifest_path} misses '{k}'")
    return manifest


def load_model(manifest_path) -> ModelAsset:
    """Load a multi-part model from its JSON manifest."""
    manifest_path = Path(manifest_path)
    manifest = _read_manifest(manifest_path)
    unit_scale = float(manifest.get('scale', 1.0))
    if not unit_scale > 0:
        raise MalformedFileError(f"{manifest_path}: scale should be > 0")

    parts = []
    for part in manifest['parts']:
        mesh = load_mesh(manifest_path.parent / part['mesh_path'])
        transform = part.get('transform')
        if transform is None:
            pose = Se3Pose.identity()
        else:
            q = np.asarray(transform.get('quat_wxyz', [1, 0, 0, 0]), float)
            if abs(np.linalg.norm(q) - 1) > 1e-6:
                raise MalformedFileError(
                    f"{manifest_path}: part quaternion is not unit norm")
            t = np.asarray(transform.get('translation', [0, 0, 0]), float)
            pose = Se3Pose.from_quat_wxyz(q, t * unit_scale)
        if unit_scale != 1.0:
            mesh = mesh.transformed(scale=unit_scale)
        parts.append(PartAsset(mesh, pose))

    return ModelAsset(str(manifest['category']),
                      str(manifest['instance_id']),
                      tuple(parts))


@dataclass(frozen=True)
class ModelSource:
    """A discovered, not yet loaded, model."""
    category: str
    instance_id: str
    path: Path

    def load(self) -> ModelAsset:
        if self.path.name.lower().endswith(MANIFEST_SUFFIX):
            return load_model(self.path)
        mesh = load_mesh(self.path)
        return ModelAsset.from_mesh(mesh, self.category, self.instance_id)


def discover_models(asset_root, categories=None) -> List[ModelSource]:
    """Find model manifests (`*.model.json`) and bare meshes
    (`<category>/<instance>.obj|ply`) under `asset_root`. Meshes referenced
    by a manifest are parts, not models."""
    asset_root = Path(asset_root)
    if not asset_root.is_dir():
        raise FileNotFoundError(f"Asset root not found: {asset_root}")

    sources = []
    referenced = set()
    for manifest_path in sorted(asset_root.rglob(f'*{MANIFEST_SUFFIX}')):
        manifest = _read_manifest(manifest_path)
        for part in manifest['parts']:
            referenced.add(
                (manifest_path.parent / part['mesh_path']).resolve())
        sources.append(ModelSource(str(manifest['category']),
                                   str(manifest['instance_id']),
                                   manifest_path))

    for category_dir in sorted(p for p in asset_root.iterdir() if p.is_dir()):
        for mesh_path in sorted(category_dir.iterdir()):
            if (mesh_path.suffix.lower() in MESH_SUFFIXES and
                    mesh_path.resolve() not in referenced):
                sources.append(ModelSource(category_dir.name,
                                           mesh_path.stem,
                                           mesh_path))

    if categories:
        categories = set(categories)
        sources = [s for s in sources if s.category in categories]

    sources = sorted(sources, key=lambda s: (s.category, s.instance_id))

    keys = [(s.category, s.instance_id) for s in sources]
    if len(set(keys)) != len(keys):
        raise InvalidConfigError(f"Duplicated model ids under {asset_root}")

    logger.debug(f"Discovered {len(sources)} models under {asset_root}")
    return sources


def global_bbox(model: ModelAsset) -> Aabb:
    """Componentwise extremes over every part vertex, in the model frame."""
    bbox = None
    for part in model.parts:
        v = part.model_vertices
        part_bbox = Aabb(v.min(axis=0), v.max(axis=0))
        bbox = part_bbox if bbox is None else bbox.union(part_bbox)
    return bbox


def model_scale(bbox: Aabb) -> Scale3:
    extents = bbox.extents
    if np.any(extents <= 0):
        raise DegenerateExtentError(
            f"Bounding box has a zero extent: {extents.tolist()}")
    return Scale3.from_array(extents)


def merge_parts(model: ModelAsset) -> TriangleMesh:
    """Concatenate the parts into one mesh expressed in the model frame."""
    vertices = []
    faces = []
    offset = 0
    for part in model.parts:
        vertices.append(part.model_vertices)
        faces.append(part.mesh.faces + offset)
        offset += part.mesh.vertices.shape[0]
    return TriangleMesh(np.concatenate(vertices), np.concatenate(faces))
