"""
CPU ray-casting of depth, instance masks and Lambertian color images.

One primary ray per pixel, through the pixel center. The camera-frame ray
direction is ((u + 0.5 - cx) / fx, (v + 0.5 - cy) / fy, 1), so the hit
distance along it is directly the camera-frame z (perspective depth).
"""
import time
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from catpose.assets import ModelAsset, TriangleMesh, merge_parts
from catpose.errors import DimensionMismatchError
from catpose.geometry import PointCloud, Se3Pose
from catpose.render.bvh import RayAccel, build_accel, closest_hit
from catpose.views import CameraIntrinsics

NEAR_CLIP = 0.01
FAR_CLIP = 10.0
VISIBILITY_SAMPLES = 4096
OCCLUSION_RTOL = 1e-6


@dataclass(frozen=True, eq=False)
class RenderedView:
    depth: np.ndarray
    mask: np.ndarray
    triangle_ids: np.ndarray
    rgb: Optional[np.ndarray] = None
    render_ms: float = 0.0

    def __repr__(self):
        h, w = self.depth.shape
        return (f'<RenderedView {w}x{h} hits={int(self.mask.sum())} '
                f'render_ms={self.render_ms:.1f}>')


@numba.njit(nogil=True, cache=True)
def _render_window(rotation, origin, fx, fy, cx, cy, width, height,
                   col0, col1, row0, row1, near, far,
                   node_min, node_max, node_left, node_right,
                   node_start, node_count, tri_order, v0, e1, e2):
    depth = np.zeros((height, width))
    tri_ids = np.full((height, width), -1, dtype=np.int64)
    ox, oy, oz = origin[0], origin[1], origin[2]
    for v in range(row0, row1):
        yc = (v + 0.5 - cy) / fy
        for u in range(col0, col1):
            xc = (u + 0.5 - cx) / fx
            dx = rotation[0, 0] * xc + rotation[0, 1] * yc + rotation[0, 2]
            dy = rotation[1, 0] * xc + rotation[1, 1] * yc + rotation[1, 2]
            dz = rotation[2, 0] * xc + rotation[2, 1] * yc + rotation[2, 2]
            t, k = closest_hit(ox, oy, oz, dx, dy, dz, near, far,
                               node_min, node_max, node_left, node_right,
                               node_start, node_count, tri_order,
                               v0, e1, e2)
            if k >= 0:
                depth[v, u] = t
                tri_ids[v, u] = k
    return depth, tri_ids


def _pixel_window(bounds_corners, camera_pose, intrinsics, near):
    """Image rectangle that can contain the projection of the corners.
    The full image when any corner is behind the near plane."""
    w, h = intrinsics.width, intrinsics.height
    pts = camera_pose.inverse().apply(bounds_corners)
    if np.any(pts[:, 2] <= near):
        return 0, w, 0, h
    u = intrinsics.fx * pts[:, 0] / pts[:, 2] + intrinsics.cx
    v = intrinsics.fy * pts[:, 1] / pts[:, 2] + intrinsics.cy
    u0 = int(np.clip(np.floor(u.min()) - 1, 0, w))
    u1 = int(np.clip(np.ceil(u.max()) + 1, 0, w))
    v0 = int(np.clip(np.floor(v.min()) - 1, 0, h))
    v1 = int(np.clip(np.ceil(v.max()) + 1, 0, h))
    return u0, u1, v0, v1


def _box_corners(mn, mx):
    return np.array([[x, y, z]
                     for x in (mn[0], mx[0])
                     for y in (mn[1], mx[1])
                     for z in (mn[2], mx[2])])


class DepthRenderer:
    """Renders one model placed at the world origin. The merged mesh and its
    BVH are built once and shared read-only, so one renderer can serve many
    threads."""

    def __init__(self, model, near=NEAR_CLIP, far=FAR_CLIP):
        if isinstance(model, ModelAsset):
            mesh = merge_parts(model)
        elif isinstance(model, TriangleMesh):
            mesh = model
        else:
            raise TypeError(f"Cannot render {type(model).__name__}")
        if not 0 < near < far:
            raise ValueError(f"Invalid clip range ({near}, {far})")

        self.mesh = mesh
        self.near = near
        self.far = far
        self.accel: RayAccel = build_accel(mesh)
        self._corners = _box_corners(self.accel.node_min[0],
                                     self.accel.node_max[0])

        normals = np.cross(mesh.triangles[:, 1] - mesh.triangles[:, 0],
                           mesh.triangles[:, 2] - mesh.triangles[:, 0])
        norms = np.linalg.norm(normals, axis=1, keepdims=True)
        self._normals = np.divide(normals, norms,
                                  out=np.zeros_like(normals),
                                  where=norms > 0)
        self._samples = {}

    def __repr__(self):
        return f'<DepthRenderer {self.accel!r}>'

    def render(self, camera_pose: Se3Pose, intrinsics: CameraIntrinsics,
               rgb=False, light_dir=None) -> RenderedView:
        start = time.perf_counter()
        u0, u1, v0, v1 = _pixel_window(self._corners, camera_pose,
                                       intrinsics, self.near)
        depth, tri_ids = _render_window(
            np.ascontiguousarray(camera_pose.rotation),
            np.ascontiguousarray(camera_pose.translation),
            float(intrinsics.fx), float(intrinsics.fy),
            float(intrinsics.cx), float(intrinsics.cy),
            int(intrinsics.width), int(intrinsics.height),
            u0, u1, v0, v1, float(self.near), float(self.far),
            *self.accel.arrays)
        mask = depth > 0

        image = None
        if rgb:
            if light_dir is None:
                light_dir = camera_pose.rotation[:, 2]
            image = self.shade(tri_ids, camera_pose, intrinsics, light_dir)

        elapsed = (time.perf_counter() - start) * 1000
        return RenderedView(depth, mask, tri_ids, image, elapsed)

    def shade(self, tri_ids, camera_pose, intrinsics, light_dir):
        """Flat-albedo two-sided Lambertian shading of the hit triangles,
        as an (H, W, 3) image in [0, 1] with a black background."""
        light_dir = np.asarray(light_dir, dtype=np.float64)
        light_dir = light_dir / np.linalg.norm(light_dir)

        hit = tri_ids >= 0
        normals = self._normals[tri_ids[hit]]

        # flip normals toward the viewer
        rays = pixel_rays(intrinsics) @ camera_pose.rotation.T
        facing = np.einsum('ij,ij->i', normals, rays[hit.ravel()])
        normals = np.where(facing[:, None] > 0, -normals, normals)

        intensity = np.clip(normals @ -light_dir, 0.0, 1.0)
        image = np.zeros(tri_ids.shape + (3,))
        image[hit] = intensity[:, None]
        return image

    def surface_samples(self, n, seed=0):
        """Cached area-weighted surface points and their face normals."""
        key = (int(n), int(seed))
        if key not in self._samples:
            points, faces = self.mesh.sample_surface(
                n, np.random.default_rng(seed))
            self._samples[key] = (points, self._normals[faces])
        return self._samples[key]

    def render_depth(self, camera_pose, intrinsics):
        view = self.render(camera_pose, intrinsics)
        return view.depth, view.mask


def pixel_rays(intrinsics: CameraIntrinsics):
    """(H * W, 3) camera-frame pixel-center rays with unit z, row-major."""
    v, u = np.mgrid[0:intrinsics.height, 0:intrinsics.width]
    x = (u.ravel() + 0.5 - intrinsics.cx) / intrinsics.fx
    y = (v.ravel() + 0.5 - intrinsics.cy) / intrinsics.fy
    return np.stack([x, y, np.ones_like(x)], axis=1)


def _renderer(model):
    return model if isinstance(model, DepthRenderer) else DepthRenderer(model)


def render_depth(model, camera_pose: Se3Pose, intrinsics: CameraIntrinsics):
    """Depth (meters, camera-frame z, 0 for no hit) and the boolean mask.
    `model` may be a ModelAsset, a TriangleMesh or a prepared DepthRenderer.
    """
    return _renderer(model).render_depth(camera_pose, intrinsics)


def render_rgb_lambertian(model, camera_pose, intrinsics, light_dir):
    view = _renderer(model).render(camera_pose, intrinsics, rgb=True,
                                   light_dir=light_dir)
    return view.rgb


def depth_to_pointcloud(depth, mask, intrinsics: CameraIntrinsics):
    depth = np.asarray(depth, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if depth.shape != mask.shape:
        raise DimensionMismatchError(
            f"Depth {depth.shape} and mask {mask.shape} differ")
    if depth.shape != intrinsics.shape:
        raise DimensionMismatchError(
            f"Depth {depth.shape} does not match intrinsics "
            f"{intrinsics.shape}")

    v, u = np.nonzero(mask)
    d = depth[v, u]
    x = (u + 0.5 - intrinsics.cx) * d / intrinsics.fx
    y = (v + 0.5 - intrinsics.cy) * d / intrinsics.fy
    return PointCloud(np.stack([x, y, d], axis=1), frame='camera')


def visible_fraction(model, camera_pose: Se3Pose,
                     intrinsics: CameraIntrinsics,
                     n_samples=VISIBILITY_SAMPLES, seed=0):
    """Fraction of the camera-facing surface that is seen in the image.

    Area-weighted surface samples facing the camera are the denominator. A
    sample counts as seen when it projects inside the image, lies within
    the clip range and the ray to it reaches the sample before any other
    surface. Self-occlusion and truncation both lower the value, a convex
    object fully in frame scores 1. Facing is judged from the triangle
    winding, so meshes are expected to be wound outward.
    """
    renderer = _renderer(model)
    points, normals = renderer.surface_samples(n_samples, seed)

    origin = camera_pose.translation
    facing = np.einsum('ij,ij->i', normals, points - origin) < 0
    if not facing.any():
        return 0.0
    points = points[facing]

    pts = camera_pose.inverse().apply(points)
    z = pts[:, 2]
    front = (z > renderer.near) & (z < renderer.far)
    zs = np.where(front, z, 1.0)
    u = intrinsics.fx * pts[:, 0] / zs + intrinsics.cx
    v = intrinsics.fy * pts[:, 1] / zs + intrinsics.cy
    candidate = (front & (u >= 0) & (u < intrinsics.width) &
                 (v >= 0) & (v < intrinsics.height))

    seen = np.zeros(points.shape[0], dtype=bool)
    if candidate.any():
        # unit camera-z directions, so hit distances are camera-frame depths
        directions = (points[candidate] - origin) / z[candidate, None]
        t, k = renderer.accel.intersect(origin, directions, renderer.near,
                                        renderer.far)
        seen[candidate] = (k >= 0) & \
            (t >= z[candidate] * (1.0 - OCCLUSION_RTOL))
    return float(seen.sum() / facing.sum())
