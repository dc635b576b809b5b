"""
Axis-aligned bounding volume hierarchy over a triangle mesh.

The tree is built with median splits along the longest centroid axis and
flattened to arrays, so numba kernels can traverse it without python
objects. Triangles are intersected on both faces (Moller-Trumbore). On
equal hit distances the lowest triangle index wins, which is the result of
a front-to-back scan over the triangle list with a strict comparison.
"""
from dataclasses import dataclass

import numba
import numpy as np

from catpose.assets import TriangleMesh

LEAF_SIZE = 4
DET_EPS = 1e-14
MAX_STACK = 128


@dataclass(frozen=True, eq=False)
class RayAccel:
    """Flattened BVH. Node `i` is a leaf when `node_left[i] < 0`, its
    triangles are `tri_order[node_start[i]:node_start[i] + node_count[i]]`.
    """
    node_min: np.ndarray
    node_max: np.ndarray
    node_left: np.ndarray
    node_right: np.ndarray
    node_start: np.ndarray
    node_count: np.ndarray
    tri_order: np.ndarray
    v0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray

    def __repr__(self):
        return (f'<RayAccel nodes={self.node_min.shape[0]} '
                f'triangles={self.v0.shape[0]}>')

    @property
    def n_triangles(self):
        return self.v0.shape[0]

    @property
    def arrays(self):
        return (self.node_min, self.node_max, self.node_left,
                self.node_right, self.node_start, self.node_count,
                self.tri_order, self.v0, self.e1, self.e2)

    def intersect(self, origins, directions, t_min=0.0, t_max=np.inf):
        """Nearest hits for (N, 3) rays. Returns (t, triangle index), with
        `inf` and -1 where a ray misses."""
        origins, directions = _as_rays(origins, directions)
        return _intersect_rays(origins, directions, float(t_min),
                               float(t_max), *self.arrays)

    def count_visits(self, origins, directions, t_min=0.0, t_max=np.inf):
        """BVH nodes visited per ray."""
        origins, directions = _as_rays(origins, directions)
        return _visit_counts(origins, directions, float(t_min),
                             float(t_max), *self.arrays)


def _as_rays(origins, directions):
    directions = np.ascontiguousarray(np.atleast_2d(directions),
                                      dtype=np.float64)
    origins = np.ascontiguousarray(
        np.broadcast_to(np.asarray(origins, dtype=np.float64),
                        directions.shape))
    return origins, directions


def build_accel(mesh: TriangleMesh) -> RayAccel:
    tris = mesh.triangles
    n = tris.shape[0]
    centroids = tris.mean(axis=1)
    tri_min = tris.min(axis=1)
    tri_max = tris.max(axis=1)

    scene_extent = float(np.max(tri_max.max(axis=0) - tri_min.min(axis=0)))
    pad = 1e-9 * max(scene_extent, 1.0)

    node_min, node_max = [], []
    node_left, node_right = [], []
    node_start, node_count = [], []
    tri_order = []

    # preorder construction with an explicit stack of (indices, parent, side)
    stack = [(np.arange(n), -1, 0)]
    while stack:
        idx, parent, side = stack.pop()
        node = len(node_min)
        if parent >= 0:
            (node_left if side == 0 else node_right)[parent] = node

        node_min.append(tri_min[idx].min(axis=0) - pad)
        node_max.append(tri_max[idx].max(axis=0) + pad)
        node_left.append(-1)
        node_right.append(-1)

        if idx.size <= LEAF_SIZE:
            node_start.append(len(tri_order))
            node_count.append(idx.size)
            tri_order.extend(idx.tolist())
            continue

        node_start.append(0)
        node_count.append(0)

        c = centroids[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        order = idx[np.argsort(c[:, axis], kind='stable')]
        mid = order.size // 2
        # right pushed first so the left child is built (and numbered) first
        stack.append((order[mid:], node, 1))
        stack.append((order[:mid], node, 0))

    v0 = np.ascontiguousarray(tris[:, 0])
    return RayAccel(node_min=np.array(node_min),
                    node_max=np.array(node_max),
                    node_left=np.array(node_left, dtype=np.int64),
                    node_right=np.array(node_right, dtype=np.int64),
                    node_start=np.array(node_start, dtype=np.int64),
                    node_count=np.array(node_count, dtype=np.int64),
                    tri_order=np.array(tri_order, dtype=np.int64),
                    v0=v0,
                    e1=np.ascontiguousarray(tris[:, 1] - tris[:, 0]),
                    e2=np.ascontiguousarray(tris[:, 2] - tris[:, 0]))


@numba.njit(nogil=True, cache=True)
def _triangle_hit(ox, oy, oz, dx, dy, dz, v0, e1, e2, k):
    """Distance to triangle `k` along the ray, `inf` on a miss."""
    e1x, e1y, e1z = e1[k, 0], e1[k, 1], e1[k, 2]
    e2x, e2y, e2z = e2[k, 0], e2[k, 1], e2[k, 2]

    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < DET_EPS:
        return np.inf
    inv = 1.0 / det

    tx = ox - v0[k, 0]
    ty = oy - v0[k, 1]
    tz = oz - v0[k, 2]
    u = (tx * px + ty * py + tz * pz) * inv
    if u < 0.0 or u > 1.0:
        return np.inf

    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return np.inf

    return (e2x * qx + e2y * qy + e2z * qz) * inv


@numba.njit(nogil=True, cache=True)
def _slab_entry(ox, oy, oz, dx, dy, dz, bmin, bmax, t_min, t_max):
    """Entry distance of the ray into the box, `inf` on a miss."""
    lo = t_min
    hi = t_max
    o = (ox, oy, oz)
    d = (dx, dy, dz)
    for a in range(3):
        if d[a] == 0.0:
            if o[a] < bmin[a] or o[a] > bmax[a]:
                return np.inf
        else:
            t0 = (bmin[a] - o[a]) / d[a]
            t1 = (bmax[a] - o[a]) / d[a]
            if t0 > t1:
                t0, t1 = t1, t0
            if t0 > lo:
                lo = t0
            if t1 < hi:
                hi = t1
            if lo > hi:
                return np.inf
    return lo


@numba.njit(nogil=True, cache=True)
def _traverse(ox, oy, oz, dx, dy, dz, t_min, t_max,
              node_min, node_max, node_left, node_right,
              node_start, node_count, tri_order, v0, e1, e2):
    """Nearest hit and the number of nodes visited. Only boxes the ray
    enters are pushed, and a popped node whose entry lies beyond the
    current best hit is dropped."""
    best_t = np.inf
    best_k = -1
    visits = 0

    stack = np.empty(MAX_STACK, dtype=np.int64)
    entry = np.empty(MAX_STACK)
    sp = 0
    t_root = _slab_entry(ox, oy, oz, dx, dy, dz, node_min[0], node_max[0],
                         t_min, t_max)
    if t_root < np.inf:
        stack[0] = 0
        entry[0] = t_root
        sp = 1

    while sp > 0:
        sp -= 1
        node = stack[sp]
        # ties are kept for the lowest-index rule
        if entry[sp] > best_t:
            continue
        visits += 1
        if node_left[node] < 0:
            start = node_start[node]
            for j in range(start, start + node_count[node]):
                k = tri_order[j]
                t = _triangle_hit(ox, oy, oz, dx, dy, dz, v0, e1, e2, k)
                if t < t_min or t > t_max:
                    continue
                if t < best_t or (t == best_t and k < best_k):
                    best_t = t
                    best_k = k
            continue

        left = node_left[node]
        right = node_right[node]
        tl = _slab_entry(ox, oy, oz, dx, dy, dz, node_min[left],
                         node_max[left], t_min, t_max)
        tr = _slab_entry(ox, oy, oz, dx, dy, dz, node_min[right],
                         node_max[right], t_min, t_max)
        hit_l = tl < np.inf and tl <= best_t
        hit_r = tr < np.inf and tr <= best_t
        if hit_l and hit_r:
            # nearer child on top
            if tl <= tr:
                stack[sp] = right
                entry[sp] = tr
                stack[sp + 1] = left
                entry[sp + 1] = tl
            else:
                stack[sp] = left
                entry[sp] = tl
                stack[sp + 1] = right
                entry[sp + 1] = tr
            sp += 2
        elif hit_l:
            stack[sp] = left
            entry[sp] = tl
            sp += 1
        elif hit_r:
            stack[sp] = right
            entry[sp] = tr
            sp += 1

    return best_t, best_k, visits


@numba.njit(nogil=True, cache=True)
def closest_hit(ox, oy, oz, dx, dy, dz, t_min, t_max,
                node_min, node_max, node_left, node_right,
                node_start, node_count, tri_order, v0, e1, e2):
    t, k, _ = _traverse(ox, oy, oz, dx, dy, dz, t_min, t_max,
                        node_min, node_max, node_left, node_right,
                        node_start, node_count, tri_order, v0, e1, e2)
    return t, k


@numba.njit(nogil=True, cache=True)
def _visit_counts(origins, directions, t_min, t_max,
                  node_min, node_max, node_left, node_right,
                  node_start, node_count, tri_order, v0, e1, e2):
    n = origins.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    for i in range(n):
        t, k, visits = _traverse(
            origins[i, 0], origins[i, 1], origins[i, 2],
            directions[i, 0], directions[i, 1], directions[i, 2],
            t_min, t_max, node_min, node_max, node_left, node_right,
            node_start, node_count, tri_order, v0, e1, e2)
        counts[i] = visits
    return counts


@numba.njit(nogil=True, cache=True)
def _intersect_rays(origins, directions, t_min, t_max,
                    node_min, node_max, node_left, node_right,
                    node_start, node_count, tri_order, v0, e1, e2):
    n = origins.shape[0]
    ts = np.full(n, np.inf)
    ks = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        t, k = closest_hit(origins[i, 0], origins[i, 1], origins[i, 2],
                           directions[i, 0], directions[i, 1],
                           directions[i, 2], t_min, t_max,
                           node_min, node_max, node_left, node_right,
                           node_start, node_count, tri_order, v0, e1, e2)
        ts[i] = t
        ks[i] = k
    return ts, ks


@numba.njit(nogil=True, cache=True)
def _brute_force_rays(origins, directions, t_min, t_max, v0, e1, e2):
    n = origins.shape[0]
    ts = np.full(n, np.inf)
    ks = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        for k in range(v0.shape[0]):
            t = _triangle_hit(origins[i, 0], origins[i, 1], origins[i, 2],
                              directions[i, 0], directions[i, 1],
                              directions[i, 2], v0, e1, e2, k)
            if t < t_min or t > t_max:
                continue
            if t < ts[i]:
                ts[i] = t
                ks[i] = k
    return ts, ks


def intersect_brute_force(mesh: TriangleMesh, origins, directions,
                          t_min=0.0, t_max=np.inf):
    """Nearest hits by scanning every triangle, for validating the BVH."""
    origins, directions = _as_rays(origins, directions)
    tris = mesh.triangles
    return _brute_force_rays(origins, directions, float(t_min),
                             float(t_max),
                             np.ascontiguousarray(tris[:, 0]),
                             np.ascontiguousarray(tris[:, 1] - tris[:, 0]),
                             np.ascontiguousarray(tris[:, 2] - tris[:, 0]))
