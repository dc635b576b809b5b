import itertools

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from catpose.assets import TriangleMesh
from catpose.errors import (DegenerateExtentError, InvalidConfigError,
                            InvalidKError, RadiusTooLargeError)
from catpose.geometry import PointCloud
from catpose.templates import (TemplatePointCloud, build_template,
                               canonicalize, farthest_point_indices,
                               farthest_point_sample, load_template,
                               poisson_disk_sample, save_template)


def _greedy_reference(points, k, start):
    selected = [start]
    for _ in range(k - 1):
        d = np.min([np.sum((points - points[s]) ** 2, axis=1)
                    for s in selected], axis=0)
        selected.append(int(np.argmax(d)))
    return selected


@pytest.mark.parametrize('n', range(2, 9))
def test_fps_equals_exhaustive_greedy(n):
    rng = np.random.default_rng(n)
    for _ in range(20):
        points = rng.normal(size=(n, 3))
        for start in range(n):
            for k in range(1, n + 1):
                idx = farthest_point_indices(points, k, start=start)
                assert idx.tolist() == _greedy_reference(points, k, start)


def test_fps_collinear_points():
    line = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], dtype=float)
    assert farthest_point_indices(line, 2, start=0).tolist() == [0, 3]


def test_fps_grid_ties_take_lowest_index():
    grid = np.array(list(itertools.product((0.0, 1.0), repeat=3)))
    idx = farthest_point_indices(grid, 8, start=0)
    # the opposite corner first, then the lowest index among equals
    assert idx.tolist()[:2] == [0, 7]
    assert sorted(idx.tolist()) == list(range(8))


def test_fps_prefix_property_and_centroid_start():
    rng = np.random.default_rng(5)
    points = rng.uniform(size=(300, 3))
    small = farthest_point_indices(points, 20)
    large = farthest_point_indices(points, 21)
    assert np.array_equal(small, large[:20])

    centroid_idx = np.argmin(np.linalg.norm(points - points.mean(axis=0),
                                            axis=1))
    assert small[0] == centroid_idx

    cloud = farthest_point_sample(PointCloud(points, frame='canonical'), 20)
    assert cloud.frame == 'canonical'
    assert np.array_equal(cloud.points, points[small])


def test_fps_rejects_bad_arguments():
    points = np.zeros((4, 3))
    with pytest.raises(InvalidKError):
        farthest_point_indices(points, 0)
    with pytest.raises(InvalidKError):
        farthest_point_indices(points, 5)
    with pytest.raises(InvalidKError):
        farthest_point_indices(points, 2, start=9)
    with pytest.raises(InvalidConfigError):
        farthest_point_indices(points, 2, start='random')


@pytest.mark.parametrize('radius', [0.008, 0.015])
def test_poisson_min_distance(box, radius):
    cloud = poisson_disk_sample(box, radius, seed=3)
    assert len(cloud) > 50
    assert pdist(cloud.points).min() >= radius
    # samples lie on the surface of the box
    half = np.array([0.1, 0.05, 0.025])
    ratio = np.abs(cloud.points) / half
    assert np.allclose(ratio.max(axis=1), 1.0, atol=1e-9)


def test_poisson_count_respects_packing_bound():
    square = TriangleMesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]],
                          [[0, 1, 2], [0, 2, 3]])
    radius = 0.05
    cloud = poisson_disk_sample(square, radius, seed=0)
    assert 4 <= len(cloud) <= 1.2 * 4 / (np.pi * radius ** 2)
    assert pdist(cloud.points).min() >= radius


def test_poisson_is_seeded(cube):
    a = poisson_disk_sample(cube, 0.01, seed=1)
    b = poisson_disk_sample(cube, 0.01, seed=1)
    c = poisson_disk_sample(cube, 0.01, seed=2)
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)


def test_poisson_radius_errors(cube):
    with pytest.raises(InvalidConfigError):
        poisson_disk_sample(cube, 0.0)
    with pytest.raises(RadiusTooLargeError):
        poisson_disk_sample(cube, 1.0)


def test_canonicalize(wedge):
    result = canonicalize(wedge)
    bounds = result.canonical_mesh.bounds
    assert np.allclose(bounds.center, 0, atol=1e-12)
    assert bounds.diagonal == pytest.approx(1.0)
    restored = result.applied_scale * \
        result.applied_transform.apply(wedge.vertices)
    assert np.allclose(restored, result.canonical_mesh.vertices)


def test_canonicalize_offset_cube_is_idempotent(cube):
    shifted = TriangleMesh(cube.vertices + 1.0, cube.faces)
    result = canonicalize(shifted)
    assert np.allclose(result.applied_transform.translation, [-1, -1, -1])
    assert result.applied_scale == pytest.approx(1 / (0.1 * np.sqrt(3)))

    again = canonicalize(result.canonical_mesh)
    assert np.allclose(again.applied_transform.translation, 0, atol=1e-9)
    assert again.applied_scale == pytest.approx(1.0, abs=1e-9)


def test_canonicalize_rejects_flat_mesh():
    flat = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    with pytest.raises(DegenerateExtentError):
        canonicalize(flat)


def test_build_template(model):
    template = build_template(model, k=64, poisson_radius=0.05, seed=0)
    assert template.k == 64
    assert template.category == 'Stapler'
    assert template.source_instance_id == 'wedge_0000'
    assert pdist(template.points).min() >= 0.05
    # canonical frame: inside the unit-diagonal box around the origin
    assert np.all(np.abs(template.points) <= 0.5)

    again = build_template(model, k=64, poisson_radius=0.05, seed=0)
    assert np.array_equal(template.points, again.points)

    with pytest.raises(InvalidKError):
        build_template(model, k=100_000, poisson_radius=0.05)


def test_template_save_load(tmp_path):
    points = np.random.default_rng(0).normal(size=(32, 3))
    template = TemplatePointCloud('Mug', points, 'mug_0003', 0.02, 7)
    path = save_template(template, tmp_path / 'templates' / 'Mug')
    assert path.suffix == '.ply'
    assert path.with_suffix('.json').exists()

    loaded = load_template(path)
    assert np.array_equal(loaded.points, template.points)
    assert loaded.sidecar() == template.sidecar()
