import numpy as np
import pytest
from scipy.spatial import KDTree

from catpose.errors import (DegenerateViewError, InvalidConfigError,
                            InvalidCountError)
from catpose.views import (CameraIntrinsics, ViewSamplingConfig,
                           apply_inplane_roll, fibonacci_sphere,
                           look_at_pose, sample_viewpoints)


@pytest.mark.parametrize('n', [50, 300, 1000])
def test_fibonacci_spacing_is_uniform(n):
    points = fibonacci_sphere(n)
    assert points.shape == (n, 3)
    assert np.allclose(np.linalg.norm(points, axis=1), 1, atol=1e-12)

    d, _ = KDTree(points).query(points, k=2)
    angles = 2 * np.arcsin(np.clip(d[:, 1] / 2, 0, 1))
    assert angles.std() / angles.mean() < 0.25


def test_fibonacci_single_point_and_errors():
    assert np.allclose(fibonacci_sphere(1), [[1.0, 0.0, 0.0]])
    with pytest.raises(InvalidCountError):
        fibonacci_sphere(0)


def test_hemisphere_views_are_a_subset():
    full = sample_viewpoints(ViewSamplingConfig(n_views=300))
    half = sample_viewpoints(ViewSamplingConfig(n_views=300,
                                                hemisphere_only=True))
    assert 0 < len(half) < len(full)
    by_index = {v.lattice_index: v for v in full}
    for v in half:
        ref = by_index[v.lattice_index]
        assert v.camera_pose.allclose(ref.camera_pose, atol=0)
        assert v.camera_pose.translation[2] >= 0


def test_views_look_at_origin():
    config = ViewSamplingConfig(n_views=40, radius=0.6, rng_seed=3)
    for camera_pose, instance_pose in sample_viewpoints(config):
        assert camera_pose.is_valid()
        assert np.linalg.norm(camera_pose.translation) == pytest.approx(0.6)
        # the origin lies on the optical axis
        origin_in_camera = instance_pose.apply([0, 0, 0])
        assert np.allclose(origin_in_camera[:2], 0, atol=1e-12)
        assert origin_in_camera[2] == pytest.approx(0.6)
        err = (camera_pose @ instance_pose).matrix - np.eye(4)
        assert np.abs(err).max() < 1e-9


def test_roll_is_seeded_and_keeps_the_viewpoint():
    a = sample_viewpoints(ViewSamplingConfig(n_views=20, rng_seed=7))
    b = sample_viewpoints(ViewSamplingConfig(n_views=20, rng_seed=7))
    c = sample_viewpoints(ViewSamplingConfig(n_views=20, rng_seed=8))
    assert [v.roll for v in a] == [v.roll for v in b]
    assert [v.roll for v in a] != [v.roll for v in c]
    for va, vc in zip(a, c):
        assert np.allclose(va.camera_pose.translation,
                           vc.camera_pose.translation)
        assert np.allclose(va.camera_pose.rotation[:, 2],
                           vc.camera_pose.rotation[:, 2])


def test_fixed_roll_range():
    views = sample_viewpoints(ViewSamplingConfig(n_views=5,
                                                 roll_range=(0.5, 0.5)))
    assert all(v.roll == 0.5 for v in views)


def test_look_at_falls_back_on_parallel_up():
    pose = look_at_pose((0, 0.6, 0))
    assert pose.is_valid()
    assert np.allclose(pose.rotation[:, 2], [0, -1, 0])
    with pytest.raises(DegenerateViewError):
        look_at_pose((0, 0, 0))


def test_inplane_roll_rotates_about_the_optical_axis():
    pose = look_at_pose((0.3, 0.2, 0.5))
    rolled = apply_inplane_roll(pose, 0.7)
    assert np.allclose(rolled.rotation[:, 2], pose.rotation[:, 2])
    assert np.allclose(rolled.translation, pose.translation)
    assert rolled.is_valid()


def test_config_validation_and_dict():
    config = ViewSamplingConfig(n_views=10, radius=0.5, rng_seed=2,
                                hemisphere_only=True)
    assert ViewSamplingConfig.from_dict(config.to_dict()) == config
    with pytest.raises(InvalidConfigError):
        ViewSamplingConfig(n_views=0)
    with pytest.raises(InvalidConfigError):
        ViewSamplingConfig(radius=0)
    with pytest.raises(InvalidConfigError):
        ViewSamplingConfig(roll_range=(1.0, -1.0))


def test_intrinsics():
    k = CameraIntrinsics(615, 615, 320, 240, 640, 480)
    assert k.shape == (480, 640)
    assert CameraIntrinsics.from_dict(k.to_dict()) == k
    assert k.scaled(0.5).width == 320
    with pytest.raises(InvalidConfigError):
        CameraIntrinsics(615, 615, 700, 240, 640, 480)
