import itertools

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from catpose.assets import ModelAsset, global_bbox
from catpose.errors import (DegenerateConfigurationError, InvalidConfigError,
                            NoConvergenceError, TooFewPointsError,
                            UnknownEstimatorError)
from catpose.estimation import (AXIS_HYPOTHESES, BaselineEstimator,
                                EstimatorConfig, PoseEstimate, estimate_pose,
                                get_estimator, icp_refine,
                                orientation_hypotheses, umeyama)
from catpose.geometry import PointCloud, Se3Pose, random_pose
from catpose.metrics import rotation_error_deg
from catpose.render import depth_to_pointcloud, render_depth
from catpose.templates import build_template
from catpose.views import CameraIntrinsics, look_at_pose

from conftest import l_shape_mesh, wedge_mesh

DIAMETER = 0.25
# bounding-box diagonal of the default wedge
WEDGE_DIAMETER = 0.14


@pytest.fixture(scope='module')
def template():
    model = ModelAsset.from_mesh(l_shape_mesh(), 'Pliers', 'l_0000')
    return build_template(model, k=256, poisson_radius=0.03, seed=0)


def _observe(template, pose):
    """The template at metric size, seen from the camera at `pose`."""
    return PointCloud(pose.apply(template.points * DIAMETER), 'camera')


def _grid():
    axis = (-1.0, 0.0, 1.0)
    return np.array(list(itertools.product(axis, axis, axis)))


def test_umeyama_recovers_similarity():
    rng = np.random.default_rng(0)
    src = rng.normal(size=(40, 3))
    rotation = Rotation.from_rotvec([0.1, -0.3, 0.2]).as_matrix()
    dst = 0.5 * src @ rotation.T + [1, 2, 3]
    scale, r, t = umeyama(src, dst, with_scale=True)
    assert scale == pytest.approx(0.5)
    assert np.allclose(r, rotation, atol=1e-9)
    assert np.allclose(t, [1, 2, 3])


def test_weighted_umeyama():
    rng = np.random.default_rng(2)
    src = rng.normal(size=(30, 3))
    rotation = Rotation.from_rotvec([-0.5, 0.2, 0.9]).as_matrix()
    dst = 2.0 * src @ rotation.T + [0.1, 0.0, -0.4]
    dst[:5] += rng.normal(scale=0.3, size=(5, 3))

    uniform = umeyama(src, dst, True, np.full(30, 1 / 30))
    plain = umeyama(src, dst, True)
    assert uniform[0] == pytest.approx(plain[0])
    assert np.allclose(uniform[1], plain[1])
    assert np.allclose(uniform[2], plain[2])

    # a weight of two is the same as a duplicated correspondence
    weights = np.ones(30)
    weights[:10] = 2.0
    weighted = umeyama(src, dst, True, weights / weights.sum())
    doubled = umeyama(np.concatenate([src, src[:10]]),
                      np.concatenate([dst, dst[:10]]), True)
    assert weighted[0] == pytest.approx(doubled[0])
    assert np.allclose(weighted[1], doubled[1])
    assert np.allclose(weighted[2], doubled[2])

    # the corrupted points carry no weight
    clean = np.ones(30)
    clean[:5] = 0.0
    scale, r, t = umeyama(src, dst, True, clean / clean.sum())
    assert scale == pytest.approx(2.0)
    assert np.allclose(r, rotation, atol=1e-9)


def test_icp_identity():
    src = _grid()
    pose, fitness = icp_refine(src, src)
    assert pose.allclose(Se3Pose.identity(), atol=1e-12)
    assert fitness == pytest.approx(0.0, abs=1e-12)


def test_icp_recovers_small_rotation():
    src = _grid()
    rotation = Rotation.from_rotvec(np.deg2rad(5) *
                                    np.array([1, 2, 2]) / 3).as_matrix()
    target = src @ rotation.T
    pose, result = icp_refine(src, target, return_result=True)
    assert np.abs(pose.rotation - rotation).max() < 1e-6
    assert result.fitness < 1e-9
    assert np.all(np.diff(result.history) <= 0)


def test_icp_degenerate_input():
    line = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
    with pytest.raises(DegenerateConfigurationError):
        icp_refine(line, _grid())
    with pytest.raises(TooFewPointsError):
        icp_refine(line[:2], _grid())


def test_estimate_recovers_known_pose(template):
    truth = Se3Pose.from_rotvec([0.4, -1.1, 0.7], (0.05, -0.02, 0.6))
    estimate = estimate_pose(_observe(template, truth), template)

    assert not estimate.degraded
    assert rotation_error_deg(estimate.pose, truth) < np.rad2deg(1e-3)
    assert np.linalg.norm(estimate.pose.translation -
                          truth.translation) < 1e-4
    assert np.allclose(estimate.scale.as_array(),
                       template.extents * DIAMETER, rtol=1e-6)
    assert estimate.fitness < 1e-6


def test_estimate_is_equivariant(template):
    rng = np.random.default_rng(11)
    truth = random_pose(rng, max_translation=0.1).translated((0, 0, 0.6))
    observed = _observe(template, truth)
    base = estimate_pose(observed, template)

    for _ in range(3):
        q = random_pose(rng, max_translation=0.5)
        moved = estimate_pose(observed.transformed(q), template)
        expected = q @ base.pose
        assert rotation_error_deg(moved.pose, expected) < 1e-3
        assert np.allclose(moved.pose.translation, expected.translation,
                           atol=1e-5)


def test_estimate_is_deterministic_across_workers(template):
    truth = Se3Pose.from_rotvec([2.0, 0.3, -0.4], (0.0, 0.1, 0.5))
    observed = _observe(template, truth)
    serial = BaselineEstimator(EstimatorConfig(workers=1))(observed,
                                                           template)
    again = BaselineEstimator(EstimatorConfig(workers=1))(observed, template)
    threaded = BaselineEstimator(EstimatorConfig(workers=4))(observed,
                                                             template)
    assert np.array_equal(serial.pose.matrix, again.pose.matrix)
    assert np.array_equal(serial.pose.matrix, threaded.pose.matrix)
    assert serial.hypothesis_index == threaded.hypothesis_index


def test_estimate_too_few_points(template):
    observed = PointCloud(np.random.default_rng(0).normal(size=(10, 3)))
    with pytest.raises(TooFewPointsError):
        estimate_pose(observed, template)


def test_degraded_estimates(template):
    noise = PointCloud(np.random.default_rng(1).normal(size=(200, 3)))
    config = EstimatorConfig(fitness_floor=1e-9)
    estimate = estimate_pose(noise, template, config)
    assert estimate.degraded

    strict = EstimatorConfig(fitness_floor=1e-9, raise_on_degraded=True)
    with pytest.raises(NoConvergenceError):
        estimate_pose(noise, template, strict)


def test_estimate_dict(template):
    truth = Se3Pose.from_rotvec([0.1, 0.2, 0.3], (0, 0, 0.5))
    estimate = estimate_pose(_observe(template, truth), template)
    d = estimate.to_dict()
    again = PoseEstimate.from_dict(d)
    assert again.to_dict() == d
    assert again.estimator == 'baseline'
    assert d['free_space_violation_m'] == pytest.approx(estimate.violation,
                                                        rel=1e-3, abs=1e-12)


def test_estimator_registry_and_config():
    assert isinstance(get_estimator('baseline'), BaselineEstimator)
    with pytest.raises(UnknownEstimatorError):
        get_estimator('neural')
    with pytest.raises(InvalidConfigError):
        EstimatorConfig.from_dict({'iterations': 3})
    with pytest.raises(InvalidConfigError):
        EstimatorConfig(min_points=0)
    assert EstimatorConfig.from_dict({'seed': 3}).seed == 3


WEDGE_EYES = [(0.3, -0.25, 0.3), (-0.35, 0.2, 0.25), (0.1, 0.4, -0.3)]


@pytest.fixture(scope='module')
def wedge_views():
    """The wedge and its template, with the back-projected depth of three
    generic views and the true object pose in each camera."""
    model = ModelAsset.from_mesh(wedge_mesh(), 'Stapler', 'wedge_0000')
    template = build_template(model, k=512, poisson_radius=0.025, seed=0)
    center = global_bbox(model).center
    intrinsics = CameraIntrinsics(fx=400.0, fy=400.0, cx=160.0, cy=120.0,
                                  width=320, height=240)
    views = []
    for eye in WEDGE_EYES:
        camera_pose = look_at_pose(center + np.asarray(eye), target=center)
        depth, mask = render_depth(model, camera_pose, intrinsics)
        cloud = depth_to_pointcloud(depth, mask, intrinsics)
        truth = camera_pose.inverse() @ Se3Pose.from_translation(center)
        views.append((cloud, truth))
    return template, views


@pytest.mark.parametrize('view', range(len(WEDGE_EYES)))
def test_estimate_from_a_single_depth_view(wedge_views, view):
    # only about half of the surface is in the cloud
    template, views = wedge_views
    cloud, truth = views[view]
    estimate = estimate_pose(cloud, template)

    assert rotation_error_deg(estimate.pose, truth) <= 10.0
    assert np.linalg.norm(estimate.pose.translation -
                          truth.translation) <= 0.02 * WEDGE_DIAMETER
    assert np.allclose(estimate.scale.as_array(), [0.12, 0.06, 0.04],
                       rtol=0.1)
    assert not estimate.degraded


def test_partial_view_estimate_moves_with_the_viewpoint(wedge_views):
    template, views = wedge_views
    cloud, _ = views[0]
    base = estimate_pose(cloud, template)

    rng = np.random.default_rng(4)
    for _ in range(2):
        q = random_pose(rng, max_translation=0.5)
        moved = estimate_pose(cloud.transformed(q), template,
                              viewpoint=q.translation)
        expected = q @ base.pose
        assert moved.hypothesis_index == base.hypothesis_index
        assert rotation_error_deg(moved.pose, expected) < 1e-2
        assert np.allclose(moved.pose.translation, expected.translation,
                           atol=1e-4)


def test_orientation_hypotheses(template):
    rng = np.random.default_rng(6)
    observed = random_pose(rng).apply(template.points)
    config = EstimatorConfig(hypothesis_count=5)
    hypotheses = orientation_hypotheses(observed, template.points, config)
    assert len(hypotheses) == len(AXIS_HYPOTHESES) + 5

    # sign flips first, then the whole octahedral group without repeats
    assert all(np.allclose(g, np.diag(np.diag(g)))
               for g in AXIS_HYPOTHESES[:4])
    octahedral = Rotation.create_group('O').as_matrix()
    assert all(any(np.allclose(g, h, atol=1e-9) for h in AXIS_HYPOTHESES)
               for g in octahedral)
    flat = np.array(AXIS_HYPOTHESES).reshape(len(AXIS_HYPOTHESES), 9)
    assert len(np.unique(flat.round(9), axis=0)) == len(AXIS_HYPOTHESES)
    for r in hypotheses:
        assert np.allclose(r @ r.T, np.eye(3), atol=1e-9)
        assert np.linalg.det(r) == pytest.approx(1.0)
