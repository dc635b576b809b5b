import json

import numpy as np
import pytest

from catpose.assets import Scale3
from catpose.errors import (InvalidConfigError, MalformedFileError,
                            MissingGraspError, MissingPlaceTargetError,
                            UnknownPhaseError, WorkspaceViolationError)
from catpose.geometry import Se3Pose, random_pose
from catpose.grasping import (PHASES, FrameChain, GraspLibrary, GraspSpec,
                              PlannerConfig, Waypoint, WaypointPlan,
                              camera_in_base_from_hand_eye, denormalize_grasp,
                              plan_sequence, plan_task, resolve_grasp,
                              write_plans)

# gripper z pointing down
TOP_DOWN = Se3Pose.about_axis((1, 0, 0), np.pi).rotation


def _spec(translation=(0, 0, 0.5), task='*', category='Mug'):
    return GraspSpec(category, task, Se3Pose(TOP_DOWN, translation))


def test_denormalize_examples():
    origin = _spec((0, 0, 0))
    assert np.allclose(denormalize_grasp(origin, Scale3(0.3, 0.2, 0.1))
                       .translation, 0)

    spec = _spec((0, 0, 0.5))
    g = denormalize_grasp(spec, Scale3(0.1, 0.1, 0.24))
    assert g.translation[2] == pytest.approx(0.12)
    assert np.array_equal(g.rotation, spec.grasp_pose.rotation)

    unit = denormalize_grasp(_spec((0.1, -0.2, 0.3)), Scale3(1, 1, 1))
    assert np.allclose(unit.matrix, _spec((0.1, -0.2, 0.3)).grasp_pose.matrix)

    authored = GraspSpec('Mug', '*', Se3Pose(TOP_DOWN, (0, 0, 0.05)),
                         canonical_extents=(0.2, 0.2, 0.1))
    g = denormalize_grasp(authored, Scale3(0.2, 0.2, 0.3))
    assert g.translation[2] == pytest.approx(0.15)


def test_resolve_identity_chain():
    spec = _spec((0.1, 0.0, 0.2))
    scale = Scale3(0.5, 0.5, 0.5)
    chain = FrameChain(Se3Pose.identity(), scale, Se3Pose.identity())
    g = resolve_grasp(spec, chain)
    assert g.allclose(denormalize_grasp(spec, scale), atol=1e-15)


def test_resolve_matches_matrix_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        spec = GraspSpec('Mug', '*', random_pose(rng, 0.5))
        scale = Scale3(*rng.uniform(0.05, 0.4, 3))
        chain = FrameChain(random_pose(rng, 1.0), scale,
                           random_pose(rng, 1.0))

        g_obj = np.eye(4)
        g_obj[:3, :3] = spec.grasp_pose.rotation
        g_obj[:3, 3] = spec.grasp_pose.translation * scale.as_array()
        expected = (chain.camera_in_base.matrix @
                    chain.object_in_camera.matrix @ g_obj)

        g = resolve_grasp(spec, chain, reach=100.0)
        assert np.abs(g.matrix - expected).max() < 1e-12

        g_obj_pose = Se3Pose.from_matrix(g_obj)
        left = (chain.camera_in_base @ chain.object_in_camera) @ g_obj_pose
        right = chain.camera_in_base @ (chain.object_in_camera @ g_obj_pose)
        assert np.abs(left.matrix - right.matrix).max() < 1e-9


def test_resolve_workspace_violation():
    chain = FrameChain(Se3Pose.identity(), Scale3(0.1, 0.1, 0.1),
                       Se3Pose.from_translation((3.0, 0, 0)))
    with pytest.raises(WorkspaceViolationError):
        resolve_grasp(_spec(), chain, reach=0.9)


def test_hand_eye_extrinsics():
    base_T_ee = Se3Pose.from_rotvec((0, 0.3, 0), (0.3, 0, 0.5))
    ee_T_camera = Se3Pose.from_translation((0, 0.05, 0.02))
    camera = camera_in_base_from_hand_eye(base_T_ee, ee_T_camera)
    assert np.allclose(camera.matrix, base_T_ee.matrix @ ee_T_camera.matrix)


def test_frame_chain_rejects_invalid_pose():
    with pytest.raises(InvalidConfigError):
        FrameChain(Se3Pose(2 * np.eye(3), (0, 0, 0)), Scale3(1, 1, 1),
                   Se3Pose.identity())


GRASP = Se3Pose(TOP_DOWN, (0.4, 0.1, 0.1))
PLACE = Se3Pose.from_translation((0.2, -0.3, 0.05))


def test_pick_place_plan():
    plan = plan_task('pick_place', GRASP, PLACE)
    assert plan.phases == list(PHASES)

    pregrasp = plan.pose('pregrasp')
    assert np.allclose(pregrasp.translation - GRASP.translation,
                       [0, 0, 0.10])
    assert np.allclose(pregrasp.rotation, GRASP.rotation)
    assert np.allclose(plan.pose('lift').translation,
                       GRASP.translation + [0, 0, 0.08])

    release = plan.pose('release')
    assert np.allclose(release.translation, PLACE.translation)
    assert np.allclose(release.rotation, GRASP.rotation)
    assert np.allclose(plan.pose('transport').translation,
                       PLACE.translation + [0, 0, 0.08])
    assert np.allclose(plan.pose('retreat').translation,
                       PLACE.translation + [0, 0, 0.10])


def test_place_keeps_the_grip_offset():
    center = GRASP.translation - [0, 0, 0.07]
    plan = plan_task('tidy', GRASP, PLACE, object_center=center)
    assert np.allclose(plan.pose('release').translation,
                       PLACE.translation + [0, 0, 0.07])


def test_handover_ignores_place_target():
    config = PlannerConfig()
    plan = plan_task('handover', GRASP, PLACE, config)
    assert plan.phases == ['pregrasp', 'grasp', 'lift', 'transport']
    assert plan.waypoints[-1].pose.allclose(config.handover_pose, atol=0)


def test_stack_release_height():
    target_scale = Scale3(0.08, 0.08, 0.10)
    grasped_scale = Scale3(0.06, 0.06, 0.06)
    config = PlannerConfig(stack_clearance=0.005)
    plan = plan_task('stack', GRASP, PLACE, config,
                     grasped_scale=grasped_scale, target_scale=target_scale)
    # target top at 0.05 + 0.05, plus half the grasped height and clearance
    assert plan.pose('release').translation[2] == \
        pytest.approx(0.05 + 0.05 + 0.03 + 0.005)

    with pytest.raises(MissingPlaceTargetError):
        plan_task('stack', GRASP, PLACE, config)


def test_missing_place_target():
    for task in ('pick_place', 'stack', 'tidy'):
        with pytest.raises(MissingPlaceTargetError):
            plan_task(task, GRASP)
    with pytest.raises(InvalidConfigError):
        plan_task('juggle', GRASP, PLACE)


def test_plan_workspace_violation():
    far = Se3Pose.from_translation((0.85, 0.0, 0.3))
    with pytest.raises(WorkspaceViolationError):
        plan_task('pick_place', GRASP, far)


def test_plans_are_equivariant():
    rng = np.random.default_rng(4)
    config = PlannerConfig()
    steps = [('pick_place', {}),
             ('handover', {}),
             ('stack', {'grasped_scale': Scale3(0.05, 0.05, 0.05),
                        'target_scale': Scale3(0.1, 0.1, 0.1)})]
    center = GRASP.translation - [0.0, 0.0, 0.03]
    for _ in range(20):
        q = random_pose(rng, 0.5)
        for task, extra in steps:
            base = plan_task(task, GRASP, PLACE, config,
                             object_center=center, **extra)
            moved = plan_task(task, q @ GRASP, q @ PLACE, config.moved(q),
                              object_center=q.apply(center),
                              origin=q.translation, **extra)
            assert moved.phases == base.phases
            for a, b in zip(base.waypoints, moved.waypoints):
                assert np.abs((q @ a.pose).matrix -
                              b.pose.matrix).max() < 1e-12


def test_waypoint_order_is_validated():
    plan = WaypointPlan('pick_place', [Waypoint('grasp', GRASP),
                                       Waypoint('pregrasp', GRASP)])
    with pytest.raises(ValueError):
        plan.validate()


def test_plan_sequence_and_output(tmp_path):
    steps = [{'task': 'pick_place', 'grasp': GRASP, 'place_target': PLACE},
             {'task': 'handover', 'grasp': GRASP}]
    plans = plan_sequence(steps)
    assert [p.task for p in plans] == ['pick_place', 'handover']

    path = write_plans(plans, tmp_path / 'plan.json')
    d = json.loads(path.read_text())
    assert [w['phase'] for w in d['plans'][0]['waypoints']] == list(PHASES)
    assert set(d['plans'][1]['waypoints'][0]['pose']) == {'quat_wxyz',
                                                          'translation'}


def test_grasp_library(tmp_path):
    entries = {'grasps': [_spec(task='*').to_dict(),
                          _spec((0, 0, 0.3), task='handover').to_dict()]}
    path = tmp_path / 'grasps.json'
    path.write_text(json.dumps(entries))
    library = GraspLibrary.from_file(path)
    assert len(library) == 2
    assert library.get('Mug', 'stack').task == '*'
    assert library.get('Mug', 'handover').grasp_pose.translation[2] == 0.3
    with pytest.raises(MissingGraspError):
        library.get('Bowl', 'stack')
    with pytest.raises(InvalidConfigError):
        GraspLibrary([_spec(), _spec()])


def test_grasp_spec_validation():
    with pytest.raises(InvalidConfigError):
        GraspSpec('Mug', '*', Se3Pose.identity(), pregrasp_offset=0.0)
    with pytest.raises(InvalidConfigError):
        GraspSpec('Mug', '*', Se3Pose.identity(), approach_axis=(0, 0, 0))
    spec = GraspSpec('Mug', '*', Se3Pose.identity(), approach_axis=(0, 0, 2))
    assert np.allclose(spec.approach_axis, [0, 0, 1])


def test_planner_config_dict():
    config = PlannerConfig.from_dict({'lift_height_m': 0.05,
                                      'reach_m': 1.2})
    assert config.lift_height == 0.05
    again = PlannerConfig.from_dict(config.to_dict())
    assert again.to_dict() == config.to_dict()
    with pytest.raises(InvalidConfigError):
        PlannerConfig.from_dict({'lift': 0.05})
    with pytest.raises(InvalidConfigError):
        PlannerConfig(lift_height=0)


def test_grasp_library_rejects_bad_entries(tmp_path):
    path = tmp_path / 'grasps.json'
    path.write_text(json.dumps({'grasps': [{'task': '*'}]}))
    with pytest.raises(InvalidConfigError):
        GraspLibrary.from_file(path)
    path.write_text('{"grasps": [')
    with pytest.raises(MalformedFileError):
        GraspLibrary.from_file(path)


def test_unknown_phase():
    plan = plan_task('handover', GRASP)
    assert plan.pose('grasp').allclose(GRASP)
    with pytest.raises(UnknownPhaseError):
        plan.pose('release')
