import json

import numpy as np
import pytest

from catpose.assets import Scale3
from catpose.dataset import (ViewRecord, read_manifest, read_record,
                             record_file, validate_dataset, write_manifest,
                             write_record)
from catpose.errors import (CorruptPayloadError, DepthOutOfRangeError,
                            MissingFileError, SchemaMismatchError)
from catpose.formats import (compress_depth, dumps_json, read_depth_png,
                             read_mask_png, restore_depth, write_depth_png,
                             write_mask_png)
from catpose.render import depth_to_pointcloud, render_depth
from catpose.views import look_at_pose


def test_compress_depth_rounds_half_up():
    mm = compress_depth([0.0, 0.0005, 0.0004999, 1.2345, 1.23449, 65.535])
    assert mm.dtype == np.uint16
    assert mm.tolist() == [0, 1, 0, 1235, 1234, 65535]


def test_compress_depth_error_is_half_a_millimeter():
    depth = np.random.default_rng(0).uniform(0.01, 5.0, size=10_000)
    restored = restore_depth(compress_depth(depth))
    assert np.abs(restored - depth).max() <= 0.0005 + 1e-12


@pytest.mark.parametrize('bad', [[-0.1], [np.nan], [np.inf], [70.0]])
def test_compress_depth_rejects_out_of_range(bad):
    with pytest.raises(DepthOutOfRangeError):
        compress_depth(bad)


def test_depth_png(tmp_path):
    depth = np.array([[0.0, 0.457], [1.0, 2.5]])
    path = write_depth_png(depth, tmp_path / 'd.png')
    assert np.array_equal(read_depth_png(path), depth)

    with pytest.raises(MissingFileError):
        read_depth_png(tmp_path / 'missing.png')
    garbage = tmp_path / 'garbage.png'
    garbage.write_bytes(b'\x89PNG not really')
    with pytest.raises(CorruptPayloadError):
        read_depth_png(garbage)


def test_dumps_json_is_canonical():
    assert dumps_json({'b': 1, 'a': [1, 2]}) == \
        '{\n  "a": [\n    1,\n    2\n  ],\n  "b": 1\n}\n'


def _rendered_record(cube, intrinsics, view_index=0, rgb=False):
    camera_pose = look_at_pose((0.2, 0.15, 0.4))
    depth, _ = render_depth(cube, camera_pose, intrinsics)
    depth = restore_depth(compress_depth(depth))
    mask = depth > 0
    cloud = depth_to_pointcloud(depth, mask, intrinsics)
    record = ViewRecord(
        category='Box', instance_id='cube_0000', view_index=view_index,
        intrinsics=intrinsics, camera_pose=camera_pose,
        instance_pose=camera_pose.inverse(), scale=Scale3(0.1, 0.1, 0.1),
        visibility=1.0,
        rgb_path=(record_file('Box', 'cube_0000', view_index, 'rgb.png')
                  if rgb else None))
    return record, depth, mask, cloud


@pytest.fixture
def dataset(tmp_path, cube, small_intrinsics):
    root = tmp_path / 'dataset'
    records = []
    for view_index in range(3):
        record, depth, mask, cloud = _rendered_record(cube, small_intrinsics,
                                                      view_index)
        write_record(record, depth, mask, cloud, root)
        records.append(record)
    write_manifest(root, records, config={'views': {'n_views': 3}})
    return root


def test_record_layout(dataset):
    files = sorted(p.relative_to(dataset).as_posix()
                   for p in dataset.rglob('*') if p.is_file())
    assert 'manifest.json' in files
    assert 'Box/cube_0000/000002.depth.png' in files
    assert 'Box/cube_0000/000002.mask.png' in files
    assert 'Box/cube_0000/000002.cloud.ply' in files
    assert 'Box/cube_0000/000002.pose.json' in files
    assert len(files) == 1 + 3 * 4

    manifest = read_manifest(dataset)
    assert manifest.record_count == 3
    assert manifest.categories == ['Box']
    assert manifest.instances == {'Box': ['cube_0000']}


def test_read_record_matches_written(dataset, cube, small_intrinsics):
    expected, depth, mask, cloud = _rendered_record(cube, small_intrinsics, 1)
    record, d, m, c = read_record(dataset / expected.pose_path)
    assert record.key == expected.key
    assert record.intrinsics == small_intrinsics
    assert record.camera_pose.allclose(expected.camera_pose, atol=1e-8)
    assert np.array_equal(d, depth)
    assert np.array_equal(m, mask)
    assert np.array_equal(c.points, cloud.points)


def test_rewrite_is_byte_identical(tmp_path, dataset):
    again = tmp_path / 'again'
    records = []
    for pose_path in read_manifest(dataset).pose_paths(dataset):
        record, depth, mask, cloud = read_record(pose_path)
        write_record(record, depth, mask, cloud, again)
        records.append(record)
    write_manifest(again, records, config={'views': {'n_views': 3}})

    for path in dataset.rglob('*'):
        if path.is_file():
            copy = again / path.relative_to(dataset)
            assert copy.read_bytes() == path.read_bytes(), path.name


def test_rgb_payload(tmp_path, cube, small_intrinsics):
    record, depth, mask, cloud = _rendered_record(cube, small_intrinsics,
                                                  rgb=True)
    rgb = np.zeros(small_intrinsics.shape + (3,))
    paths = write_record(record, depth, mask, cloud, tmp_path, rgb=rgb)
    assert paths['rgb'].name == '000000.rgb.png'
    assert read_record(paths['pose']).record.rgb_path == record.rgb_path

    plain, *_ = _rendered_record(cube, small_intrinsics)
    with pytest.raises(ValueError):
        write_record(plain, depth, mask, cloud, tmp_path, rgb=rgb)


def test_validate_clean_dataset(dataset):
    report = validate_dataset(dataset)
    assert report.ok
    assert report.records_checked == 3
    assert report.per_category == {'Box': 3}
    assert report.to_dict()['ok'] is True


def test_validate_reports_each_violation(dataset):
    folder = dataset / 'Box' / 'cube_0000'
    (folder / '000000.mask.png').unlink()
    (folder / '000001.depth.png').write_bytes(b'corrupt')

    pose_path = folder / '000002.pose.json'
    d = json.loads(pose_path.read_text())
    d['instance_pose']['translation'][0] += 0.1
    pose_path.write_text(json.dumps(d))

    report = validate_dataset(dataset)
    assert not report.ok
    assert report.count('MissingFile') == 1
    assert report.count('CorruptPayload') == 1
    assert report.count('PoseInverse') == 1


def test_validate_schema_and_count(dataset):
    folder = dataset / 'Box' / 'cube_0000'
    pose_path = folder / '000001.pose.json'
    d = json.loads(pose_path.read_text())
    d['schema_version'] = 99
    pose_path.write_text(json.dumps(d))
    (folder / '000007.pose.json').write_text('{}')

    report = validate_dataset(dataset)
    assert report.count('SchemaMismatch') == 1
    assert report.count('CountMismatch') == 1


def test_validate_mask_mismatch(dataset):
    path = dataset / 'Box' / 'cube_0000' / '000000.mask.png'
    mask = read_mask_png(path)
    mask[0, 0] = ~mask[0, 0]
    write_mask_png(mask, path)
    report = validate_dataset(dataset)
    assert report.count('MaskMismatch') == 1


def test_validate_without_manifest(tmp_path):
    report = validate_dataset(tmp_path)
    assert report.count('MissingFile') == 1


def test_record_schema_checks(cube, small_intrinsics):
    record, *_ = _rendered_record(cube, small_intrinsics)
    d = record.to_dict()
    d['camera_pose']['quat_wxyz'] = [0.5, 0, 0, 0]
    with pytest.raises(SchemaMismatchError):
        ViewRecord.from_dict(d)
    d = record.to_dict()
    del d['files']
    with pytest.raises(SchemaMismatchError):
        ViewRecord.from_dict(d)
