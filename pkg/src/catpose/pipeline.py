"""
Dataset level workflows: rendering the synthetic dataset, building the
category templates, estimating poses over a dataset and scoring them.
"""
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

from loguru import logger

from catpose import parallelize
from catpose.assets import discover_models, global_bbox, model_scale
from catpose.config import estimator_config, intrinsics, view_config
from catpose.dataset import (ViewRecord, read_manifest, read_record,
                             record_file, write_manifest, write_record)
from catpose.errors import CatposeError
from catpose.estimation import PoseEstimate, get_estimator
from catpose.formats import compress_depth, read_json, restore_depth, \
    write_json
from catpose.geometry import Se3Pose
from catpose.metrics import EvaluationReport, evaluate_estimate
from catpose.render import (DepthRenderer, depth_to_pointcloud,
                            visible_fraction)
from catpose.templates import build_template, load_template, save_template
from catpose.timer import RenderTimer, TaskTimer
from catpose.views import sample_viewpoints

TEMPLATES_FOLDER = 'templates'
ESTIMATES_FOLDER = 'estimates'


@dataclass
class RunSummary:
    """Outcome of a dataset wide command. `failures` holds
    (unit, message) pairs of the units that were skipped."""
    succeeded: int = 0
    failures: List[tuple] = field(default_factory=list)

    @property
    def ok(self):
        return not self.failures

    def fail(self, unit, exc):
        self.failures.append((str(unit), f"{type(exc).__name__}: {exc}"))

    def to_dict(self):
        return {'succeeded': self.succeeded,
                'failed': len(self.failures),
                'failures': [{'unit': u, 'error': m}
                             for u, m in self.failures]}


class DatasetRenderer:
    """Renders every (category, instance, view) of an asset tree into a
    dataset folder and finalizes it with the manifest."""

    def __init__(self, settings, output_folder=None):
        self._settings = settings
        self.output_folder = Path(output_folder or settings['out'])
        self.asset_root = Path(settings['asset_root'])
        self.views = view_config(settings)
        self.intrinsics = intrinsics(settings)
        self.strict = bool(settings['strict'])
        self.jobs = int(settings['jobs'])

        render = settings['render']
        self._near = render['near_m']
        self._far = render['far_m']
        self._rgb = bool(render['rgb'])
        self._light_dir = render['light_dir']

        self.timer = RenderTimer()

    def __repr__(self):
        return (f'<DatasetRenderer {self.asset_root} -> '
                f'{self.output_folder}>')

    def _render_view(self, renderer, model, bbox_center, scale, viewpoint):
        camera_pose = Se3Pose.from_translation(bbox_center) @ \
            viewpoint.camera_pose
        instance_pose = camera_pose.inverse()
        view_index = viewpoint.lattice_index

        t0 = time.perf_counter()
        view = renderer.render(camera_pose, self.intrinsics, rgb=self._rgb,
                               light_dir=self._light_dir)
        t1 = time.perf_counter()
        # the cloud is derived from the stored millimeter depth
        depth = restore_depth(compress_depth(view.depth))
        mask = depth > 0
        cloud = depth_to_pointcloud(depth, mask, self.intrinsics)
        visibility = visible_fraction(renderer, camera_pose, self.intrinsics)
        t2 = time.perf_counter()

        rgb_path = record_file(model.category, model.instance_id,
                               view_index, 'rgb.png') if self._rgb else None
        record = ViewRecord(model.category, model.instance_id, view_index,
                            self.intrinsics, camera_pose, instance_pose,
                            scale, bbox_center, visibility,
                            rgb_path=rgb_path)
        write_record(record, depth, mask, cloud, self.output_folder,
                     rgb=view.rgb)
        t3 = time.perf_counter()

        self.timer.record(t1 - t0, t2 - t1, t3 - t2)
        logger.bind(category=model.category,
                    instance_id=model.instance_id,
                    view_index=view_index,
                    render_ms=round(view.render_ms, 3)).debug(
            f"Rendered view {view_index} ({int(mask.sum())} pixels)")
        return record

    def _render_instance(self, source, summary):
        model = source.load()
        bbox = global_bbox(model)
        scale = model_scale(bbox)
        renderer = DepthRenderer(model, self._near, self._far)
        viewpoints = sample_viewpoints(self.views)
        n_faces = renderer.mesh.faces.shape[0]
        logger.info(f"Rendering {model.category}/{model.instance_id}: "
                    f"{len(viewpoints)} views, {n_faces} triangles")

        def work(viewpoint):
            try:
                return self._render_view(renderer, model, bbox.center,
                                         scale, viewpoint)
            except (CatposeError, OSError) as e:
                if self.strict:
                    raise
                return e

        results = parallelize(work, viewpoints, max_workers=self.jobs,
                              progressbar=False)
        records = []
        for viewpoint, r in zip(viewpoints, results):
            if isinstance(r, Exception):
                unit = (f"{model.category}/{model.instance_id}/"
                        f"{viewpoint.lattice_index}")
                logger.warning(f"Skipping {unit}: {r}")
                summary.fail(unit, r)
            else:
                records.append(r)
        return records

    def run(self):
        self.output_folder.mkdir(parents=True, exist_ok=True)
        sources = discover_models(self.asset_root,
                                  self._settings['categories'])
        logger.info(f"Rendering {len(sources)} models into "
                    f"{self.output_folder}")

        summary = RunSummary()
        records = []
        complete = False
        self.timer.wall.start()
        try:
            for source in sources:
                try:
                    records += self._render_instance(source, summary)
                except (CatposeError, OSError) as e:
                    if self.strict:
                        logger.error(f"Aborting on {source.category}/"
                                     f"{source.instance_id}: {e}")
                        raise
                    logger.warning(f"Skipping model {source.path}: {e}")
                    summary.fail(f"{source.category}/{source.instance_id}",
                                 e)
            complete = True
        finally:
            self.timer.wall.stop()
            # finalize whatever was written so a partial run stays
            # inspectable, flagged as incomplete
            sampling = 'hemisphere' if self.views.hemisphere_only \
                else 'sphere'
            manifest_config = {'views': self.views.to_dict(),
                               'intrinsics': self.intrinsics.to_dict(),
                               'render': {'near_m': self._near,
                                          'far_m': self._far,
                                          'rgb': self._rgb}}
            if not complete or summary.failures or not records:
                manifest_config['incomplete'] = True
            write_manifest(self.output_folder, records, manifest_config,
                           sampling)

        summary.succeeded = len(records)
        self.timer.log()
        return summary


def template_path(folder, category):
    return Path(folder) / f'{category}.ply'


def build_templates(settings, output_folder) -> RunSummary:
    """One template per category, from the configured source instance or
    the first instance in sorted order."""
    tpl = settings['template']
    sources = discover_models(settings['asset_root'],
                              settings['categories'])
    by_category = {}
    for s in sources:
        by_category.setdefault(s.category, []).append(s)

    summary = RunSummary()
    for category, candidates in sorted(by_category.items()):
        source = candidates[0]
        if tpl['source_instance']:
            matching = [s for s in candidates
                        if s.instance_id == tpl['source_instance']]
            source = matching[0] if matching else source
        try:
            template = build_template(source.load(), int(tpl['k']),
                                      float(tpl['poisson_radius']),
                                      int(tpl['seed']))
            save_template(template, template_path(output_folder, category))
            summary.succeeded += 1
        except (CatposeError, OSError) as e:
            if settings['strict']:
                raise
            logger.warning(f"No template for {category}: {e}")
            summary.fail(category, e)
    return summary


def estimate_path(folder, record: ViewRecord):
    return Path(folder) / record_file(record.category, record.instance_id,
                                      record.view_index, 'estimate.json')


def estimate_dataset(settings, dataset_root, templates_folder,
                     output_folder, estimator_name=None) -> RunSummary:
    """Run an estimator on the stored point cloud of every record and write
    one PoseEstimate JSON per record."""
    dataset_root = Path(dataset_root)
    name = estimator_name or settings['estimator']['name']
    config = estimator_config(settings)
    estimator = get_estimator(name, config)
    manifest = read_manifest(dataset_root)

    templates = {}
    for category in manifest.categories:
        path = template_path(templates_folder, category)
        if path.is_file():
            templates[category] = load_template(path)
        else:
            logger.warning(f"No template for {category} in "
                           f"{templates_folder}")

    summary = RunSummary()
    timer = TaskTimer('pose estimation')
    timer.start()
    for pose_path in manifest.pose_paths(dataset_root):
        try:
            record, _, _, cloud = read_record(pose_path)
            if record.category not in templates:
                raise CatposeError(f"No template for {record.category}")
            estimate = estimator.estimate(cloud, templates[record.category])
            out = estimate_path(output_folder, record)
            out.parent.mkdir(parents=True, exist_ok=True)
            write_json(estimate.to_dict(), out)
            summary.succeeded += 1
        except (CatposeError, OSError) as e:
            if settings['strict']:
                raise
            logger.warning(f"Skipping {pose_path}: {e}")
            summary.fail(pose_path, e)
    timer.stop()
    timer.log()
    return summary


def evaluate_dataset(settings, dataset_root, estimates_folder,
                     thresholds=None) -> EvaluationReport:
    """Score stored estimates against the ground truth records. Records
    under the visibility floor are skipped, records without an estimate
    are counted as missing."""
    metrics = dict(settings['metrics'])
    metrics.update(thresholds or {})
    report = EvaluationReport({
        'rotation_deg': float(metrics['rotation_deg']),
        'translation': float(metrics['translation']),
        'iou': float(metrics['iou']),
        'translation_relative': bool(metrics['translation_relative'])})

    dataset_root = Path(dataset_root)
    manifest = read_manifest(dataset_root)
    for pose_path in manifest.pose_paths(dataset_root):
        record, _, _, _ = read_record(pose_path)
        est_file = estimate_path(estimates_folder, record)
        if record.visibility < metrics['min_visibility']:
            report.skipped += 1
            continue
        if not est_file.is_file():
            logger.warning(f"No estimate for {record.key}")
            report.missing += 1
            continue
        estimate = PoseEstimate.from_dict(read_json(est_file))
        error = evaluate_estimate(estimate.pose, estimate.scale,
                                  record.centered_instance_pose,
                                  record.scale, record.category,
                                  n_samples=int(metrics['iou_samples']))
        report.add('/'.join(str(k) for k in record.key), record.category,
                   error, record.visibility)
    logger.info(f"Evaluated {len(report.rows)} records, skipped "
                f"{report.skipped}, missing {report.missing}")
    return report
