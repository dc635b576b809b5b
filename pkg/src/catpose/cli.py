import argparse
import sys
from pathlib import Path

from loguru import logger

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

COMMANDS = ('render', 'template', 'estimate', 'eval', 'plan', 'parse',
            'validate')


def _categories(value):
    return [c.strip() for c in value.split(',') if c.strip()]


def _thresholds(value):
    """`rot_deg,translation,iou`, e.g. `5,0.05,0.25`."""
    try:
        rot, trans, iou = (float(v) for v in value.split(','))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected 'rot_deg,translation,iou', got '{value}'")
    return {'rotation_deg': rot, 'translation': trans, 'iou': iou}


def render_log_path(out):
    """Default JSON log of `render`, a sibling of the dataset folder so the
    folder itself only holds the dataset."""
    out = Path(out).resolve()
    return out.parent / f'{out.name}.log.jsonl'


def _common_parser(prog):
    parser = argparse.ArgumentParser(prog)
    parser.add_argument('-c', '--config', help="JSON settings file")
    parser.add_argument('--log-json', help="Write JSON lines logs here")
    parser.add_argument('-j', '--jobs', type=int)
    parser.add_argument('--strict', action='store_true', default=None,
                        help="Abort on the first failing record")
    return parser


def _overrides(args, **extra):
    overrides = {}
    if args.jobs is not None:
        overrides['jobs'] = args.jobs
    if args.strict:
        overrides['strict'] = True
    for k, v in extra.items():
        if v is not None:
            overrides[k] = v
    return overrides


class Catpose:
    """Subcommand dispatch: `catpose <command> [options]`. Every command
    returns an exit code: 0 success, 1 failed records or contract
    violations, 2 usage errors."""

    def __init__(self, cli_args=None):

        self.args = sys.argv[1:] if cli_args is None else list(cli_args)

        parser = argparse.ArgumentParser("catpose")
        parser.add_argument('command', choices=COMMANDS,
                            help="Commands: " + ', '.join(COMMANDS))

        # only the command is parsed here, each command parses the rest
        args = parser.parse_args(self.args[:1])
        self.command = args.command
        self._sink = None

    def run(self):
        from catpose.errors import CatposeError

        try:
            return getattr(self, self.command)(self.args[1:])
        except (CatposeError, OSError) as e:
            logger.error(f"{self.command} failed: {type(e).__name__}: {e}")
            return EXIT_FAILURE
        finally:
            if self._sink is not None:
                logger.remove(self._sink)

    def _settings(self, args, **overrides):
        from catpose.config import load_settings
        return load_settings(args.config, _overrides(args, **overrides))

    def _log_json(self, path):
        if path is None:
            return
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self._sink = logger.add(path, serialize=True, level='DEBUG')

    def render(self, cli_args):
        from catpose.pipeline import DatasetRenderer

        parser = _common_parser('catpose render')
        parser.add_argument('-a', '--assets', help="Asset root folder")
        parser.add_argument('-o', '--out', help="Dataset folder")
        parser.add_argument('--categories', type=_categories)
        parser.add_argument('--views', type=int)
        parser.add_argument('--seed', type=int)
        parser.add_argument('--hemisphere-only', action='store_true',
                            default=None)
        parser.add_argument('--rgb', action='store_true', default=None)
        args = parser.parse_args(cli_args)

        views = {k: v for k, v in (('n_views', args.views),
                                   ('seed', args.seed),
                                   ('hemisphere_only', args.hemisphere_only))
                 if v is not None}
        settings = self._settings(
            args, asset_root=args.assets, out=args.out,
            categories=args.categories, views=views or None,
            render={'rgb': True} if args.rgb else None)

        out = Path(settings['out'])
        self._log_json(args.log_json or render_log_path(out))

        summary = DatasetRenderer(settings, out).run()
        if not summary.ok:
            logger.error(f"{len(summary.failures)} records failed, "
                         f"{summary.succeeded} written to {out}")
            return EXIT_FAILURE
        logger.success(f"{summary.succeeded} records written to {out}")
        return EXIT_OK

    def template(self, cli_args):
        from catpose.pipeline import TEMPLATES_FOLDER, build_templates

        parser = _common_parser('catpose template')
        parser.add_argument('-a', '--assets', help="Asset root folder")
        parser.add_argument('-o', '--out', default=TEMPLATES_FOLDER,
                            help="Templates folder")
        parser.add_argument('--categories', type=_categories)
        parser.add_argument('-k', type=int)
        parser.add_argument('--poisson-radius', type=float)
        parser.add_argument('--seed', type=int)
        args = parser.parse_args(cli_args)

        tpl = {k: v for k, v in (('k', args.k),
                                 ('poisson_radius', args.poisson_radius),
                                 ('seed', args.seed)) if v is not None}
        settings = self._settings(args, asset_root=args.assets,
                                  categories=args.categories,
                                  template=tpl or None)
        self._log_json(args.log_json)

        summary = build_templates(settings, args.out)
        if not summary.ok:
            return EXIT_FAILURE
        logger.success(f"{summary.succeeded} templates written to "
                       f"{args.out}")
        return EXIT_OK

    def estimate(self, cli_args):
        from catpose.pipeline import (ESTIMATES_FOLDER, TEMPLATES_FOLDER,
                                      estimate_dataset)

        parser = _common_parser('catpose estimate')
        parser.add_argument('dataset', help="Dataset root")
        parser.add_argument('-t', '--templates', default=TEMPLATES_FOLDER)
        parser.add_argument('-o', '--out', help="Estimates folder, "
                            f"default <dataset>/{ESTIMATES_FOLDER}")
        parser.add_argument('-e', '--estimator')
        parser.add_argument('--seed', type=int)
        args = parser.parse_args(cli_args)

        estimator = {'name': args.estimator} if args.estimator else {}
        if args.seed is not None:
            estimator['params'] = {'seed': args.seed}
        settings = self._settings(args, estimator=estimator or None)
        self._log_json(args.log_json)

        out = args.out or Path(args.dataset) / ESTIMATES_FOLDER
        summary = estimate_dataset(settings, args.dataset, args.templates,
                                   out, args.estimator)
        if not summary.ok:
            logger.error(f"{len(summary.failures)} records without "
                         "estimate")
            return EXIT_FAILURE
        logger.success(f"{summary.succeeded} estimates written to {out}")
        return EXIT_OK

    def eval(self, cli_args):
        from catpose.pipeline import ESTIMATES_FOLDER, evaluate_dataset

        parser = _common_parser('catpose eval')
        parser.add_argument('dataset', help="Dataset root")
        parser.add_argument('--estimates', help="Estimates folder, "
                            f"default <dataset>/{ESTIMATES_FOLDER}")
        parser.add_argument('--thresholds', type=_thresholds,
                            help="rot_deg,translation,iou")
        parser.add_argument('--relative-translation', action='store_true',
                            default=None,
                            help="Translation threshold as a fraction of "
                                 "the object diameter")
        parser.add_argument('--min-visibility', type=float)
        parser.add_argument('-o', '--out', default='report',
                            help="Report path without suffix")
        args = parser.parse_args(cli_args)

        metrics = dict(args.thresholds or {})
        if args.relative_translation:
            metrics['translation_relative'] = True
        if args.min_visibility is not None:
            metrics['min_visibility'] = args.min_visibility
        settings = self._settings(args, metrics=metrics or None)
        self._log_json(args.log_json)

        estimates = args.estimates or Path(args.dataset) / ESTIMATES_FOLDER
        report = evaluate_dataset(settings, args.dataset, estimates)
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        report.write_json(out.with_suffix('.json'))
        report.write_csv(out.with_suffix('.csv'))
        if report.missing:
            logger.error(f"{report.missing} records have no estimate in "
                         f"{estimates}")
            return EXIT_FAILURE
        logger.success(f"Accuracy {report.accuracy():.4f} over "
                       f"{len(report.rows)} records")
        return EXIT_OK

    def plan(self, cli_args):
        from catpose.config import planner_config
        from catpose.errors import InvalidConfigError
        from catpose.estimation import PoseEstimate
        from catpose.formats import read_json
        from catpose.geometry import Se3Pose
        from catpose.grasping import (FrameChain, GraspLibrary,
                                      camera_in_base_from_hand_eye,
                                      plan_task, resolve_grasp, write_plans)

        parser = _common_parser('catpose plan')
        parser.add_argument('--grasps', required=True,
                            help="Grasp library JSON")
        parser.add_argument('--estimate', required=True,
                            help="PoseEstimate JSON of the grasped object")
        parser.add_argument('--category', required=True)
        parser.add_argument('--extrinsics', required=True,
                            help="JSON with `camera_in_base`, or "
                                 "`base_T_ee` and `ee_T_camera`")
        parser.add_argument('--task', required=True,
                            choices=('pick_place', 'handover', 'stack',
                                     'tidy'))
        parser.add_argument('--place', help="JSON pose of the place target "
                            "in the base frame")
        parser.add_argument('--target-estimate',
                            help="PoseEstimate JSON of the object to stack "
                                 "onto")
        parser.add_argument('-o', '--out', default='plan.json')
        args = parser.parse_args(cli_args)

        settings = self._settings(args)
        self._log_json(args.log_json)
        config = planner_config(settings)

        extrinsics = read_json(args.extrinsics)
        try:
            if 'camera_in_base' in extrinsics:
                camera_in_base = Se3Pose.from_dict(
                    extrinsics['camera_in_base'])
            else:
                camera_in_base = camera_in_base_from_hand_eye(
                    Se3Pose.from_dict(extrinsics['base_T_ee']),
                    Se3Pose.from_dict(extrinsics['ee_T_camera']))
        except KeyError as e:
            raise InvalidConfigError(f"{args.extrinsics} lacks {e}")

        estimate = PoseEstimate.from_dict(read_json(args.estimate))
        spec = GraspLibrary.from_file(args.grasps).get(args.category,
                                                       args.task)
        chain = FrameChain(estimate.pose, estimate.scale, camera_in_base)
        grasp = resolve_grasp(spec, chain, config.reach)

        place = None
        target_scale = None
        if args.target_estimate:
            target = PoseEstimate.from_dict(read_json(args.target_estimate))
            place = camera_in_base @ target.pose
            target_scale = target.scale
        if args.place:
            place = Se3Pose.from_dict(read_json(args.place))

        plan = plan_task(args.task, grasp, place, config,
                         approach_axis=spec.approach_axis,
                         pregrasp_offset=spec.pregrasp_offset,
                         grasped_scale=estimate.scale,
                         target_scale=target_scale,
                         object_center=chain.object_in_base.translation)
        write_plans([plan], args.out)
        logger.success(f"{args.task} plan with {len(plan)} waypoints "
                       f"written to {args.out}")
        return EXIT_OK

    def parse(self, cli_args):
        from catpose.config import llm_client
        from catpose.formats import write_json
        from catpose.instructions import (InteractionSession,
                                          load_transcript, run_transcript,
                                          summarize_transcript)

        parser = _common_parser('catpose parse')
        parser.add_argument('transcript', help="JSON lines transcript")
        parser.add_argument('--stub', help="Scripted replies (JSON lines); "
                            "the user turns are replayed against it")
        parser.add_argument('--live', action='store_true',
                            help="Replay the user turns against the HTTP "
                            "endpoint named by CATPOSE_LLM_ENDPOINT")
        parser.add_argument('-o', '--out', default='outcomes.json')
        args = parser.parse_args(cli_args)
        if args.live and args.stub:
            parser.error("--live and --stub are exclusive")
        settings = self._settings(
            args, llm={'stub_path': args.stub} if args.stub else None)
        self._log_json(args.log_json)

        exchanges = load_transcript(args.transcript)
        client = llm_client(settings, live=args.live)
        if client is not None:
            logger.info(f"Replaying {len(exchanges)} user turns "
                        f"against {client!r}")
            session = InteractionSession(client)
            for e in exchanges:
                session.step(e.user_text, timestamp=e.timestamp)
            exchanges = session.history

        outcomes = run_transcript(exchanges)
        summary = summarize_transcript(outcomes)
        write_json({'rounds': [dict(round_index=i, **o.to_dict())
                               for i, o in outcomes],
                    'summary': summary.to_dict()}, args.out)
        logger.success(f"{len(outcomes)} rounds parsed, "
                       f"{len(summary.episodes)} completed episodes")
        return EXIT_OK

    def validate(self, cli_args):
        from catpose.dataset import validate_dataset
        from catpose.formats import write_json

        parser = _common_parser('catpose validate')
        parser.add_argument('dataset', help="Dataset root")
        parser.add_argument('-o', '--out', help="Report JSON")
        args = parser.parse_args(cli_args)
        self._log_json(args.log_json)

        report = validate_dataset(args.dataset)
        if args.out:
            write_json(report.to_dict(), args.out)
        return EXIT_OK if report.ok else EXIT_FAILURE


def catpose_cli(cli_args=None):
    sys.exit(Catpose(cli_args).run())


if __name__ == '__main__':
    catpose_cli()
