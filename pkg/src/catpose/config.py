"""
Run settings: nested defaults, a JSON config file merged over them and
command line overrides merged last.
"""
import copy
import json
from pathlib import Path

from catpose.errors import InvalidConfigError
from catpose.estimation import EstimatorConfig
from catpose.grasping import PlannerConfig
from catpose.metrics import (DEFAULT_IOU_SAMPLES, DEFAULT_IOU_THRESH,
                             DEFAULT_ROT_THRESH_DEG, DEFAULT_TRANS_THRESH_M,
                             MIN_IOU_SAMPLES)
from catpose.render.renderer import FAR_CLIP, NEAR_CLIP
from catpose.templates import DEFAULT_K, DEFAULT_POISSON_RADIUS
from catpose.views import CameraIntrinsics, ViewSamplingConfig

DEFAULT_SETTINGS = {

    "asset_root": "assets",
    "out": "dataset",
    "categories": None,
    "jobs": 4,
    "strict": False,

    "views": {"n_views": 300,
              "radius_m": 0.6,
              "roll_min_rad": -3.141592653589793,
              "roll_max_rad": 3.141592653589793,
              "seed": 0,
              "hemisphere_only": False},

    # RealSense D435 like
    "intrinsics": {"fx": 615.0,
                   "fy": 615.0,
                   "cx": 320.0,
                   "cy": 240.0,
                   "width": 640,
                   "height": 480},

    "render": {"near_m": NEAR_CLIP,
               "far_m": FAR_CLIP,
               "rgb": False,
               "light_dir": None},

    "template": {"k": DEFAULT_K,
                 "poisson_radius": DEFAULT_POISSON_RADIUS,
                 "seed": 0,
                 "source_instance": None},

    "estimator": {"name": "baseline",
                  "params": {}},

    "metrics": {"rotation_deg": DEFAULT_ROT_THRESH_DEG,
                "translation": DEFAULT_TRANS_THRESH_M,
                "translation_relative": False,
                "iou": DEFAULT_IOU_THRESH,
                "iou_samples": DEFAULT_IOU_SAMPLES,
                "min_visibility": 0.0},

    "planner": {},

    "llm": {"stub_path": None,
            "timeout_s": 30},
}


def deep_merge(base, update):
    """Recursive dict merge, values of `update` win. Neither input is
    modified."""
    merged = copy.deepcopy(base)
    for k, v in (update or {}).items():
        if isinstance(v, dict) and isinstance(merged.get(k), dict):
            merged[k] = deep_merge(merged[k], v)
        else:
            merged[k] = copy.deepcopy(v)
    return merged


def _check_keys(settings, defaults, path=''):
    for k, v in settings.items():
        if k not in defaults:
            raise InvalidConfigError(f"Unknown setting '{path}{k}'")
        # free-form sections
        if k in ('params', 'planner'):
            continue
        if isinstance(v, dict) and isinstance(defaults[k], dict):
            _check_keys(v, defaults[k], f'{path}{k}.')


def validate_settings(settings):
    """Build every typed config once so bad values fail before any work
    starts."""
    _check_keys(settings, DEFAULT_SETTINGS)
    try:
        ViewSamplingConfig.from_dict(settings['views'])
        CameraIntrinsics.from_dict(settings['intrinsics'])
        EstimatorConfig.from_dict(settings['estimator']['params'])
        PlannerConfig.from_dict(settings['planner'])
    except (KeyError, TypeError) as e:
        raise InvalidConfigError(f"Invalid settings: {e}") from e

    render = settings['render']
    if not 0 < render['near_m'] < render['far_m']:
        raise InvalidConfigError("render near_m/far_m should satisfy "
                                 "0 < near < far")
    template = settings['template']
    if int(template['k']) < 1 or not template['poisson_radius'] > 0:
        raise InvalidConfigError("template k and poisson_radius should be "
                                 "positive")
    metrics = settings['metrics']
    for k in ('rotation_deg', 'translation', 'iou'):
        if not metrics[k] > 0:
            raise InvalidConfigError(f"metrics.{k} should be > 0")
    if metrics['iou_samples'] < MIN_IOU_SAMPLES:
        raise InvalidConfigError(
            f"metrics.iou_samples should be >= {MIN_IOU_SAMPLES}")
    if not settings['llm']['timeout_s'] > 0:
        raise InvalidConfigError("llm.timeout_s should be > 0")
    if int(settings['jobs']) < 1:
        raise InvalidConfigError("jobs should be >= 1")
    return settings


def load_settings(path=None, overrides=None):
    settings = DEFAULT_SETTINGS
    if path is not None:
        path = Path(path)
        try:
            with open(path, encoding='utf-8') as f:
                file_settings = json.load(f)
        except json.JSONDecodeError as e:
            raise InvalidConfigError(f"{path} is not valid JSON: {e}") from e
        if not isinstance(file_settings, dict):
            raise InvalidConfigError(f"{path} should hold a JSON object")
        settings = deep_merge(settings, file_settings)
    settings = deep_merge(settings, overrides)
    return validate_settings(settings)


def view_config(settings) -> ViewSamplingConfig:
    return ViewSamplingConfig.from_dict(settings['views'])


def intrinsics(settings) -> CameraIntrinsics:
    return CameraIntrinsics.from_dict(settings['intrinsics'])


def estimator_config(settings) -> EstimatorConfig:
    params = dict(settings['estimator']['params'])
    params.setdefault('workers', int(settings['jobs']))
    return EstimatorConfig.from_dict(params)


def planner_config(settings) -> PlannerConfig:
    return PlannerConfig.from_dict(settings['planner'])


def llm_client(settings, live=False):
    """The scripted client of `llm.stub_path`, the HTTP client configured
    from the environment when `live`, otherwise None."""
    from catpose.llm import HttpLlmClient, ScriptedLlmClient

    llm = settings['llm']
    if live:
        return HttpLlmClient.from_env(timeout=float(llm['timeout_s']))
    if llm['stub_path']:
        return ScriptedLlmClient.from_file(llm['stub_path'])
    return None
