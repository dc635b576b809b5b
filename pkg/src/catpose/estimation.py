"""
Pose estimation from an observed partial cloud and a category template.

The baseline aligns the observed cloud (camera frame, meters) onto the
template (canonical frame) with a similarity ICP started from several
orientation hypotheses, then inverts the winning transform into the
object pose in the camera and the metric object size.

A partial view fits many wrong orientations as well as the right one, so
hypotheses are ranked with a free-space term seen from the viewpoint: a
template point that lands outside the observed silhouette, or in front of
the observed surface, would have been seen and counts against the pose.
The final refinement also pulls the template points that should be
visible onto the observed cloud, which fixes the scale of a partial view.
"""
from dataclasses import dataclass, field
from typing import List

import numpy as np
from loguru import logger
from scipy.spatial import KDTree
from scipy.spatial.transform import Rotation

from catpose import parallelize
from catpose.assets import Scale3
from catpose.errors import (DegenerateConfigurationError, InvalidConfigError,
                            NoConvergenceError, TooFewPointsError,
                            UnknownEstimatorError)
from catpose.geometry import PointCloud, Se3Pose, round_sig
from catpose.metrics import OrientedBox3
from catpose.templates import TemplatePointCloud

RANK_TOL = 1e-9
MIN_VISIBLE = 3

# the four proper sign flips of a PCA frame come first
SIGN_FLIPS = [np.diag(d) for d in ([1, 1, 1], [1, -1, -1],
                                   [-1, 1, -1], [-1, -1, 1])]


def _axis_hypotheses():
    """Sign flips, the rest of the octahedral group, then the icosahedral
    rotations not already listed."""
    hypotheses = list(SIGN_FLIPS)
    for name in ('O', 'I'):
        for g in Rotation.create_group(name).as_matrix():
            if not any(np.allclose(g, h, atol=1e-12) for h in hypotheses):
                hypotheses.append(g)
    return hypotheses


AXIS_HYPOTHESES = _axis_hypotheses()


@dataclass(frozen=True)
class EstimatorConfig:
    max_icp_iterations: int = 30
    convergence_tol: float = 1e-6
    min_points: int = 50
    hypothesis_count: int = 8
    max_points: int = 2000
    coarse_points: int = 256
    coarse_iterations: int = 6
    refine_top: int = 6
    fitness_floor: float = 0.05
    # in multiples of the template point spacing
    visibility_tol: float = 1.5
    free_space_weight: float = 1.0
    seed: int = 0
    workers: int = 1
    raise_on_degraded: bool = False

    def __post_init__(self):
        for k in ('max_icp_iterations', 'min_points', 'max_points',
                  'coarse_points', 'coarse_iterations', 'refine_top'):
            if int(getattr(self, k)) < 1:
                raise InvalidConfigError(f"{k} should be positive")
        if self.hypothesis_count < 0:
            raise InvalidConfigError("hypothesis_count should be >= 0")
        if not (self.convergence_tol > 0 and self.fitness_floor > 0 and
                self.visibility_tol > 0):
            raise InvalidConfigError(
                "convergence_tol, fitness_floor and visibility_tol should "
                "be positive")
        if not self.free_space_weight >= 0:
            raise InvalidConfigError("free_space_weight should be >= 0")

    @classmethod
    def from_dict(cls, d):
        known = cls.__dataclass_fields__.keys()
        unknown = set(d) - set(known)
        if unknown:
            raise InvalidConfigError(f"Unknown estimator settings {unknown}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class PoseEstimate:
    """Object (bounding-box-centered canonical frame) pose in the camera
    frame and metric size. `fitness` is the RMS distance in meters from the
    observed points to the template, `violation` the RMS free-space
    violation of the template seen from the viewpoint."""
    pose: Se3Pose
    scale: Scale3
    fitness: float
    degraded: bool = False
    hypothesis_index: int = -1
    estimator: str = 'baseline'
    violation: float = 0.0

    def __post_init__(self):
        if not self.pose.is_valid(1e-6):
            raise ValueError("Estimated pose is not a valid rigid transform")
        if not self.fitness >= 0:
            raise ValueError("fitness should be >= 0")
        if not self.violation >= 0:
            raise ValueError("violation should be >= 0")

    def __repr__(self):
        return (f'<PoseEstimate fitness={self.fitness:.4g} '
                f'degraded={self.degraded} pose={self.pose!r}>')

    def box(self):
        return OrientedBox3.from_pose(self.pose, self.scale)

    def to_dict(self):
        return {'estimator': self.estimator,
                'pose': self.pose.to_dict(),
                'scale_m': [round_sig(v) for v in self.scale.as_array()],
                'fitness_m': round_sig(self.fitness),
                'free_space_violation_m': round_sig(self.violation),
                'degraded': bool(self.degraded),
                'hypothesis_index': int(self.hypothesis_index)}

    @classmethod
    def from_dict(cls, d):
        return cls(Se3Pose.from_dict(d['pose']),
                   Scale3.from_array(d['scale_m']),
                   float(d['fitness_m']),
                   bool(d.get('degraded', False)),
                   int(d.get('hypothesis_index', -1)),
                   d.get('estimator', 'baseline'),
                   float(d.get('free_space_violation_m', 0.0)))


@dataclass
class IcpResult:
    """Similarity `x -> scale * rotation @ x + translation` mapping the
    source onto the target. `history` holds the RMS residual (target units)
    of every iteration."""
    rotation: np.ndarray
    translation: np.ndarray
    scale: float
    fitness: float
    history: List[float] = field(default_factory=list)
    violation: float = 0.0

    @property
    def iterations(self):
        return len(self.history)

    def apply(self, points):
        return self.scale * points @ self.rotation.T + self.translation

    def inverse_apply(self, points):
        """Target points back into the source frame."""
        return (points - self.translation) @ self.rotation / self.scale


def _check_rank(points, name):
    centered = points - points.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] == 0 or sv[1] <= RANK_TOL * sv[0]:
        raise DegenerateConfigurationError(
            f"{name} points are collinear or coincident")


def umeyama(src, dst, with_scale=False, weights=None):
    """Least-squares similarity (scale, R, t) with dst ~ scale * R @ src + t,
    from the SVD of the cross covariance. `weights` should sum to one."""
    if weights is None:
        mu_s = src.mean(axis=0)
        mu_d = dst.mean(axis=0)
        sc = src - mu_s
        dc = dst - mu_d
        h = sc.T @ dc / src.shape[0]
    else:
        mu_s = weights @ src
        mu_d = weights @ dst
        sc = src - mu_s
        dc = dst - mu_d
        h = (sc * weights[:, None]).T @ dc
    u, sv, vt = np.linalg.svd(h)
    if sv[0] == 0 or sv[1] <= RANK_TOL * sv[0]:
        raise DegenerateConfigurationError(
            "Correspondence covariance is rank deficient")
    d = np.ones(3)
    d[2] = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    rotation = vt.T @ np.diag(d) @ u.T
    scale = 1.0
    if with_scale:
        sq = np.sum(sc ** 2, axis=1)
        var = np.mean(sq) if weights is None else weights @ sq
        scale = float(np.sum(sv * d) / var)
    return scale, rotation, mu_d - scale * rotation @ mu_s


def _clamp_scale(scale, rotation, src_mean, dst_mean, bounds):
    lo, hi = bounds
    if lo <= scale <= hi:
        return scale, None
    scale = float(np.clip(scale, lo, hi))
    return scale, dst_mean - scale * rotation @ src_mean


def _icp(src, tree, target, rotation, translation, scale, iterations, tol,
         with_scale=False, scale_bounds=None):
    history = []
    best = None
    for _ in range(iterations):
        moved = scale * src @ rotation.T + translation
        dist, idx = tree.query(moved)
        fitness = float(np.sqrt(np.mean(dist ** 2)))
        if history and fitness > history[-1]:
            # a clamped scale step can overshoot; keep the previous state
            break
        history.append(fitness)
        best = (rotation, translation, scale)
        if len(history) > 1 and history[-2] - fitness < tol:
            break
        scale, rotation, translation = umeyama(src, target[idx], with_scale)
        if scale_bounds is not None:
            scale, shifted = _clamp_scale(scale, rotation, src.mean(axis=0),
                                          target[idx].mean(axis=0),
                                          scale_bounds)
            if shifted is not None:
                translation = shifted
    rotation, translation, scale = best
    return IcpResult(rotation, translation, scale, history[-1], history)


class _ViewedCloud:
    """Observed points seen from `viewpoint`: unit directions in a KD-tree
    and their ranges."""

    def __init__(self, points, viewpoint):
        self.viewpoint = viewpoint
        rel = points - viewpoint
        self.ranges = np.linalg.norm(rel, axis=1)
        self.tree = KDTree(rel / np.maximum(self.ranges, RANK_TOL)[:, None])

    def free_space(self, points, tol):
        """Per point violation and visibility in the units of `points`.

        A point whose ray passes farther than `tol` from every observed
        point lies outside the silhouette and violates by the excess. A
        point inside the silhouette violates by how far it sits in front
        of the observed surface beyond `tol`. Points within `tol` of the
        observed surface are visible, points behind it are occluded."""
        rel = points - self.viewpoint
        r = np.linalg.norm(rel, axis=1)
        chord, j = self.tree.query(rel / np.maximum(r, RANK_TOL)[:, None])
        lateral = chord * r
        gap = self.ranges[j] - r
        inside = lateral <= tol
        violation = np.where(inside, np.maximum(gap - tol, 0.0),
                             lateral - tol)
        visible = inside & (np.abs(gap) <= tol)
        return violation, visible


def _violation(view, template, result, tol):
    """RMS free-space violation of the template at `result`, in template
    units."""
    tpl_cam = result.inverse_apply(template)
    violation, _ = view.free_space(tpl_cam, tol / result.scale)
    return float(np.sqrt(np.mean(violation ** 2))) * result.scale


def _refine(obs, obs_tree, view, tpl, tpl_tree, start: IcpResult, tol,
            iterations, conv_tol, bounds):
    """Similarity ICP over both directions: every observed point to its
    nearest template point, and every template point visible from the
    viewpoint to its nearest observed point, each direction weighted one
    half. `tol` is the visibility tolerance in template units."""
    rotation, translation, scale = start.rotation, start.translation, \
        start.scale
    n_obs = obs.shape[0]
    history = []
    best = None
    for _ in range(iterations):
        d_obs, i_obs = tpl_tree.query(scale * obs @ rotation.T + translation)
        tpl_cam = (tpl - translation) @ rotation / scale
        violation, visible = view.free_space(tpl_cam, tol / scale)
        vis = np.flatnonzero(visible)

        one_way = float(np.mean(d_obs ** 2))
        if vis.size >= MIN_VISIBLE:
            d_tpl, i_tpl = obs_tree.query(tpl_cam[vis])
            fitness = float(np.sqrt(0.5 * one_way +
                                    0.5 * np.mean((d_tpl * scale) ** 2)))
        else:
            fitness = float(np.sqrt(one_way))
        if history and fitness > history[-1]:
            break
        history.append(fitness)
        best = (rotation, translation, scale, np.sqrt(one_way),
                float(np.sqrt(np.mean(violation ** 2))) * scale)
        if len(history) > 1 and history[-2] - fitness < conv_tol:
            break

        if vis.size >= MIN_VISIBLE:
            src = np.concatenate([obs, obs[i_tpl]])
            dst = np.concatenate([tpl[i_obs], tpl[vis]])
            weights = np.concatenate([np.full(n_obs, 0.5 / n_obs),
                                      np.full(vis.size, 0.5 / vis.size)])
        else:
            src, dst, weights = obs, tpl[i_obs], None
        try:
            scale, rotation, translation = umeyama(src, dst, True, weights)
        except DegenerateConfigurationError:
            break
        src_mean = src.mean(axis=0) if weights is None else weights @ src
        dst_mean = dst.mean(axis=0) if weights is None else weights @ dst
        scale, shifted = _clamp_scale(scale, rotation, src_mean, dst_mean,
                                      bounds)
        if shifted is not None:
            translation = shifted

    rotation, translation, scale, fitness, violation = best
    return IcpResult(rotation, translation, scale, float(fitness), history,
                     violation)


def _as_array(cloud):
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=np.float64).reshape(-1, 3)


def icp_refine(source, target, init: Se3Pose = None,
               config: EstimatorConfig = None, return_result=False):
    """Rigid point-to-point ICP of `source` onto `target` starting at
    `init`. Returns the refined pose (source frame to target frame) and
    the final RMS residual."""
    config = config or EstimatorConfig()
    init = init or Se3Pose.identity()
    src, dst = _as_array(source), _as_array(target)
    if src.shape[0] < 3 or dst.shape[0] < 3:
        raise TooFewPointsError("ICP needs at least 3 points per cloud")
    _check_rank(src, 'Source')
    _check_rank(dst, 'Target')

    result = _icp(src, KDTree(dst), dst, init.rotation, init.translation,
                  1.0, config.max_icp_iterations, config.convergence_tol)
    pose = Se3Pose(result.rotation, result.translation)
    if return_result:
        return pose, result
    return pose, result.fitness


def _pca_frame(points):
    """Principal axes (columns, decreasing variance) with signs fixed by
    the third moment, as a proper rotation."""
    centered = points - points.mean(axis=0)
    cov = centered.T @ centered / points.shape[0]
    _, vecs = np.linalg.eigh(cov)
    vecs = vecs[:, ::-1].copy()
    proj = centered @ vecs
    for k in range(2):
        skew = np.mean(proj[:, k] ** 3)
        if skew < 0:
            vecs[:, k] *= -1
    if np.linalg.det(vecs) < 0:
        vecs[:, 2] *= -1
    return vecs


def _subsample(points, n):
    if points.shape[0] <= n:
        return points
    idx = np.linspace(0, points.shape[0] - 1, n).round().astype(int)
    return points[idx]


def _point_spacing(points, tree):
    dist, _ = tree.query(points, k=2)
    return float(np.median(dist[:, 1]))


def orientation_hypotheses(observed, template, config: EstimatorConfig):
    """Rotations taking the observed frame to the canonical frame: the PCA
    alignment composed with the axis hypotheses (the four sign flips, the
    rest of the octahedral group and the icosahedral rotations), followed
    by `hypothesis_count` seeded uniformly random rotations."""
    e_obs = _pca_frame(observed)
    e_tpl = _pca_frame(template)
    hypotheses = [e_tpl @ g @ e_obs.T for g in AXIS_HYPOTHESES]
    if config.hypothesis_count:
        rng = np.random.default_rng(config.seed)
        extra = Rotation.random(config.hypothesis_count,
                                random_state=rng).as_matrix()
        hypotheses.extend(e_tpl @ g @ e_obs.T for g in extra)
    return hypotheses


class BaselineEstimator:

    name = 'baseline'

    def __init__(self, config: EstimatorConfig = None):
        self.config = config or EstimatorConfig()

    def __repr__(self):
        return f'<BaselineEstimator {self.config}>'

    def __call__(self, observed, template, viewpoint=None):
        return self.estimate(observed, template, viewpoint)

    def estimate(self, observed, template: TemplatePointCloud,
                 viewpoint=None) -> PoseEstimate:
        """`viewpoint` is the sensor position in the frame of `observed`,
        the camera origin by default. Moving the cloud and the viewpoint
        by the same rigid transform moves the estimate with them."""
        config = self.config
        obs = _as_array(observed)
        if obs.shape[0] < config.min_points:
            raise TooFewPointsError(
                f"{obs.shape[0]} observed points, need {config.min_points}")
        _check_rank(obs, 'Observed')
        viewpoint = np.zeros(3) if viewpoint is None else \
            np.asarray(viewpoint, dtype=np.float64).reshape(3)

        tpl = template.points
        tree = KDTree(tpl)
        obs = _subsample(obs, config.max_points)
        coarse = _subsample(obs, config.coarse_points)
        obs_tree = KDTree(obs)
        view = _ViewedCloud(obs, viewpoint)
        tol = config.visibility_tol * _point_spacing(tpl, tree)
        weight = config.free_space_weight

        # initial scale from the extent of the principal axes
        obs_ext = np.ptp(obs @ _pca_frame(obs), axis=0)
        tpl_ext = np.ptp(tpl @ _pca_frame(tpl), axis=0)
        s0 = float(np.linalg.norm(tpl_ext) / np.linalg.norm(obs_ext))
        bounds = (s0 / 3, s0 * 3)
        tpl_center = tpl.mean(axis=0)

        def score(result):
            return result.fitness + weight * result.violation

        def start(rotation):
            translation = tpl_center - s0 * rotation @ obs.mean(axis=0)
            try:
                result = _icp(coarse, tree, tpl, rotation, translation, s0,
                              config.coarse_iterations,
                              config.convergence_tol,
                              with_scale=True, scale_bounds=bounds)
            except DegenerateConfigurationError:
                return IcpResult(rotation, translation, s0, np.inf)
            if weight:
                result.violation = _violation(view, tpl, result, tol)
            return result

        hypotheses = orientation_hypotheses(obs, tpl, config)
        coarse_results = parallelize(start, hypotheses,
                                     max_workers=config.workers,
                                     progressbar=False)

        ranked = sorted(range(len(coarse_results)),
                        key=lambda i: (score(coarse_results[i]), i))
        top = ranked[:config.refine_top]

        def refine(i):
            return _refine(obs, obs_tree, view, tpl, tree,
                           coarse_results[i], tol,
                           config.max_icp_iterations,
                           config.convergence_tol, bounds)

        refined = parallelize(refine, top, max_workers=config.workers,
                              progressbar=False)
        best_i, best = min(zip(top, refined),
                           key=lambda item: (score(item[1]), item[0]))

        # invert observed -> canonical into canonical -> camera
        rotation = best.rotation.T
        translation = -rotation @ best.translation / best.scale
        extents = template.extents / best.scale
        fitness = best.fitness / best.scale

        degraded = bool(best.fitness > config.fitness_floor)
        estimate = PoseEstimate(Se3Pose(rotation, translation),
                                Scale3.from_array(extents), fitness,
                                degraded, int(best_i), self.name,
                                best.violation / best.scale)
        if degraded:
            msg = (f"Estimate did not converge below the fitness floor "
                   f"({best.fitness:.4f} > {config.fitness_floor} "
                   "canonical units)")
            if config.raise_on_degraded:
                raise NoConvergenceError(msg)
            logger.warning(msg)
        return estimate


ESTIMATORS = {'baseline': BaselineEstimator}


def get_estimator(name='baseline', config: EstimatorConfig = None):
    try:
        cls = ESTIMATORS[name]
    except KeyError:
        raise UnknownEstimatorError(
            f"Unknown estimator '{name}'. Available: {sorted(ESTIMATORS)}")
    return cls(config)


def estimate_pose(observed, template: TemplatePointCloud,
                  config: EstimatorConfig = None,
                  viewpoint=None) -> PoseEstimate:
    return BaselineEstimator(config).estimate(observed, template, viewpoint)
