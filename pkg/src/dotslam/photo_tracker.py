"""Direct photometric Gauss-Newton tracking of camera and object poses.

The camera pose is estimated from background points; each object pose is
then estimated with the camera pose held fixed and the increment inserted
between the camera and object transformations, so the object optimization
only ever explains motion the camera cannot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateVariance,
    NotPositiveDefinite,
    SingularSystem,
    TooFewValidPoints,
    TrackingLost,
)
from .geometry import (
    CameraModel,
    Frame,
    SE3Pose,
    gradient_images,
    sample_bilinear_many,
    se3_exp,
)

BACKGROUND = 0

# condition number above which the normal equations are declared singular
MAX_CONDITION = 1e12


@dataclass
class PointSet:
    """Photometric samples of one region (background or a single object).

    Pixel coordinates and depths live in the reference frame at pyramid
    level 0. `valid` is mutable: occlusion handling switches points off.
    """

    pix: np.ndarray            # (N, 2) float
    depth: np.ndarray          # (N,) meters
    grad: np.ndarray           # (N, 2) image gradient at selection time
    owner: int = BACKGROUND
    valid: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.valid is None:
            self.valid = np.ones(len(self.depth), dtype=bool)

    def __len__(self) -> int:
        return len(self.depth)

    @property
    def num_valid(self) -> int:
        return int(self.valid.sum())


@dataclass
class SolverConfig:
    huber_delta: float = 9.0          # gray levels
    max_iterations: int = 30          # per pyramid level
    convergence_eps: float = 1e-7     # on the increment norm
    pyramid_levels: int = 4
    min_valid_points: int = 20
    outlier_mad_factor: float = 4.0
    outlier_floor: float = 0.5        # gray levels, guards MAD -> 0
    residual_sigma: float = 4.0       # gray levels, diagonal of the residual covariance
    min_pearson: float = 0.8
    max_step_halvings: int = 5


@dataclass
class NormalEquations:
    JtSJ: np.ndarray
    JtSr: np.ndarray
    increment: np.ndarray
    pose_covariance: np.ndarray
    entropy: float
    num_inliers: int


@dataclass
class TrackResult:
    pose: SE3Pose
    normal_eq: NormalEquations
    pearson: float
    inlier_mask: np.ndarray
    converged: bool


@dataclass
class ResidualRows:
    residual: np.ndarray       # (N,) gray levels
    jacobian: np.ndarray       # (N, 6)
    valid: np.ndarray          # (N,) bool
    ref_intensity: np.ndarray  # (N,)
    cur_intensity: np.ndarray  # (N,)


def _level_grads(frame: Frame, level: int, cache: dict) -> tuple[np.ndarray, np.ndarray]:
    if level not in cache:
        cache[level] = gradient_images(frame.level(level)[0])
    return cache[level]


def residual_rows(ref: Frame, cur: Frame, points: PointSet, cam: CameraModel,
                  T_c: SE3Pose, T_o: SE3Pose | None = None, level: int = 0,
                  grad_cache: dict | None = None) -> ResidualRows:
    """Photometric residuals and analytic Jacobian rows at one pyramid level.

    With T_o given, rows are w.r.t. the object increment (inserted between
    T_c and T_o); otherwise w.r.t. the camera increment (left of T_c).
    Points that project out of bounds or behind the camera are flagged
    invalid, never raised.
    """
    s = 2.0 ** level
    cam_l = cam.scaled(level)
    ref_img = ref.level(level)[0]
    cur_img = cur.level(level)[0]

    pix_l = points.pix / s
    X_ref = cam_l.backproject_many(pix_l, points.depth)
    X_obj = T_o.apply(X_ref) if T_o is not None else X_ref
    X_cam = T_c.apply(X_obj)

    uv, ok_proj = cam_l.project_many(X_cam)
    ref_i, ok_ref = sample_bilinear_many(ref_img, pix_l)
    cur_i, ok_cur = sample_bilinear_many(cur_img, uv)
    valid = points.valid & (points.depth > 0) & ok_proj & ok_ref & ok_cur

    if grad_cache is None:
        gu_img, gv_img = gradient_images(cur_img)
    else:
        gu_img, gv_img = _level_grads(cur, level, grad_cache)
    gu, _ = sample_bilinear_many(gu_img, uv)
    gv, _ = sample_bilinear_many(gv_img, uv)

    z = np.where(X_cam[:, 2] > 0, X_cam[:, 2], 1.0)
    a = gu * cam_l.fx / z
    b = gv * cam_l.fy / z
    A = np.stack([a, b, -(a * X_cam[:, 0] + b * X_cam[:, 1]) / z], axis=1)

    if T_o is None:
        J = -np.concatenate([A, np.cross(X_cam, A)], axis=1)
    else:
        B = A @ T_c.rotation
        J = -np.concatenate([B, np.cross(X_obj, B)], axis=1)

    r = ref_i - cur_i
    return ResidualRows(r, J, valid, ref_i, cur_i)


def camera_residuals(ref: Frame, cur: Frame, points: PointSet, T_c: SE3Pose,
                     cam: CameraModel, config: SolverConfig | None = None,
                     level: int = 0) -> ResidualRows:
    """Residuals of the camera cost; raises if too few points survive."""
    rows = residual_rows(ref, cur, points, cam, T_c, None, level)
    min_pts = config.min_valid_points if config else 6
    if int(rows.valid.sum()) < min_pts:
        raise TooFewValidPoints(
            f"{int(rows.valid.sum())} valid points, need {min_pts}")
    return rows


def huber_weights(r: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(r)
    w = np.ones_like(a)
    big = a > delta
    w[big] = delta / a[big]
    return w


def huber_cost(r: np.ndarray, delta: float) -> float:
    a = np.abs(r)
    quad = np.minimum(a, delta)
    return float(np.sum(0.5 * quad**2 + delta * (a - quad)))


def gauss_newton_step(rows: ResidualRows, config: SolverConfig,
                      inliers: np.ndarray | None = None) -> tuple[np.ndarray, NormalEquations]:
    """One Huber-reweighted normal-equation solve over the valid rows."""
    use = rows.valid if inliers is None else rows.valid & inliers
    r = rows.residual[use]
    J = rows.jacobian[use]
    if len(r) < 6:
        raise TooFewValidPoints(f"{len(r)} rows, need at least 6")
    w = huber_weights(r, config.huber_delta) / config.residual_sigma**2
    Jw = J * w[:, None]
    H = J.T @ Jw
    g = Jw.T @ r
    cond = np.linalg.cond(H)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularSystem(f"normal equations condition number {cond:.3g}")
    x = np.linalg.solve(H, -g)
    cov = np.linalg.inv(H)
    try:
        ent = pose_entropy_cov(cov)
    except NotPositiveDefinite:
        ent = math.nan
    return x, NormalEquations(H, g, x, cov, ent, int(len(r)))


def pearson_quality(ref_intensities: np.ndarray, cur_intensities: np.ndarray) -> float:
    """Gain/offset-invariant linear correlation between the two samples."""
    x = np.asarray(ref_intensities, dtype=float)
    y = np.asarray(cur_intensities, dtype=float)
    if len(x) < 2 or len(x) != len(y):
        raise DegenerateVariance("need >= 2 paired samples")
    sx = x.std()
    sy = y.std()
    if sx == 0.0 or sy == 0.0:
        raise DegenerateVariance("constant intensity vector")
    phi = float(np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy))
    return float(np.clip(phi, -1.0, 1.0))


def reject_outliers_relative(ref_intensities: np.ndarray,
                             cur_intensities: np.ndarray,
                             mad_factor: float = 4.0,
                             floor: float = 0.5) -> np.ndarray:
    """Inlier flags from residuals around the fitted line cur ~ a*ref + b.

    The threshold is relative to the fitted linear relation, so a global
    gain or offset change produces no outliers; an absolute intensity
    threshold would reject everything.
    """
    x = np.asarray(ref_intensities, dtype=float)
    y = np.asarray(cur_intensities, dtype=float)
    if len(x) < 2 or x.std() == 0.0:
        raise DegenerateVariance("cannot fit intensity line")
    a, b = np.polyfit(x, y, 1)
    resid = y - (a * x + b)
    med = np.median(resid)
    mad = np.median(np.abs(resid - med))
    thr = max(mad_factor * mad, floor)
    return np.abs(resid - med) <= thr


def pose_entropy_cov(cov: np.ndarray, k: int | None = None) -> float:
    """Differential entropy (nats) of a Gaussian with covariance `cov`."""
    cov = np.asarray(cov, dtype=float)
    if k is None:
        k = cov.shape[0]
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0 or np.any(np.linalg.eigvalsh((cov + cov.T) / 2.0) <= 0.0):
        raise NotPositiveDefinite("covariance is not positive definite")
    return 0.5 * (k * math.log(2.0 * math.pi * math.e) + logdet)


def pose_entropy(normal_eq: NormalEquations, k: int = 6) -> float:
    return pose_entropy_cov(normal_eq.pose_covariance, k)


def _region_cost(ref: Frame, cur: Frame, points: PointSet, cam: CameraModel,
                 T_c: SE3Pose, T_o: SE3Pose | None, level: int,
                 inliers: np.ndarray, config: SolverConfig,
                 grad_cache: dict) -> float:
    rows = residual_rows(ref, cur, points, cam, T_c, T_o, level, grad_cache)
    use = rows.valid & inliers
    if not use.any():
        return math.inf
    return huber_cost(rows.residual[use], config.huber_delta) / use.sum()


def _track(ref: Frame, cur: Frame, points: PointSet, cam: CameraModel,
           config: SolverConfig, init: SE3Pose,
           fixed_T_c: SE3Pose | None = None) -> TrackResult:
    """Coarse-to-fine Gauss-Newton over one point region.

    fixed_T_c None: optimize the camera pose, starting at `init`.
    fixed_T_c given: optimize the object pose `init` with the camera fixed.
    """
    pose = init
    levels = min(config.pyramid_levels, len(ref.pyramid), len(cur.pyramid))
    grad_cache: dict = {}
    last_ne: NormalEquations | None = None
    converged = False
    inliers = np.ones(len(points), dtype=bool)

    def rows_at(p: SE3Pose, level: int) -> ResidualRows:
        if fixed_T_c is None:
            return residual_rows(ref, cur, points, cam, p, None, level, grad_cache)
        return residual_rows(ref, cur, points, cam, fixed_T_c, p, level, grad_cache)

    for level in reversed(range(levels)):
        finest = level == 0
        rows = rows_at(pose, level)
        if int(rows.valid.sum()) < config.min_valid_points:
            if finest:
                raise TooFewValidPoints(
                    f"{int(rows.valid.sum())} valid points at finest level")
            continue
        converged = False
        for _ in range(config.max_iterations):
            rows = rows_at(pose, level)
            # outlier flags are refreshed at the current pose, relative to
            # the fitted intensity line so photometric changes stay inlying
            try:
                inl_sub = reject_outliers_relative(
                    rows.ref_intensity[rows.valid], rows.cur_intensity[rows.valid],
                    config.outlier_mad_factor, config.outlier_floor)
                inliers = np.zeros(len(points), dtype=bool)
                inliers[np.flatnonzero(rows.valid)] = inl_sub
            except DegenerateVariance:
                inliers = rows.valid.copy()
            if int((rows.valid & inliers).sum()) < max(6, config.min_valid_points // 2):
                break
            try:
                x, ne = gauss_newton_step(rows, config, inliers)
            except SingularSystem:
                if finest:
                    raise
                break
            cost0 = huber_cost(rows.residual[rows.valid & inliers],
                               config.huber_delta) / (rows.valid & inliers).sum()
            # plain Gauss-Newton can overshoot on real images: halve the
            # step until the Huber cost stops increasing
            alpha = 1.0
            accepted = False
            for _h in range(config.max_step_halvings + 1):
                cand = se3_exp(alpha * x).compose(pose)
                cost_c = _region_cost(ref, cur, points, cam,
                                      fixed_T_c if fixed_T_c is not None else cand,
                                      cand if fixed_T_c is not None else None,
                                      level, inliers, config, grad_cache)
                if cost_c <= cost0 + 1e-12:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                last_ne = ne
                converged = True
                break
            pose = cand
            last_ne = ne
            if np.linalg.norm(alpha * x) < config.convergence_eps:
                converged = True
                break

    rows = rows_at(pose, 0)
    if int(rows.valid.sum()) < config.min_valid_points:
        raise TooFewValidPoints(
            f"{int(rows.valid.sum())} valid points at finest level")
    use = rows.valid & inliers
    if use.sum() < 2:
        use = rows.valid
    phi = pearson_quality(rows.ref_intensity[use], rows.cur_intensity[use])
    if phi < config.min_pearson:
        raise TrackingLost(f"pearson {phi:.3f} below {config.min_pearson}")
    if last_ne is None:
        # no iteration ran (e.g. immediate convergence); solve once for the
        # covariance consumed downstream
        _, last_ne = gauss_newton_step(rows, config, inliers)
    return TrackResult(pose, last_ne, phi, use, converged)


def track_camera(ref: Frame, cur: Frame, static_points: PointSet,
                 init: SE3Pose, cam: CameraModel, config: SolverConfig) -> TrackResult:
    """Estimate the camera pose from background points only."""
    return _track(ref, cur, static_points, cam, config, init)


def track_object(ref: Frame, cur: Frame, object_points: PointSet,
                 T_c: SE3Pose, init: SE3Pose, cam: CameraModel,
                 config: SolverConfig) -> TrackResult:
    """Estimate one object pose with the camera pose held fixed."""
    return _track(ref, cur, object_points, cam, config, init, fixed_T_c=T_c)
