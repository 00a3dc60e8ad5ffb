"""Per-object motion classification from dynamic disparity and observability.

An object is declared in motion when the median pixel distance between its
static-hypothesis projection and its tracked projection exceeds an adaptive
threshold. Declaring it static additionally requires that its motion was
observable at all; otherwise the verdict is NotObserved, optionally
retaining an established previous state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NoValidProjections
from .geometry import CameraModel, SE3Pose
from .instances import MotionState
from .photo_tracker import NormalEquations, PointSet


@dataclass
class MotionThresholds:
    h_min: float                  # nats, observability floor
    delta_base: float = 2.0       # pixels, threshold at the floor
    delta_slope: float = 0.25     # pixels per nat above the floor
    hysteresis_frames: int = 2


def dynamic_disparity(points: PointSet, T_c: SE3Pose, T_o: SE3Pose,
                      cam: CameraModel) -> float:
    """Median pixel distance between static and tracked projections."""
    use = points.valid & (points.depth > 0)
    if not use.any():
        raise NoValidProjections("no points to project")
    X = cam.backproject_many(points.pix[use], points.depth[use])
    uv_static, ok_s = cam.project_many(T_c.apply(X))
    uv_moving, ok_m = cam.project_many(T_c.apply(T_o.apply(X)))
    ok = ok_s & ok_m
    if not ok.any():
        raise NoValidProjections("no point projects validly under both hypotheses")
    d = np.linalg.norm(uv_static[ok] - uv_moving[ok], axis=1)
    return float(np.median(d))


def observability(normal_eq: NormalEquations, k: int = 6) -> float:
    """Entropy-scaled log-information of the pose estimate, in nats.

    Uses the determinant of the information matrix rather than of the
    covariance, so geometries that turn 3-D motion into large image shifts
    score high and degenerate (e.g. along-the-optical-axis) geometries
    score low. Computed through the log-determinant for numerical safety.
    """
    sign, logdet = np.linalg.slogdet(normal_eq.JtSJ)
    if sign <= 0:
        return -math.inf
    return 0.5 * (k * math.log(2.0 * math.pi * math.e) + logdet)


def adaptive_threshold(H: float, th: MotionThresholds) -> float:
    """Disparity threshold growing linearly with observability above the floor."""
    return th.delta_base + th.delta_slope * max(0.0, H - th.h_min)


def classify(d_d: float, H: float, th: MotionThresholds,
             prev_state: MotionState = MotionState.NOT_OBSERVED,
             state_age: int = 0) -> MotionState:
    """Three-state motion verdict with hysteresis on unobservable frames."""
    if d_d > adaptive_threshold(H, th):
        return MotionState.IN_MOTION
    if H > th.h_min:
        return MotionState.STATIC
    # motion unobservable: keep an established previous verdict
    if prev_state != MotionState.NOT_OBSERVED and state_age >= th.hysteresis_frames:
        return prev_state
    return MotionState.NOT_OBSERVED
