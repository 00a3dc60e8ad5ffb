"""Dynamic disparity, observability scoring and the three-state classifier."""

import math

import numpy as np
import pytest

from dotslam.errors import NoValidProjections
from dotslam.geometry import SE3Pose
from dotslam.instances import MotionState
from dotslam.motion import (
    MotionThresholds,
    adaptive_threshold,
    classify,
    dynamic_disparity,
    observability,
)
from dotslam.photo_tracker import NormalEquations, PointSet

from conftest import make_camera


def grid_points(cam, n=25, depth=4.0):
    us = np.linspace(40, cam.width - 40, int(math.sqrt(n)))
    vs = np.linspace(40, cam.height - 40, int(math.sqrt(n)))
    uu, vv = np.meshgrid(us, vs)
    pix = np.stack([uu.ravel(), vv.ravel()], axis=1)
    return PointSet(pix=pix, depth=np.full(len(pix), depth),
                    grad=np.zeros((len(pix), 2)))


def normal_eq(JtSJ):
    cov = np.linalg.inv(JtSJ)
    return NormalEquations(JtSJ, np.zeros(6), np.zeros(6), cov, 0.0, 100)


class TestDynamicDisparity:
    def test_lateral_translation_closed_form(self):
        cam = make_camera()
        pts = grid_points(cam, depth=4.0)
        dx = 0.08
        T_o = SE3Pose(np.eye(3), np.array([dx, 0.0, 0.0]))
        d = dynamic_disparity(pts, SE3Pose.identity(), T_o, cam)
        assert d == pytest.approx(cam.fx * dx / 4.0, abs=1e-9)

    def test_identity_object_pose_is_zero(self):
        cam = make_camera()
        pts = grid_points(cam)
        T_c = SE3Pose(np.eye(3), np.array([0.05, 0.01, 0.02]))
        assert dynamic_disparity(pts, T_c, SE3Pose.identity(), cam) == 0.0

    def test_median_not_mean(self):
        cam = make_camera()
        pts = grid_points(cam, depth=4.0)
        # half the points twice as deep halves their image shift
        pts.depth[:len(pts) // 2] = 8.0
        T_o = SE3Pose(np.eye(3), np.array([0.08, 0.0, 0.0]))
        d = dynamic_disparity(pts, SE3Pose.identity(), T_o, cam)
        shifts = sorted([cam.fx * 0.08 / 8.0] * (len(pts) // 2)
                        + [cam.fx * 0.08 / 4.0] * (len(pts) - len(pts) // 2))
        assert d == pytest.approx(float(np.median(shifts)), abs=1e-9)

    def test_no_valid_points_raises(self):
        cam = make_camera()
        pts = grid_points(cam)
        pts.valid[:] = False
        with pytest.raises(NoValidProjections):
            dynamic_disparity(pts, SE3Pose.identity(), SE3Pose.identity(), cam)

    def test_all_projections_out_of_view_raises(self):
        cam = make_camera()
        pts = grid_points(cam)
        T_c = SE3Pose(np.eye(3), np.array([0.0, 0.0, -10.0]))  # behind camera
        with pytest.raises(NoValidProjections):
            dynamic_disparity(pts, T_c, SE3Pose.identity(), cam)


class TestObservability:
    def test_information_scaling_raises_score(self):
        rng = np.random.default_rng(50)
        A = rng.normal(0, 1, (6, 6))
        JtSJ = A @ A.T + np.eye(6)
        h1 = observability(normal_eq(JtSJ))
        h2 = observability(normal_eq(4.0 * JtSJ))
        assert h2 > h1
        assert h2 - h1 == pytest.approx(0.5 * 6 * math.log(4.0), abs=1e-9)

    def test_closed_form(self):
        H = observability(normal_eq(np.eye(6)))
        assert H == pytest.approx(3.0 * math.log(2 * math.pi * math.e), abs=1e-12)

    def test_singular_information_is_minus_inf(self):
        ne = NormalEquations(np.zeros((6, 6)), np.zeros(6), np.zeros(6),
                             np.eye(6), 0.0, 0)
        assert observability(ne) == -math.inf


class TestClassifier:
    TH = MotionThresholds(h_min=42.0, delta_base=2.0, delta_slope=0.25)

    def test_adaptive_threshold_piecewise(self):
        th = self.TH
        assert adaptive_threshold(30.0, th) == 2.0
        assert adaptive_threshold(42.0, th) == 2.0
        assert adaptive_threshold(50.0, th) == pytest.approx(4.0)

    def test_in_motion_beats_everything(self):
        assert classify(10.0, 50.0, self.TH) is MotionState.IN_MOTION
        # large disparity wins even when observability is below the floor
        assert classify(10.0, 30.0, self.TH) is MotionState.IN_MOTION

    def test_static_requires_observability(self):
        assert classify(0.5, 50.0, self.TH) is MotionState.STATIC
        assert classify(0.5, 30.0, self.TH) is MotionState.NOT_OBSERVED

    def test_hysteresis_keeps_established_state(self):
        th = self.TH
        kept = classify(0.5, 30.0, th, prev_state=MotionState.STATIC,
                        state_age=th.hysteresis_frames)
        assert kept is MotionState.STATIC
        young = classify(0.5, 30.0, th, prev_state=MotionState.STATIC,
                         state_age=th.hysteresis_frames - 1)
        assert young is MotionState.NOT_OBSERVED
        never = classify(0.5, 30.0, th, prev_state=MotionState.NOT_OBSERVED,
                         state_age=99)
        assert never is MotionState.NOT_OBSERVED

    def test_threshold_grows_with_observability(self):
        # the same disparity can be motion at low H and noise at high H
        assert classify(3.0, 42.5, self.TH) is MotionState.IN_MOTION
        assert classify(3.0, 55.0, self.TH) is MotionState.STATIC
