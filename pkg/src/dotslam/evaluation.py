"""Trajectory metrics: rigid alignment, ATE RMSE and normalized-error tables."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, DotError, LengthMismatch
from .geometry import SE3Pose


def _positions(trajectory) -> np.ndarray:
    if len(trajectory) and isinstance(trajectory[0], SE3Pose):
        return np.stack([p.translation for p in trajectory])
    return np.asarray(trajectory, dtype=float)


def align_trajectories(estimate, truth) -> SE3Pose:
    """Closed-form least-squares SE(3) alignment of estimated positions onto truth.

    No scale is estimated: RGB-D / stereo depth makes scale observable.
    """
    est = _positions(estimate)
    gt = _positions(truth)
    if len(est) != len(gt):
        raise LengthMismatch(f"{len(est)} vs {len(gt)} poses")
    if len(est) < 3:
        raise LengthMismatch("need at least 3 poses to align")
    mu_e = est.mean(axis=0)
    mu_g = gt.mean(axis=0)
    cov = (gt - mu_g).T @ (est - mu_e) / len(est)
    U, s, Vt = np.linalg.svd(cov)
    if s[1] < 1e-9:
        raise DegenerateGeometry("positions are collinear; rotation unobservable")
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    t = mu_g - R @ mu_e
    return SE3Pose(R, t)


def ate_rmse(estimate, truth, align: bool = True) -> float:
    """RMSE of estimated positions against ground truth, in meters."""
    est = _positions(estimate)
    gt = _positions(truth)
    if len(est) != len(gt):
        raise LengthMismatch(f"{len(est)} vs {len(gt)} poses")
    if align:
        T = align_trajectories(est, gt)
        est = est @ T.rotation.T + T.translation
    return float(np.sqrt(np.mean(np.sum((est - gt) ** 2, axis=1))))


def normalized_error(errors: dict[str, dict[str, float]],
                     reference: str = "dot") -> dict[str, float]:
    """Mean over sequences of each method's error divided by the reference's.

    `errors` maps method -> {sequence -> ATE}. The reference method scores
    exactly 1.0 by construction.
    """
    ref = errors[reference]
    for seq, e in ref.items():
        if e == 0.0:
            raise ZeroDivisionError(
                f"reference error is zero on sequence {seq!r}")
    out = {}
    for method, per_seq in errors.items():
        ratios = [per_seq[seq] / ref[seq] for seq in ref]
        out[method] = float(np.mean(ratios))
    return out


@dataclass
class TrialReport:
    ates: list[float] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)
    tracked_fractions: list[float] = field(default_factory=list)

    @property
    def median_ate(self) -> float:
        if not self.ates:
            return float("nan")
        return float(statistics.median(self.ates))

    @property
    def spread(self) -> tuple[float, float]:
        if not self.ates:
            return (float("nan"), float("nan"))
        return (min(self.ates), max(self.ates))


def run_trials(run_one, n: int = 10) -> TrialReport:
    """Repeat a pipeline run with seeds 0..n-1 and report the median ATE.

    `run_one(seed)` must return (ate_m, tracked_fraction) or raise a
    package error on tracking failure. Failed trials are excluded from the
    median but always reported.
    """
    report = TrialReport()
    for seed in range(n):
        try:
            ate, fraction = run_one(seed)
        except DotError as exc:
            report.failures.append(f"seed {seed}: {exc}")
            report.tracked_fractions.append(0.0)
            continue
        report.ates.append(float(ate))
        report.tracked_fractions.append(float(fraction))
    return report
