"""Trajectory file I/O in TUM format: timestamp tx ty tz qx qy qz qw."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DecodeError
from .geometry import SE3Pose


def write_tum(path: str | Path, timestamps, poses: list[SE3Pose]) -> None:
    lines = []
    for t, pose in zip(timestamps, poses):
        q = Rotation.from_matrix(pose.rotation).as_quat()  # (qx, qy, qz, qw)
        tx, ty, tz = pose.translation
        lines.append(f"{t:.6f} {tx:.9f} {ty:.9f} {tz:.9f} "
                     f"{q[0]:.9f} {q[1]:.9f} {q[2]:.9f} {q[3]:.9f}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_tum(path: str | Path) -> tuple[np.ndarray, list[SE3Pose]]:
    times = []
    poses = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        vals = line.split()
        if len(vals) != 8:
            raise DecodeError(f"bad TUM line in {path}: {line!r}")
        t, tx, ty, tz, qx, qy, qz, qw = map(float, vals)
        R = Rotation.from_quat([qx, qy, qz, qw]).as_matrix()
        times.append(t)
        poses.append(SE3Pose(R, np.array([tx, ty, tz])))
    return np.asarray(times), poses
