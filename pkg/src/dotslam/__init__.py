"""Dynamic object tracking front-end for visual SLAM.

Tracks the camera and each potentially dynamic object by direct photometric
optimization on SE(3), decides per object whether it is actually moving,
and emits per-frame dynamic masks and trajectories for a downstream SLAM
system.
"""

from .geometry import CameraModel, Frame, SE3Pose, build_pyramid, se3_exp
from .instances import LabelMask, MotionState, ObjectTrack, Registry
from .motion import MotionThresholds
from .photo_tracker import PointSet, SolverConfig, TrackResult

__all__ = [
    "CameraModel", "Frame", "SE3Pose", "build_pyramid", "se3_exp",
    "LabelMask", "MotionState", "ObjectTrack", "Registry",
    "MotionThresholds", "PointSet", "SolverConfig", "TrackResult",
]

__version__ = "0.1.0"
