"""SE(3) group operations, pinhole camera model and multi-scale image pyramids.

Conventions:
    - Poses are stored as (R, t) with R a 3x3 rotation matrix and t in meters.
    - Tangent vectors are 6-vectors [rho; omega] with the translational part
      first (meters) and the rotational part second (radians).
    - Pixel coordinates are (u, v) with u along image columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ImageTooSmall, NonPositiveDepth, OutOfBounds

# below this rotation angle the Rodrigues coefficients switch to their
# second-order Taylor expansions
SMALL_ANGLE = 1e-8


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


@dataclass(frozen=True)
class SE3Pose:
    """Rigid transformation; immutable so instances can be shared freely."""

    rotation: np.ndarray
    translation: np.ndarray

    @staticmethod
    def identity() -> "SE3Pose":
        return SE3Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(T: np.ndarray) -> "SE3Pose":
        T = np.asarray(T, dtype=float)
        return SE3Pose(T[:3, :3].copy(), T[:3, 3].copy())

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def compose(self, other: "SE3Pose") -> "SE3Pose":
        return SE3Pose(self.rotation @ other.rotation,
                       self.rotation @ other.translation + self.translation)

    def inverse(self) -> "SE3Pose":
        Rt = self.rotation.T
        return SE3Pose(Rt, -Rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or a batch (N, 3)."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def log(self) -> np.ndarray:
        """Inverse of :func:`se3_exp`; valid for rotation angles below pi."""
        R = self.rotation
        cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
        theta = math.acos(cos_theta)
        w_hat = (R - R.T) / 2.0
        w = np.array([w_hat[2, 1], w_hat[0, 2], w_hat[1, 0]])
        if theta < SMALL_ANGLE:
            omega = w  # sin(theta)/theta -> 1
            V_inv = np.eye(3) - 0.5 * hat(omega)
        else:
            omega = w * (theta / math.sin(theta))
            W = hat(omega)
            # closed-form inverse of the left Jacobian
            V_inv = (np.eye(3) - 0.5 * W
                     + (1.0 / theta**2 - (1.0 + math.cos(theta))
                        / (2.0 * theta * math.sin(theta))) * (W @ W))
        rho = V_inv @ self.translation
        return np.concatenate([rho, omega])


def so3_exp(omega: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(omega))
    W = hat(omega)
    if theta < SMALL_ANGLE:
        return np.eye(3) + W + 0.5 * (W @ W)
    return (np.eye(3) + (math.sin(theta) / theta) * W
            + ((1.0 - math.cos(theta)) / theta**2) * (W @ W))


def se3_exp(x: np.ndarray) -> SE3Pose:
    """Exponential map from a 6-vector tangent increment to a pose."""
    x = np.asarray(x, dtype=float)
    rho, omega = x[:3], x[3:]
    theta = float(np.linalg.norm(omega))
    W = hat(omega)
    R = so3_exp(omega)
    if theta < SMALL_ANGLE:
        V = np.eye(3) + 0.5 * W + (W @ W) / 6.0
    else:
        V = (np.eye(3) + ((1.0 - math.cos(theta)) / theta**2) * W
             + ((theta - math.sin(theta)) / theta**3) * (W @ W))
    return SE3Pose(R, V @ rho)


def se3_left_update(pose: SE3Pose, x: np.ndarray) -> SE3Pose:
    """Left-multiplicative pose update exp(x) * pose."""
    return se3_exp(x).compose(pose)


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def project(self, X: np.ndarray) -> np.ndarray:
        """Project a single point with z > 0 to pixel coordinates."""
        X = np.asarray(X, dtype=float)
        if X[2] <= 0.0:
            raise NonPositiveDepth(f"cannot project point with z={X[2]}")
        return np.array([self.fx * X[0] / X[2] + self.cx,
                         self.fy * X[1] / X[2] + self.cy])

    def backproject(self, p: np.ndarray, z: float) -> np.ndarray:
        if z <= 0.0:
            raise NonPositiveDepth(f"cannot backproject depth z={z}")
        u, v = p
        return np.array([(u - self.cx) * z / self.fx,
                         (v - self.cy) * z / self.fy, z])

    def project_many(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized projection of (N, 3) points.

        Returns (uv, valid) where invalid entries (z <= 0 or outside the
        image) carry undefined coordinates.
        """
        X = np.asarray(X, dtype=float)
        z = X[:, 2]
        ok = z > 0.0
        zs = np.where(ok, z, 1.0)
        uv = np.empty((X.shape[0], 2))
        uv[:, 0] = self.fx * X[:, 0] / zs + self.cx
        uv[:, 1] = self.fy * X[:, 1] / zs + self.cy
        ok &= ((uv[:, 0] >= 0.0) & (uv[:, 0] <= self.width - 1)
               & (uv[:, 1] >= 0.0) & (uv[:, 1] <= self.height - 1))
        return uv, ok

    def backproject_many(self, uv: np.ndarray, z: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        z = np.asarray(z, dtype=float)
        return np.stack([(uv[:, 0] - self.cx) * z / self.fx,
                         (uv[:, 1] - self.cy) * z / self.fy, z], axis=1)

    def scaled(self, level: int) -> "CameraModel":
        """Intrinsics for pyramid level `level` (level 0 = original)."""
        s = 2 ** level
        return CameraModel(self.fx / s, self.fy / s, self.cx / s, self.cy / s,
                           math.ceil(self.width / s), math.ceil(self.height / s))


def sample_bilinear(img: np.ndarray, p: np.ndarray) -> float:
    """Bilinear interpolation of a single sub-pixel location (u, v)."""
    u, v = float(p[0]), float(p[1])
    h, w = img.shape
    if not (0.0 <= u <= w - 1 and 0.0 <= v <= h - 1):
        raise OutOfBounds(f"({u}, {v}) outside [0, {w - 1}]x[0, {h - 1}]")
    vals, ok = sample_bilinear_many(img, np.array([[u, v]]))
    return float(vals[0])


def sample_bilinear_many(img: np.ndarray,
                         uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized bilinear sampling; out-of-bounds points are flagged invalid."""
    h, w = img.shape
    u = uv[:, 0]
    v = uv[:, 1]
    ok = (u >= 0.0) & (u <= w - 1) & (v >= 0.0) & (v <= h - 1)
    uc = np.clip(u, 0.0, w - 1.0)
    vc = np.clip(v, 0.0, h - 1.0)
    u0 = np.minimum(np.floor(uc).astype(int), w - 2) if w > 1 else np.zeros_like(uc, int)
    v0 = np.minimum(np.floor(vc).astype(int), h - 2) if h > 1 else np.zeros_like(vc, int)
    du = uc - u0
    dv = vc - v0
    i00 = img[v0, u0]
    i01 = img[v0, u0 + 1] if w > 1 else i00
    i10 = img[v0 + 1, u0] if h > 1 else i00
    i11 = img[v0 + 1, u0 + 1] if (w > 1 and h > 1) else i00
    vals = (i00 * (1 - du) * (1 - dv) + i01 * du * (1 - dv)
            + i10 * (1 - du) * dv + i11 * du * dv)
    return vals, ok


def _downsample_intensity(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    # edge-replicate to even dimensions so level L has ceil(size / 2**L)
    if h % 2 or w % 2:
        img = np.pad(img, ((0, h % 2), (0, w % 2)), mode="edge")
        h, w = img.shape
    return img.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _downsample_depth(depth: np.ndarray) -> np.ndarray:
    # nearest valid sample of each 2x2 block; averaging across depth
    # discontinuities would invent phantom surfaces
    h, w = depth.shape
    if h % 2 or w % 2:
        depth = np.pad(depth, ((0, h % 2), (0, w % 2)), mode="edge")
        h, w = depth.shape
    blocks = depth.reshape(h // 2, 2, w // 2, 2).transpose(0, 2, 1, 3).reshape(h // 2, w // 2, 4)
    masked = np.where(blocks > 0.0, blocks, np.inf)
    nearest = masked.min(axis=2)
    return np.where(np.isfinite(nearest), nearest, 0.0)


@dataclass
class Frame:
    """One RGB-D frame: grayscale intensity, dense depth and its pyramid.

    Depth values that are zero or negative mark invalid measurements.
    """

    intensity: np.ndarray
    depth: np.ndarray
    timestamp: float = 0.0
    index: int = 0
    pyramid: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    def level(self, L: int) -> tuple[np.ndarray, np.ndarray]:
        if not self.pyramid:
            raise ValueError("pyramid not built; call build_pyramid first")
        return self.pyramid[L]


def build_pyramid(frame: Frame, levels: int) -> Frame:
    """Attach a `levels`-deep coarse-to-fine pyramid to the frame."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    intensity = np.asarray(frame.intensity, dtype=float)
    depth = np.asarray(frame.depth, dtype=float)
    pyr = [(intensity, depth)]
    for _ in range(1, levels):
        i_prev, d_prev = pyr[-1]
        if min(i_prev.shape) < 16:
            raise ImageTooSmall(
                f"level below 8x8: parent level is {i_prev.shape[1]}x{i_prev.shape[0]}")
        pyr.append((_downsample_intensity(i_prev), _downsample_depth(d_prev)))
    frame.pyramid = pyr
    return frame


def gradient_images(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference image gradients (d/du, d/dv)."""
    gv, gu = np.gradient(img)
    return gu, gv
