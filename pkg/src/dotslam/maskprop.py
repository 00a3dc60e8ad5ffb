"""Forward mask propagation with near-to-far occlusion ordering."""

from __future__ import annotations

import cv2
import numpy as np

from .errors import UnclassifiedTrack
from .geometry import CameraModel, Frame, SE3Pose
from .instances import LabelMask, MaskSource, MotionState, Registry

OUT_STATIC = 0
OUT_NOT_OBSERVED = 128
OUT_IN_MOTION = 255


def depth_order(registry: Registry) -> list[int]:
    """Active track ids from the closest to the farthest; ties by id."""
    active = [t for t in registry.active() if t.visible]
    return [t.id for t in sorted(active, key=lambda t: (t.median_depth, t.id))]


def propagate_mask(prev_mask: LabelMask, registry: Registry, T_c: SE3Pose,
                   cam: CameraModel, ref_frame: Frame,
                   frame_index: int | None = None) -> LabelMask:
    """Warp every object region of the reference mask into the current frame.

    Objects are processed from the closest to the farthest over a shared
    z-buffer, so nearer objects always win overlapping pixels; points of
    farther objects that end up under a nearer object are invalidated.
    """
    h, w = prev_mask.labels.shape
    out = np.zeros((h, w), dtype=prev_mask.labels.dtype)
    zbuf = np.full((h, w), np.inf)
    depth = ref_frame.depth
    order = depth_order(registry)

    for oid in order:
        track = registry.tracks[oid]
        vs, us = np.nonzero((prev_mask.labels == oid) & (depth > 0))
        if len(vs) == 0:
            track.visible = False
            continue
        X = cam.backproject_many(np.stack([us, vs], axis=1).astype(float),
                                 depth[vs, us])
        Xc = T_c.apply(track.pose.apply(X))
        uv, ok = cam.project_many(Xc)
        if not ok.any():
            track.visible = False
            continue
        ui = np.rint(uv[ok, 0]).astype(int)
        vi = np.rint(uv[ok, 1]).astype(int)
        z = Xc[ok, 2]
        closer = z < zbuf[vi, ui]
        out[vi[closer], ui[closer]] = oid
        zbuf[vi[closer], ui[closer]] = z[closer]

    # forward splatting leaves pinholes; close them without touching
    # pixels already claimed by another object
    for oid in order:
        region = (out == oid).astype(np.uint8)
        if not region.any():
            continue
        closed = cv2.morphologyEx(region, cv2.MORPH_CLOSE, np.ones((3, 3), np.uint8))
        fill = (closed > 0) & (out == 0)
        out[fill] = oid

    # invalidate points of farther objects now hidden behind nearer ones
    for rank, oid in enumerate(order):
        track = registry.tracks[oid]
        pts = track.points
        if pts is None:
            continue
        nearer = set(order[:rank])
        if not nearer:
            continue
        use = pts.valid & (pts.depth > 0)
        if not use.any():
            continue
        X = cam.backproject_many(pts.pix[use], pts.depth[use])
        uv, ok = cam.project_many(T_c.apply(track.pose.apply(X)))
        ui = np.rint(np.clip(uv[:, 0], 0, w - 1)).astype(int)
        vi = np.rint(np.clip(uv[:, 1], 0, h - 1)).astype(int)
        occluded = ok & np.isin(out[vi, ui], list(nearer))
        idx = np.flatnonzero(use)
        pts.valid[idx[occluded]] = False

    for oid in order:
        if not (out == oid).any():
            registry.tracks[oid].visible = False

    return LabelMask(out, MaskSource.PROPAGATED,
                     prev_mask.frame_index if frame_index is None else frame_index)


_STATE_VALUE = {
    MotionState.STATIC: OUT_STATIC,
    MotionState.IN_MOTION: OUT_IN_MOTION,
    MotionState.NOT_OBSERVED: OUT_NOT_OBSERVED,
}


def emit_output_mask(mask: LabelMask, registry: Registry,
                     dilate: int = 0) -> np.ndarray:
    """8-bit mask for the downstream SLAM system: {0, 128, 255}."""
    out = np.zeros(mask.labels.shape, dtype=np.uint8)
    for oid in mask.instance_ids():
        track = registry.tracks.get(oid)
        if track is None:
            raise UnclassifiedTrack(f"no track for visible instance {oid}")
        out[mask.labels == oid] = _STATE_VALUE[track.state]
    if dilate > 0:
        kernel = np.ones((2 * dilate + 1, 2 * dilate + 1), np.uint8)
        out = cv2.dilate(out, kernel)
    return out
