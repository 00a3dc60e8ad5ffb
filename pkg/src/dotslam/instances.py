"""Instance mask ingest, persistent object registry and track association."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import DecodeError, DimensionMismatch, TooFewValidPoints
from .geometry import Frame, SE3Pose, gradient_images
from .photo_tracker import BACKGROUND, PointSet


class MaskSource(enum.Enum):
    NETWORK = "network"
    PROPAGATED = "propagated"


class MotionState(enum.Enum):
    IN_MOTION = "in_motion"
    STATIC = "static"
    NOT_OBSERVED = "not_observed"


@dataclass
class LabelMask:
    """Per-pixel instance ids; 0 is background/static."""

    labels: np.ndarray
    source: MaskSource
    frame_index: int

    def instance_ids(self) -> list[int]:
        ids = np.unique(self.labels)
        return [int(i) for i in ids if i != 0]


@dataclass
class ObjectTrack:
    """One persistent potentially-dynamic instance."""

    id: int
    pose: SE3Pose = field(default_factory=SE3Pose.identity)   # T_o w.r.t. the anchor frame
    step: SE3Pose = field(default_factory=SE3Pose.identity)   # constant-velocity memory
    points: PointSet | None = None
    state: MotionState = MotionState.NOT_OBSERVED
    state_age: int = 0
    last_seen: int = -1
    median_depth: float = 0.0
    missed_detections: int = 0
    visible: bool = True
    world_motion: SE3Pose | None = None   # accumulated own motion in world coords

    def set_state(self, state: MotionState) -> None:
        if state == self.state:
            self.state_age += 1
        else:
            self.state = state
            self.state_age = 0


@dataclass
class SamplingConfig:
    background_points: int = 800
    object_points: int = 200
    cell: int = 4                 # one point per cell x cell pixel grid
    min_gradient: float = 1.0     # gray levels per pixel
    min_instance_pixels: int = 100
    max_missed_detections: int = 3
    max_depth_curvature: float = 0.002   # meters; rejects creases and edges


class Registry:
    """Single-writer per frame store of all object tracks."""

    def __init__(self) -> None:
        self.tracks: dict[int, ObjectTrack] = {}
        self.background: PointSet | None = None
        self._next_id = 1

    def spawn(self) -> ObjectTrack:
        track = ObjectTrack(id=self._next_id)
        self._next_id += 1   # ids are never recycled
        self.tracks[track.id] = track
        return track

    def retire(self, track_id: int) -> None:
        self.tracks.pop(track_id, None)

    def active(self) -> list[ObjectTrack]:
        return [t for t in self.tracks.values() if t.points is not None]


def load_mask(path: str | Path, expected_shape: tuple[int, int] | None = None,
              frame_index: int = 0, min_instance_pixels: int = 100) -> LabelMask:
    """Decode a 16-bit label image; instances below the pixel floor are dropped."""
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise DecodeError(f"cannot decode label image {path}")
    if img.ndim != 2:
        raise DecodeError(f"label image {path} must be single-channel")
    if expected_shape is not None and img.shape != tuple(expected_shape):
        raise DimensionMismatch(
            f"mask {img.shape} does not match frame {tuple(expected_shape)}")
    labels = img.astype(np.int32)
    ids, counts = np.unique(labels, return_counts=True)
    for i, c in zip(ids, counts):
        if i != 0 and c < min_instance_pixels:
            labels[labels == i] = 0
    return LabelMask(labels, MaskSource.NETWORK, frame_index)


def _iou_table(a: np.ndarray, b: np.ndarray) -> dict[tuple[int, int], float]:
    """IoU for every (id_a, id_b) pair of nonzero labels, by pixel counting."""
    ids_a = [int(i) for i in np.unique(a) if i != 0]
    ids_b = [int(i) for i in np.unique(b) if i != 0]
    areas_a = {i: int((a == i).sum()) for i in ids_a}
    areas_b = {i: int((b == i).sum()) for i in ids_b}
    table: dict[tuple[int, int], float] = {}
    for ia in ids_a:
        mask_a = a == ia
        for ib in ids_b:
            inter = int((mask_a & (b == ib)).sum())
            if inter == 0:
                continue
            union = areas_a[ia] + areas_b[ib] - inter
            table[(ia, ib)] = inter / union
    return table


def associate(net_mask: LabelMask, propagated_mask: LabelMask, registry: Registry,
              iou_threshold: float = 0.3) -> tuple[dict[int, int], list[int]]:
    """Match network instances to existing tracks by greedy descending IoU.

    Returns (net_id -> track_id mapping, list of newly born track ids).
    Propagated labels are assumed to already be track ids. Unmatched
    network instances spawn new tracks; unmatched tracks accumulate a
    missed-detection count and are retired once over the limit.
    """
    if net_mask.labels.shape != propagated_mask.labels.shape:
        raise DimensionMismatch("masks differ in shape")
    table = _iou_table(net_mask.labels, propagated_mask.labels)
    pairs = sorted(table.items(), key=lambda kv: (-kv[1], kv[0]))
    mapping: dict[int, int] = {}
    used_tracks: set[int] = set()
    for (net_id, track_id), iou in pairs:
        if iou < iou_threshold:
            break
        if net_id in mapping or track_id in used_tracks:
            continue
        if track_id not in registry.tracks:
            continue
        mapping[net_id] = track_id
        used_tracks.add(track_id)

    births: list[int] = []
    for net_id in sorted(int(i) for i in np.unique(net_mask.labels) if i != 0):
        if net_id not in mapping:
            track = registry.spawn()
            mapping[net_id] = track.id
            births.append(track.id)

    for track in list(registry.tracks.values()):
        if track.id in used_tracks or track.id in births:
            track.missed_detections = 0
        else:
            track.missed_detections += 1
    return mapping, births


def relabel(mask: LabelMask, mapping: dict[int, int]) -> LabelMask:
    """Rewrite network instance ids into persistent track ids."""
    out = np.zeros_like(mask.labels)
    for net_id, track_id in mapping.items():
        out[mask.labels == net_id] = track_id
    return LabelMask(out, mask.source, mask.frame_index)


def _select_region_points(grad_mag: np.ndarray, gu: np.ndarray, gv: np.ndarray,
                          depth: np.ndarray, region: np.ndarray, cap: int,
                          cfg: SamplingConfig,
                          rng: np.random.Generator | None = None) -> PointSet | None:
    """Keep up to `cap` highest-gradient pixels, one per grid cell."""
    eroded = cv2.erode(region.astype(np.uint8), np.ones((3, 3), np.uint8)).astype(bool)
    # points on depth creases (surface seams, occlusion edges) mix two
    # surfaces under interpolation and bias the solver; drop them early
    lap = np.abs(cv2.Laplacian(depth, cv2.CV_64F, ksize=1))
    crease = (lap > cfg.max_depth_curvature).astype(np.uint8)
    crease = cv2.dilate(crease, np.ones((3, 3), np.uint8)).astype(bool)
    ok = eroded & ~crease & (depth > 0) & (grad_mag > cfg.min_gradient)
    vs, us = np.nonzero(ok)
    if len(vs) == 0:
        return None
    g = grad_mag[vs, us]
    if rng is not None:
        # tie-break jitter for trial-to-trial variation studies
        g = g * (1.0 + 1e-3 * rng.random(len(g)))
    cells = (vs // cfg.cell).astype(np.int64) * (1 << 32) + (us // cfg.cell)
    order = np.lexsort((-g, cells))
    cells_sorted = cells[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = cells_sorted[1:] != cells_sorted[:-1]
    keep = order[first]
    keep = keep[np.argsort(-g[keep], kind="stable")[:cap]]
    vs, us = vs[keep], us[keep]
    pix = np.stack([us, vs], axis=1).astype(float)
    return PointSet(pix=pix, depth=depth[vs, us].astype(float),
                    grad=np.stack([gu[vs, us], gv[vs, us]], axis=1))


def resample_points(frame: Frame, mask: LabelMask, registry: Registry,
                    cfg: SamplingConfig,
                    rng: np.random.Generator | None = None) -> Registry:
    """Re-anchor background and per-object point sets in a new reference frame."""
    gu, gv = gradient_images(frame.intensity)
    grad_mag = np.hypot(gu, gv)
    depth = frame.depth

    bg = _select_region_points(grad_mag, gu, gv, depth, mask.labels == 0,
                               cfg.background_points, cfg, rng)
    if bg is None:
        raise TooFewValidPoints("no background points could be sampled")
    bg.owner = BACKGROUND
    registry.background = bg

    present = set(mask.instance_ids())
    for track in registry.tracks.values():
        if track.id not in present:
            track.points = None
            track.visible = False
            continue
        pts = _select_region_points(grad_mag, gu, gv, depth,
                                    mask.labels == track.id,
                                    cfg.object_points, cfg, rng)
        if pts is None:
            track.points = None
            track.visible = False
            track.set_state(MotionState.NOT_OBSERVED)
            continue
        pts.owner = track.id
        track.points = pts
        track.pose = SE3Pose.identity()
        track.visible = True
        track.last_seen = mask.frame_index
        track.median_depth = float(np.median(pts.depth))
    return registry
