"""Frame-sequencing driver: the processing loop behind `dot run`.

Every frame either carries a network mask (associate new instances, re-anchor
reference points) or receives a mask propagated geometrically from the last
anchored reference. Camera tracking always precedes object tracking, and
objects are tracked from the closest to the farthest.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .config import PipelineConfig
from .dataset import Dataset
from .errors import (
    ConfigError,
    NoValidProjections,
    SingularSystem,
    TooFewValidPoints,
    TrackingLost,
)
from .geometry import Frame, SE3Pose, build_pyramid
from .instances import (
    LabelMask,
    MotionState,
    Registry,
    associate,
    relabel,
    resample_points,
)
from .maskprop import depth_order, emit_output_mask, propagate_mask
from .motion import adaptive_threshold, classify, dynamic_disparity, observability
from .photo_tracker import track_camera, track_object
from .trajio import write_tum

log = logging.getLogger("dotslam")


@dataclass
class RunSummary:
    frames: int
    tracked_frames: int
    failure: str | None = None
    track_map: dict[int, int] = field(default_factory=dict)
    camera_trajectory: list[SE3Pose] = field(default_factory=list)
    timestamps: list[float] = field(default_factory=list)

    @property
    def tracked_fraction(self) -> float:
        return self.tracked_frames / self.frames if self.frames else 0.0


class Pipeline:
    def __init__(self, config: PipelineConfig, out_dir: str | Path):
        self.cfg = config
        self.ds = Dataset.open(config.dataset)
        self.out = Path(out_dir)
        (self.out / "masks").mkdir(parents=True, exist_ok=True)
        (self.out / "labels").mkdir(exist_ok=True)
        self.rng = (np.random.default_rng(config.seed)
                    if config.sample_jitter else None)
        self.registry = Registry()
        self.track_map: dict[int, int] = {}
        self.states_file = (self.out / "states.jsonl").open("w")
        # anchor state
        self.anchor: Frame | None = None
        self.anchor_mask: LabelMask | None = None
        self.anchor_world = SE3Pose.identity()   # world -> anchor camera
        self.T_c = SE3Pose.identity()            # anchor -> current camera
        self.prev_T_c = SE3Pose.identity()
        self.cam_step = SE3Pose.identity()       # frame-to-frame velocity memory
        self.obj_world: dict[int, SE3Pose] = {}  # accumulated object motion in world
        self.cam_traj: list[SE3Pose] = []
        self.timestamps: list[float] = []

    # ------------------------------------------------------------------ helpers

    def _record_state(self, frame: int, oid: int, d_d, entropy, threshold,
                      state: MotionState, valid_points: int = 0) -> None:
        rec = {"frame": frame, "object_id": oid,
               "d_d": None if d_d is None or not math.isfinite(d_d) else d_d,
               "entropy": None if entropy is None or not math.isfinite(entropy) else entropy,
               "threshold": None if threshold is None or not math.isfinite(threshold) else threshold,
               "state": state.value,
               "valid_points": valid_points}
        self.states_file.write(json.dumps(rec) + "\n")

    def _anchor_here(self, frame: Frame, mask: LabelMask) -> None:
        """Re-anchor all reference points at a network-mask frame."""
        for track in self.registry.active():
            # transport the per-frame object step into the new anchor coords
            track.step = self.T_c.compose(track.step).compose(self.T_c.inverse())
        resample_points(frame, mask, self.registry, self.cfg.sampling, self.rng)
        self.anchor = frame
        self.anchor_mask = mask
        self.anchor_world = self.T_c.compose(self.anchor_world)
        self.T_c = SE3Pose.identity()
        self.prev_T_c = SE3Pose.identity()

    def _occlude_points(self, track, occ: np.ndarray) -> None:
        """Invalidate points of `track` hidden behind already-tracked nearer
        objects, before its own residuals are evaluated."""
        pts = track.points
        use = pts.valid & (pts.depth > 0)
        if not use.any():
            return
        X = self.ds.cam.backproject_many(pts.pix[use], pts.depth[use])
        uv, ok = self.ds.cam.project_many(self.T_c.apply(track.pose.apply(X)))
        h, w = occ.shape
        ui = np.rint(np.clip(uv[:, 0], 0, w - 1)).astype(int)
        vi = np.rint(np.clip(uv[:, 1], 0, h - 1)).astype(int)
        idx = np.flatnonzero(use)
        pts.valid[idx[ok & occ[vi, ui]]] = False

    def _splat_footprint(self, oid: int, occ: np.ndarray) -> None:
        """Add the object's warped silhouette to the occlusion footprint."""
        track = self.registry.tracks[oid]
        depth = self.anchor.depth
        vs, us = np.nonzero((self.anchor_mask.labels == oid) & (depth > 0))
        if len(vs) == 0:
            return
        X = self.ds.cam.backproject_many(
            np.stack([us, vs], axis=1).astype(float), depth[vs, us])
        uv, ok = self.ds.cam.project_many(self.T_c.apply(track.pose.apply(X)))
        if not ok.any():
            return
        region = np.zeros(occ.shape, dtype=np.uint8)
        region[np.rint(uv[ok, 1]).astype(int), np.rint(uv[ok, 0]).astype(int)] = 1
        region = cv2.morphologyEx(region, cv2.MORPH_CLOSE, np.ones((3, 3), np.uint8))
        occ |= region.astype(bool)

    def _track_objects(self, frame: Frame) -> None:
        th = self.cfg.thresholds
        occ = np.zeros(frame.intensity.shape, dtype=bool)
        for oid in depth_order(self.registry):
            track = self.registry.tracks[oid]
            d_d = entropy = threshold = None
            try:
                if occ.any():
                    self._occlude_points(track, occ)
                prev = track.pose
                init = track.step.compose(track.pose)
                res = track_object(self.anchor, frame, track.points, self.T_c,
                                   init, self.ds.cam, self.cfg.solver)
                track.pose = res.pose
                track.step = res.pose.compose(prev.inverse())
                d_d = dynamic_disparity(track.points, self.T_c, track.pose,
                                        self.ds.cam)
                entropy = observability(res.normal_eq)
                threshold = adaptive_threshold(entropy, th)
                state = classify(d_d, entropy, th, track.state, track.state_age)
                # refresh visible depth for the near-to-far ordering
                X = self.ds.cam.backproject_many(
                    track.points.pix[track.points.valid],
                    track.points.depth[track.points.valid])
                z = self.T_c.apply(track.pose.apply(X))[:, 2]
                if len(z):
                    track.median_depth = float(np.median(z))
            except (TrackingLost, SingularSystem, TooFewValidPoints,
                    NoValidProjections) as exc:
                log.debug("object %d not observable at frame %d: %s",
                          oid, frame.index, exc)
                state = classify(0.0, -math.inf, th, track.state, track.state_age)
            self._splat_footprint(oid, occ)
            track.set_state(state)
            self._record_state(frame.index, oid, d_d, entropy, threshold, state,
                              track.points.num_valid if track.points else 0)
            # accumulate the object's own motion in world coordinates
            anchor_to_world = self.anchor_world.inverse()
            seg = anchor_to_world.compose(track.pose).compose(self.anchor_world)
            base = self.obj_world.setdefault(oid, SE3Pose.identity())
            track.world_motion = seg.compose(base)

    def _emit(self, frame: Frame, label_mask: LabelMask) -> None:
        out_mask = emit_output_mask(label_mask, self.registry,
                                    self.cfg.dilate_masks)
        cv2.imwrite(str(self.out / "masks" / f"{frame.index:06d}.png"), out_mask)
        cv2.imwrite(str(self.out / "labels" / f"{frame.index:06d}.png"),
                    label_mask.labels.astype(np.uint16))
        world_cam = self.T_c.compose(self.anchor_world)
        self.cam_traj.append(world_cam.inverse())
        self.timestamps.append(frame.timestamp)

    def _finish(self, tracked: int, failure: str | None) -> RunSummary:
        self.states_file.close()
        write_tum(self.out / "traj_camera.txt", self.timestamps, self.cam_traj)
        # per-object trajectories are the accumulated own motion relative to
        # the object's first appearance
        for oid, poses in self._obj_traj.items():
            times = [t for t, _ in poses]
            write_tum(self.out / f"traj_obj_{oid}.txt", times,
                      [p for _, p in poses])
        summary = RunSummary(frames=self.ds.frames, tracked_frames=tracked,
                             failure=failure, track_map=dict(self.track_map),
                             camera_trajectory=self.cam_traj,
                             timestamps=self.timestamps)
        (self.out / "summary.json").write_text(json.dumps({
            "frames": summary.frames,
            "tracked_frames": summary.tracked_frames,
            "tracked_fraction": summary.tracked_fraction,
            "failure": summary.failure,
            "track_map": {str(k): v for k, v in summary.track_map.items()},
        }, indent=2))
        return summary

    # ---------------------------------------------------------------- main loop

    def run(self) -> RunSummary:
        cfg = self.cfg
        ds = self.ds
        if 0 not in ds.mask_frames:
            raise ConfigError("the first frame must carry a network mask")
        mask_set = set(ds.mask_frames)
        self._obj_traj: dict[int, list[tuple[float, SE3Pose]]] = {}
        tracked = 0
        failure = None

        for i in range(ds.frames):
            frame = build_pyramid(ds.load_frame(i), cfg.solver.pyramid_levels)
            if i == 0:
                net = ds.load_network_mask(0, cfg.sampling.min_instance_pixels)
                empty = LabelMask(np.zeros_like(net.labels), net.source, 0)
                mapping, _ = associate(net, empty, self.registry)
                self.track_map.update(mapping)
                canonical = relabel(net, mapping)
                self._anchor_here(frame, canonical)
                for track in self.registry.active():
                    self._record_state(0, track.id, None, None, None, track.state,
                                      track.points.num_valid if track.points else 0)
                self._emit(frame, canonical)
                tracked += 1
                continue

            try:
                init = self.cam_step.compose(self.T_c)
                res = track_camera(self.anchor, frame, self.registry.background,
                                   init, ds.cam, cfg.solver)
            except (TrackingLost, TooFewValidPoints, SingularSystem) as exc:
                failure = f"camera tracking lost at frame {i}: {exc}"
                log.error("%s", failure)
                break
            self.cam_step = res.pose.compose(self.T_c.inverse())
            self.prev_T_c = self.T_c
            self.T_c = res.pose

            self._track_objects(frame)
            for track in self.registry.active():
                if track.world_motion is not None:
                    self._obj_traj.setdefault(track.id, []).append(
                        (frame.timestamp, track.world_motion))

            if i in mask_set:
                prop = propagate_mask(self.anchor_mask, self.registry, self.T_c,
                                      ds.cam, self.anchor, frame_index=i)
                net = ds.load_network_mask(i, cfg.sampling.min_instance_pixels)
                mapping, births = associate(net, prop, self.registry)
                for net_id, tid in mapping.items():
                    self.track_map.setdefault(net_id, tid)
                for track in list(self.registry.tracks.values()):
                    if (track.missed_detections > cfg.sampling.max_missed_detections
                            and not track.visible):
                        self.registry.retire(track.id)
                canonical = relabel(net, mapping)
                # persist object motion accumulated up to this anchor
                for oid, track in self.registry.tracks.items():
                    if track.world_motion is not None:
                        self.obj_world[oid] = track.world_motion
                self._anchor_here(frame, canonical)
                self._emit(frame, canonical)
            else:
                prop = propagate_mask(self.anchor_mask, self.registry, self.T_c,
                                      ds.cam, self.anchor, frame_index=i)
                self._emit(frame, prop)
            tracked += 1

        return self._finish(tracked, failure)


def run_pipeline(config: PipelineConfig, out_dir: str | Path) -> RunSummary:
    return Pipeline(config, out_dir).run()
