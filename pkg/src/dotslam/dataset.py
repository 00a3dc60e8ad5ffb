"""On-disk dataset access: manifest, RGB-D frames and network masks."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import ConfigError, DecodeError
from .geometry import CameraModel, Frame
from .instances import LabelMask, load_mask


@dataclass
class Dataset:
    root: Path
    cam: CameraModel
    frames: int
    fps: float
    depth_scale: float
    mask_frames: list[int]
    masks_dir: str
    noise_sigma: float
    object_moving: dict[int, bool]

    @staticmethod
    def open(root: str | Path) -> "Dataset":
        root = Path(root)
        manifest = root / "manifest.json"
        if not manifest.is_file():
            raise ConfigError(f"no manifest.json in {root}")
        m = json.loads(manifest.read_text())
        for sub in ("rgb", "depth"):
            if not (root / sub).is_dir():
                raise ConfigError(f"dataset {root} is missing the {sub}/ directory")
        cam = CameraModel(fx=m["fx"], fy=m["fy"], cx=m["cx"], cy=m["cy"],
                          width=m["width"], height=m["height"])
        return Dataset(
            root=root, cam=cam, frames=int(m["frames"]),
            fps=float(m.get("fps", 30.0)),
            depth_scale=float(m.get("depth_scale", 5000.0)),
            mask_frames=[int(i) for i in m["mask_frames"]],
            masks_dir=m.get("masks_dir", "masks"),
            noise_sigma=float(m.get("noise_sigma", 0.0)),
            object_moving={int(k): bool(v)
                           for k, v in m.get("object_moving", {}).items()},
        )

    def load_frame(self, i: int) -> Frame:
        rgb_path = self.root / "rgb" / f"{i:06d}.png"
        depth_path = self.root / "depth" / f"{i:06d}.png"
        img = cv2.imread(str(rgb_path), cv2.IMREAD_GRAYSCALE)
        if img is None:
            raise DecodeError(f"cannot read {rgb_path}")
        d = cv2.imread(str(depth_path), cv2.IMREAD_UNCHANGED)
        if d is None:
            raise DecodeError(f"cannot read {depth_path}")
        return Frame(intensity=img.astype(float),
                     depth=d.astype(float) / self.depth_scale,
                     timestamp=i / self.fps, index=i)

    def load_network_mask(self, i: int, min_instance_pixels: int = 100) -> LabelMask:
        path = self.root / self.masks_dir / f"{i:06d}.png"
        return load_mask(path, (self.cam.height, self.cam.width), i,
                         min_instance_pixels)
