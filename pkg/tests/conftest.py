"""Shared fixtures: camera models, synthetic scene builders, rendered datasets.

Scene geometry is deliberately frozen (seeds included) so that every test run
exercises identical images; the builders mirror the kind of street scene the
pipeline targets, i.e. a textured background wall plus a few cuboid objects.
"""

import math

import numpy as np
import pytest

from dotslam import synth
from dotslam.geometry import CameraModel, SE3Pose, so3_exp

WIDTH, HEIGHT = 240, 180
FOCAL = 200.0


def make_camera(fx: float = FOCAL, width: int = WIDTH,
                height: int = HEIGHT) -> CameraModel:
    return CameraModel(fx, fx, (width - 1) / 2.0, (height - 1) / 2.0,
                       width, height)


def textured_cuboid(size, rng, owner, contrast=80.0, cyc_scale=2.0):
    """Cuboid facets re-textured at a wavelength coarse enough for sub-pixel
    photometric tracking (roughly 30 px in the image at typical depths)."""
    facets = synth.cuboid_facets(size, rng, owner, contrast=contrast)
    out = []
    for f in facets:
        extent = math.sqrt(np.linalg.norm(f.e_u) * np.linalg.norm(f.e_v))
        tex = synth.Texture.random(rng, contrast=contrast,
                                   cycles=max(1.5, cyc_scale * extent))
        out.append(synth.Facet(f.p0, f.e_u, f.e_v, tex, owner))
    return out


def classifier_scene(seed, specs, frames=12, mask_every=4, noise=2.0,
                     cam_vel=(0.008, 0.002, 0.003, 0.0, 0.0015, 0.0)):
    """Wall plus cuboids scene from per-object dicts {pos, vel, size, yaw}."""
    rng = np.random.default_rng(seed)
    cam = make_camera()
    cam_traj = synth.constant_velocity_trajectory(
        SE3Pose.identity(), np.asarray(cam_vel, float), frames)
    wall = synth.wall_facet(7.0, 45.0, rng, contrast=70.0)
    objects = []
    for k, s in enumerate(specs, start=1):
        yaw = so3_exp(np.asarray(s.get("yaw", [0.12, 0.5, 0.0]), float))
        start = SE3Pose(yaw, np.asarray(s["pos"], float))
        vel = np.zeros(6)
        vel[:len(s.get("vel", []))] = s.get("vel", [])
        facets = textured_cuboid(s.get("size", [0.9, 0.8, 0.7]), rng, k)
        traj = synth.constant_velocity_trajectory(start, vel, frames)
        objects.append(synth.ObjectSpec(k, facets, traj,
                                        bool(np.any(vel != 0.0))))
    return synth.SceneSpec(cam, frames, cam_traj, [wall], objects,
                           noise_sigma=noise, mask_every=mask_every, seed=seed)


def affine_image(rng, shape=(HEIGHT, WIDTH)):
    """Image affine in pixel coordinates: both the analytic gradient and the
    interpolated value are exact, which makes derivative checks tight."""
    h, w = shape
    c0 = rng.uniform(60.0, 160.0)
    cu = rng.uniform(-0.4, 0.4)
    cv = rng.uniform(-0.4, 0.4)
    us, vs = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    return c0 + cu * us + cv * vs, (cu, cv)


# two-object tracking scene: one lateral mover, one static, mask cadence 4
TWO_OBJECT_SPECS = [
    {"pos": [-1.3, 0.15, 3.4], "vel": [0.06, 0, 0]},
    {"pos": [1.25, -0.3, 3.6], "vel": []},
]


@pytest.fixture(scope="session")
def two_object_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("two_object") / "ds"
    spec = classifier_scene(51, TWO_OBJECT_SPECS, noise=0.0)
    synth.render(spec, out)
    return out


@pytest.fixture(scope="session")
def calibration_datasets(tmp_path_factory):
    """Three labeled scenes for threshold calibration: lateral movers,
    statics, and small on-axis receding objects whose motion barely
    registers in the image."""
    scenes = [
        (21, [{"pos": [-1.4, 0.2, 3.4], "vel": [0.06, 0, 0]},
              {"pos": [1.3, -0.25, 3.6], "vel": []}], None),
        (22, [{"pos": [1.2, 0.3, 3.8], "vel": [-0.05, 0.02, 0]},
              {"pos": [-1.2, -0.4, 3.2], "vel": []},
              {"pos": [0.0, 0.0, 5.8], "vel": [0, 0, 0.06],
               "size": [0.6, 0.55, 0.5]}],
         (0.004, 0.001, 0.002, 0.0, 0.0, 0.0)),
        (23, [{"pos": [-1.0, -0.6, 4.0], "vel": [0.04, 0.04, 0]},
              {"pos": [0.9, 0.6, 3.1], "vel": []},
              {"pos": [0.0, 0.05, 5.6], "vel": [0, 0, 0.05],
               "size": [0.6, 0.55, 0.5]}],
         (0.004, 0.001, 0.002, 0.0, 0.0, 0.0)),
    ]
    dirs = []
    for seed, specs, cam_vel in scenes:
        kwargs = {"cam_vel": cam_vel} if cam_vel else {}
        out = tmp_path_factory.mktemp(f"cal{seed}") / "ds"
        synth.render(classifier_scene(seed, specs, **kwargs), out)
        dirs.append(out)
    return dirs
