"""Command-line entry points: render, run, eval, calibrate, mask-diff."""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click
import cv2
import numpy as np
import yaml

from . import evaluation, synth
from .config import load_config
from .errors import ConfigError, DotError
from .pipeline import run_pipeline
from .trajio import read_tum

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRACKING = 3


def _setup_logging() -> None:
    level = os.environ.get("DOT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


@click.group()
def main() -> None:
    """Dynamic object tracking front-end for visual SLAM."""
    _setup_logging()


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def render(spec_path: str, out_dir: str) -> None:
    """Render a synthetic RGB-D dataset from a YAML scene spec."""
    try:
        spec = synth.scene_from_dict(yaml.safe_load(Path(spec_path).read_text()))
        synth.render(spec, out_dir)
    except DotError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(f"rendered {spec.frames} frames to {out_dir}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
def run(config_path: str, out_dir: str) -> None:
    """Run the tracking pipeline over a dataset."""
    try:
        cfg = load_config(config_path)
        summary = run_pipeline(cfg, out_dir)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except DotError as exc:
        click.echo(f"tracking failure: {exc}", err=True)
        sys.exit(EXIT_TRACKING)
    click.echo(f"tracked {summary.tracked_frames}/{summary.frames} frames "
               f"({100 * summary.tracked_fraction:.1f}%)")
    if summary.failure:
        click.echo(f"tracking failure: {summary.failure}", err=True)
        sys.exit(EXIT_TRACKING)


@main.command("eval")
@click.option("--est", "est_path", required=True, type=click.Path(exists=True))
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True))
def eval_cmd(est_path: str, gt_path: str) -> None:
    """ATE RMSE between two TUM-format trajectories."""
    t_est, est = read_tum(est_path)
    t_gt, gt = read_tum(gt_path)
    # associate by nearest timestamp
    idx = np.abs(t_gt[None, :] - t_est[:, None]).argmin(axis=1)
    gt_assoc = [gt[j] for j in idx]
    try:
        ate = evaluation.ate_rmse(est, gt_assoc)
    except DotError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(f"ate_rmse_m {ate:.6f}")


@main.command()
@click.option("--datasets", required=True,
              help="comma-separated dataset directories")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="write chosen thresholds as YAML")
def calibrate(datasets: str, out_path: str | None) -> None:
    """Grid-search motion thresholds on labeled synthetic datasets."""
    dirs = [d for d in datasets.split(",") if d]
    th, report = synth.calibrate_thresholds(dirs)
    click.echo(json.dumps({
        "h_min": th.h_min, "delta_base": th.delta_base,
        "delta_slope": th.delta_slope, **report}, indent=2))
    if out_path:
        Path(out_path).write_text(yaml.safe_dump({"thresholds": {
            "h_min": th.h_min, "delta_base": th.delta_base,
            "delta_slope": th.delta_slope,
            "hysteresis_frames": th.hysteresis_frames}}))


@main.command("mask-diff")
@click.argument("dir_a", type=click.Path(exists=True))
@click.argument("dir_b", type=click.Path(exists=True))
def mask_diff(dir_a: str, dir_b: str) -> None:
    """Per-frame and mean IoU between two mask directories."""
    names = sorted(set(p.name for p in Path(dir_a).glob("*.png"))
                   & set(p.name for p in Path(dir_b).glob("*.png")))
    if not names:
        click.echo("no common mask files", err=True)
        sys.exit(EXIT_CONFIG)
    ious = []
    for name in names:
        a = cv2.imread(str(Path(dir_a) / name), cv2.IMREAD_UNCHANGED)
        b = cv2.imread(str(Path(dir_b) / name), cv2.IMREAD_UNCHANGED)
        union = (a != 0) | (b != 0)
        if not union.any():
            iou = 1.0
        else:
            inter = (a == b) & (a != 0)
            iou = float(inter.sum()) / float(union.sum())
        ious.append(iou)
        click.echo(f"{name} {iou:.4f}")
    click.echo(f"mean {float(np.mean(ious)):.4f}")


if __name__ == "__main__":
    main()
