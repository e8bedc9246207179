"""Command-line workflows: build, optimize, render, animate, eval, serve.

Exit codes: 0 ok, 2 bad arguments, 3 I/O failure, 4 numerical failure.
"""

from __future__ import annotations

import functools
import json
import sys
import time
from pathlib import Path

import click
import numpy as np

EXIT_BAD_ARGS = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


class NumericalFailure(RuntimeError):
    pass


def _wrap_errors(fn):
    from .gauss import InvalidGaussianError

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except (NumericalFailure, InvalidGaussianError, FloatingPointError,
                np.linalg.LinAlgError) as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(EXIT_NUMERICAL)
        except (FileNotFoundError, IsADirectoryError, PermissionError, OSError) as exc:
            click.echo(f"I/O error: {exc}", err=True)
            sys.exit(EXIT_IO)
        except (ValueError, KeyError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_BAD_ARGS)
    return wrapper


def _load_runtime(asset_path, mesh_path=None, image_size=512):
    from .assets import load_asset, resolve_mesh
    from .runtime import AvatarRuntime

    asset = load_asset(asset_path)
    model = resolve_mesh(asset, asset_path, mesh_path)
    return AvatarRuntime(asset, model, default_image_size=image_size)


@click.group()
def main():
    """UV Gaussian head avatar toolkit."""


@main.command("init")
@click.option("--mesh", "mesh_path", required=True, type=click.Path(exists=True))
@click.option("--uv-size", default=320, show_default=True, help="UV map resolution")
@click.option("--blend-count", default=10, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@_wrap_errors
def cmd_init(mesh_path, uv_size, blend_count, out_path):
    """Build a base (un-rectified) avatar asset from a mesh model."""
    from .assets import AvatarAsset, save_asset
    from .headmesh import MeshParams, bake_raster_table, load_mesh, mesh_hash
    from .optimize import MapBuilder, RectificationSet

    model = load_mesh(mesh_path)
    table = bake_raster_table(model, uv_size, uv_size)
    builder = MapBuilder(model, table)
    params = MeshParams.neutral(model)
    rect = RectificationSet.zeros(table.mask, blend_count)
    asset = AvatarAsset.from_training(builder.build(params), rect,
                                      params.beta_id, mesh_path, mesh_hash(mesh_path))
    save_asset(out_path, asset)
    click.echo(f"wrote {out_path}: {uv_size}x{uv_size} UV map, "
               f"{int(table.mask.sum())} Gaussians, D={blend_count}")


@main.command("optimize")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True),
              help="dataset manifest JSON")
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="OptimConfig JSON; defaults used when omitted")
@click.option("--uv-size", default=320, show_default=True)
@click.option("--mesh", "mesh_path", type=click.Path(exists=True),
              help="override the manifest's mesh model")
@click.option("--out", "out_path", required=True, type=click.Path())
@_wrap_errors
def cmd_optimize(dataset_path, config_path, uv_size, mesh_path, out_path):
    """Two-stage rectification from a video dataset."""
    from .assets import AvatarAsset, config_hash, save_asset
    from .headmesh import MeshParams, load_mesh, mesh_hash
    from .optimize import OptimConfig, VideoDataset, run_optimization

    cfg = OptimConfig()
    if config_path:
        with open(config_path) as f:
            cfg = OptimConfig.from_json(json.load(f))
    ds = VideoDataset.from_manifest(dataset_path)
    mesh_file = Path(mesh_path) if mesh_path else ds.mesh_path
    model = load_mesh(mesh_file)

    def log(entry):
        if entry["step"] % 25 == 0:
            terms = "  ".join(f"{k}={v:.5f}" for k, v in entry.items()
                              if k not in ("stage", "step"))
            click.echo(f"stage {entry['stage']} step {entry['step']:5d}  {terms}")

    t0 = time.monotonic()
    rect, builder, history = run_optimization(ds, cfg, model, uv_size=uv_size, log=log)
    click.echo(f"optimized in {time.monotonic() - t0:.1f}s "
               f"({len(history)} steps, final loss {history[-1]['total']:.5f})")

    neutral = builder.build(MeshParams(ds.beta_id, np.zeros(model.k_exp), np.zeros(3)))
    asset = AvatarAsset.from_training(neutral, rect, ds.beta_id, mesh_file,
                                      mesh_hash(mesh_file), config_hash(cfg))
    save_asset(out_path, asset)
    click.echo(f"wrote {out_path}")


@main.command("render")
@click.option("--asset", "asset_path", required=True, type=click.Path(exists=True))
@click.option("--mesh", "mesh_path", type=click.Path(exists=True))
@click.option("--pose", "pose_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--size", default=512, show_default=True)
@_wrap_errors
def cmd_render(asset_path, mesh_path, pose_path, out_path, size):
    """Render one pose JSON to a PNG (or PFM with a .pfm extension)."""
    from .imgio import write_pfm, write_png
    from .runtime import PoseRequest

    rt = _load_runtime(asset_path, mesh_path, image_size=size)
    with open(pose_path) as f:
        pose = PoseRequest.from_json(json.load(f))
    out = rt.animate(pose)
    if str(out_path).lower().endswith(".pfm"):
        write_pfm(out_path, out.image)
    else:
        write_png(out_path, out.image)
    click.echo(f"wrote {out_path}")


@main.command("animate")
@click.option("--asset", "asset_path", required=True, type=click.Path(exists=True))
@click.option("--mesh", "mesh_path", type=click.Path(exists=True))
@click.option("--poses", "poses_path", required=True, type=click.Path(exists=True),
              help="pose-sequence JSON (array of poses)")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--size", default=512, show_default=True)
@click.option("--report-fps", is_flag=True, help="time a >=100-frame benchmark first")
@_wrap_errors
def cmd_animate(asset_path, mesh_path, poses_path, out_dir, size, report_fps):
    """Render a pose sequence into a directory of numbered frames."""
    from .imgio import write_png
    from .runtime import PoseRequest

    rt = _load_runtime(asset_path, mesh_path, image_size=size)
    with open(poses_path) as f:
        seq = json.load(f)
    if not isinstance(seq, list) or not seq:
        raise click.UsageError("pose sequence must be a non-empty JSON array")
    poses = [PoseRequest.from_json(p) for p in seq]
    if report_fps:
        fps = rt.benchmark(poses[0], frames=max(100, len(poses)))
        click.echo(f"fps: {fps:.1f} at {size}x{size}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.monotonic()
    for i, pose in enumerate(poses):
        write_png(out / f"frame_{i:05d}.png", rt.animate(pose).image)
    dt = time.monotonic() - t0
    click.echo(f"wrote {len(poses)} frames to {out_dir} "
               f"({len(poses) / dt:.1f} fps including PNG encode)")


@main.command("eval")
@click.option("--asset", "asset_path", required=True, type=click.Path(exists=True))
@click.option("--mesh", "mesh_path", type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--split", default="eval", type=click.Choice(["train", "eval"]),
              show_default=True)
@_wrap_errors
def cmd_eval(asset_path, mesh_path, dataset_path, split):
    """L1 / SSIM / PSNR of the avatar against a dataset split."""
    from .optimize import MapBuilder, OptimConfig, VideoDataset, evaluate_frames

    rt = _load_runtime(asset_path, mesh_path)
    ds = VideoDataset.from_manifest(dataset_path)
    frames = ds.split(split)
    if not frames:
        raise click.UsageError(f"split {split!r} selects no frames")
    cfg = OptimConfig()
    report = evaluate_frames(rt.builder, rt.rect, frames, cfg, stage=2)
    click.echo(f"{'frame':>5}  {'L1':>8}  {'SSIM':>7}  {'PSNR':>7}")
    for i, m in enumerate(report["frames"]):
        click.echo(f"{i:5d}  {m['l1']:8.5f}  {m['ssim']:7.4f}  {m['psnr']:7.3f}")
    s = report["mean"]
    click.echo(f" mean  {s['l1']:8.5f}  {s['ssim']:7.4f}  {s['psnr']:7.3f}")


@main.command("synth-fixture")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--train-frames", default=20, show_default=True)
@click.option("--eval-frames", default=5, show_default=True)
@click.option("--uv-size", default=48, show_default=True)
@click.option("--image-size", default=128, show_default=True)
@click.option("--expressions", default=1, type=click.Choice(["1", "2"]),
              show_default=True)
@_wrap_errors
def cmd_synth_fixture(seed, out_dir, train_frames, eval_frames, uv_size,
                      image_size, expressions):
    """Generate the synthetic ground-truth dataset used by the test suite."""
    from .fixture import make_fixture

    manifest = make_fixture(out_dir, seed=seed, n_train=train_frames,
                            n_eval=eval_frames, uv_size=uv_size,
                            image_size=image_size, expressions=int(expressions))
    click.echo(f"wrote fixture with {len(manifest['frames'])} frames to {out_dir}")


@main.command("serve")
@click.option("--asset", "asset_path", required=True, type=click.Path(exists=True))
@click.option("--mesh", "mesh_path", type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8321, show_default=True)
@click.option("--size", default=256, show_default=True,
              help="default render resolution for poses without a camera size")
@_wrap_errors
def cmd_serve(asset_path, mesh_path, host, port, size):
    """Serve the avatar over HTTP + WebSocket for the control panel."""
    import uvicorn

    from .service import create_app

    rt = _load_runtime(asset_path, mesh_path, image_size=size)
    app = create_app(rt)
    click.echo(f"serving avatar on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
