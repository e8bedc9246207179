"""Synthetic ground-truth fixtures for recovery experiments.

A fixture is a directory with a mesh model, a dataset manifest, rendered
target frames with foreground masks, and the ground-truth asset they
were rendered from. Because the targets come from a known rectification
of the same representation, recovery quality has a known-good optimum.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .assets import AvatarAsset, save_asset
from .camera import orbit_camera
from .headmesh import MeshParams, bake_raster_table, make_test_head, mesh_hash, save_mesh
from .imgio import write_png
from .optimize import MapBuilder, RectificationSet, blending_weights
from .render import RasterConfig, render
from .uvmap import (CH_ALPHA, CH_COLOR, CH_MU, CH_ROT, CH_SCALE, N_CHANNELS,
                    UVGaussianMap, UVOffsets, apply_offsets)

__all__ = ["smooth_offsets", "make_fixture"]

# Per-group amplitudes of the ground-truth rectification fields.
_AMP = {
    "mu": 0.004,      # meters of positional warp
    "scale": 0.5,     # log-units around the +2.4 size boost
    "rot": 0.3,
    "alpha": 0.7,     # logits around the +2.6 opacity boost
    "color": 1.0,     # SH coefficient units
}
_SCALE_BOOST = 2.4   # makes ground-truth splats a few pixels wide
_ALPHA_BOOST = 2.6   # lifts activated opacity from 0.1 to ~0.6


def smooth_offsets(mask: np.ndarray, rng: np.random.Generator,
                   sigma: float = 2.5) -> UVOffsets:
    """Random offsets, low-pass filtered in UV space so they are smooth."""
    H, W = mask.shape
    data = np.zeros((H, W, N_CHANNELS))

    def field(channels, amp, bias=0.0):
        n = channels.stop - channels.start if isinstance(channels, slice) else 1
        noise = rng.normal(0.0, 1.0, (H, W, n))
        for c in range(n):
            noise[..., c] = gaussian_filter(noise[..., c], sigma, mode="nearest")
            peak = np.abs(noise[..., c]).max()
            noise[..., c] *= amp / max(peak, 1e-12)
        return bias + (noise[..., 0] if n == 1 else noise)

    data[..., CH_MU] = field(CH_MU, _AMP["mu"])
    data[..., CH_SCALE] = field(CH_SCALE, _AMP["scale"], bias=_SCALE_BOOST)
    data[..., CH_ROT] = field(CH_ROT, _AMP["rot"])
    data[..., CH_ALPHA] = field(CH_ALPHA, _AMP["alpha"], bias=_ALPHA_BOOST)
    data[..., CH_COLOR] = field(CH_COLOR, _AMP["color"])
    return UVOffsets(data, mask)


def _fixture_cameras(center, radius, n_train, n_eval, image_size):
    distance = 3.4 * radius
    focal = 1.4 * image_size
    cams = []
    for i in range(n_train):
        az = np.deg2rad(-55 + 110 * i / max(n_train - 1, 1))
        el = np.deg2rad(12 * np.sin(2.2 * i))
        cams.append(orbit_camera(center, az, el, distance,
                                 width=image_size, height=image_size, focal=focal))
    for i in range(n_eval):
        az = np.deg2rad(-42 + 84 * i / max(n_eval - 1, 1) + 7)
        el = np.deg2rad(-9 + 5 * i)
        cams.append(orbit_camera(center, az, el, distance,
                                 width=image_size, height=image_size, focal=focal))
    return cams


def make_fixture(out_dir, seed: int = 0, n_train: int = 20, n_eval: int = 5,
                 uv_size: int = 48, image_size: int = 128,
                 expressions: int = 1, background=(1.0, 1.0, 1.0),
                 raster: RasterConfig = RasterConfig()) -> dict:
    """Write a synthetic dataset; returns the manifest dict.

    ``expressions=2`` alternates frames between two expressions, each
    with its own ground-truth rectification, which a single global map
    cannot fit exactly.
    """
    if expressions not in (1, 2):
        raise ValueError("expressions must be 1 or 2")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    model = make_test_head(seed)
    mesh_file = out / "mesh.uvhm"
    save_mesh(mesh_file, model)
    table = bake_raster_table(model, uv_size, uv_size)
    builder = MapBuilder(model, table)
    mask = table.mask

    rng = np.random.default_rng(np.random.SeedSequence([0xF1C5, seed]))
    rect_a = smooth_offsets(mask, rng)
    rect_b = smooth_offsets(mask, rng) if expressions == 2 else rect_a

    k_exp = model.k_exp
    beta_id = np.zeros(model.k_id)
    exp_a = np.zeros(k_exp)
    exp_b = np.zeros(k_exp)
    if expressions == 2:
        exp_a[0] = 1.5
        exp_b[1] = 1.5

    center = model.template.mean(axis=0)
    radius = float(np.linalg.norm(model.template - center, axis=1).max())
    cams = _fixture_cameras(center, radius, n_train, n_eval, image_size)

    frames = []
    for i, cam in enumerate(cams):
        use_b = expressions == 2 and i % 2 == 1
        beta_exp = exp_b if use_b else exp_a
        gt_rect = rect_b if use_b else rect_a
        params = MeshParams(beta_id, beta_exp, np.zeros(3))
        gt_map = apply_offsets(builder.build(params), [gt_rect])
        outp = render(gt_map, cam, background, raster)
        fg = (1.0 - outp.transmittance) > 0.2

        img_name = f"images/frame_{i:04d}.png"
        mask_name = f"masks/frame_{i:04d}.png"
        write_png(out / img_name, outp.image)
        write_png(out / mask_name, fg.astype(np.float64))
        frames.append({
            "image": img_name,
            "mask": mask_name,
            "beta_exp": [float(v) for v in beta_exp],
            "beta_jaw": [0.0, 0.0, 0.0],
            "camera": cam.to_json(),
        })

    manifest = {
        "mesh_model": "mesh.uvhm",
        "beta_id": [float(v) for v in beta_id],
        "train_fraction": n_train / (n_train + n_eval),
        "background": list(background),
        "uv_size": uv_size,
        "seed": seed,
        "expressions": expressions,
        "frames": frames,
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)

    # ground-truth asset (exact for the single-expression fixture; for the
    # two-expression variant it stores the expression-A rectification)
    rect = RectificationSet(
        delta_mean=UVOffsets(np.zeros_like(rect_a.data), mask),
        delta_global=rect_a, blend=np.repeat(rect_a.data[None], 10, axis=0),
        mask=mask.copy(),
    )
    neutral = builder.build(MeshParams(beta_id, np.zeros(k_exp), np.zeros(3)))
    asset = AvatarAsset.from_training(neutral, rect, beta_id, "mesh.uvhm",
                                      mesh_hash(mesh_file))
    save_asset(out / "gt_asset.uvga", asset)
    if expressions == 2:
        np.savez(out / "gt_rects.npz", rect_a=rect_a.data, rect_b=rect_b.data)
    return manifest
