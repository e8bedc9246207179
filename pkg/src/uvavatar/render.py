"""Tile-based forward splatting with a naive reference path.

Splats are depth-sorted once (stable, so equal depths keep cloud order)
and binned into 16x16-pixel tiles; every pixel then alpha-composites its
tile's bin front to back. The reference renderer walks the full sorted
list per pixel and must agree with the tiled path to float precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .camera import Camera
from .splat import ProjectionCache, Splats, project
from .uvmap import GaussianCloud, UVGaussianMap, to_cloud

__all__ = ["RasterConfig", "RenderOutput", "RenderCache",
           "composite", "render", "render_cached", "reference_render"]


@dataclass(frozen=True)
class RasterConfig:
    """Rasterization knobs; defaults follow the standard splatting recipe."""

    tile_size: int = 16
    lowpass: float = 0.3          # px^2 added to the 2D covariance diagonal
    alpha_clip: float = 0.99
    alpha_min: float = 1.0 / 255.0
    transmittance_min: float = 1e-4
    maha_max: float = 9.0         # 3-sigma footprint cutoff


@dataclass(frozen=True)
class RenderOutput:
    image: np.ndarray          # (H, W, 3) in [0, 1]
    transmittance: np.ndarray  # (H, W) remaining T after compositing
    n_contrib: np.ndarray      # (H, W) int32 count of accumulated splats


@dataclass(frozen=True)
class RenderCache:
    """Everything the backward pass needs from a forward render."""

    output: RenderOutput
    proj: ProjectionCache
    config: RasterConfig
    background: np.ndarray
    order: np.ndarray            # depth sort: sorted pos -> kept pos
    entries: np.ndarray          # per-tile splat lists (into sorted arrays)
    tile_offsets: np.ndarray
    splat_entry_idx: np.ndarray  # CSR: sorted splat -> its entry positions
    splat_entry_off: np.ndarray
    sorted_mean2d: np.ndarray
    sorted_conic: np.ndarray
    sorted_alpha: np.ndarray
    sorted_color: np.ndarray
    last_entry: np.ndarray       # (H, W) per-pixel last accumulated bin pos


def _as_background(background) -> np.ndarray:
    bg = np.asarray(background, dtype=np.float64).reshape(-1)
    if bg.shape != (3,):
        raise ValueError("background must be an RGB triple")
    return bg


def _depth_order(splats: Splats) -> np.ndarray:
    # stable: equal depths keep cloud index order
    return np.argsort(splats.depth, kind="stable")


def _tile_ranges(splats, order, W, H, tile):
    n_tiles_x = (W + tile - 1) // tile
    n_tiles_y = (H + tile - 1) // tile
    ux = splats.mean2d[order, 0]
    uy = splats.mean2d[order, 1]
    r = splats.radius[order]
    tx0 = np.floor((ux - r) / tile).astype(np.int64)
    tx1 = np.floor((ux + r) / tile).astype(np.int64)
    ty0 = np.floor((uy - r) / tile).astype(np.int64)
    ty1 = np.floor((uy + r) / tile).astype(np.int64)
    off_image = (tx1 < 0) | (tx0 >= n_tiles_x) | (ty1 < 0) | (ty0 >= n_tiles_y)
    tx0 = np.clip(tx0, 0, n_tiles_x - 1)
    tx1 = np.clip(tx1, 0, n_tiles_x - 1)
    ty0 = np.clip(ty0, 0, n_tiles_y - 1)
    ty1 = np.clip(ty1, 0, n_tiles_y - 1)
    tx1[off_image] = -1
    tx0[off_image] = 0
    ty1[off_image] = -1
    ty0[off_image] = 0
    return tx0, tx1, ty0, ty1, n_tiles_x, n_tiles_y


def _bin_splats(splats, order, W, H, tile):
    tx0, tx1, ty0, ty1, ntx, nty = _tile_ranges(splats, order, W, H, tile)
    n_tiles = ntx * nty
    counts = np.zeros(n_tiles, dtype=np.int64)
    total = _kernels.count_tile_entries(tx0, tx1, ty0, ty1, ntx, counts)
    tile_offsets = np.zeros(n_tiles + 1, dtype=np.int64)
    np.cumsum(counts, out=tile_offsets[1:])

    per_splat = np.maximum(tx1 - tx0 + 1, 0) * np.maximum(ty1 - ty0 + 1, 0)
    splat_entry_off = np.zeros(order.shape[0] + 1, dtype=np.int64)
    np.cumsum(per_splat, out=splat_entry_off[1:])

    entries = np.empty(total, dtype=np.int64)
    splat_entry_idx = np.empty(total, dtype=np.int64)
    _kernels.fill_tile_entries(tx0, tx1, ty0, ty1, ntx, tile_offsets,
                               entries, splat_entry_idx, splat_entry_off)
    return entries, tile_offsets, splat_entry_idx, splat_entry_off, ntx, nty


def composite(splats: Splats, cam: Camera, background,
              config: RasterConfig = RasterConfig(),
              proj: ProjectionCache | None = None) -> RenderOutput | RenderCache:
    """Alpha-composite projected splats; returns a cache when given one."""
    bg = _as_background(background)
    H, W = cam.height, cam.width
    order = _depth_order(splats)
    entries, tile_offsets, se_idx, se_off, ntx, nty = _bin_splats(
        splats, order, W, H, config.tile_size)

    sm = np.ascontiguousarray(splats.mean2d[order])
    sc = np.ascontiguousarray(splats.conic[order])
    sa = np.ascontiguousarray(splats.alpha[order])
    scol = np.ascontiguousarray(splats.color[order])

    img = np.zeros((H, W, 3), dtype=np.float64)
    out_T = np.ones((H, W), dtype=np.float64)
    out_n = np.zeros((H, W), dtype=np.int32)
    out_last = np.zeros((H, W), dtype=np.int64)
    _kernels.forward_tiles(entries, tile_offsets, sm, sc, sa, scol, bg,
                           H, W, config.tile_size, ntx, nty,
                           config.alpha_clip, config.alpha_min,
                           config.transmittance_min, config.maha_max,
                           img, out_T, out_n, out_last)
    output = RenderOutput(image=img, transmittance=out_T, n_contrib=out_n)
    if proj is None:
        return output
    return RenderCache(
        output=output, proj=proj, config=config, background=bg, order=order,
        entries=entries, tile_offsets=tile_offsets,
        splat_entry_idx=se_idx, splat_entry_off=se_off,
        sorted_mean2d=sm, sorted_conic=sc, sorted_alpha=sa,
        sorted_color=scol, last_entry=out_last,
    )


def render(uvmap: UVGaussianMap, cam: Camera, background=(0.0, 0.0, 0.0),
           config: RasterConfig = RasterConfig()) -> RenderOutput:
    """to_cloud -> project -> composite."""
    splats = project(to_cloud(uvmap), cam, lowpass=config.lowpass)
    return composite(splats, cam, background, config)


def render_cached(uvmap: UVGaussianMap, cam: Camera, background=(0.0, 0.0, 0.0),
                  config: RasterConfig = RasterConfig()) -> RenderCache:
    """Forward render that keeps the state needed for the backward pass."""
    cloud = to_cloud(uvmap)
    splats, proj = project(cloud, cam, lowpass=config.lowpass, return_cache=True)
    return composite(splats, cam, background, config, proj=proj)


def render_cloud(cloud: GaussianCloud, cam: Camera, background=(0.0, 0.0, 0.0),
                 config: RasterConfig = RasterConfig()) -> RenderOutput:
    splats = project(cloud, cam, lowpass=config.lowpass)
    return composite(splats, cam, background, config)


def reference_render(uvmap_or_splats, cam: Camera, background=(0.0, 0.0, 0.0),
                     config: RasterConfig = RasterConfig()) -> RenderOutput:
    """Brute-force full-sort renderer; the oracle for the tiled path."""
    if isinstance(uvmap_or_splats, Splats):
        splats = uvmap_or_splats
    else:
        cloud = uvmap_or_splats if isinstance(uvmap_or_splats, GaussianCloud) \
            else to_cloud(uvmap_or_splats)
        splats = project(cloud, cam, lowpass=config.lowpass)
    bg = _as_background(background)
    H, W = cam.height, cam.width
    order = _depth_order(splats)
    img = np.zeros((H, W, 3), dtype=np.float64)
    out_T = np.ones((H, W), dtype=np.float64)
    out_n = np.zeros((H, W), dtype=np.int32)
    _kernels.reference_forward(
        np.ascontiguousarray(splats.mean2d[order]),
        np.ascontiguousarray(splats.conic[order]),
        np.ascontiguousarray(splats.alpha[order]),
        np.ascontiguousarray(splats.color[order]),
        bg, H, W, config.alpha_clip, config.alpha_min,
        config.transmittance_min, config.maha_max, img, out_T, out_n)
    return RenderOutput(image=img, transmittance=out_T, n_contrib=out_n)
