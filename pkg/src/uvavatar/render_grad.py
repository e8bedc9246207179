"""Analytic gradients of a rendered image w.r.t. Gaussian parameters.

The chain runs image -> per-splat 2D quantities (mean, conic, opacity,
color) inside the tile kernel, then through projection, covariance
construction and activations back to the raw cloud parameters, and is
finally scattered into the UV map layout. Discrete gates (footprint
cutoff, opacity clip/skip, termination) are hard gates here exactly as
in the forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .camera import Camera
from .render import RasterConfig, RenderCache, render_cached
from .splat import SH_C0
from .uvmap import (CH_ALPHA, CH_COLOR, CH_MU, CH_ROT, CH_SCALE, N_CHANNELS,
                    UVGaussianMap, UVOffsets)

__all__ = ["CloudGradients", "render_backward", "backward_from_cache",
           "cloud_grads_to_uv"]


@dataclass(frozen=True)
class CloudGradients:
    """Loss gradients for every cloud parameter (culled splats get zero)."""

    mean: np.ndarray       # (N, 3)
    log_scale: np.ndarray  # (N, 3)
    rot: np.ndarray        # (N, 3)
    alpha: np.ndarray      # (N,)
    color: np.ndarray      # (N, 3)


def _rotmat_quat_jacobian(q: np.ndarray) -> np.ndarray:
    """d(rotation matrix)/d(quaternion) for unit q; (M, 3, 3, 4)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    M = q.shape[0]
    J = np.zeros((M, 3, 3, 4), dtype=np.float64)
    zero = np.zeros_like(w)
    # dR/dw
    J[:, 0, 1, 0] = -2 * z
    J[:, 0, 2, 0] = 2 * y
    J[:, 1, 0, 0] = 2 * z
    J[:, 1, 2, 0] = -2 * x
    J[:, 2, 0, 0] = -2 * y
    J[:, 2, 1, 0] = 2 * x
    # dR/dx
    J[:, 0, 1, 1] = 2 * y
    J[:, 0, 2, 1] = 2 * z
    J[:, 1, 0, 1] = 2 * y
    J[:, 1, 1, 1] = -4 * x
    J[:, 1, 2, 1] = -2 * w
    J[:, 2, 0, 1] = 2 * z
    J[:, 2, 1, 1] = 2 * w
    J[:, 2, 2, 1] = -4 * x
    # dR/dy
    J[:, 0, 0, 2] = -4 * y
    J[:, 0, 1, 2] = 2 * x
    J[:, 0, 2, 2] = 2 * w
    J[:, 1, 0, 2] = 2 * x
    J[:, 1, 2, 2] = 2 * z
    J[:, 2, 0, 2] = -2 * w
    J[:, 2, 1, 2] = 2 * z
    J[:, 2, 2, 2] = -4 * y
    # dR/dz
    J[:, 0, 0, 3] = -4 * z
    J[:, 0, 1, 3] = -2 * w
    J[:, 0, 2, 3] = 2 * x
    J[:, 1, 0, 3] = 2 * w
    J[:, 1, 1, 3] = -4 * z
    J[:, 1, 2, 3] = 2 * y
    J[:, 2, 0, 3] = 2 * x
    J[:, 2, 1, 3] = 2 * y
    del zero
    return J


def backward_from_cache(cache: RenderCache, dL_dimage: np.ndarray) -> CloudGradients:
    """Per-splat 2D gradients via the tile kernel, then the 3D chain."""
    out = cache.output
    H, W = out.transmittance.shape
    dL = np.ascontiguousarray(dL_dimage, dtype=np.float64)
    if dL.shape != (H, W, 3):
        raise ValueError(f"dL_dimage shape {dL.shape} does not match render {(H, W, 3)}")

    cfg = cache.config
    n_tiles_x = (W + cfg.tile_size - 1) // cfg.tile_size
    n_tiles_y = (H + cfg.tile_size - 1) // cfg.tile_size
    entry_grads = np.zeros((cache.entries.shape[0], 9), dtype=np.float64)
    _kernels.backward_tiles(
        cache.entries, cache.tile_offsets, cache.sorted_mean2d,
        cache.sorted_conic, cache.sorted_alpha, cache.sorted_color,
        cache.background, dL, out.transmittance, cache.last_entry,
        H, W, cfg.tile_size, n_tiles_x, n_tiles_y,
        cfg.alpha_clip, cfg.alpha_min, cfg.maha_max, entry_grads)

    g_sorted = np.zeros((cache.order.shape[0], 9), dtype=np.float64)
    _kernels.reduce_splat_grads(cache.splat_entry_idx, cache.splat_entry_off,
                                entry_grads, g_sorted)
    # undo the depth sort: row i of g_kept is the i-th kept splat
    g_kept = np.empty_like(g_sorted)
    g_kept[cache.order] = g_sorted
    return _chain_to_cloud(cache, g_kept)


def _chain_to_cloud(cache: RenderCache, g2d: np.ndarray) -> CloudGradients:
    proj = cache.proj
    cam = proj.cam
    splats = proj.splats
    M = len(splats)
    N = proj.n_cloud

    grads = CloudGradients(
        mean=np.zeros((N, 3)), log_scale=np.zeros((N, 3)),
        rot=np.zeros((N, 3)), alpha=np.zeros(N), color=np.zeros((N, 3)),
    )
    if M == 0:
        return grads

    g_u = g2d[:, 0:2]
    g_conic = g2d[:, 2:5]
    g_alpha_act = g2d[:, 5]
    g_color = g2d[:, 6:9]

    # color: [0,1] clamp gate, then the SH DC band constant
    gate = (proj.color_pre > 0.0) & (proj.color_pre < 1.0)
    g_coeff = g_color * gate * SH_C0

    # opacity: sigmoid
    a = splats.alpha
    g_alpha_raw = g_alpha_act * a * (1.0 - a)

    # conic -> 2D covariance (a, b, c)
    ca, cb, cc = splats.cov2d[:, 0], splats.cov2d[:, 1], splats.cov2d[:, 2]
    det = ca * cc - cb * cb
    di = 1.0 / det
    d2 = di * di
    gA, gB, gC = g_conic[:, 0], g_conic[:, 1], g_conic[:, 2]
    g_ca = gA * (-cc * cc * d2) + gB * (cb * cc * d2) + gC * (-ca * cc * d2 + di)
    g_cb = gA * (2 * cb * cc * d2) + gB * (-2 * cb * cb * d2 - di) + gC * (2 * ca * cb * d2)
    g_cc = gA * (-ca * cc * d2 + di) + gB * (ca * cb * d2) + gC * (-ca * ca * d2)

    G2 = np.empty((M, 2, 2), dtype=np.float64)
    G2[:, 0, 0] = g_ca
    G2[:, 0, 1] = 0.5 * g_cb
    G2[:, 1, 0] = 0.5 * g_cb
    G2[:, 1, 1] = g_cc

    # cov2d = M2 Sigma M2^T (+ const low-pass)
    g_Sigma = np.einsum("mji,mjk,mkl->mil", cache.proj.M2, G2, cache.proj.M2)
    g_M2 = 2.0 * np.einsum("mij,mjk,mkl->mil", G2, proj.M2, proj.Sigma)
    g_J = g_M2 @ cam.R.T

    x, y, z = proj.pc[:, 0], proj.pc[:, 1], proj.pc[:, 2]
    iz = 1.0 / z
    iz2 = iz * iz
    iz3 = iz2 * iz
    g_pc = np.zeros((M, 3), dtype=np.float64)
    # through the projection Jacobian entries
    g_pc[:, 0] += g_J[:, 0, 2] * (-cam.fx * iz2)
    g_pc[:, 1] += g_J[:, 1, 2] * (-cam.fy * iz2)
    g_pc[:, 2] += (g_J[:, 0, 0] * (-cam.fx * iz2)
                   + g_J[:, 0, 2] * (2.0 * cam.fx * x * iz3)
                   + g_J[:, 1, 1] * (-cam.fy * iz2)
                   + g_J[:, 1, 2] * (2.0 * cam.fy * y * iz3))
    # through the projected mean
    g_pc[:, 0] += g_u[:, 0] * cam.fx * iz
    g_pc[:, 1] += g_u[:, 1] * cam.fy * iz
    g_pc[:, 2] += -(g_u[:, 0] * cam.fx * x + g_u[:, 1] * cam.fy * y) * iz2
    g_mean = g_pc @ cam.R

    # Sigma = M3 M3^T with M3 = Rot diag(s)
    g_M3 = 2.0 * np.einsum("mij,mjk->mik", g_Sigma, proj.M3)
    g_s_act = np.einsum("mik,mik->mk", g_M3, proj.Rot)
    g_log_s = g_s_act * proj.s_act
    g_Rot = g_M3 * proj.s_act[:, None, :]

    dRdq = _rotmat_quat_jacobian(proj.q)
    g_q = np.einsum("mij,mijk->mk", g_Rot, dRdq)
    # through normalization of (1, r)
    g_qraw = (g_q - np.sum(g_q * proj.q, axis=1, keepdims=True) * proj.q) \
        / proj.q_norm[:, None]
    g_rot = g_qraw[:, 1:4]

    kept = splats.kept
    grads.mean[kept] = g_mean
    grads.log_scale[kept] = g_log_s
    grads.rot[kept] = g_rot
    grads.alpha[kept] = g_alpha_raw
    grads.color[kept] = g_coeff
    return grads


def cloud_grads_to_uv(uvmap: UVGaussianMap, grads: CloudGradients,
                      rows: np.ndarray, cols: np.ndarray) -> UVOffsets:
    """Scatter cloud gradients back into the UV layout (zeros elsewhere)."""
    H, W = uvmap.shape
    data = np.zeros((H, W, N_CHANNELS), dtype=np.float64)
    data[rows, cols, CH_MU] = grads.mean
    data[rows, cols, CH_SCALE] = grads.log_scale
    data[rows, cols, CH_ROT] = grads.rot
    data[rows, cols, CH_ALPHA] = grads.alpha
    data[rows, cols, CH_COLOR] = grads.color
    return UVOffsets(data, uvmap.mask)


def render_backward(uvmap: UVGaussianMap, cam: Camera, background,
                    dL_dimage: np.ndarray,
                    config: RasterConfig = RasterConfig()) -> UVOffsets:
    """Gradient of sum(dL_dimage * image) w.r.t. the UV map channels."""
    from .uvmap import to_cloud

    cache = render_cached(uvmap, cam, background, config)
    grads = backward_from_cache(cache, dL_dimage)
    cloud = to_cloud(uvmap)
    return cloud_grads_to_uv(uvmap, grads, cloud.rows, cloud.cols)
