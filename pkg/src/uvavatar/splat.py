"""Projection of 3D Gaussians to screen-space splats.

Activations happen here: scales exp(), opacity sigmoid(), and the
degree-0 SH coefficient is mapped to RGB and clamped to [0, 1]. The 2D
covariance is the first-order propagation J W Sigma W^T J^T plus a
low-pass term that keeps every splat at least a fraction of a pixel wide.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera
from .gauss import quat_from_params, quat_to_rotmat, sigmoid
from .uvmap import GaussianCloud

__all__ = ["SH_C0", "Splats", "ProjectionCache", "project"]

SH_C0 = 0.28209479177387814


@dataclass(frozen=True)
class Splats:
    """Screen-space splats in cloud order (culled Gaussians dropped)."""

    mean2d: np.ndarray   # (M, 2) pixels
    cov2d: np.ndarray    # (M, 3) upper triangle (a, b, c), low-pass included
    conic: np.ndarray    # (M, 3) inverse covariance (A, B, C)
    depth: np.ndarray    # (M,) camera z
    alpha: np.ndarray    # (M,) activated opacity
    color: np.ndarray    # (M, 3) RGB in [0, 1]
    radius: np.ndarray   # (M,) pixel radius of the 3-sigma ellipse
    kept: np.ndarray     # (M,) indices into the source cloud

    def __len__(self) -> int:
        return self.mean2d.shape[0]


@dataclass(frozen=True)
class ProjectionCache:
    """Intermediates retained for the analytic backward pass."""

    splats: Splats
    cam: Camera
    n_cloud: int
    pc: np.ndarray         # (M, 3) camera-space means
    M2: np.ndarray         # (M, 2, 3) J @ R_cam
    Sigma: np.ndarray      # (M, 3, 3) world covariance
    M3: np.ndarray         # (M, 3, 3) Rot @ diag(scale)
    Rot: np.ndarray        # (M, 3, 3)
    s_act: np.ndarray      # (M, 3) activated scale
    q: np.ndarray          # (M, 4) unit quaternion
    q_norm: np.ndarray     # (M,) norm of the raw (1, r) quaternion
    color_pre: np.ndarray  # (M, 3) color before [0, 1] clamp


def project(cloud: GaussianCloud, cam: Camera, lowpass: float = 0.3,
            return_cache: bool = False):
    """Activate and project a cloud; Gaussians behind the near plane are culled."""
    pc_all = cloud.mean @ cam.R.T + cam.t
    kept = np.nonzero(pc_all[:, 2] > cam.near)[0]
    pc = pc_all[kept]
    M = kept.shape[0]

    s_act = np.exp(cloud.log_scale[kept])
    rot_raw = cloud.rot[kept]
    q_norm = np.sqrt(1.0 + np.sum(rot_raw * rot_raw, axis=1))
    q = quat_from_params(rot_raw)
    Rot = quat_to_rotmat(q)
    M3 = Rot * s_act[:, None, :]
    Sigma = M3 @ np.swapaxes(M3, 1, 2)

    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    inv_z = 1.0 / z
    J = np.zeros((M, 2, 3), dtype=np.float64)
    J[:, 0, 0] = cam.fx * inv_z
    J[:, 0, 2] = -cam.fx * x * inv_z * inv_z
    J[:, 1, 1] = cam.fy * inv_z
    J[:, 1, 2] = -cam.fy * y * inv_z * inv_z
    M2 = J @ cam.R

    cov_full = M2 @ Sigma @ np.swapaxes(M2, 1, 2)
    a = cov_full[:, 0, 0] + lowpass
    b = 0.5 * (cov_full[:, 0, 1] + cov_full[:, 1, 0])
    c = cov_full[:, 1, 1] + lowpass
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)

    mid = 0.5 * (a + c)
    disc = np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = 3.0 * np.sqrt(mid + disc) + 1e-9

    mean2d = np.stack([cam.fx * x * inv_z + cam.cx,
                       cam.fy * y * inv_z + cam.cy], axis=1)
    alpha = sigmoid(cloud.alpha[kept]) if M else np.zeros(0)
    color_pre = SH_C0 * cloud.color[kept] + 0.5
    color = np.clip(color_pre, 0.0, 1.0)

    splats = Splats(
        mean2d=mean2d, cov2d=np.stack([a, b, c], axis=1), conic=conic,
        depth=z.copy(), alpha=np.atleast_1d(alpha), color=color,
        radius=radius, kept=kept,
    )
    if not return_cache:
        return splats
    cache = ProjectionCache(
        splats=splats, cam=cam, n_cloud=len(cloud), pc=pc, M2=M2,
        Sigma=Sigma, M3=M3, Rot=Rot, s_act=s_act, q=q, q_norm=q_norm,
        color_pre=color_pre,
    )
    return splats, cache
