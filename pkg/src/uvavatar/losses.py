"""Photometric losses and offset regularizers, each with analytic gradients.

Every function returns ``(value, gradient(s))``; gradients are exact
derivatives of the returned scalar so they can be chained through the
renderer backward pass or fed straight to the optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .headmesh import HeadMeshModel, UVRasterTable
from .uvmap import CH_MU, CH_SCALE, UVOffsets

__all__ = [
    "LossWeights", "loss_rgb", "loss_ssim", "reg_position", "reg_scale",
    "reg_view", "total_loss", "default_weight_map", "TotalLoss", "masked_psnr",
]

_NORM_EPS = 1e-12  # guard for d||x|| / dx at x = 0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class LossWeights:
    rgb: float = 1.0
    lpips: float = 0.0  # perceptual plugin disabled by default
    ssim: float = 0.05
    mu: float = 0.5
    scale: float = 5e-5
    view: float = 0.1

    def __post_init__(self):
        for name in ("rgb", "lpips", "ssim", "mu", "scale", "view"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")


def loss_rgb(pred: np.ndarray, target: np.ndarray, mask: np.ndarray):
    """Mean absolute error over masked pixels (channel-averaged)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != target.shape or pred.shape[:2] != mask.shape:
        raise ValueError("image/mask shapes do not match")
    count = int(mask.sum())
    if count == 0:
        raise ValueError("mask selects no pixels")
    diff = pred - target
    value = float(np.abs(diff[mask]).sum() / (3.0 * count))
    grad = np.zeros_like(pred)
    grad[mask] = np.sign(diff[mask]) / (3.0 * count)
    return value, grad


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-x * x / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # separable 'same' correlation with zero padding; symmetric kernel, so
    # the operator is its own adjoint
    out = correlate1d(img, kernel, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, kernel, axis=1, mode="constant", cval=0.0)


def loss_ssim(pred: np.ndarray, target: np.ndarray):
    """1 - mean SSIM (11x11 Gaussian window, sigma 1.5, [0,1] range)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError("image shapes do not match")
    orig_shape = pred.shape
    if pred.ndim == 2:
        pred = pred[..., None]
        target = target[..., None]
    H, W, C = pred.shape
    if H < SSIM_WINDOW or W < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")

    k = _gaussian_window()
    m1 = _filter(pred, k)
    m2 = _filter(target, k)
    p1 = _filter(pred * pred, k)
    p2 = _filter(target * target, k)
    p12 = _filter(pred * target, k)

    A1 = 2.0 * m1 * m2 + SSIM_C1
    A2 = 2.0 * (p12 - m1 * m2) + SSIM_C2
    B1 = m1 * m1 + m2 * m2 + SSIM_C1
    B2 = (p1 - m1 * m1) + (p2 - m2 * m2) + SSIM_C2
    s = (A1 * A2) / (B1 * B2)
    value = 1.0 - float(s.mean())

    # partials of s w.r.t. the filtered moments of pred
    inv = 1.0 / (B1 * B2)
    ds_dm1 = 2.0 * m2 * (A2 - A1) * inv - 2.0 * m1 * s * (1.0 / B1 - 1.0 / B2)
    ds_dp1 = -(A1 * A2) * inv / B2
    ds_dp12 = 2.0 * A1 * inv

    scale = -1.0 / s.size
    grad = (_filter(scale * ds_dm1, k)
            + _filter(scale * ds_dp1, k) * 2.0 * pred
            + _filter(scale * ds_dp12, k) * target)
    return value, grad.reshape(orig_shape)


def _frobenius(x: np.ndarray):
    norm = float(np.sqrt(np.sum(x * x)))
    grad = x / max(norm, _NORM_EPS)
    return norm, grad


def reg_position(d_mu: np.ndarray, weight_map: np.ndarray):
    """|| d_mu o M ||_2 over valid pixels; M broadcasts over xyz."""
    d_mu = np.asarray(d_mu, dtype=np.float64)
    weight_map = np.asarray(weight_map, dtype=np.float64)
    if d_mu.shape[:2] != weight_map.shape or d_mu.shape[2] != 3:
        raise ValueError("offset/weight-map shapes do not match")
    weighted = d_mu * weight_map[..., None]
    norm, g = _frobenius(weighted)
    return norm, g * weight_map[..., None]


def reg_scale(d_s: np.ndarray):
    """|| d_s ||_2 over valid pixels."""
    return _frobenius(np.asarray(d_s, dtype=np.float64))


def reg_view(offsets: list[np.ndarray]):
    """Mean distance of each member from the member mean.

    Gradients include the dependence of the mean on every member, which
    makes the loss invariant to a common additive shift.
    """
    if len(offsets) < 2:
        raise ValueError("view-consistency needs at least two members")
    stack = np.stack([np.asarray(o, dtype=np.float64) for o in offsets])
    B = stack.shape[0]
    mean = stack.mean(axis=0)
    diffs = stack - mean
    norms = np.sqrt(np.sum(diffs.reshape(B, -1) ** 2, axis=1))
    value = float(norms.sum() / B)
    units = diffs / np.maximum(norms, _NORM_EPS).reshape((B,) + (1,) * (stack.ndim - 1))
    mean_unit = units.mean(axis=0)
    grads = [(units[b] - mean_unit) / B for b in range(B)]
    return value, grads


@dataclass
class TotalLoss:
    total: float
    terms: dict
    grad_image: np.ndarray
    grad_mu: np.ndarray | None = None
    grad_scale: np.ndarray | None = None
    grad_view: list | None = None


def total_loss(pred: np.ndarray, target: np.ndarray, mask: np.ndarray,
               weights: LossWeights, d_mu: np.ndarray | None = None,
               d_s: np.ndarray | None = None,
               weight_map: np.ndarray | None = None,
               view_offsets: list | None = None,
               lpips_plugin=None) -> TotalLoss:
    """Weighted sum of all terms; every term reported separately.

    ``lpips_plugin`` is an optional callable (pred, target) ->
    (value, grad_pred) slotted in with weight ``weights.lpips``.
    """
    terms = {}
    grad_image = np.zeros_like(np.asarray(pred, dtype=np.float64))

    if weights.rgb > 0:
        v, g = loss_rgb(pred, target, mask)
        terms["rgb"] = v
        grad_image += weights.rgb * g
    if weights.ssim > 0:
        v, g = loss_ssim(pred, target)
        terms["ssim"] = v
        grad_image += weights.ssim * g
    if weights.lpips > 0 and lpips_plugin is not None:
        v, g = lpips_plugin(pred, target)
        terms["lpips"] = v
        grad_image += weights.lpips * g

    grad_mu = grad_scale = None
    if weights.mu > 0 and d_mu is not None:
        if weight_map is None:
            weight_map = np.ones(d_mu.shape[:2])
        v, g = reg_position(d_mu, weight_map)
        terms["mu"] = v
        grad_mu = weights.mu * g
    if weights.scale > 0 and d_s is not None:
        v, g = reg_scale(d_s)
        terms["scale"] = v
        grad_scale = weights.scale * g

    grad_view = None
    if weights.view > 0 and view_offsets is not None:
        v, gs = reg_view(view_offsets)
        terms["view"] = v
        grad_view = [weights.view * g for g in gs]

    total = (weights.rgb * terms.get("rgb", 0.0)
             + weights.ssim * terms.get("ssim", 0.0)
             + weights.lpips * terms.get("lpips", 0.0)
             + weights.mu * terms.get("mu", 0.0)
             + weights.scale * terms.get("scale", 0.0)
             + weights.view * terms.get("view", 0.0))
    return TotalLoss(total=float(total), terms=terms, grad_image=grad_image,
                     grad_mu=grad_mu, grad_scale=grad_scale, grad_view=grad_view)


def default_weight_map(model: HeadMeshModel, table: UVRasterTable,
                       face_weight: float = 1.0,
                       scalp_weight: float = 0.1) -> np.ndarray:
    """Position-regularizer weights: strong on the face, weak on the scalp.

    A pixel counts as scalp when at least two vertices of its triangle
    carry the model's scalp label. Invalid pixels get zero.
    """
    H, W = table.shape
    out = np.zeros((H, W), dtype=np.float64)
    mask = table.mask
    if not mask.any():
        return out
    tri = table.tri_index[mask]
    votes = model.scalp[table.tris[tri]].sum(axis=1)
    out[mask] = np.where(votes >= 2, scalp_weight, face_weight)
    return out


def masked_psnr(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> float:
    """PSNR over foreground pixels for images in [0, 1]."""
    mask = np.asarray(mask, dtype=bool)
    if mask.sum() == 0:
        raise ValueError("mask selects no pixels")
    diff = (np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64))[mask]
    mse = float(np.mean(diff * diff))
    if mse == 0:
        return float("inf")
    return float(-10.0 * np.log10(mse))
