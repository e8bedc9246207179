"""UV Gaussian maps: a 13-channel image whose valid pixels are splats.

Channel layout per pixel: position (3), log-scale (3), rotation params
(3), opacity logit (1), color coefficients (3). Scale and opacity live in
pre-activation space so offsets stay unconstrained; the renderer applies
exp/sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gauss import logit

__all__ = [
    "N_CHANNELS", "CH_MU", "CH_SCALE", "CH_ROT", "CH_ALPHA", "CH_COLOR",
    "INIT_LOG_SCALE", "INIT_ALPHA",
    "UVGaussianMap", "UVOffsets", "GaussianCloud",
    "init_map", "zero_offsets", "apply_offsets", "blend_offsets",
    "to_cloud", "scatter_to_map",
]

N_CHANNELS = 13
CH_MU = slice(0, 3)
CH_SCALE = slice(3, 6)
CH_ROT = slice(6, 9)
CH_ALPHA = 9
CH_COLOR = slice(10, 13)

INIT_LOG_SCALE = -8.3533
INIT_ALPHA = 0.1  # activated opacity at initialization


def _check_data(data, mask):
    data = np.asarray(data, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if data.ndim != 3 or data.shape[2] != N_CHANNELS:
        raise ValueError(f"expected (H, W, {N_CHANNELS}) data, got {data.shape}")
    if mask.shape != data.shape[:2]:
        raise ValueError("mask shape does not match data")
    return data, mask


@dataclass(frozen=True)
class UVGaussianMap:
    data: np.ndarray  # (H, W, 13)
    mask: np.ndarray  # (H, W) bool

    def __post_init__(self):
        data, mask = _check_data(self.data, self.mask)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class UVOffsets:
    """Additive corrections with the same layout/mask as a base map."""

    data: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        data, mask = _check_data(self.data, self.mask)
        data = data.copy()
        data[~mask] = 0.0
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


@dataclass(frozen=True)
class GaussianCloud:
    """Valid pixels flattened to per-splat arrays (pre-activation values)."""

    mean: np.ndarray       # (N, 3)
    log_scale: np.ndarray  # (N, 3)
    rot: np.ndarray        # (N, 3)
    alpha: np.ndarray      # (N,)
    color: np.ndarray      # (N, 3)
    rows: np.ndarray       # (N,) source pixel row
    cols: np.ndarray       # (N,) source pixel col

    def __len__(self) -> int:
        return self.mean.shape[0]


def init_map(positions: np.ndarray, mask: np.ndarray) -> UVGaussianMap:
    """Fresh map: rasterized positions, constant opacity/scale, zeros elsewhere.

    Valid pixels start at activated opacity 0.1 (stored as its logit) and
    log-scale -8.3533 per axis; rotation and color start at zero.
    """
    positions = np.asarray(positions, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if positions.shape[:2] != mask.shape or positions.shape[2] != 3:
        raise ValueError("positions must be (H, W, 3) matching the mask")
    H, W = mask.shape
    data = np.zeros((H, W, N_CHANNELS), dtype=np.float64)
    data[..., CH_MU][mask] = positions[mask]
    data[..., CH_SCALE][mask] = INIT_LOG_SCALE
    data[..., CH_ALPHA][mask] = logit(INIT_ALPHA)
    return UVGaussianMap(data, mask)


def zero_offsets(like) -> UVOffsets:
    return UVOffsets(np.zeros(like.mask.shape + (N_CHANNELS,)), like.mask.copy())


def _require_same_mask(a_mask, b_mask, what):
    if a_mask.shape != b_mask.shape or not np.array_equal(a_mask, b_mask):
        raise ValueError(f"{what}: masks differ")


def apply_offsets(base: UVGaussianMap, offsets: list[UVOffsets]) -> UVGaussianMap:
    """Elementwise sum of the base map and offset maps over valid pixels.

    Offsets are accumulated first and added to the base once, so swapping
    two offsets gives a bit-identical result.
    """
    acc = np.zeros_like(base.data)
    for off in offsets:
        _require_same_mask(base.mask, off.mask, "apply_offsets")
        acc += off.data
    data = base.data.copy()
    data[base.mask] += acc[base.mask]
    return UVGaussianMap(data, base.mask)


def blend_offsets(blendmaps: list[UVOffsets], weights: np.ndarray) -> UVOffsets:
    """Convex combination of D offset maps; weights must sum to 1."""
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(blendmaps) != weights.shape[0]:
        raise ValueError(f"{len(blendmaps)} blendmaps but {weights.shape[0]} weights")
    if len(blendmaps) == 0:
        raise ValueError("need at least one blendmap")
    if abs(weights.sum() - 1.0) > 1e-6:
        raise ValueError(f"blending weights sum to {weights.sum()}, expected 1")
    mask = blendmaps[0].mask
    acc = np.zeros_like(blendmaps[0].data)
    for w, bm in zip(weights, blendmaps):
        _require_same_mask(mask, bm.mask, "blend_offsets")
        acc += w * bm.data
    return UVOffsets(acc, mask)


def to_cloud(uvmap: UVGaussianMap) -> GaussianCloud:
    """Row-major extraction of valid pixels; activations are NOT applied."""
    rows, cols = np.nonzero(uvmap.mask)
    px = uvmap.data[rows, cols]
    return GaussianCloud(
        mean=px[:, CH_MU].copy(),
        log_scale=px[:, CH_SCALE].copy(),
        rot=px[:, CH_ROT].copy(),
        alpha=px[:, CH_ALPHA].copy(),
        color=px[:, CH_COLOR].copy(),
        rows=rows.astype(np.int64),
        cols=cols.astype(np.int64),
    )


def scatter_to_map(cloud: GaussianCloud, shape: tuple[int, int]) -> UVGaussianMap:
    """Inverse of :func:`to_cloud` for the cloud's source pixels."""
    H, W = shape
    data = np.zeros((H, W, N_CHANNELS), dtype=np.float64)
    mask = np.zeros((H, W), dtype=bool)
    mask[cloud.rows, cloud.cols] = True
    data[cloud.rows, cloud.cols, CH_MU] = cloud.mean
    data[cloud.rows, cloud.cols, CH_SCALE] = cloud.log_scale
    data[cloud.rows, cloud.cols, CH_ROT] = cloud.rot
    data[cloud.rows, cloud.cols, CH_ALPHA] = cloud.alpha
    data[cloud.rows, cloud.cols, CH_COLOR] = cloud.color
    return UVGaussianMap(data, mask)
