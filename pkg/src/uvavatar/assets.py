"""Avatar asset file: everything needed to animate a rectified head.

Stored little-endian in the shared tensor container (magic ``UVGA``).
Float tensors are f64, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import read_container, write_container
from .headmesh import HeadMeshModel, load_mesh, mesh_hash
from .optimize import OptimConfig, RectificationSet
from .uvmap import INIT_LOG_SCALE, INIT_ALPHA, N_CHANNELS, UVGaussianMap, UVOffsets
from .gauss import logit

__all__ = ["AvatarAsset", "save_asset", "load_asset", "config_hash"]

ASSET_MAGIC = b"UVGA"
ASSET_VERSION = 1


def config_hash(cfg: OptimConfig) -> str:
    blob = json.dumps(cfg.to_json(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass
class AvatarAsset:
    """Rectified avatar state plus a reference to its mesh model."""

    height: int
    width: int
    mask: np.ndarray          # (H, W) bool
    base_map: np.ndarray      # (H, W, 13) neutral-pose initialized map
    beta_id: np.ndarray       # identity code shared by all poses
    delta_mean: np.ndarray    # (H, W, 13)
    delta_global: np.ndarray  # (H, W, 13)
    blend: np.ndarray         # (D, H, W, 13)
    mesh_path: str
    mesh_sha: str
    init_log_scale: float = INIT_LOG_SCALE
    init_alpha: float = INIT_ALPHA
    config_sha: str = ""

    def __post_init__(self):
        if self.blend.ndim != 4 or self.blend.shape[1:] != (self.height, self.width, N_CHANNELS):
            raise ValueError("blendmap stack shape mismatch")

    @property
    def d(self) -> int:
        return self.blend.shape[0]

    def rectification(self) -> RectificationSet:
        return RectificationSet(
            delta_mean=UVOffsets(self.delta_mean, self.mask),
            delta_global=UVOffsets(self.delta_global, self.mask),
            blend=self.blend.copy(),
            mask=self.mask.copy(),
        )

    def neutral_map(self) -> UVGaussianMap:
        return UVGaussianMap(self.base_map, self.mask)

    @classmethod
    def from_training(cls, base_map: UVGaussianMap, rect: RectificationSet,
                      beta_id: np.ndarray, mesh_path, mesh_sha: str,
                      config_sha: str = "") -> "AvatarAsset":
        H, W = base_map.shape
        return cls(
            height=H, width=W, mask=base_map.mask.copy(),
            base_map=base_map.data.copy(), beta_id=np.asarray(beta_id, dtype=np.float64),
            delta_mean=rect.delta_mean.data.copy(),
            delta_global=rect.delta_global.data.copy(),
            blend=rect.blend.copy(), mesh_path=str(mesh_path), mesh_sha=mesh_sha,
            config_sha=config_sha,
        )


def save_asset(path, asset: AvatarAsset) -> None:
    write_container(path, ASSET_MAGIC, ASSET_VERSION, {
        "DIMS": np.array([asset.height, asset.width, asset.d], dtype=np.int64),
        "MASK": asset.mask.astype(np.uint8),
        "BASE": asset.base_map.astype(np.float64),
        "BETA_ID": asset.beta_id.astype(np.float64),
        "DMEAN": asset.delta_mean.astype(np.float64),
        "DGLOBAL": asset.delta_global.astype(np.float64),
        "BLEND": asset.blend.astype(np.float64),
        "CONSTS": np.array([asset.init_log_scale, asset.init_alpha], dtype=np.float64),
        "MESH_PATH": np.frombuffer(asset.mesh_path.encode("utf-8"), dtype=np.uint8).copy(),
        "MESH_SHA": np.frombuffer(asset.mesh_sha.encode("ascii"), dtype=np.uint8).copy(),
        "CONFIG_SHA": np.frombuffer(asset.config_sha.encode("ascii"), dtype=np.uint8).copy(),
    })


def load_asset(path) -> AvatarAsset:
    _, t = read_container(path, ASSET_MAGIC)
    H, W, D = (int(v) for v in t["DIMS"])
    blend = t["BLEND"]
    if blend.shape[0] != D:
        raise ValueError(f"asset header says D={D} but blend stack has {blend.shape[0]} maps")
    consts = t["CONSTS"]
    return AvatarAsset(
        height=H, width=W, mask=t["MASK"].astype(bool),
        base_map=t["BASE"], beta_id=t["BETA_ID"],
        delta_mean=t["DMEAN"], delta_global=t["DGLOBAL"], blend=blend,
        mesh_path=t["MESH_PATH"].tobytes().decode("utf-8"),
        mesh_sha=t["MESH_SHA"].tobytes().decode("ascii"),
        init_log_scale=float(consts[0]), init_alpha=float(consts[1]),
        config_sha=t["CONFIG_SHA"].tobytes().decode("ascii"),
    )


def resolve_mesh(asset: AvatarAsset, asset_path, mesh_override=None) -> HeadMeshModel:
    """Locate and verify the mesh model an asset was built against."""
    if mesh_override is not None:
        return load_mesh(mesh_override)
    candidates = [Path(asset.mesh_path)]
    if asset_path is not None:
        candidates.append(Path(asset_path).parent / asset.mesh_path)
        candidates.append(Path(asset_path).parent / Path(asset.mesh_path).name)
    for cand in candidates:
        if cand.is_file():
            if asset.mesh_sha and mesh_hash(cand) != asset.mesh_sha:
                continue
            return load_mesh(cand)
    raise FileNotFoundError(
        f"mesh model {asset.mesh_path!r} (sha {asset.mesh_sha[:12]}...) not found; "
        "pass an explicit mesh path")
