"""Neural-network-free animation: pose in, pixels out.

A pose carries expression/jaw coefficients and a camera (either full
extrinsics or orbit parameters). Animation rebuilds the initialized map
for the posed mesh, applies the expression-blended rectification, and
renders; it is a pure function of (asset, pose).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .assets import AvatarAsset
from .camera import Camera, orbit_camera
from .headmesh import HeadMeshModel, MeshParams, bake_raster_table
from .optimize import MapBuilder, assemble
from .render import RasterConfig, RenderOutput, render
from .uvmap import CH_MU

__all__ = ["PoseRequest", "AvatarRuntime"]


@dataclass(frozen=True)
class PoseRequest:
    beta_exp: np.ndarray
    beta_jaw: np.ndarray = field(default_factory=lambda: np.zeros(3))
    camera: Camera | dict | None = None  # dict means orbit params
    background: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        be = np.asarray(self.beta_exp, dtype=np.float64).reshape(-1)
        bj = np.asarray(self.beta_jaw, dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(be)) and np.all(np.isfinite(bj))):
            raise ValueError("pose coefficients must be finite")
        if bj.shape != (3,):
            raise ValueError("beta_jaw must have 3 components")
        object.__setattr__(self, "beta_exp", be)
        object.__setattr__(self, "beta_jaw", bj)

    @classmethod
    def from_json(cls, d: dict) -> "PoseRequest":
        if not isinstance(d, dict) or "beta_exp" not in d:
            raise ValueError("pose must be an object with a beta_exp array")
        cam = d.get("camera")
        if isinstance(cam, dict):
            if "fx" in cam:
                cam = Camera.from_json(cam)
            else:
                unknown = set(cam) - {"azimuth", "elevation", "distance",
                                      "width", "height"}
                if unknown:
                    raise ValueError(f"unknown camera fields: {sorted(unknown)}")
        elif cam is not None and not isinstance(cam, Camera):
            raise ValueError("camera must be an object")
        bg = tuple(d.get("background", (1.0, 1.0, 1.0)))
        if len(bg) != 3:
            raise ValueError("background must be an RGB triple")
        return cls(beta_exp=np.asarray(d["beta_exp"], dtype=np.float64),
                   beta_jaw=np.asarray(d.get("beta_jaw", [0.0, 0.0, 0.0]), dtype=np.float64),
                   camera=cam, background=bg)

    def to_json(self, cam_fallback: Camera | None = None) -> dict:
        cam = self.camera
        if cam is None:
            cam = cam_fallback
        cam_json = cam.to_json() if isinstance(cam, Camera) else cam
        return {
            "beta_exp": [float(v) for v in self.beta_exp],
            "beta_jaw": [float(v) for v in self.beta_jaw],
            "camera": cam_json,
            "background": [float(v) for v in self.background],
        }


class AvatarRuntime:
    """Holds an immutable asset + mesh and serves pose renders."""

    def __init__(self, asset: AvatarAsset, model: HeadMeshModel,
                 raster: RasterConfig = RasterConfig(),
                 default_image_size: int = 512):
        self.asset = asset
        self.model = model
        self.raster = raster
        self.default_image_size = default_image_size
        table = bake_raster_table(model, asset.height, asset.width)
        if not np.array_equal(table.mask, asset.mask):
            raise ValueError("mesh UV chart does not reproduce the asset's mask; "
                             "wrong mesh model?")
        self.builder = MapBuilder(model, table)
        self.rect = asset.rectification()
        # head center at the neutral pose anchors orbit cameras
        mu = asset.base_map[..., CH_MU][asset.mask]
        self.center = mu.mean(axis=0)
        self.radius = float(np.linalg.norm(mu - self.center, axis=1).max())

    def default_orbit(self) -> dict:
        return {"azimuth": 0.0, "elevation": 0.0, "distance": round(3.4 * self.radius, 6)}

    def resolve_camera(self, pose: PoseRequest, image_size: int | None = None) -> Camera:
        cam = pose.camera
        if isinstance(cam, Camera):
            return cam
        orbit = dict(self.default_orbit())
        if isinstance(cam, dict):
            unknown = set(cam) - {"azimuth", "elevation", "distance", "width", "height"}
            if unknown:
                raise ValueError(f"unknown orbit camera fields: {sorted(unknown)}")
            orbit.update({k: float(v) for k, v in cam.items() if k in
                          ("azimuth", "elevation", "distance")})
            if "width" in cam or "height" in cam:
                image_size = int(cam.get("width", cam.get("height")))
        size = int(image_size or self.default_image_size)
        return orbit_camera(self.center, orbit["azimuth"], orbit["elevation"],
                            orbit["distance"], width=size, height=size,
                            focal=1.4 * size)

    def mesh_params(self, pose: PoseRequest) -> MeshParams:
        k_exp = self.model.k_exp
        be = np.zeros(k_exp)
        n = min(k_exp, pose.beta_exp.shape[0])
        be[:n] = pose.beta_exp[:n]
        return MeshParams(self.asset.beta_id, be, pose.beta_jaw)

    def animate(self, pose: PoseRequest, image_size: int | None = None) -> RenderOutput:
        cam = self.resolve_camera(pose, image_size)
        map_init = self.builder.build(self.mesh_params(pose))
        assembled = assemble(map_init, self.rect, pose.beta_exp, stage=2)
        return render(assembled, cam, pose.background, self.raster)

    def benchmark(self, pose: PoseRequest, frames: int = 120,
                  image_size: int | None = None) -> float:
        """Frames per second over >= 100 renders (monotonic clock)."""
        frames = max(int(frames), 100)
        self.animate(pose, image_size)  # warm the JIT before timing
        t0 = time.monotonic()
        for _ in range(frames):
            self.animate(pose, image_size)
        dt = time.monotonic() - t0
        return frames / dt
