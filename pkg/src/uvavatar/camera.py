"""Pinhole camera with world-to-camera extrinsics.

Pixel convention: image x runs along columns, y along rows, and the pixel
at row i / column j samples the point (j + 0.5, i + 0.5). Camera space is
right-handed with +z in front of the camera.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Camera", "orbit_camera"]


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    R: np.ndarray = field(default_factory=lambda: np.eye(3))  # world -> camera
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not self.near < self.far:
            raise ValueError("near plane must be closer than far plane")
        if np.abs(self.R @ self.R.T - np.eye(3)).max() > 1e-6:
            raise ValueError("rotation is not orthonormal")

    def world_to_cam(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.R.T + self.t

    def to_json(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "R": [float(v) for v in self.R.reshape(-1)],
            "t": [float(v) for v in self.t],
            "near": self.near, "far": self.far,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Camera":
        return cls(
            fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]),
            width=int(d["width"]), height=int(d["height"]),
            R=np.asarray(d["R"], dtype=np.float64).reshape(3, 3),
            t=np.asarray(d["t"], dtype=np.float64),
            near=float(d.get("near", 0.01)), far=float(d.get("far", 100.0)),
        )


def orbit_camera(target: np.ndarray, azimuth: float, elevation: float,
                 distance: float, width: int = 512, height: int = 512,
                 focal: float | None = None, near: float = 0.01,
                 far: float = 100.0) -> Camera:
    """Camera orbiting ``target``, looking at it.

    Azimuth/elevation in radians; azimuth 0 faces the +z axis (the front of
    the procedural head), elevation > 0 looks down from above.
    """
    target = np.asarray(target, dtype=np.float64)
    ce, se = np.cos(elevation), np.sin(elevation)
    ca, sa = np.cos(azimuth), np.sin(azimuth)
    eye = target + distance * np.array([ce * sa, se, ce * ca])

    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    nr = np.linalg.norm(right)
    if nr < 1e-9:  # looking straight up/down
        right = np.array([1.0, 0.0, 0.0])
        nr = 1.0
    right = right / nr
    down = np.cross(fwd, right)

    # rows of R are the camera axes (x right, y down, z forward)
    R = np.stack([right, down, fwd], axis=0)
    t = -R @ eye
    if focal is None:
        focal = 1.1 * min(width, height)
    return Camera(fx=focal, fy=focal, cx=width / 2.0, cy=height / 2.0,
                  width=width, height=height, R=R, t=t, near=near, far=far)
