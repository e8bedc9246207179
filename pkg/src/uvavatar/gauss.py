"""Per-Gaussian math: quaternions, covariance construction, Gaussian falloff.

Conventions used throughout the package:
  * quaternions are (w, x, y, z), right-handed rotations;
  * anisotropic scales are stored in log domain and activated with exp();
  * opacity is stored pre-activation and activated with a sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "InvalidGaussianError",
    "Gaussian3D",
    "quat_from_params",
    "quat_to_rotmat",
    "covariance",
    "gaussian_weight",
    "sigmoid",
    "logit",
]

# Regularization applied when a covariance is numerically singular.
COV_EPS = 1e-9
COV_MAX_CONDITION = 1e12


class InvalidGaussianError(ValueError):
    """Raised when a Gaussian's covariance is degenerate beyond repair."""


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    out = np.log(p) - np.log1p(-p)
    return out if out.ndim else float(out)


def quat_from_params(r: np.ndarray) -> np.ndarray:
    """Build unit quaternions (1, r) / ||(1, r)|| from raw 3-vector params.

    Accepts a single (3,) vector or an (..., 3) batch; returns (..., 4)
    in (w, x, y, z) order.
    """
    r = np.asarray(r, dtype=np.float64)
    q = np.concatenate([np.ones(r.shape[:-1] + (1,)), r], axis=-1)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    # w component is 1, so the norm is always >= 1; no zero guard needed.
    return q / norm


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from unit quaternions; (..., 4) -> (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[..., 0, 1] = 2.0 * (x * y - w * z)
    R[..., 0, 2] = 2.0 * (x * z + w * y)
    R[..., 1, 0] = 2.0 * (x * y + w * z)
    R[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[..., 1, 2] = 2.0 * (y * z - w * x)
    R[..., 2, 0] = 2.0 * (x * z - w * y)
    R[..., 2, 1] = 2.0 * (y * z + w * x)
    R[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R


def covariance(log_scale: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    """Covariance R S S^T R^T with S = diag(exp(log_scale)).

    ``rotation`` is a unit quaternion (or an (..., 4) batch). The result is
    symmetric positive semi-definite by construction.
    """
    log_scale = np.asarray(log_scale, dtype=np.float64)
    s = np.exp(log_scale)
    R = quat_to_rotmat(rotation)
    M = R * s[..., None, :]  # columns of R scaled: R @ diag(s)
    return M @ np.swapaxes(M, -1, -2)


def gaussian_weight(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    """exp(-1/2 (x-mu)^T Sigma^-1 (x-mu)), the falloff of one 3D Gaussian.

    Near-singular covariances are regularized by adding ``COV_EPS * I``;
    raises :class:`InvalidGaussianError` if that does not make the solve
    well posed.
    """
    x = np.asarray(x, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    if not np.all(np.isfinite(cov)):
        raise InvalidGaussianError("covariance has non-finite entries")
    if np.linalg.cond(cov) > COV_MAX_CONDITION:
        cov = cov + COV_EPS * np.eye(3)
    try:
        sol = np.linalg.solve(cov, x - mean)
    except np.linalg.LinAlgError as exc:
        raise InvalidGaussianError(f"degenerate covariance: {cov!r}") from exc
    maha = float((x - mean) @ sol)
    if not np.isfinite(maha) or maha < -1e-9:
        raise InvalidGaussianError("covariance is not positive definite")
    return float(np.exp(-0.5 * max(maha, 0.0)))


@dataclass(frozen=True)
class Gaussian3D:
    """One splat's raw parameters (pre-activation scale and opacity)."""

    mean: np.ndarray       # (3,) world position
    log_scale: np.ndarray  # (3,) log axis lengths
    rot: np.ndarray        # (3,) raw rotation params; quaternion is (1, rot)
    alpha: float           # pre-activation opacity, sigmoid-activated
    color: np.ndarray      # (3,) degree-0 SH coefficients

    @property
    def quaternion(self) -> np.ndarray:
        return quat_from_params(self.rot)

    @property
    def scale(self) -> np.ndarray:
        return np.exp(np.asarray(self.log_scale, dtype=np.float64))

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.alpha))

    def cov(self) -> np.ndarray:
        return covariance(self.log_scale, self.quaternion)
