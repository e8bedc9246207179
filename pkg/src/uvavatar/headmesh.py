"""Linear-blendshape head mesh with a UV chart.

The mesh drives the avatar in two ways: deformed vertex positions are
rasterized into the UV plane to initialize Gaussian positions, and the
same machinery animates the head at inference time. A procedural test
head stands in for licensed parametric head models; real assets in the
same file format can be dropped in.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .container import read_container, write_container

__all__ = [
    "HeadMeshModel",
    "MeshParams",
    "UVRasterTable",
    "build_mesh",
    "bake_raster_table",
    "rasterize_positions",
    "make_test_head",
    "save_mesh",
    "load_mesh",
    "mesh_hash",
]

MESH_MAGIC = b"UVHM"
MESH_VERSION = 1


class DegenerateTriangleError(ValueError):
    """A UV triangle with zero area cannot be rasterized."""


@dataclass(frozen=True)
class HeadMeshModel:
    """Template + linear identity/expression bases + a hinged jaw.

    ``jaw_frame`` rows are (pivot, axis): the jaw rotates about ``axis``
    through ``pivot``; the three jaw parameters are rotation angles about
    the axis and its two orthogonal complements. ``scalp`` marks vertices
    used for the position-regularizer weight map.
    """

    template: np.ndarray    # (N, 3)
    basis_id: np.ndarray    # (N, 3, K_id)
    basis_exp: np.ndarray   # (N, 3, K_exp)
    jaw_frame: np.ndarray   # (2, 3) rows: pivot, unit axis
    jaw_weights: np.ndarray  # (N,) in [0, 1]
    tris: np.ndarray        # (F, 3) int32
    uv: np.ndarray          # (N, 2) in [0, 1]^2
    scalp: np.ndarray = field(default=None)  # (N,) bool, optional

    def __post_init__(self):
        if self.scalp is None:
            object.__setattr__(self, "scalp", np.zeros(len(self.template), dtype=bool))

    @property
    def n_vertices(self) -> int:
        return self.template.shape[0]

    @property
    def k_id(self) -> int:
        return self.basis_id.shape[2]

    @property
    def k_exp(self) -> int:
        return self.basis_exp.shape[2]


@dataclass(frozen=True)
class MeshParams:
    """Blend coefficients: identity, expression, and jaw angles (radians)."""

    beta_id: np.ndarray
    beta_exp: np.ndarray
    beta_jaw: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("beta_id", "beta_exp", "beta_jaw"):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            object.__setattr__(self, name, v)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} contains non-finite values")
        if self.beta_jaw.shape != (3,):
            raise ValueError("beta_jaw must have 3 components")

    @classmethod
    def neutral(cls, model: HeadMeshModel) -> "MeshParams":
        return cls(np.zeros(model.k_id), np.zeros(model.k_exp), np.zeros(3))


@dataclass(frozen=True)
class UVRasterTable:
    """Per-pixel triangle index (-1 outside the chart) and barycentrics.

    Keeps the triangle list it was baked from so lookups stay valid for
    any vertex array with the same topology.
    """

    tri_index: np.ndarray  # (H, W) int32
    bary: np.ndarray       # (H, W, 3)
    tris: np.ndarray       # (F, 3) int32

    @property
    def mask(self) -> np.ndarray:
        return self.tri_index >= 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.tri_index.shape


def _axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    # Rodrigues formula for a unit axis.
    K = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def _jaw_basis(axis: np.ndarray) -> np.ndarray:
    a1 = axis / np.linalg.norm(axis)
    helper = np.array([0.0, 1.0, 0.0])
    if abs(a1 @ helper) > 0.9:
        helper = np.array([1.0, 0.0, 0.0])
    a2 = np.cross(helper, a1)
    a2 = a2 / np.linalg.norm(a2)
    a3 = np.cross(a1, a2)
    return np.stack([a1, a2, a3])


def build_mesh(model: HeadMeshModel, params: MeshParams) -> np.ndarray:
    """Deformed vertices: template + linear blendshapes + skinned jaw."""
    if params.beta_id.shape[0] != model.k_id:
        raise ValueError(f"beta_id has {params.beta_id.shape[0]} coeffs, model expects {model.k_id}")
    if params.beta_exp.shape[0] != model.k_exp:
        raise ValueError(f"beta_exp has {params.beta_exp.shape[0]} coeffs, model expects {model.k_exp}")

    verts = model.template \
        + np.einsum("nck,k->nc", model.basis_id, params.beta_id) \
        + np.einsum("nck,k->nc", model.basis_exp, params.beta_exp)

    if np.any(params.beta_jaw != 0.0):
        pivot, axis = model.jaw_frame
        frame = _jaw_basis(axis)
        R = (_axis_rotation(frame[0], params.beta_jaw[0])
             @ _axis_rotation(frame[1], params.beta_jaw[1])
             @ _axis_rotation(frame[2], params.beta_jaw[2]))
        rotated = (verts - pivot) @ R.T + pivot
        w = model.jaw_weights[:, None]
        verts = verts + w * (rotated - verts)
    return verts


def bake_raster_table(model: HeadMeshModel, H: int, W: int) -> UVRasterTable:
    """Point-in-triangle test at every UV pixel center.

    Triangles are visited in index order and the first hit wins, which
    makes shared-edge assignment deterministic (lowest index).
    """
    if H < 1 or W < 1:
        raise ValueError("raster size must be at least 1x1")
    tris = np.asarray(model.tris, dtype=np.int32)
    tri_index = np.full((H, W), -1, dtype=np.int32)
    bary = np.zeros((H, W, 3), dtype=np.float64)
    if len(tris) == 0:
        return UVRasterTable(tri_index, bary, tris)

    uv = model.uv
    for ti, tri in enumerate(model.tris):
        p0, p1, p2 = uv[tri[0]], uv[tri[1]], uv[tri[2]]
        d1 = p1 - p0
        d2 = p2 - p0
        denom = d1[0] * d2[1] - d1[1] * d2[0]
        if denom == 0.0:
            raise DegenerateTriangleError(f"triangle {ti} has zero UV area")

        lo = np.minimum(np.minimum(p0, p1), p2)
        hi = np.maximum(np.maximum(p0, p1), p2)
        # pixel (i, j) samples UV ((j+.5)/W, (i+.5)/H)
        j0 = max(int(np.floor(lo[0] * W - 0.5)), 0)
        j1 = min(int(np.ceil(hi[0] * W - 0.5)), W - 1)
        i0 = max(int(np.floor(lo[1] * H - 0.5)), 0)
        i1 = min(int(np.ceil(hi[1] * H - 0.5)), H - 1)
        if j1 < j0 or i1 < i0:
            continue

        jj, ii = np.meshgrid(np.arange(j0, j1 + 1), np.arange(i0, i1 + 1))
        px = (jj + 0.5) / W - p0[0]
        py = (ii + 0.5) / H - p0[1]
        b1 = (px * d2[1] - py * d2[0]) / denom
        b2 = (py * d1[0] - px * d1[1]) / denom
        b0 = 1.0 - b1 - b2
        inside = (b0 >= 0.0) & (b1 >= 0.0) & (b2 >= 0.0)
        free = tri_index[ii, jj] < 0
        take = inside & free
        tri_index[ii[take], jj[take]] = ti
        bary[ii[take], jj[take], 0] = b0[take]
        bary[ii[take], jj[take], 1] = b1[take]
        bary[ii[take], jj[take], 2] = b2[take]
    return UVRasterTable(tri_index, bary, tris)


def rasterize_positions(table: UVRasterTable, vertices: np.ndarray) -> np.ndarray:
    """Barycentric interpolation of vertices into the UV grid; (H, W, 3).

    Invalid pixels stay zero.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    H, W = table.shape
    out = np.zeros((H, W, 3), dtype=np.float64)
    mask = table.mask
    if not mask.any():
        return out
    idx = table.tri_index[mask]
    corners = vertices[table.tris[idx]]        # (M, 3 verts, 3 xyz)
    weights = table.bary[mask]                 # (M, 3)
    out[mask] = np.einsum("mvc,mv->mc", corners, weights)
    return out


def _smooth_basis(rng, theta, phi, k, amplitude, diag):
    """Random low-frequency displacement fields, periodic in phi.

    Each basis column is scaled so a unit coefficient moves no vertex by
    more than ``amplitude`` (itself well under 10% of the bbox diagonal).
    """
    n = theta.shape[0]
    basis = np.zeros((n, 3, k))
    for col in range(k):
        field = np.zeros((n, 3))
        for _ in range(3):
            f_theta = rng.uniform(0.5, 3.0)
            f_phi = rng.integers(0, 4)          # integer: keeps the seam continuous
            ph_t = rng.uniform(0.0, 2 * np.pi)
            ph_p = rng.uniform(0.0, 2 * np.pi) if f_phi > 0 else 0.0
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            wave = np.sin(f_theta * theta + ph_t) * np.cos(f_phi * phi + ph_p)
            field += wave[:, None] * direction
        peak = np.linalg.norm(field, axis=1).max()
        basis[:, :, col] = field * (amplitude / max(peak, 1e-12))
    assert np.linalg.norm(basis, axis=1).max() <= 0.10 * diag + 1e-9
    return basis


def make_test_head(seed: int) -> HeadMeshModel:
    """Deterministic procedural head: ellipsoid with smooth random bases.

    Latitude/longitude grid, open at the poles, cylindrically unwrapped
    into a UV rectangle with a small gutter. The jaw is the band below
    ~0.7*pi latitude, hinged on the left-right axis.
    """
    rng = np.random.default_rng(np.random.SeedSequence([0x55AA, seed]))
    n_theta, n_phi = 40, 52
    theta_1d = np.linspace(0.15 * np.pi, 0.92 * np.pi, n_theta)
    phi_1d = np.linspace(-np.pi, np.pi, n_phi + 1)  # seam column duplicated
    theta, phi = [a.reshape(-1) for a in np.meshgrid(theta_1d, phi_1d, indexing="ij")]

    rx, ry, rz = 0.085, 0.115, 0.095
    bump = 1.0 + 0.08 * np.exp(-((theta - 0.55 * np.pi) ** 2 + phi ** 2) / 0.08)
    template = np.stack([
        rx * np.sin(theta) * np.sin(phi),
        ry * np.cos(theta),
        rz * bump * np.sin(theta) * np.cos(phi),
    ], axis=1)
    diag = np.linalg.norm(template.max(0) - template.min(0))

    basis_id = _smooth_basis(rng, theta, phi, 8, 0.025, diag)
    basis_exp = _smooth_basis(rng, theta, phi, 12, 0.018, diag)

    jaw0, jaw1 = 0.68 * np.pi, 0.78 * np.pi
    ramp = np.clip((theta - jaw0) / (jaw1 - jaw0), 0.0, 1.0)
    jaw_weights = ramp * ramp * (3.0 - 2.0 * ramp)
    jaw_frame = np.array([
        [0.0, ry * np.cos(0.70 * np.pi), 0.0],  # pivot at hinge height
        [1.0, 0.0, 0.0],                        # axis: left-right
    ])
    scalp = theta < 0.38 * np.pi

    margin = 0.03
    uv = np.stack([
        margin + (1 - 2 * margin) * (phi + np.pi) / (2 * np.pi),
        margin + (1 - 2 * margin) * (theta - theta_1d[0]) / (theta_1d[-1] - theta_1d[0]),
    ], axis=1)

    tris = []
    cols = n_phi + 1
    for i in range(n_theta - 1):
        for j in range(n_phi):
            v00 = i * cols + j
            v01 = v00 + 1
            v10 = v00 + cols
            v11 = v10 + 1
            tris.append([v00, v10, v01])
            tris.append([v01, v10, v11])
    tris = np.asarray(tris, dtype=np.int32)

    def f32(a):
        # round-trip through f32 so fresh and file-loaded models agree bitwise
        return np.asarray(a, dtype=np.float32).astype(np.float64)

    return HeadMeshModel(
        template=f32(template),
        basis_id=f32(basis_id),
        basis_exp=f32(basis_exp),
        jaw_frame=f32(jaw_frame),
        jaw_weights=f32(jaw_weights),
        tris=tris,
        uv=f32(uv),
        scalp=scalp,
    )


def save_mesh(path, model: HeadMeshModel) -> None:
    write_container(path, MESH_MAGIC, MESH_VERSION, {
        "V0": model.template.astype(np.float32),
        "B_ID": model.basis_id.astype(np.float32),
        "B_EXP": model.basis_exp.astype(np.float32),
        "JAW_AXIS": model.jaw_frame.astype(np.float32),
        "JAW_W": model.jaw_weights.astype(np.float32),
        "TRIS": model.tris.astype(np.float32),
        "UV": model.uv.astype(np.float32),
        "SCALP": model.scalp.astype(np.uint8),
    })


def load_mesh(path) -> HeadMeshModel:
    _, t = read_container(path, MESH_MAGIC)
    tris = t["TRIS"]
    tris_i = np.rint(tris).astype(np.int32)
    if tris.size and np.abs(tris - tris_i).max() > 0:
        raise ValueError("TRIS tensor holds non-integral indices")
    scalp = t["SCALP"].astype(bool) if "SCALP" in t else None
    return HeadMeshModel(
        template=t["V0"].astype(np.float64),
        basis_id=t["B_ID"].astype(np.float64),
        basis_exp=t["B_EXP"].astype(np.float64),
        jaw_frame=t["JAW_AXIS"].astype(np.float64),
        jaw_weights=t["JAW_W"].astype(np.float64),
        tris=tris_i,
        uv=t["UV"].astype(np.float64),
        scalp=scalp,
    )


def mesh_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
