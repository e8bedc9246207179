"""Two-stage video-based rectification of a UV Gaussian head.

Stage 1 learns one global offset map shared by every frame; stage 2
replaces it with a stack of D blendmaps mixed by softmax weights derived
from each frame's leading expression coefficients. Both stages minimize
the same photometric + regularization objective with a self-contained
Adam optimizer, and are deterministic for a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .camera import Camera
from .headmesh import (HeadMeshModel, MeshParams, UVRasterTable, build_mesh,
                       bake_raster_table, rasterize_positions)
from .imgio import read_mask, read_png
from .losses import LossWeights, TotalLoss, default_weight_map, total_loss
from .render import RasterConfig, render_cached
from .render_grad import backward_from_cache, cloud_grads_to_uv
from .uvmap import (CH_MU, CH_SCALE, N_CHANNELS, UVGaussianMap, UVOffsets,
                    blend_offsets, init_map, to_cloud, zero_offsets)

__all__ = [
    "FrameRecord", "VideoDataset", "RectificationSet", "OptimConfig",
    "Adam", "MapBuilder", "blending_weights", "assemble", "mean_offsets",
    "optimize_stage1", "optimize_stage2", "run_optimization",
]

# Per-channel-group learning rates (position, scale, rotation, alpha, color).
DEFAULT_LEARNING_RATES = {
    "position": 1.6e-4,
    "scale": 5e-3,
    "rotation": 1e-3,
    "alpha": 5e-2,
    "color": 2.5e-3,
}


@dataclass(frozen=True)
class FrameRecord:
    """One training observation of the subject."""

    image_path: Path
    mask_path: Path
    params: MeshParams
    camera: Camera
    image: np.ndarray = field(repr=False, default=None)  # (H, W, 3) in [0, 1]
    mask: np.ndarray = field(repr=False, default=None)   # (H, W) bool

    def loaded(self) -> "FrameRecord":
        if self.image is not None:
            return self
        img = read_png(self.image_path)
        msk = read_mask(self.mask_path)
        if img.shape[:2] != (self.camera.height, self.camera.width):
            raise ValueError(f"{self.image_path}: image size {img.shape[:2]} "
                             f"does not match camera {(self.camera.height, self.camera.width)}")
        if msk.shape != img.shape[:2]:
            raise ValueError(f"{self.mask_path}: mask size does not match image")
        return replace(self, image=img, mask=msk)


class VideoDataset:
    """Frames plus the shared identity code and mesh model reference."""

    def __init__(self, frames: list[FrameRecord], beta_id: np.ndarray,
                 mesh_path: Path, train_fraction: float = 0.9):
        if not frames:
            raise ValueError("dataset has no frames")
        self.frames = frames
        self.beta_id = np.asarray(beta_id, dtype=np.float64)
        self.mesh_path = Path(mesh_path)
        self.train_fraction = float(train_fraction)

    def __len__(self) -> int:
        return len(self.frames)

    def split(self, which: str) -> list[FrameRecord]:
        """'train' is the leading fraction of frames, 'eval' the rest."""
        n_train = int(round(self.train_fraction * len(self.frames)))
        if which == "train":
            return self.frames[:n_train]
        if which == "eval":
            return self.frames[n_train:]
        raise ValueError(f"unknown split {which!r}")

    @classmethod
    def from_manifest(cls, path, load_images: bool = True) -> "VideoDataset":
        path = Path(path)
        with open(path) as f:
            manifest = json.load(f)
        root = path.parent
        beta_id = np.asarray(manifest["beta_id"], dtype=np.float64)
        frames = []
        for entry in manifest["frames"]:
            cam = Camera.from_json(entry["camera"])
            rec = FrameRecord(
                image_path=root / entry["image"],
                mask_path=root / entry["mask"],
                params=MeshParams(beta_id,
                                  np.asarray(entry["beta_exp"], dtype=np.float64),
                                  np.asarray(entry["beta_jaw"], dtype=np.float64)),
                camera=cam,
            )
            frames.append(rec.loaded() if load_images else rec)
        return cls(frames, beta_id, root / manifest["mesh_model"],
                   train_fraction=float(manifest.get("train_fraction", 0.9)))


@dataclass
class RectificationSet:
    """Learnable rectification state

    ``delta_mean`` is the fixed externally supplied mean offset (zero by
    default), ``delta_global`` the stage-1 map, ``blend`` the stage-2
    stack of shape (D, H, W, 13).
    """

    delta_mean: UVOffsets
    delta_global: UVOffsets
    blend: np.ndarray
    mask: np.ndarray

    @classmethod
    def zeros(cls, mask: np.ndarray, d: int) -> "RectificationSet":
        if d < 1:
            raise ValueError("need at least one blendmap")
        H, W = mask.shape
        zero = UVOffsets(np.zeros((H, W, N_CHANNELS)), mask)
        return cls(delta_mean=zero, delta_global=zero,
                   blend=np.zeros((d, H, W, N_CHANNELS)), mask=mask.copy())

    @property
    def d(self) -> int:
        return self.blend.shape[0]

    def blend_offsets_list(self) -> list[UVOffsets]:
        return [UVOffsets(self.blend[i], self.mask) for i in range(self.d)]

    def init_blend_from_global(self) -> None:
        self.blend[:] = self.delta_global.data[None]


@dataclass(frozen=True)
class OptimConfig:
    total_steps: int = 3000
    stage_split: float = 0.3         # fraction of steps spent in stage 1
    batch_size: int = 8
    blend_count: int = 10
    learning_rates: dict = field(default_factory=lambda: dict(DEFAULT_LEARNING_RATES))
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    loss_weights: LossWeights = field(default_factory=LossWeights)
    background: tuple = (1.0, 1.0, 1.0)
    seed: int = 0
    raster: RasterConfig = field(default_factory=RasterConfig)

    def __post_init__(self):
        if not 0.0 < self.stage_split < 1.0:
            raise ValueError("stage_split must be in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def lr_vector(self) -> np.ndarray:
        lr = np.empty(N_CHANNELS)
        lr[CH_MU] = self.learning_rates["position"]
        lr[CH_SCALE] = self.learning_rates["scale"]
        lr[6:9] = self.learning_rates["rotation"]
        lr[9] = self.learning_rates["alpha"]
        lr[10:13] = self.learning_rates["color"]
        return lr

    def to_json(self) -> dict:
        d = {
            "total_steps": self.total_steps,
            "stage_split": self.stage_split,
            "batch_size": self.batch_size,
            "blend_count": self.blend_count,
            "learning_rates": dict(self.learning_rates),
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
            "loss_weights": {
                "rgb": self.loss_weights.rgb, "lpips": self.loss_weights.lpips,
                "ssim": self.loss_weights.ssim, "mu": self.loss_weights.mu,
                "scale": self.loss_weights.scale, "view": self.loss_weights.view,
            },
            "background": list(self.background),
            "seed": self.seed,
        }
        return d

    @classmethod
    def from_json(cls, d: dict) -> "OptimConfig":
        kw = dict(d)
        if "loss_weights" in kw:
            kw["loss_weights"] = LossWeights(**kw["loss_weights"])
        if "background" in kw:
            kw["background"] = tuple(kw["background"])
        return cls(**kw)


class Adam:
    """Plain Adam with bias correction over a dict of named arrays."""

    def __init__(self, params: dict[str, np.ndarray], lr: dict[str, np.ndarray] | float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            lr = self.lr[k] if isinstance(self.lr, dict) else self.lr
            p -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def blending_weights(beta_exp: np.ndarray, d: int = 10) -> np.ndarray:
    """Softmax over the first ``d`` expression coefficients."""
    beta_exp = np.asarray(beta_exp, dtype=np.float64).reshape(-1)
    if beta_exp.shape[0] < d:
        raise ValueError(f"need at least {d} expression coefficients, got {beta_exp.shape[0]}")
    x = beta_exp[:d]
    x = x - x.max()  # shift invariance keeps the exp well scaled
    e = np.exp(x)
    return e / e.sum()


class MapBuilder:
    """Rebuilds the initialized UV map for arbitrary mesh parameters.

    The raster table is topology-fixed, so a rebuild is one blendshape
    evaluation plus one barycentric interpolation pass.
    """

    def __init__(self, model: HeadMeshModel, table: UVRasterTable):
        self.model = model
        self.table = table
        self._cache: dict[bytes, UVGaussianMap] = {}

    @property
    def mask(self) -> np.ndarray:
        return self.table.mask

    def build(self, params: MeshParams) -> UVGaussianMap:
        key = np.concatenate([params.beta_id, params.beta_exp, params.beta_jaw]).tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        verts = build_mesh(self.model, params)
        positions = rasterize_positions(self.table, verts)
        built = init_map(positions, self.table.mask)
        if len(self._cache) < 512:
            self._cache[key] = built
        return built


def _blend_arrays(blend: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # sequential accumulation, matching uvmap.blend_offsets bit for bit
    acc = np.zeros_like(blend[0])
    for w, arr in zip(weights, blend):
        acc += w * arr
    return acc


def assemble(map_init: UVGaussianMap, rect: RectificationSet,
             beta_exp: np.ndarray | None, stage: int) -> UVGaussianMap:
    """Apply the stage-appropriate rectification to a freshly built map."""
    if stage == 1:
        return _apply_arrays(map_init, [rect.delta_mean.data, rect.delta_global.data])
    if stage == 2:
        b = blending_weights(beta_exp, rect.d)
        return _apply_arrays(map_init, [rect.delta_mean.data, _blend_arrays(rect.blend, b)])
    raise ValueError(f"unknown stage {stage}")


def _apply_arrays(base: UVGaussianMap, offset_arrays: list[np.ndarray]) -> UVGaussianMap:
    # same accumulate-then-add order as uvmap.apply_offsets so both paths
    # produce bit-identical maps
    acc = np.zeros_like(base.data)
    for arr in offset_arrays:
        acc += arr
    data = base.data.copy()
    m = base.mask
    data[m] += acc[m]
    return UVGaussianMap(data, base.mask)


def mean_offsets(per_frame: list[UVOffsets], like: UVGaussianMap | None = None) -> UVOffsets:
    """Elementwise mean of per-frame offsets; empty input gives a zero map."""
    if not per_frame:
        if like is None:
            raise ValueError("empty input needs a reference map for its shape")
        return zero_offsets(like)
    acc = np.zeros_like(per_frame[0].data)
    for off in per_frame:
        if not np.array_equal(off.mask, per_frame[0].mask):
            raise ValueError("mean_offsets: masks differ")
        acc += off.data
    return UVOffsets(acc / len(per_frame), per_frame[0].mask)


class _BatchSampler:
    """Seeded shuffled epochs; batches wrap across epoch boundaries."""

    def __init__(self, n: int, seed: int):
        self.n = n
        self.rng = np.random.default_rng(np.random.SeedSequence([0xBA7C, seed]))
        self.order = self.rng.permutation(n)
        self.cursor = 0

    def next_batch(self, size: int) -> np.ndarray:
        out = np.empty(size, dtype=np.int64)
        for i in range(size):
            if self.cursor == self.n:
                self.order = self.rng.permutation(self.n)
                self.cursor = 0
            out[i] = self.order[self.cursor]
            self.cursor += 1
        return out


def _supervised_target(frame: FrameRecord, background) -> np.ndarray:
    """Composite the target over the training background outside the mask."""
    bg = np.asarray(background, dtype=np.float64)
    m = frame.mask[..., None]
    return frame.image * m + bg * (1.0 - m)


def _frame_loss_and_grad(builder: MapBuilder, rect: RectificationSet,
                         frame: FrameRecord, stage: int, cfg: OptimConfig,
                         weight_map: np.ndarray, rows: np.ndarray,
                         cols: np.ndarray, need_grad: bool = True):
    map_init = builder.build(frame.params)
    if stage == 2:
        b = blending_weights(frame.params.beta_exp, rect.d)
        effective = _blend_arrays(rect.blend, b)
    else:
        b = None
        effective = rect.delta_global.data
    assembled = _apply_arrays(map_init, [rect.delta_mean.data, effective])

    cache = render_cached(assembled, frame.camera, cfg.background, cfg.raster)
    pred = cache.output.image
    target = _supervised_target(frame, cfg.background)
    # lambda_view stays zero here: the view term applies to multi-view
    # reconstruction batches, not to per-frame video supervision
    weights = cfg.loss_weights
    tl = total_loss(pred, target, frame.mask, weights,
                    d_mu=effective[..., CH_MU], d_s=effective[..., CH_SCALE],
                    weight_map=weight_map)
    if not need_grad:
        return tl, None

    cloud_grads = backward_from_cache(cache, tl.grad_image)
    uv_grad = cloud_grads_to_uv(assembled, cloud_grads, rows, cols)
    g_eff = uv_grad.data
    if tl.grad_mu is not None:
        g_eff[..., CH_MU] += tl.grad_mu
    if tl.grad_scale is not None:
        g_eff[..., CH_SCALE] += tl.grad_scale

    if stage == 1:
        return tl, {"global": g_eff}
    return tl, {"blend": b[:, None, None, None] * g_eff[None]}


def _run_stage(builder: MapBuilder, rect: RectificationSet,
               frames: list[FrameRecord], cfg: OptimConfig, stage: int,
               n_steps: int, sampler: _BatchSampler,
               weight_map: np.ndarray, log=None) -> list[dict]:
    rows, cols = np.nonzero(builder.mask)
    if stage == 1:
        params = {"global": rect.delta_global.data}
    else:
        params = {"blend": rect.blend}
    lr_vec = cfg.lr_vector()
    opt = Adam(params, {k: lr_vec for k in params},
               beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)

    history = []
    for step in range(n_steps):
        batch = sampler.next_batch(cfg.batch_size)
        acc_grads = None
        acc_terms: dict[str, float] = {}
        acc_total = 0.0
        for fi in batch:
            tl, grads = _frame_loss_and_grad(builder, rect, frames[fi], stage,
                                             cfg, weight_map, rows, cols)
            acc_total += tl.total
            for k, v in tl.terms.items():
                acc_terms[k] = acc_terms.get(k, 0.0) + v
            if acc_grads is None:
                acc_grads = grads
            else:
                for k in acc_grads:
                    acc_grads[k] += grads[k]
        inv = 1.0 / len(batch)
        for k in acc_grads:
            acc_grads[k] *= inv
        entry = {"stage": stage, "step": step, "total": acc_total * inv}
        entry.update({k: v * inv for k, v in acc_terms.items()})
        history.append(entry)
        opt.step(acc_grads)
        if log is not None:
            log(entry)
    return history


def optimize_stage1(dataset_frames: list[FrameRecord], builder: MapBuilder,
                    rect: RectificationSet, cfg: OptimConfig,
                    n_steps: int | None = None, weight_map: np.ndarray | None = None,
                    sampler: _BatchSampler | None = None, log=None) -> list[dict]:
    """Learn the global rectification map; returns the loss history."""
    if not dataset_frames:
        raise ValueError("no training frames")
    if n_steps is None:
        n_steps = int(np.ceil(cfg.stage_split * cfg.total_steps))
    if weight_map is None:
        weight_map = np.ones(builder.mask.shape) * builder.mask
    if sampler is None:
        sampler = _BatchSampler(len(dataset_frames), cfg.seed)
    return _run_stage(builder, rect, dataset_frames, cfg, 1, n_steps,
                      sampler, weight_map, log)


def optimize_stage2(dataset_frames: list[FrameRecord], builder: MapBuilder,
                    rect: RectificationSet, cfg: OptimConfig,
                    n_steps: int | None = None, weight_map: np.ndarray | None = None,
                    sampler: _BatchSampler | None = None, log=None) -> list[dict]:
    """Blendmaps start as copies of the learned global map, then train."""
    if not dataset_frames:
        raise ValueError("no training frames")
    if n_steps is None:
        n_steps = cfg.total_steps - int(np.ceil(cfg.stage_split * cfg.total_steps))
    if weight_map is None:
        weight_map = np.ones(builder.mask.shape) * builder.mask
    if sampler is None:
        sampler = _BatchSampler(len(dataset_frames), cfg.seed + 1)
    rect.init_blend_from_global()
    return _run_stage(builder, rect, dataset_frames, cfg, 2, n_steps,
                      sampler, weight_map, log)


def run_optimization(dataset: VideoDataset, cfg: OptimConfig,
                     model: HeadMeshModel, uv_size: int = 320,
                     delta_mean: UVOffsets | None = None, log=None):
    """Full two-stage pipeline; returns (rect, builder, history)."""
    table = bake_raster_table(model, uv_size, uv_size)
    builder = MapBuilder(model, table)
    weight_map = default_weight_map(model, table)
    rect = RectificationSet.zeros(table.mask, cfg.blend_count)
    if delta_mean is not None:
        rect.delta_mean = delta_mean

    train = [f.loaded() for f in dataset.split("train")]
    history = optimize_stage1(train, builder, rect, cfg,
                              weight_map=weight_map, log=log)
    history += optimize_stage2(train, builder, rect, cfg,
                               weight_map=weight_map, log=log)
    return rect, builder, history


def evaluate_frames(builder: MapBuilder, rect: RectificationSet,
                    frames: list[FrameRecord], cfg: OptimConfig,
                    stage: int = 2) -> dict:
    """L1 / SSIM / PSNR of renders against the frames' target images."""
    from .losses import loss_rgb, loss_ssim, masked_psnr

    if not frames:
        raise ValueError("no frames to evaluate")
    per_frame = []
    for frame in frames:
        frame = frame.loaded()
        map_init = builder.build(frame.params)
        assembled = assemble(map_init, rect, frame.params.beta_exp, stage)
        from .render import render
        out = render(assembled, frame.camera, cfg.background, cfg.raster)
        target = _supervised_target(frame, cfg.background)
        l1, _ = loss_rgb(out.image, target, frame.mask)
        ssim_loss, _ = loss_ssim(out.image, target)
        per_frame.append({
            "l1": l1,
            "ssim": 1.0 - ssim_loss,
            "psnr": masked_psnr(out.image, target, frame.mask),
        })
    summary = {k: float(np.mean([m[k] for m in per_frame])) for k in per_frame[0]}
    return {"frames": per_frame, "mean": summary}
