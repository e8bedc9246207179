"""UV-map parameterized 3D Gaussian head avatars.

A differentiable software splatting renderer, a two-stage rectification
optimizer that personalizes an initialized head from video frames, and a
real-time animation runtime with no neural network in the loop.
"""

from .camera import Camera, orbit_camera
from .gauss import Gaussian3D, covariance, gaussian_weight, quat_from_params, quat_to_rotmat
from .headmesh import (HeadMeshModel, MeshParams, UVRasterTable, bake_raster_table,
                       build_mesh, load_mesh, make_test_head, rasterize_positions,
                       save_mesh)
from .losses import LossWeights, default_weight_map, loss_rgb, loss_ssim, masked_psnr
from .optimize import (Adam, MapBuilder, OptimConfig, RectificationSet, VideoDataset,
                       assemble, blending_weights, optimize_stage1, optimize_stage2,
                       run_optimization)
from .render import RasterConfig, RenderOutput, composite, reference_render, render
from .render_grad import CloudGradients, render_backward
from .runtime import AvatarRuntime, PoseRequest
from .splat import Splats, project
from .uvmap import (GaussianCloud, UVGaussianMap, UVOffsets, apply_offsets,
                    blend_offsets, init_map, to_cloud)
from .assets import AvatarAsset, load_asset, save_asset

__version__ = "0.1.0"
