"""Render a handful of hand-placed Gaussians and visualize the tile
renderer against the brute-force reference.

Run:  python3 demos/01_splat_basics.py
Writes demo output into demos/out/.
"""

from pathlib import Path

import numpy as np

from uvavatar import Camera, UVGaussianMap, reference_render, render
from uvavatar.gauss import logit
from uvavatar.imgio import write_png
from uvavatar.splat import SH_C0

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

# A 3x3 grid of splats with different colors, sizes, and orientations.
# Channel layout per UV pixel: position 0:3, log-scale 3:6, rotation 6:9,
# opacity logit 9, color coefficients 10:13.
H = W = 3
data = np.zeros((H, W, 13))
mask = np.ones((H, W), bool)
rng = np.random.default_rng(0)

for i in range(H):
    for j in range(W):
        data[i, j, 0:3] = [0.25 * (j - 1), 0.25 * (i - 1), 2.0]
        data[i, j, 3:6] = np.log([0.06, 0.02, 0.02]) + rng.normal(0, 0.15, 3)
        data[i, j, 6:9] = rng.normal(0, 0.6, 3)  # random orientation
        data[i, j, 9] = logit(0.85)
        color = np.array([i / 2, j / 2, 1.0 - i / 4 - j / 4])
        data[i, j, 10:13] = (color - 0.5) / SH_C0

uvmap = UVGaussianMap(data, mask)
cam = Camera(fx=300, fy=300, cx=128, cy=128, width=256, height=256)

tiled = render(uvmap, cam, background=(1.0, 1.0, 1.0))
naive = reference_render(uvmap, cam, background=(1.0, 1.0, 1.0))

write_png(out_dir / "splats_tiled.png", tiled.image)
write_png(out_dir / "splats_reference.png", naive.image)

diff = np.abs(tiled.image - naive.image).max()
print(f"max |tiled - reference| = {diff:.2e}")
print(f"mean transmittance      = {tiled.transmittance.mean():.3f}")
print(f"wrote {out_dir}/splats_tiled.png and splats_reference.png")
