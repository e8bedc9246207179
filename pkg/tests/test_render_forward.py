import numba
import numpy as np
import pytest

from conftest import random_scene
from uvavatar.camera import Camera
from uvavatar.gauss import logit, sigmoid
from uvavatar.render import (RasterConfig, composite, reference_render, render)
from uvavatar.splat import SH_C0, Splats, project
from uvavatar.uvmap import UVGaussianMap, to_cloud


def make_splats(mean2d, depth, alpha, color, sigma=100.0):
    """Hand-built screen splats with isotropic, near-flat falloff."""
    n = len(depth)
    cov = np.tile([sigma, 0.0, sigma], (n, 1))
    conic = np.tile([1.0 / sigma, 0.0, 1.0 / sigma], (n, 1))
    return Splats(mean2d=np.asarray(mean2d, dtype=np.float64),
                  cov2d=cov, conic=conic,
                  depth=np.asarray(depth, dtype=np.float64),
                  alpha=np.asarray(alpha, dtype=np.float64),
                  color=np.asarray(color, dtype=np.float64),
                  radius=np.full(n, 3.0 * np.sqrt(sigma)),
                  kept=np.arange(n))


def tiny_cam(size=16):
    return Camera(fx=size, fy=size, cx=size / 2, cy=size / 2, width=size, height=size)


class TestProject:
    def test_on_axis_projects_to_principal_point(self):
        data = np.zeros((1, 1, 13))
        data[0, 0, 0:3] = [0, 0, 2.5]
        cloud = to_cloud(UVGaussianMap(data, np.ones((1, 1), bool)))
        cam = Camera(fx=37, fy=41, cx=13.25, cy=9.75, width=32, height=24)
        splats = project(cloud, cam)
        np.testing.assert_allclose(splats.mean2d[0], [13.25, 9.75], atol=1e-12)

    def test_isotropic_analytic_cov(self):
        sigma_w, d = 0.05, 2.0
        data = np.zeros((1, 1, 13))
        data[0, 0, 0:3] = [0, 0, d]
        data[0, 0, 3:6] = np.log(sigma_w)
        cloud = to_cloud(UVGaussianMap(data, np.ones((1, 1), bool)))
        cam = tiny_cam(64)
        splats = project(cloud, cam)
        expect = (cam.fx * sigma_w / d) ** 2
        np.testing.assert_allclose(splats.cov2d[0], [expect + 0.3, 0.0, expect + 0.3],
                                   rtol=1e-10, atol=1e-12)

    def test_means_match_pinhole_oracle(self):
        uvmap, cam, _ = random_scene(21, n=80)
        cloud = to_cloud(uvmap)
        splats = project(cloud, cam)
        for row, kept in enumerate(splats.kept):
            p = cam.R @ cloud.mean[kept] + cam.t
            expect = (cam.fx * p[0] / p[2] + cam.cx, cam.fy * p[1] / p[2] + cam.cy)
            np.testing.assert_allclose(splats.mean2d[row], expect, atol=1e-9)

    def test_behind_near_plane_culled(self):
        data = np.zeros((1, 2, 13))
        data[0, 0, 0:3] = [0, 0, -1.0]
        data[0, 1, 0:3] = [0, 0, 2.0]
        cloud = to_cloud(UVGaussianMap(data, np.ones((1, 2), bool)))
        splats = project(cloud, tiny_cam())
        assert len(splats) == 1 and splats.kept[0] == 1

    def test_activations_applied(self):
        data = np.zeros((1, 1, 13))
        data[0, 0, 0:3] = [0, 0, 1]
        data[0, 0, 9] = logit(0.37)
        data[0, 0, 10:13] = [(0.8 - 0.5) / SH_C0, (0.2 - 0.5) / SH_C0, 5.0]
        splats = project(to_cloud(UVGaussianMap(data, np.ones((1, 1), bool))), tiny_cam())
        np.testing.assert_allclose(splats.alpha[0], 0.37, atol=1e-12)
        np.testing.assert_allclose(splats.color[0, :2], [0.8, 0.2], atol=1e-12)
        assert splats.color[0, 2] == 1.0  # clamped


class TestComposite:
    def test_no_splats_background(self):
        cam = tiny_cam()
        out = composite(make_splats(np.zeros((0, 2)), [], [], np.zeros((0, 3))),
                        cam, (0.25, 0.5, 0.75))
        np.testing.assert_array_equal(out.image[..., 0], 0.25)
        np.testing.assert_array_equal(out.image[..., 2], 0.75)
        np.testing.assert_array_equal(out.transmittance, 1.0)
        np.testing.assert_array_equal(out.n_contrib, 0)

    def test_single_opaque_splat(self):
        # alpha(p) = 1 needs the clip and termination gates disabled
        cam = tiny_cam()
        cfg = RasterConfig(alpha_clip=1.0, transmittance_min=0.0)
        splats = make_splats([[8.5, 8.5]], [1.0], [1.0], [[0.3, 0.6, 0.9]], sigma=1e12)
        out = composite(splats, cam, (1.0, 0.0, 0.0), cfg)
        np.testing.assert_allclose(out.image[8, 8], [0.3, 0.6, 0.9], atol=1e-12)

    def test_two_splat_exact_composite(self):
        cam = tiny_cam()
        c1 = np.array([0.8, 0.1, 0.3])
        c2 = np.array([0.2, 0.9, 0.5])
        splats = make_splats([[8.5, 8.5], [8.5, 8.5]], [1.0, 2.0], [0.5, 0.5],
                             [c1, c2], sigma=1e12)
        out = composite(splats, cam, (0.0, 0.0, 0.0))
        np.testing.assert_array_equal(out.image[8, 8], 0.5 * c1 + 0.25 * c2)
        assert out.transmittance[8, 8] == 0.25
        assert out.n_contrib[8, 8] == 2

    def test_depth_tie_stable_by_index(self):
        cam = tiny_cam()
        c0 = np.array([1.0, 0.0, 0.0])
        c1 = np.array([0.0, 1.0, 0.0])
        splats = make_splats([[8.5, 8.5], [8.5, 8.5]], [2.0, 2.0], [0.6, 0.6],
                             [c0, c1], sigma=1e12)
        out = composite(splats, cam, (0.0, 0.0, 0.0))
        np.testing.assert_allclose(out.image[8, 8], 0.6 * c0 + 0.24 * c1, atol=1e-15)


class TestRender:
    def test_empty_map_background(self):
        m = UVGaussianMap(np.zeros((2, 2, 13)), np.zeros((2, 2), bool))
        out = render(m, tiny_cam(), (0.1, 0.2, 0.3))
        np.testing.assert_allclose(out.image, np.broadcast_to([0.1, 0.2, 0.3], (16, 16, 3)))

    def test_tiled_equals_reference_50_scenes(self):
        worst = 0.0
        for seed in range(50):
            n = int(np.random.default_rng(seed).integers(20, 500))
            uvmap, cam, bg = random_scene(seed, n=n, width=64, height=64)
            tiled = render(uvmap, cam, bg)
            ref = reference_render(uvmap, cam, bg)
            worst = max(worst, float(np.abs(tiled.image - ref.image).max()))
        assert worst <= 1e-5

    def test_bit_stable_across_threads(self):
        uvmap, cam, bg = random_scene(99, n=300, width=64, height=64)
        images = []
        for k in (1, 2, 8):
            numba.set_num_threads(k)
            images.append(render(uvmap, cam, bg).image.tobytes())
        numba.set_num_threads(2)
        assert images[0] == images[1] == images[2]

    def test_energy_bound(self):
        for seed in (5, 6, 7):
            uvmap, cam, _ = random_scene(seed, n=200)
            out = render(uvmap, cam, np.random.default_rng(seed).uniform(0, 1, 3))
            assert out.image.min() >= 0.0 and out.image.max() <= 1.0
            assert out.transmittance.min() >= 0.0 and out.transmittance.max() <= 1.0

    def test_order_independence_non_overlapping(self):
        rng = np.random.default_rng(17)
        centers = np.array([[x * 16.0 + 8.5, y * 16.0 + 8.5]
                            for x in range(3) for y in range(3)])
        n = len(centers)
        depth = rng.uniform(1, 5, n)
        alpha = rng.uniform(0.2, 0.9, n)
        color = rng.uniform(0, 1, (n, 3))
        cam = tiny_cam(48)
        base = composite(make_splats(centers, depth, alpha, color, sigma=1.5),
                         cam, (0, 0, 0))
        perm = rng.permutation(n)
        shuffled = composite(make_splats(centers[perm], depth[perm], alpha[perm],
                                         color[perm], sigma=1.5), cam, (0, 0, 0))
        np.testing.assert_array_equal(base.image, shuffled.image)

    def test_contribution_skip_gate(self):
        # a splat below the 1/255 contribution threshold leaves no trace
        cam = tiny_cam()
        faint = make_splats([[8.5, 8.5]], [1.0], [1.0 / 300.0], [[1.0, 1.0, 1.0]],
                            sigma=1e12)
        out = composite(faint, cam, (0.0, 0.0, 0.0))
        np.testing.assert_array_equal(out.image, 0.0)
        np.testing.assert_array_equal(out.n_contrib, 0)

    def test_early_termination(self):
        # behind a nearly opaque stack, transmittance stops at the floor
        cam = tiny_cam()
        n = 60
        splats = make_splats([[8.5, 8.5]] * n, np.arange(1, n + 1.0),
                             [0.5] * n, [[1, 1, 1]] * n, sigma=1e12)
        out = composite(splats, cam, (0, 0, 0))
        assert out.n_contrib[8, 8] < n
        assert out.transmittance[8, 8] >= 1e-4 * 0.5  # last accepted test_T
