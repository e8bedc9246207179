import numpy as np
import pytest

from uvavatar.assets import AvatarAsset, load_asset, save_asset
from uvavatar.camera import Camera
from uvavatar.container import ContainerError, read_container, write_container
from uvavatar.headmesh import MeshParams, bake_raster_table, make_test_head, mesh_hash, save_mesh
from uvavatar.imgio import read_pfm, read_png, write_pfm, write_png
from uvavatar.optimize import MapBuilder, RectificationSet
from uvavatar.uvmap import UVOffsets


def build_asset(tmp_path, uv=16, d=3):
    model = make_test_head(0)
    mesh_file = tmp_path / "head.uvhm"
    save_mesh(mesh_file, model)
    table = bake_raster_table(model, uv, uv)
    builder = MapBuilder(model, table)
    rng = np.random.default_rng(0)
    rect = RectificationSet.zeros(table.mask, d)
    rect.delta_global = UVOffsets(rng.normal(0, 1, table.mask.shape + (13,)), table.mask)
    rect.blend = rng.normal(0, 1, (d,) + table.mask.shape + (13,))
    rect.blend[:, ~table.mask] = 0.0
    neutral = builder.build(MeshParams.neutral(model))
    return AvatarAsset.from_training(neutral, rect, np.zeros(model.k_id),
                                     "head.uvhm", mesh_hash(mesh_file),
                                     config_sha="ab" * 32)


class TestContainer:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "t.bin"
        tensors = {
            "A": np.arange(12, dtype=np.float64).reshape(3, 4),
            "B": np.array([1, 2, 3], dtype=np.int64),
            "C": np.zeros((2, 2, 2), dtype=np.float32),
        }
        write_container(path, b"TEST", 7, tensors)
        version, got = read_container(path, b"TEST")
        assert version == 7
        for k in tensors:
            np.testing.assert_array_equal(got[k], tensors[k])
            assert got[k].dtype == tensors[k].dtype

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "t.bin"
        write_container(path, b"AAAA", 1, {"X": np.zeros(3)})
        with pytest.raises(ContainerError, match="magic"):
            read_container(path, b"BBBB")

    def test_truncated(self, tmp_path):
        path = tmp_path / "t.bin"
        write_container(path, b"AAAA", 1, {"X": np.zeros(100)})
        raw = path.read_bytes()
        path.write_bytes(raw[:-40])
        with pytest.raises(ContainerError, match="truncated"):
            read_container(path, b"AAAA")


class TestAvatarAsset:
    def test_save_load_save_byte_identical(self, tmp_path):
        asset = build_asset(tmp_path)
        p1 = tmp_path / "a1.uvga"
        p2 = tmp_path / "a2.uvga"
        save_asset(p1, asset)
        loaded = load_asset(p1)
        save_asset(p2, loaded)
        assert p1.read_bytes() == p2.read_bytes()

    def test_fields_roundtrip(self, tmp_path):
        asset = build_asset(tmp_path)
        path = tmp_path / "a.uvga"
        save_asset(path, asset)
        got = load_asset(path)
        assert (got.height, got.width, got.d) == (asset.height, asset.width, asset.d)
        np.testing.assert_array_equal(got.mask, asset.mask)
        np.testing.assert_array_equal(got.base_map, asset.base_map)
        np.testing.assert_array_equal(got.delta_global, asset.delta_global)
        np.testing.assert_array_equal(got.blend, asset.blend)
        assert got.mesh_path == asset.mesh_path
        assert got.mesh_sha == asset.mesh_sha
        assert got.config_sha == asset.config_sha
        assert got.init_log_scale == asset.init_log_scale

    def test_blend_header_consistency(self, tmp_path):
        asset = build_asset(tmp_path)
        path = tmp_path / "a.uvga"
        save_asset(path, asset)
        raw = bytearray(path.read_bytes())
        # corrupt the D entry of DIMS (first tensor, 3rd int64)
        idx = raw.find(b"DIMS") + 4 + 2 + 4  # name + dtype/ndim + shape
        raw[idx + 16:idx + 24] = (99).to_bytes(8, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="D="):
            load_asset(path)


class TestImageIO:
    def test_png_roundtrip_quantized(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.random((9, 7, 3))
        path = tmp_path / "x.png"
        write_png(path, img)
        back = read_png(path)
        assert back.shape == img.shape
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-9

    def test_pfm_roundtrip_exact_f32(self, tmp_path):
        rng = np.random.default_rng(2)
        img = rng.normal(0, 10, (5, 8, 3)).astype(np.float32).astype(np.float64)
        path = tmp_path / "x.pfm"
        write_pfm(path, img)
        np.testing.assert_array_equal(read_pfm(path), img)

    def test_pfm_grayscale(self, tmp_path):
        img = np.arange(12, dtype=np.float64).reshape(3, 4)
        path = tmp_path / "g.pfm"
        write_pfm(path, img)
        np.testing.assert_array_equal(read_pfm(path), img.astype(np.float32))


def test_camera_json_roundtrip():
    rng = np.random.default_rng(3)
    angle = 0.3
    R = np.array([[np.cos(angle), 0, np.sin(angle)], [0, 1, 0],
                  [-np.sin(angle), 0, np.cos(angle)]])
    cam = Camera(fx=100.5, fy=99.25, cx=64.0, cy=63.5, width=128, height=128,
                 R=R, t=rng.normal(0, 1, 3), near=0.05, far=50.0)
    back = Camera.from_json(cam.to_json())
    np.testing.assert_array_equal(back.R, cam.R)
    np.testing.assert_array_equal(back.t, cam.t)
    assert (back.fx, back.fy, back.cx, back.cy) == (cam.fx, cam.fy, cam.cx, cam.cy)
    assert (back.near, back.far, back.width, back.height) == \
        (cam.near, cam.far, cam.width, cam.height)


def test_camera_validation():
    with pytest.raises(ValueError, match="focal"):
        Camera(fx=-1, fy=1, cx=0, cy=0, width=8, height=8)
    with pytest.raises(ValueError, match="orthonormal"):
        Camera(fx=1, fy=1, cx=0, cy=0, width=8, height=8, R=np.eye(3) * 1.1)
    with pytest.raises(ValueError, match="near"):
        Camera(fx=1, fy=1, cx=0, cy=0, width=8, height=8, near=5.0, far=1.0)
