import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uvavatar.gauss import (Gaussian3D, InvalidGaussianError, covariance,
                            gaussian_weight, quat_from_params, quat_to_rotmat)


def dense_cov_oracle(log_scale, q):
    """Independent construction: explicit R, S matrices and chained products."""
    w, x, y, z = q
    R = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
    S = np.diag(np.exp(np.asarray(log_scale, dtype=np.float64)))
    return R @ S @ S.T @ R.T


class TestCovariance:
    def test_unit_scales_no_rotation(self):
        np.testing.assert_array_equal(
            covariance((0, 0, 0), quat_from_params((0, 0, 0))), np.eye(3))

    def test_single_axis_scale(self):
        got = covariance((np.log(2), 0, 0), quat_from_params((0, 0, 0)))
        np.testing.assert_allclose(got, np.diag([4.0, 1.0, 1.0]), atol=1e-15)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            s = rng.normal(0, 1, 3)
            q = quat_from_params(rng.normal(0, 1, 3))
            np.testing.assert_allclose(covariance(s, q), dense_cov_oracle(s, q),
                                       atol=1e-12)

    def test_psd_10k_random(self):
        rng = np.random.default_rng(1)
        s = rng.normal(0, 1.5, (10_000, 3))
        q = quat_from_params(rng.normal(0, 2.0, (10_000, 3)))
        covs = covariance(s, q)
        eig = np.linalg.eigvalsh(covs)
        assert eig.min() >= -1e-9
        sym_err = np.abs(covs - np.swapaxes(covs, -1, -2)).max()
        assert sym_err < 1e-9

    def test_rotation_consistency(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            s = rng.normal(0, 1, 3)
            q = quat_from_params(rng.normal(0, 1, 3))
            R = quat_to_rotmat(q)
            base = covariance(s, quat_from_params((0, 0, 0)))
            np.testing.assert_allclose(covariance(s, q), R @ base @ R.T, atol=1e-10)


class TestGaussianWeight:
    def test_at_mean(self):
        assert gaussian_weight((1, 2, 3), (1, 2, 3), np.eye(3)) == 1.0

    def test_unit_distance_identity_cov(self):
        got = gaussian_weight((1, 0, 0), (0, 0, 0), np.eye(3))
        assert abs(got - np.exp(-0.5)) < 1e-15

    def test_matches_inverse_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            cov = covariance(rng.normal(0, 0.7, 3), quat_from_params(rng.normal(0, 1, 3)))
            x = rng.normal(0, 1, 3)
            mu = rng.normal(0, 1, 3)
            d = x - mu
            expect = np.exp(-0.5 * d @ np.linalg.inv(cov) @ d)
            assert abs(gaussian_weight(x, mu, cov) - expect) < 1e-10

    def test_rigid_transform_invariance(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            cov = covariance(rng.normal(0, 0.5, 3), quat_from_params(rng.normal(0, 1, 3)))
            x, mu = rng.normal(0, 1, 3), rng.normal(0, 1, 3)
            R = quat_to_rotmat(quat_from_params(rng.normal(0, 1, 3)))
            t = rng.normal(0, 2, 3)
            before = gaussian_weight(x, mu, cov)
            after = gaussian_weight(R @ x + t, R @ mu + t, R @ cov @ R.T)
            assert abs(before - after) < 1e-10

    def test_degenerate_raises(self):
        with pytest.raises(InvalidGaussianError):
            gaussian_weight((1, 0, 0), (0, 0, 0), np.full((3, 3), np.nan))
        with pytest.raises(InvalidGaussianError):
            gaussian_weight((1, 0, 0), (0, 0, 0), -np.eye(3))

    def test_singular_regularized(self):
        # rank-deficient covariance gets the epsilon bump instead of failing
        cov = np.diag([1.0, 1.0, 0.0])
        w = gaussian_weight((0.1, 0, 0), (0, 0, 0), cov)
        assert 0.0 < w <= 1.0


class TestQuaternion:
    def test_zero_params_identity(self):
        np.testing.assert_array_equal(quat_from_params((0, 0, 0)), [1, 0, 0, 0])

    def test_unit_x(self):
        np.testing.assert_allclose(quat_from_params((1, 0, 0)),
                                   np.array([1, 1, 0, 0]) / np.sqrt(2), atol=1e-15)

    @given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3))
    @settings(max_examples=200, deadline=None)
    def test_always_unit_norm(self, r):
        q = quat_from_params(np.array(r))
        assert abs(np.linalg.norm(q) - 1.0) < 1e-9

    def test_rotmat_orthonormal(self):
        rng = np.random.default_rng(5)
        R = quat_to_rotmat(quat_from_params(rng.normal(0, 2, (100, 3))))
        err = np.abs(R @ np.swapaxes(R, -1, -2) - np.eye(3)).max()
        assert err < 1e-12


def test_gaussian3d_activations():
    g = Gaussian3D(mean=np.zeros(3), log_scale=np.log([1, 2, 3]),
                   rot=np.zeros(3), alpha=0.0, color=np.zeros(3))
    np.testing.assert_allclose(g.scale, [1, 2, 3], atol=1e-15)
    assert g.opacity == 0.5
    np.testing.assert_allclose(g.cov(), np.diag([1, 4, 9]), atol=1e-12)
