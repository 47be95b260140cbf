import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from animgs.core import (GaussianGeometry, SkinnedGaussian, build_covariance, gaussian_opacity_at, logit,
                         quat_to_rotmat, quat_to_rotmat_backward)
from animgs.errors import DegenerateGaussianError, InvalidParameterError

finite = st.floats(-3, 3, allow_nan=False)
quats = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 0.1)


def test_identity_rotation_gives_diagonal_covariance():
    cov = build_covariance([1, 0, 0, 0], np.log([1, 2, 3])).matrix()
    np.testing.assert_allclose(cov, np.diag([1.0, 4.0, 9.0]), atol=1e-12)


def test_quarter_turn_about_z_swaps_axes():
    q = [np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)]
    cov = build_covariance(q, np.log([1, 2, 1])).matrix()
    # hand oracle: R = [[0,-1,0],[1,0,0],[0,0,1]], R diag(1,4,1) R^T
    R = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
    np.testing.assert_allclose(cov, R @ np.diag([1.0, 4.0, 1.0]) @ R.T, atol=1e-12)
    np.testing.assert_allclose(cov, np.diag([4.0, 1.0, 1.0]), atol=1e-12)


def test_rotation_matches_scipy():
    rng = np.random.default_rng(0)
    q = rng.normal(size=(50, 4))
    ours = quat_to_rotmat(q)
    ref = Rotation.from_quat(q[:, [1, 2, 3, 0]]).as_matrix()
    np.testing.assert_allclose(ours, ref, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(quats, st.lists(finite, min_size=3, max_size=3), st.lists(finite, min_size=3, max_size=3))
def test_covariance_symmetric_psd(q, s, x):
    cov = build_covariance(q, np.array(s) * 0.5).matrix()
    assert np.array_equal(cov, cov.T)
    assert np.array(x) @ cov @ np.array(x) >= -1e-9 * np.abs(cov).max()
    assert np.linalg.eigvalsh(cov).min() >= -1e-9 * np.abs(cov).max()


@settings(max_examples=40, deadline=None)
@given(quats, quats, st.lists(finite, min_size=3, max_size=3))
def test_covariance_rotation_covariant(q, q2, s):
    s = np.array(s) * 0.5
    Rq2 = quat_to_rotmat(q2)
    q12 = Rotation.from_quat(np.roll(q2, -1)) * Rotation.from_quat(np.roll(q, -1))
    combined = np.roll(q12.as_quat(), 1)
    lhs = build_covariance(combined, s).matrix()
    rhs = Rq2 @ build_covariance(q, s).matrix() @ Rq2.T
    np.testing.assert_allclose(lhs, rhs, atol=1e-9 * np.abs(rhs).max())


def test_non_finite_inputs_rejected():
    with pytest.raises(InvalidParameterError):
        build_covariance([1, 0, 0, np.nan], np.zeros(3))
    with pytest.raises(InvalidParameterError):
        build_covariance([1, 0, 0, 0], [0, np.inf, 0])


def test_opacity_at_center_is_peak():
    g = GaussianGeometry([0.1, -0.2, 0.3], [0.3, 0.1, 0.5, 0.2], [-1, -2, 0.5], logit(0.7))
    assert gaussian_opacity_at(g, g.center) == pytest.approx(0.7, abs=1e-15)


def test_opacity_unit_distance():
    g = GaussianGeometry(np.zeros(3), opacity_logit=50.0)  # alpha0 = 1 to double precision
    assert gaussian_opacity_at(g, [0, 1, 0]) == pytest.approx(np.exp(-0.5), rel=1e-12)
    assert gaussian_opacity_at(g, [0, 1, 0]) == pytest.approx(0.606531, abs=1e-6)


def test_zero_opacity_everywhere_zero():
    g = GaussianGeometry(np.zeros(3), opacity_logit=-np.inf)
    for x in np.random.default_rng(1).normal(size=(5, 3)):
        assert gaussian_opacity_at(g, x) == 0.0


def test_opacity_matches_matrix_inverse_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        g = GaussianGeometry(rng.normal(size=3), rng.normal(size=4), rng.uniform(-1, 0.5, 3), rng.normal())
        x = rng.normal(size=3)
        d = x - g.center
        m = d @ np.linalg.inv(g.covariance().matrix()) @ d
        assert gaussian_opacity_at(g, x) == pytest.approx(g.opacity * np.exp(-0.5 * m), rel=1e-10)


def test_degenerate_scale_rejected():
    g = GaussianGeometry(np.zeros(3), log_scale=[0, 0, np.log(1e-8)])
    with pytest.raises(DegenerateGaussianError):
        gaussian_opacity_at(g, np.ones(3))


def test_opacity_invariant_under_rotation_about_center():
    rng = np.random.default_rng(3)
    x0 = rng.normal(size=3)
    q = rng.normal(size=4)
    g = GaussianGeometry(x0, q, [-0.5, 0.0, -1.0], 0.3)
    x = x0 + rng.normal(size=3) * 0.5
    rot = Rotation.random(random_state=4)
    q_rot = np.roll((rot * Rotation.from_quat(np.roll(q, -1))).as_quat(), 1)
    g2 = GaussianGeometry(x0, q_rot, g.log_scale, 0.3)
    x2 = x0 + rot.apply(x - x0)
    assert gaussian_opacity_at(g2, x2) == pytest.approx(gaussian_opacity_at(g, x), rel=1e-12)


def test_opacity_decays_along_ray():
    rng = np.random.default_rng(5)
    g = GaussianGeometry(rng.normal(size=3), rng.normal(size=4), [-1, 0, 0.3], 1.0)
    d = rng.normal(size=3)
    vals = [gaussian_opacity_at(g, g.center + s * d) for s in np.linspace(0, 3, 30)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_quat_backward_matches_finite_differences():
    rng = np.random.default_rng(6)
    q = rng.normal(size=4)
    G = rng.normal(size=(3, 3))
    h = 1e-6
    fd = np.array([(np.sum(G * quat_to_rotmat(q + h * e)) - np.sum(G * quat_to_rotmat(q - h * e))) / (2 * h)
                   for e in np.eye(4)])
    np.testing.assert_allclose(quat_to_rotmat_backward(q, G), fd, rtol=1e-7, atol=1e-9)


def test_skinned_gaussian_invariants():
    geom = GaussianGeometry(np.zeros(3))
    SkinnedGaussian(geom, ((0, 0.25), (2, 0.75)), ao=0.3)
    with pytest.raises(InvalidParameterError):
        SkinnedGaussian(geom, ((0, 0.5), (1, 0.4)))
    with pytest.raises(InvalidParameterError):
        SkinnedGaussian(geom, ((0, 1.2), (1, -0.2)))
    with pytest.raises(InvalidParameterError):
        SkinnedGaussian(geom, tuple((i, 0.2) for i in range(5)))
    with pytest.raises(InvalidParameterError):
        SkinnedGaussian(geom, ((0, 1.0),), ao=1.5)


def test_quaternion_normalized_on_read():
    g = GaussianGeometry(np.zeros(3), [2.0, 0, 0, 0])
    assert abs(np.linalg.norm(g.rotation) - 1) < 1e-12
