import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from animgs.errors import ConsistencyError
from animgs.rasterizer import (Camera, RasterConfig, Splat2D, Splats, project_gaussian, rasterize_backward,
                               rasterize_forward, reference_rasterize, set_num_threads, splat_radius)

CAM = Camera(np.eye(4), 50, 50, 31.5, 31.5, 64, 64)


def random_splats(rng, m, lo=-20, hi=84, big=8.0):
    A = rng.normal(size=(m, 2, 2)) * rng.uniform(0.5, big, (m, 1, 1))
    covs = A @ A.transpose(0, 2, 1) + 0.3 * np.eye(2)
    return Splats(rng.uniform(lo, hi, (m, 2)), covs, rng.uniform(0.1, 5, m), rng.uniform(0, 1, (m, 3)),
                  rng.uniform(0, 1, m))


def test_projection_on_axis():
    cam = Camera(np.eye(4), 100, 100, 0, 0, 8, 8)
    s = project_gaussian([0, 0, 2.0], 0.01 * np.eye(3), cam)
    np.testing.assert_allclose(s.mean, [0, 0], atol=1e-15)
    np.testing.assert_allclose(s.cov, np.diag([25.3, 25.3]), rtol=1e-12)
    far = project_gaussian([0, 0, 4.0], 0.01 * np.eye(3), cam)
    np.testing.assert_allclose(far.cov - 0.3 * np.eye(2), (s.cov - 0.3 * np.eye(2)) / 4, rtol=1e-12)


def test_projection_off_axis_matches_jacobian_oracle():
    rng = np.random.default_rng(0)
    W = np.eye(4)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    W[:3, :3] = q * np.sign(np.linalg.det(q))
    W[:3, 3] = [0.1, -0.2, 3.0]
    cam = Camera(W, 80, 90, 16, 12, 32, 24)
    x = rng.normal(0, 0.3, 3)
    S = rng.normal(size=(3, 3))
    S = S @ S.T * 0.01
    p = W[:3, :3] @ x + W[:3, 3]
    J = np.array([[80 / p[2], 0, -80 * p[0] / p[2] ** 2], [0, 90 / p[2], -90 * p[1] / p[2] ** 2]])
    s = project_gaussian(x, S, cam)
    np.testing.assert_allclose(s.mean, [80 * p[0] / p[2] + 16, 90 * p[1] / p[2] + 12], rtol=1e-12)
    np.testing.assert_allclose(s.cov, J @ W[:3, :3] @ S @ W[:3, :3].T @ J.T + 0.3 * np.eye(2), rtol=1e-10)


def test_near_plane_culls():
    cam = Camera(np.eye(4), 100, 100, 0, 0, 8, 8, z_near=0.2)
    assert project_gaussian([0, 0, 0.1], np.eye(3), cam) is None
    assert project_gaussian([0, 0, 0.3], np.eye(3), cam) is not None


def test_extent_covers_three_sigma():
    cov = np.array([[[9.0, 0], [0, 1.0]]])
    assert splat_radius(cov, np.array([0.001]))[0] >= 9.0
    # opaque splats stay above the skip threshold further out
    r = splat_radius(cov, np.array([0.9]))[0]
    assert 0.9 * np.exp(-0.5 * (r / 3) ** 2) <= 1 / 255


def test_empty_scene_is_background():
    buf = rasterize_forward(Splats.empty(), CAM, (0.1, 0.2, 0.3))
    np.testing.assert_array_equal(buf.color, np.broadcast_to([0.1, 0.2, 0.3], buf.color.shape))
    np.testing.assert_array_equal(buf.transmittance, 1.0)
    ref = reference_rasterize(Splats.empty(), CAM, (0.1, 0.2, 0.3))
    np.testing.assert_array_equal(ref.color, buf.color)


def test_single_splat_center_pixel():
    c = np.array([0.9, 0.5, 0.1])
    sp = Splats.from_list([Splat2D(np.array([10.0, 20.0]), np.eye(2) * 4, 1.0, c, 0.8)])
    buf = rasterize_forward(sp, CAM)
    np.testing.assert_allclose(buf.color[20, 10], 0.8 * c, rtol=1e-14)
    # one pixel away: closed-form single-term blend
    a = 0.8 * np.exp(-0.5 * 1 / 4)
    np.testing.assert_allclose(buf.color[20, 11], a * c, rtol=1e-14)
    np.testing.assert_allclose(reference_rasterize(sp, CAM).color, buf.color, atol=0)


def test_two_coincident_splats():
    red, blue = np.array([1.0, 0, 0]), np.array([0, 0, 1.0])
    sp = Splats.from_list([Splat2D(np.array([5.0, 5.0]), np.eye(2), 2.0, blue, 0.5, 1),
                           Splat2D(np.array([5.0, 5.0]), np.eye(2), 1.0, red, 0.5, 0)])
    buf = rasterize_forward(sp, CAM)
    np.testing.assert_allclose(buf.color[5, 5], 0.5 * red + 0.25 * blue, rtol=1e-14)
    assert buf.transmittance[5, 5] == pytest.approx(0.25)


def test_alpha_capped():
    sp = Splats.from_list([Splat2D(np.array([5.0, 5.0]), np.eye(2), 1.0, np.ones(3), 1.0)])
    assert rasterize_forward(sp, CAM).transmittance[5, 5] == pytest.approx(0.01)


def test_singular_covariance_skipped():
    sp = Splats.from_list([Splat2D(np.array([5.0, 5.0]), np.zeros((2, 2)), 1.0, np.ones(3), 0.9)])
    np.testing.assert_array_equal(rasterize_forward(sp, CAM).color, 0.0)


@pytest.mark.parametrize("seed", range(8))
def test_tiled_equals_reference(seed):
    rng = np.random.default_rng(seed)
    sp = random_splats(rng, int(rng.integers(1, 300)))
    a = rasterize_forward(sp, CAM, (0.2, 0.3, 0.4))
    b = reference_rasterize(sp, CAM, (0.2, 0.3, 0.4))
    assert np.abs(a.color - b.color).max() < 1e-12
    np.testing.assert_allclose(a.transmittance, b.transmittance, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 120))
def test_convex_combination_and_partition_of_unity(seed, m):
    rng = np.random.default_rng(seed)
    sp = random_splats(rng, m)
    buf = rasterize_forward(sp, CAM, (0.7, 0.2, 0.9))
    assert buf.color.min() >= 0 and buf.color.max() <= 1 + 1e-12
    white = Splats(sp.means, sp.covs, sp.depths, np.ones((m, 3)), sp.alphas)
    w = rasterize_forward(white, CAM, (0, 0, 0))
    # blended weights plus remaining transmittance sum to one
    np.testing.assert_allclose(w.color[..., 0] + w.transmittance, 1.0, atol=1e-12)
    assert np.all((buf.transmittance >= 0) & (buf.transmittance <= 1))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    sp = random_splats(rng, 80)
    sp.depths[:10] = sp.depths[10:20]  # ties resolved by source index
    perm = rng.permutation(80)
    shuffled = Splats(sp.means[perm], sp.covs[perm], sp.depths[perm], sp.colors[perm], sp.alphas[perm],
                      sp.source[perm])
    np.testing.assert_array_equal(rasterize_forward(sp, CAM).color, rasterize_forward(shuffled, CAM).color)


def test_zero_image_gradient_gives_zero():
    sp = random_splats(np.random.default_rng(1), 50)
    buf = rasterize_forward(sp, CAM)
    g = rasterize_backward(sp, buf, np.zeros_like(buf.color))
    for arr in (g.means, g.covs, g.colors, g.alphas):
        assert not arr.any()


def test_mismatched_backward_rejected():
    rng = np.random.default_rng(2)
    sp = random_splats(rng, 20)
    buf = rasterize_forward(sp, CAM)
    with pytest.raises(ConsistencyError):
        rasterize_backward(random_splats(rng, 20), buf, np.zeros_like(buf.color))
    with pytest.raises(ConsistencyError):
        rasterize_backward(sp, buf, np.zeros((3, 3, 3)))


def test_single_splat_alpha_derivative():
    c = np.array([0.3, 0.6, 0.9])
    sp = Splats.from_list([Splat2D(np.array([12.3, 7.6]), np.array([[5.0, 1.0], [1.0, 3.0]]), 1.0, c, 0.6)])
    buf = rasterize_forward(sp, CAM)
    G = np.zeros_like(buf.color)
    G[8, 12] = [1.0, -0.5, 0.25]
    g = rasterize_backward(sp, buf, G)
    h = 1e-6
    vals = []
    for s in (h, -h):
        sp.alphas[0] = 0.6 + s
        vals.append(np.sum(G * rasterize_forward(sp, CAM).color))
    fd = (vals[0] - vals[1]) / (2 * h)
    assert g.alphas[0] == pytest.approx(fd, rel=1e-4)


def test_splat_gradients_match_finite_differences():
    cfg = RasterConfig(alpha_min=1e-12, min_transmittance=0.0)
    rng = np.random.default_rng(3)
    cam = Camera(np.eye(4), 50, 50, 15.5, 15.5, 32, 32)
    sp = random_splats(rng, 12, lo=4, hi=28, big=2.0)
    sp.alphas[:] = rng.uniform(0.2, 0.9, 12)
    G = rng.normal(size=(32, 32, 3))
    buf = rasterize_forward(sp, cam, (0.1, 0.2, 0.3), cfg)
    g = rasterize_backward(sp, buf, G, cfg)

    def loss():
        return np.sum(G * rasterize_forward(sp, cam, (0.1, 0.2, 0.3), cfg).color)

    h = 1e-6
    for arr, ga in ((sp.means, g.means), (sp.colors, g.colors), (sp.alphas, g.alphas)):
        for j in list(np.ndindex(arr.shape))[::2]:
            old = arr[j]
            arr[j] = old + h
            lp = loss()
            arr[j] = old - h
            lm = loss()
            arr[j] = old
            fd = (lp - lm) / (2 * h)
            assert abs(ga[j] - fd) <= 1e-5 * max(abs(fd), 1e-3), (j, ga[j], fd)
    for i in range(12):
        for a, b in ((0, 0), (0, 1), (1, 1)):
            E = np.zeros((2, 2))
            E[a, b] = E[b, a] = 1.0
            old = sp.covs[i].copy()
            sp.covs[i] = old + h * E
            lp = loss()
            sp.covs[i] = old - h * E
            lm = loss()
            sp.covs[i] = old
            fd = (lp - lm) / (2 * h)
            an = np.sum(g.covs[i] * E)
            assert abs(an - fd) <= 1e-5 * max(abs(fd), 1e-3), (i, a, b, an, fd)


def test_thread_count_does_not_change_results():
    rng = np.random.default_rng(4)
    sp = random_splats(rng, 300)
    G = rng.normal(size=(64, 64, 3))
    try:
        set_num_threads(1)
        b1 = rasterize_forward(sp, CAM)
        g1 = rasterize_backward(sp, b1, G)
        set_num_threads(4)
        b4 = rasterize_forward(sp, CAM)
        g4 = rasterize_backward(sp, b4, G)
    finally:
        set_num_threads(1)
    np.testing.assert_array_equal(b1.color, b4.color)
    for a, b in ((g1.means, g4.means), (g1.covs, g4.covs), (g1.colors, g4.colors), (g1.alphas, g4.alphas)):
        np.testing.assert_array_equal(a, b)
