import numpy as np
import pytest
from scipy.special import sph_harm_y

from animgs.errors import InvalidDirectionError
from animgs.shading import C0, apply_ao, eval_sh, sh_basis, shade, shade_backward


def _unit(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _real_sh_oracle(d):
    """Real SH (l <= 2) built from scipy's complex harmonics, in the renderer's basis order and sign."""
    theta, phi = np.arccos(np.clip(d[:, 2], -1, 1)), np.arctan2(d[:, 1], d[:, 0])
    cols = []
    for l in range(3):
        for m in range(-l, l + 1):
            Y = sph_harm_y(l, abs(m), theta, phi)
            cols.append(np.sqrt(2) * Y.imag if m < 0 else Y.real if m == 0 else np.sqrt(2) * Y.real)
    return np.stack(cols, axis=1)


def test_basis_matches_scipy_at_random_directions():
    d = _unit(np.random.default_rng(0), 100)
    np.testing.assert_allclose(sh_basis(d), _real_sh_oracle(d), atol=1e-12)


def test_basis_orthonormal_on_sphere():
    # Monte Carlo Gram matrix of the basis over the unit sphere
    d = _unit(np.random.default_rng(1), 400_000)
    Y = sh_basis(d)
    gram = 4 * np.pi * Y.T @ Y / len(d)
    np.testing.assert_allclose(gram, np.eye(9), atol=0.02)


def test_eval_sh_examples():
    d = np.array([0.0, 0.0, 1.0])
    np.testing.assert_array_equal(eval_sh(np.zeros((9, 3)), d), [0.5, 0.5, 0.5])
    c = np.zeros((9, 3))
    c[0] = 1.0
    np.testing.assert_allclose(eval_sh(c, d), 0.5 + C0, rtol=1e-15)
    assert eval_sh(c, d)[0] == pytest.approx(0.7820948, abs=1e-7)
    c = np.zeros((9, 3))
    c[2] = 0.4  # l=1, m=0
    up, down = eval_sh(c, [0, 0, 1.0]), eval_sh(c, [0, 0, -1.0])
    np.testing.assert_allclose(up - 0.5, -(down - 0.5), atol=1e-15)
    assert up[0] != down[0]


def test_dc_only_direction_invariant():
    rng = np.random.default_rng(2)
    c = np.zeros((9, 3))
    c[0] = rng.normal(size=3)
    outs = eval_sh(np.broadcast_to(c, (20, 9, 3)), _unit(rng, 20))
    np.testing.assert_allclose(outs, np.tile(outs[0], (20, 1)), atol=1e-15)


def test_negative_colors_clamped():
    c = np.zeros((9, 3))
    c[0] = -5.0
    np.testing.assert_array_equal(eval_sh(c, [1.0, 0, 0]), 0.0)


def test_bad_directions_rejected():
    with pytest.raises(InvalidDirectionError):
        eval_sh(np.zeros((9, 3)), [0.0, 0.0, 0.0])
    with pytest.raises(InvalidDirectionError):
        eval_sh(np.zeros((9, 3)), [0.0, 0.0, 2.0])


def test_apply_ao_examples():
    rgb = np.array([0.8, 0.4, 0.2])
    np.testing.assert_array_equal(apply_ao(1.0, rgb), rgb)
    np.testing.assert_array_equal(apply_ao(0.0, rgb), 0.0)
    np.testing.assert_allclose(apply_ao(0.5, rgb), [0.4, 0.2, 0.1])


def test_shade_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    n = 6
    sh = rng.normal(0, 0.3, (n, 9, 3))
    d = _unit(rng, n)
    ao = rng.uniform(0.2, 0.9, n)
    c = rng.normal(size=(n, 3))

    def loss(sh_, d_, ao_):
        return np.sum(c * shade(sh_, d_, ao_)[0])

    _, cache = shade(sh, d, ao)
    g_sh, g_d, g_ao = shade_backward(sh, d, ao, cache, c)
    h = 1e-6
    for arr, g in ((sh, g_sh), (d, g_d), (ao, g_ao)):
        for j in np.ndindex(arr.shape):
            old = arr[j]
            arr[j] = old + h
            lp = loss(sh, d, ao)
            arr[j] = old - h
            lm = loss(sh, d, ao)
            arr[j] = old
            fd = (lp - lm) / (2 * h)
            assert abs(g[j] - fd) <= 1e-5 * max(abs(fd), 1e-6)
