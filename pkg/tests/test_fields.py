import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from animgs.errors import ConfigurationError
from animgs.fields import (FieldBank, FieldConfig, HashGrid, HashGridConfig, Mlp, MlpConfig, UvAtlas,
                           mlp_forward, positional_encode_time, uv_sample_sh)
from animgs.model import SkinnedGaussianModel
from animgs.render import render_image
from animgs.skinning import Skeleton

from conftest import make_scene, small_field_config

GRID = HashGridConfig(levels=3, features=2, base_resolution=3, max_resolution=40, table_size=2 ** 10,
                      init_range=1.0, dtype="float64")


def _oracle_row(grid, level, ijk):
    """Table row of a lattice vertex: dense layout on coarse levels, XOR-of-primes hash otherwise."""
    r = int(grid.res[level])
    i, j, k = (int(v) for v in ijk)
    if grid.dense[level]:
        local = i + j * (r + 1) + k * (r + 1) ** 2
    else:
        local = ((i * 1) ^ (j * 2654435761) ^ (k * 805459861)) % grid.config.table_size
    return int(grid.offsets[level]) + local


def _oracle_encode(grid, x):
    out = []
    for l, r in enumerate(grid.res):
        s = np.asarray(x) * r
        b = np.clip(np.floor(s).astype(int), 0, r - 1)
        f = s - b
        acc = np.zeros(grid.config.features)
        for c in range(8):
            d = np.array([c & 1, (c >> 1) & 1, (c >> 2) & 1])
            w = np.prod(np.where(d, f, 1 - f))
            acc += w * grid.table[_oracle_row(grid, l, b + d)]
        out.append(acc)
    return np.concatenate(out)


def test_grid_has_dense_and_hashed_levels():
    grid = HashGrid(GRID)
    assert grid.dense.tolist() == [True, False, False]
    assert grid.res[0] == 3 and grid.res[-1] == 40


def test_hash_encode_matches_oracle():
    grid = HashGrid(GRID, np.random.default_rng(0))
    xs = np.random.default_rng(1).random((40, 3))
    feats, _ = grid.encode(xs)
    for x, f in zip(xs, feats):
        np.testing.assert_allclose(f, _oracle_encode(grid, x), atol=1e-12)


def test_hash_encode_vertex_and_cell_center():
    grid = HashGrid(GRID, np.random.default_rng(2))
    F = GRID.features
    for l, r in enumerate(grid.res):
        ijk = np.array([1, 2, 1])
        feats, _ = grid.encode((ijk / r)[None])
        np.testing.assert_allclose(feats[0, l * F:(l + 1) * F], grid.table[_oracle_row(grid, l, ijk)], atol=1e-12)
        center = (ijk + 0.5) / r
        feats, _ = grid.encode(center[None])
        corners = [grid.table[_oracle_row(grid, l, ijk + [c & 1, (c >> 1) & 1, (c >> 2) & 1])] for c in range(8)]
        np.testing.assert_allclose(feats[0, l * F:(l + 1) * F], np.mean(corners, axis=0), atol=1e-12)


def test_hash_encode_clamps_outside_points():
    grid = HashGrid(GRID, np.random.default_rng(3))
    a, _ = grid.encode(np.array([[-0.5, 0.3, 1.7]]))
    b, _ = grid.encode(np.array([[0.0, 0.3, 1.0]]))
    np.testing.assert_array_equal(a, b)


def test_hash_encode_continuous():
    grid = HashGrid(GRID, np.random.default_rng(4))
    x = np.array([[0.31, 0.52, 0.77]])
    base, _ = grid.encode(x)
    diffs = [np.abs(grid.encode(x + eps)[0] - base).max() for eps in (1e-4, 1e-5, 1e-6)]
    assert diffs[0] > 0
    # linear shrinkage up to the trilinear cross terms
    assert diffs[1] == pytest.approx(diffs[0] / 10, rel=1e-2)
    assert diffs[2] == pytest.approx(diffs[0] / 100, rel=1e-2)


def test_hash_table_gradient_matches_finite_differences():
    grid = HashGrid(GRID, np.random.default_rng(5))
    xs = np.random.default_rng(6).random((7, 3))
    c = np.random.default_rng(7).normal(size=(7, GRID.output_dim))
    _, cache = grid.encode(xs)
    grid.backward(cache, c)
    rows = np.unique(cache[0])
    h = 1e-5
    for row in rows[::5]:
        for f in range(GRID.features):
            old = grid.table[row, f]
            grid.table[row, f] = old + h
            lp = np.sum(c * grid.encode(xs)[0])
            grid.table[row, f] = old - h
            lm = np.sum(c * grid.encode(xs)[0])
            grid.table[row, f] = old
            fd = (lp - lm) / (2 * h)
            assert abs(grid.grad[row, f] - fd) <= 1e-5 * max(abs(fd), 1e-8)
    assert grid.live[rows].all() and grid.live.sum() == len(rows)
    grid.zero_grad()
    assert not grid.grad.any()


def test_mlp_examples():
    m = Mlp(4, 3, MlpConfig(2, 5))
    for W in m.weights:
        W[:] = 0
    m.biases[-1][:] = [1.0, -2.0, 0.5]
    out, _ = m.forward(np.random.default_rng(0).normal(size=(6, 4)))
    np.testing.assert_array_equal(out, np.tile([1.0, -2.0, 0.5], (6, 1)))

    ident = Mlp(1, 1, MlpConfig(2, 1))
    for W in ident.weights:
        W[:] = 1.0
    x = np.array([[0.0], [0.3], [2.5]])
    np.testing.assert_array_equal(ident.forward(x)[0], x)
    with pytest.raises(ConfigurationError):
        m.forward(np.zeros((2, 5)))


def test_mlp_head_zero_and_hidden_glorot():
    m = Mlp(10, 6, MlpConfig(2, 64), np.random.default_rng(0))
    assert not m.weights[-1].any()
    assert np.abs(m.weights[0]).max() <= np.sqrt(6 / (10 + 64))
    assert np.abs(m.weights[1]).max() <= np.sqrt(6 / (64 + 64))


def test_mlp_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    m = Mlp(5, 3, MlpConfig(2, 8), rng, zero_head=False)
    x = rng.normal(size=(4, 5))
    c = rng.normal(size=(4, 3))
    _, acts = m.forward(x)
    g_x = m.backward(acts, c)

    def loss(xx):
        return np.sum(c * mlp_forward(xx, m.weights, m.biases))

    h = 1e-6
    fd_x = np.zeros_like(x)
    for j in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[j] = h
        fd_x[j] = (loss(x + e) - loss(x - e)) / (2 * h)
    np.testing.assert_allclose(g_x, fd_x, rtol=1e-5, atol=1e-9)
    for arrs, grads in ((m.weights, m.grad_weights), (m.biases, m.grad_biases)):
        for a, g in zip(arrs, grads):
            for j in list(np.ndindex(a.shape))[::3]:
                old = a[j]
                a[j] = old + h
                lp = loss(x)
                a[j] = old - h
                lm = loss(x)
                a[j] = old
                fd = (lp - lm) / (2 * h)
                assert abs(g[j] - fd) <= 1e-5 * max(abs(fd), 1e-6)


def test_positional_encoding():
    g0 = positional_encode_time(0.0, 4)
    np.testing.assert_array_equal(g0[0::2], 0.0)
    np.testing.assert_array_equal(g0[1::2], 1.0)
    g1 = positional_encode_time(1.0, 6)
    assert g1.shape == (12,)
    np.testing.assert_allclose(g1[:2], [0.0, -1.0], atol=1e-15)
    t = 0.37
    expect = np.ravel([[np.sin(2 ** k * np.pi * t), np.cos(2 ** k * np.pi * t)] for k in range(6)])
    np.testing.assert_allclose(positional_encode_time(t, 6), expect, atol=1e-15)


def _bank(seed=0, **kw):
    return FieldBank(np.zeros(3), np.ones(3), small_field_config(**kw), seed=seed)


def test_fresh_fields():
    bank = _bank(init_range=1e-4)
    x = np.random.default_rng(0).random((20, 3))
    sh, dx, _ = bank.sample_shape_appearance(x)
    assert np.abs(dx).max() < 1e-3
    assert not sh.any()
    ao, _ = bank.sample_ao(x, 0.4)
    np.testing.assert_array_equal(ao, 0.5)


def test_ao_init_sets_starting_value():
    cfg = small_field_config()
    bank = FieldBank(np.zeros(3), np.ones(3), FieldConfig(cfg.sh_grid, cfg.dx_grid, cfg.ao_grid, cfg.mlp,
                                                          cfg.n_freq, cfg.max_displacement, ao_init=0.9))
    ao, _ = bank.sample_ao(np.random.default_rng(0).random((5, 3)), 0.2)
    np.testing.assert_allclose(ao, 0.9, rtol=1e-12)


def test_field_queries_are_pure_and_bounded():
    bank = _bank(seed=3)
    rng = np.random.default_rng(1)
    for f in bank.fields().values():
        f.mlp.weights[-1][:] = rng.normal(0, 20, f.mlp.weights[-1].shape)
    x = rng.random((30, 3))
    a = bank.sample_shape_appearance(x)
    b = bank.sample_shape_appearance(x)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    assert np.abs(a[1]).max() <= bank.config.max_displacement
    ao, _ = bank.sample_ao(x, 0.9)
    assert np.all((ao >= 0) & (ao <= 1))


@settings(max_examples=25, deadline=None)
@given(st.floats(-50, 50), st.floats(0, 1))
def test_ao_in_unit_interval_for_any_head(scale, t):
    bank = _bank(seed=1)
    rng = np.random.default_rng(2)
    bank.ao.mlp.weights[-1][:] = scale * rng.normal(size=bank.ao.mlp.weights[-1].shape)
    ao, _ = bank.sample_ao(rng.random((10, 3)), t)
    assert np.all((ao >= 0) & (ao <= 1))


def test_ao_depends_on_time():
    bank = _bank(seed=4)
    rng = np.random.default_rng(5)
    bank.ao.mlp.weights[-1][:] = rng.normal(size=bank.ao.mlp.weights[-1].shape)
    x = rng.random((8, 3))
    h = 1e-5
    d = (bank.sample_ao(x, 0.5 + h)[0] - bank.sample_ao(x, 0.5 - h)[0]) / (2 * h)
    assert np.abs(d).max() > 1e-6


def test_disabled_ao_renders_full_brightness():
    m, pose, cam = make_scene(0, ao=True)
    m.fields.ao.mlp.biases[-1][:] = -3.0
    dim = render_image([(m, pose)], cam, use_ao=True)
    full = render_image([(m, pose)], cam, use_ao=False)
    m.ao_enabled = False
    np.testing.assert_array_equal(render_image([(m, pose)], cam, use_ao=True), full)
    assert full.sum() > dim.sum()


def test_field_bank_gradients_match_finite_differences():
    bank = _bank(seed=6)
    rng = np.random.default_rng(7)
    for f in bank.fields().values():
        f.mlp.weights[-1][:] = rng.normal(0, 0.5, f.mlp.weights[-1].shape)
    x = rng.random((6, 3))
    c_sh, c_dx, c_ao = rng.normal(size=(6, 9, 3)), rng.normal(size=(6, 3)), rng.normal(size=6)
    t = 0.3

    def loss():
        sh, dx, _ = bank.sample_shape_appearance(x)
        ao, _ = bank.sample_ao(x, t)
        return np.sum(c_sh * sh) + np.sum(c_dx * dx) + np.sum(c_ao * ao)

    bank.zero_grad()
    _, _, cache = bank.sample_shape_appearance(x)
    bank.shape_appearance_backward(cache, c_sh, c_dx)
    _, aoc = bank.sample_ao(x, t)
    bank.ao_backward(aoc, c_ao)
    h = 1e-6
    for f in bank.fields().values():
        probes = [(f.grid.table, f.grid.grad, r) for r in np.flatnonzero(f.grid.live)[::11]]
        probes += [(W, g, None) for W, g in zip(f.mlp.weights + f.mlp.biases, f.mlp.grad_weights + f.mlp.grad_biases)]
        for arr, g, row in probes:
            idx = [(row, 0)] if row is not None else [tuple(rng.integers(s) for s in arr.shape) for _ in range(3)]
            for j in idx:
                old = arr[j]
                arr[j] = old + h
                lp = loss()
                arr[j] = old - h
                lm = loss()
                arr[j] = old
                fd = (lp - lm) / (2 * h)
                assert abs(g[j] - fd) <= 1e-4 * max(abs(fd), 1e-5), (j, g[j], fd)


def test_uv_atlas_sampling():
    rng = np.random.default_rng(0)
    tex = rng.normal(size=(4, 6, 27))
    # texel (row 2, col 3) center
    np.testing.assert_allclose(uv_sample_sh((3 + 0.5) / 6, (2 + 0.5) / 4, tex), tex[2, 3], atol=1e-12)
    np.testing.assert_allclose(uv_sample_sh(0.5, 0.5, tex), tex[1:3, 2:4].mean(axis=(0, 1)), atol=1e-12)


def test_uv_atlas_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    atlas = UvAtlas(5, 7, values=rng.normal(size=(5, 7, 27)))
    uv = rng.random((9, 2))
    c = rng.normal(size=(9, 27))
    _, cache = atlas.sample(uv)
    atlas.backward(cache, c)
    h = 1e-6
    for _ in range(25):
        j = (rng.integers(5), rng.integers(7), rng.integers(27))
        old = atlas.texture[j]
        atlas.texture[j] = old + h
        lp = np.sum(c * atlas.sample(uv)[0])
        atlas.texture[j] = old - h
        lm = np.sum(c * atlas.sample(uv)[0])
        atlas.texture[j] = old
        fd = (lp - lm) / (2 * h)
        assert abs(atlas.grad[j] - fd) <= 1e-5 * max(abs(fd), 1e-6)


def test_uv_mode_without_uv_is_a_configuration_error():
    skel = Skeleton([-1], [[0, 0, 0]])
    with pytest.raises(ConfigurationError, match="hash"):
        SkinnedGaussianModel(np.zeros((2, 3)), [[1, 0, 0, 0]] * 2, np.zeros((2, 3)), np.zeros(2),
                             [[0], [0]], [[1.0], [1.0]], skel, sh_mode="uv",
                             field_config=small_field_config())


def test_grid_config_validation():
    with pytest.raises(ConfigurationError):
        HashGridConfig(table_size=1000)
    with pytest.raises(ConfigurationError):
        HashGridConfig(base_resolution=16, max_resolution=8)
    assert HashGridConfig().growth > 1
    assert FieldConfig().sh_grid.table_size == 2 ** 17 and FieldConfig().ao_grid.table_size == 2 ** 19
    assert FieldConfig.from_dict(FieldConfig().to_dict()) == FieldConfig()
