"""Continuous parameter fields over canonical space.

Each field is a multiresolution hash grid followed by a small rectifier MLP.
Three independent fields produce the SH coefficients, the center
displacement and the ambient-occlusion factor; the AO network also sees a
sinusoidal encoding of the normalized timestamp. An optional UV atlas can
replace the SH field.

Gradients are accumulated into ``.grad`` buffers owned by each component
(torch style) and reset by ``zero_grad``. Field queries treat the query
position as a constant: gradients reach table entries, MLP weights and atlas
texels, never the query coordinates.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numba
import numpy as np

from .errors import ConfigurationError

PRIMES = (1, 2654435761, 805459861)


@dataclass(frozen=True)
class HashGridConfig:
    levels: int = 16
    features: int = 2
    base_resolution: int = 16
    max_resolution: int = 2048
    table_size: int = 2 ** 17
    init_range: float = 1e-4
    dtype: str = "float32"

    def __post_init__(self):
        if self.table_size & (self.table_size - 1):
            raise ConfigurationError(f"table_size must be a power of two, got {self.table_size}")
        if self.levels < 1 or self.features < 1:
            raise ConfigurationError("levels and features must be positive")
        if self.levels > 1 and self.max_resolution <= self.base_resolution:
            raise ConfigurationError("max_resolution must exceed base_resolution")

    @property
    def growth(self) -> float:
        if self.levels == 1:
            return 1.0
        return float(np.exp((np.log(self.max_resolution) - np.log(self.base_resolution))
                            / (self.levels - 1)))

    def resolutions(self) -> np.ndarray:
        b = self.growth
        return np.array([int(np.floor(self.base_resolution * b ** l + 1e-9))
                         for l in range(self.levels)], dtype=np.int64)

    @property
    def output_dim(self) -> int:
        return self.levels * self.features


@dataclass(frozen=True)
class MlpConfig:
    hidden_layers: int = 2
    hidden_width: int = 64

    def __post_init__(self):
        if self.hidden_layers < 1 or self.hidden_width < 1:
            raise ConfigurationError("MLP needs at least one hidden layer of positive width")


@numba.njit(cache=True, nogil=True)
def _corner_index(i, j, k, r, size, dense):
    if dense:
        return i + j * (r + 1) + k * (r + 1) * (r + 1)
    h = (np.uint64(i) * np.uint64(1)) ^ (np.uint64(j) * np.uint64(2654435761)) \
        ^ (np.uint64(k) * np.uint64(805459861))
    return np.int64(h % np.uint64(size))


@numba.njit(cache=True, nogil=True)
def _hash_forward(xn, table, offsets, res, sizes, dense, out, idx_out, w_out):
    N = xn.shape[0]
    L = res.shape[0]
    F = table.shape[1]
    for n in range(N):
        for l in range(L):
            r = res[l]
            s0 = xn[n, 0] * r
            s1 = xn[n, 1] * r
            s2 = xn[n, 2] * r
            b0 = min(max(int(np.floor(s0)), 0), r - 1)
            b1 = min(max(int(np.floor(s1)), 0), r - 1)
            b2 = min(max(int(np.floor(s2)), 0), r - 1)
            f0 = s0 - b0
            f1 = s1 - b1
            f2 = s2 - b2
            for f in range(F):
                out[n, l * F + f] = 0.0
            for c in range(8):
                dx = c & 1
                dy = (c >> 1) & 1
                dz = (c >> 2) & 1
                wx = f0 if dx else 1.0 - f0
                wy = f1 if dy else 1.0 - f1
                wz = f2 if dz else 1.0 - f2
                w = wx * wy * wz
                row = offsets[l] + _corner_index(b0 + dx, b1 + dy, b2 + dz,
                                                 r, sizes[l], dense[l])
                idx_out[n, l, c] = row
                w_out[n, l, c] = w
                for f in range(F):
                    out[n, l * F + f] += w * table[row, f]


@numba.njit(cache=True, nogil=True)
def _hash_backward(idx, w, g_feat, grad, live):
    N, L, _ = idx.shape
    F = grad.shape[1]
    for n in range(N):
        for l in range(L):
            for c in range(8):
                row = idx[n, l, c]
                wt = w[n, l, c]
                for f in range(F):
                    grad[row, f] += wt * g_feat[n, l * F + f]
                live[row] = True


@numba.njit(cache=True, nogil=True)
def zero_masked_rows(a, mask):
    for r in range(a.shape[0]):
        if mask[r]:
            for f in range(a.shape[1]):
                a[r, f] = 0.0


class HashGrid:
    """Multiresolution hash grid over the unit cube.

    Coarse levels whose full vertex lattice fits in ``table_size`` rows are
    indexed densely; finer levels use the XOR-of-primes spatial hash.
    """

    def __init__(self, config: HashGridConfig, rng: np.random.Generator | None = None):
        self.config = config
        self.res = config.resolutions()
        full = (self.res + 1) ** 3
        self.dense = full <= config.table_size
        self.sizes = np.where(self.dense, full, config.table_size).astype(np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(np.int64)
        rows = int(self.sizes.sum())
        rng = rng or np.random.default_rng(0)
        self.table = rng.uniform(-config.init_range, config.init_range,
                                 size=(rows, config.features)).astype(config.dtype)
        self.grad = np.zeros((rows, config.features))
        self.live = np.zeros(rows, dtype=np.bool_)

    @property
    def output_dim(self) -> int:
        return self.config.output_dim

    def encode(self, xn: np.ndarray):
        """Features (N, L*F) for normalized points plus the backward cache."""
        xn = np.clip(np.ascontiguousarray(xn, dtype=np.float64).reshape(-1, 3), 0.0, 1.0)
        N, L = len(xn), len(self.res)
        out = np.empty((N, self.output_dim))
        idx = np.empty((N, L, 8), dtype=np.int64)
        w = np.empty((N, L, 8))
        _hash_forward(xn, self.table, self.offsets, self.res, self.sizes, self.dense, out, idx, w)
        return out, (idx, w)

    def backward(self, cache, g_feat: np.ndarray) -> None:
        idx, w = cache
        _hash_backward(idx, w, np.ascontiguousarray(g_feat, dtype=np.float64), self.grad, self.live)

    @property
    def live_rows(self) -> np.ndarray:
        """Sorted indices of rows that have received gradient at least once."""
        return np.flatnonzero(self.live)

    def zero_grad(self) -> None:
        zero_masked_rows(self.grad, self.live)


class Mlp:
    """``affine -> relu`` x hidden_layers, then an affine head."""

    def __init__(self, in_dim: int, out_dim: int, config: MlpConfig = MlpConfig(),
                 rng: np.random.Generator | None = None, zero_head: bool = True):
        rng = rng or np.random.default_rng(0)
        dims = [in_dim] + [config.hidden_width] * config.hidden_layers + [out_dim]
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weights, self.biases = [], []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            if i == len(dims) - 2 and zero_head:
                W = np.zeros((a, b))
            else:
                lim = np.sqrt(6.0 / (a + b))
                W = rng.uniform(-lim, lim, size=(a, b))
            self.weights.append(W)
            self.biases.append(np.zeros(b))
        self.zero_grad()

    def zero_grad(self) -> None:
        if getattr(self, "grad_weights", None) is None:
            self.grad_weights = [np.zeros_like(W) for W in self.weights]
            self.grad_biases = [np.zeros_like(b) for b in self.biases]
        for g in self.grad_weights + self.grad_biases:
            g[...] = 0.0

    def forward(self, x: np.ndarray):
        if x.shape[-1] != self.in_dim:
            raise ConfigurationError(f"MLP expects {self.in_dim} inputs, got {x.shape[-1]}")
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    __call__ = forward

    def backward(self, acts, g_out: np.ndarray) -> np.ndarray:
        """Accumulate weight gradients; returns dL/d(input)."""
        g = g_out
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                g = g * (acts[i + 1] > 0)
            self.grad_weights[i] += acts[i].T @ g
            self.grad_biases[i] += g.sum(axis=0)
            g = g @ self.weights[i].T
        return g


def mlp_forward(x, weights, biases) -> np.ndarray:
    """Stateless evaluation with explicit weight lists."""
    h = np.asarray(x, dtype=np.float64)
    for i, (W, b) in enumerate(zip(weights, biases)):
        h = h @ W + b
        if i < len(weights) - 1:
            h = np.maximum(h, 0.0)
    return h


def positional_encode_time(t, n_freq: int = 6) -> np.ndarray:
    """Interleaved ``sin(2^k pi t), cos(2^k pi t)`` for k < n_freq."""
    t = np.asarray(t, dtype=np.float64)
    ang = np.pi * t[..., None] * (2.0 ** np.arange(n_freq))
    out = np.empty(t.shape + (2 * n_freq,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


class HashField:
    """Hash grid + MLP evaluated at normalized canonical positions."""

    def __init__(self, grid_cfg: HashGridConfig, out_dim: int, mlp_cfg: MlpConfig = MlpConfig(),
                 extra_inputs: int = 0, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.grid = HashGrid(grid_cfg, rng)
        self.extra_inputs = extra_inputs
        self.mlp = Mlp(self.grid.output_dim + extra_inputs, out_dim, mlp_cfg, rng)

    def forward(self, xn: np.ndarray, extra: np.ndarray | None = None):
        feats, gcache = self.grid.encode(xn)
        if self.extra_inputs:
            feats = np.concatenate([feats, extra], axis=1)
        out, acts = self.mlp.forward(feats)
        return out, (gcache, acts)

    def backward(self, cache, g_out: np.ndarray) -> None:
        gcache, acts = cache
        g_in = self.mlp.backward(acts, g_out)
        self.grid.backward(gcache, g_in[:, :self.grid.output_dim])

    def zero_grad(self) -> None:
        self.grid.zero_grad()
        self.mlp.zero_grad()


class UvAtlas:
    """Learnable H x W x 27 texture sampled bilinearly at texel centers."""

    def __init__(self, height: int = 64, width: int = 64, channels: int = 27, values=None):
        self.texture = np.zeros((height, width, channels)) if values is None \
            else np.array(values, dtype=np.float64)
        self.grad = np.zeros_like(self.texture)

    def _taps(self, uv):
        uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
        H, W = self.texture.shape[:2]
        x = np.clip(uv[:, 0] * W - 0.5, 0.0, W - 1)
        y = np.clip(uv[:, 1] * H - 0.5, 0.0, H - 1)
        x0 = np.minimum(np.floor(x).astype(np.int64), max(W - 2, 0))
        y0 = np.minimum(np.floor(y).astype(np.int64), max(H - 2, 0))
        fx, fy = x - x0, y - y0
        x1, y1 = np.minimum(x0 + 1, W - 1), np.minimum(y0 + 1, H - 1)
        rows = np.stack([y0, y0, y1, y1], axis=1)
        cols = np.stack([x0, x1, x0, x1], axis=1)
        w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
        return rows, cols, w

    def sample(self, uv):
        rows, cols, w = self._taps(uv)
        out = np.einsum("nk,nkc->nc", w, self.texture[rows, cols])
        return out, (rows, cols, w)

    def backward(self, cache, g_out: np.ndarray) -> None:
        rows, cols, w = cache
        np.add.at(self.grad, (rows.reshape(-1), cols.reshape(-1)),
                  (w[:, :, None] * g_out[:, None, :]).reshape(-1, g_out.shape[1]))

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def uv_sample_sh(u, v, texture) -> np.ndarray:
    """Bilinear lookup of one 27-vector from an (H, W, 27) atlas."""
    atlas = texture if isinstance(texture, UvAtlas) else UvAtlas(values=texture)
    out, _ = atlas.sample(np.array([[u, v]]))
    return out[0]


@dataclass(frozen=True)
class FieldConfig:
    sh_grid: HashGridConfig = HashGridConfig(table_size=2 ** 17)
    dx_grid: HashGridConfig = HashGridConfig(table_size=2 ** 17)
    ao_grid: HashGridConfig = HashGridConfig(table_size=2 ** 19)
    mlp: MlpConfig = MlpConfig()
    n_freq: int = 6
    max_displacement: float = 0.10
    ao_init: float = 0.5

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FieldConfig":
        return cls(sh_grid=HashGridConfig(**d["sh_grid"]), dx_grid=HashGridConfig(**d["dx_grid"]),
                   ao_grid=HashGridConfig(**d["ao_grid"]), mlp=MlpConfig(**d["mlp"]),
                   n_freq=int(d["n_freq"]), max_displacement=float(d["max_displacement"]),
                   ao_init=float(d.get("ao_init", 0.5)))


class FieldBank:
    """The three per-avatar fields plus the canonical bounding box they live in."""

    def __init__(self, bbox_min, bbox_max, config: FieldConfig = FieldConfig(), seed: int = 0):
        self.config = config
        self.bbox_min = np.asarray(bbox_min, dtype=np.float64)
        self.bbox_max = np.asarray(bbox_max, dtype=np.float64)
        rng = np.random.default_rng(seed)
        self.sh = HashField(config.sh_grid, 27, config.mlp, rng=rng)
        self.dx = HashField(config.dx_grid, 3, config.mlp, rng=rng)
        self.ao = HashField(config.ao_grid, 1, config.mlp, extra_inputs=2 * config.n_freq, rng=rng)
        # head bias sets the initial AO; 0.5 is the plain zero-initialized head
        if config.ao_init != 0.5:
            self.ao.mlp.biases[-1][:] = np.log(config.ao_init / (1.0 - config.ao_init))

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return np.clip((x - self.bbox_min) / (self.bbox_max - self.bbox_min), 0.0, 1.0)

    def sample_shape_appearance(self, x0: np.ndarray):
        """SH (N, 9, 3) and displacement (N, 3) at canonical positions."""
        xn = self.normalize(np.asarray(x0, dtype=np.float64).reshape(-1, 3))
        raw_sh, sh_cache = self.sh.forward(xn)
        raw_dx, dx_cache = self.dx.forward(xn)
        th = np.tanh(raw_dx)
        dx = th * self.config.max_displacement
        return raw_sh.reshape(-1, 9, 3), dx, (sh_cache, dx_cache, th)

    def shape_appearance_backward(self, cache, g_sh, g_dx) -> None:
        sh_cache, dx_cache, th = cache
        if g_sh is not None:
            self.sh.backward(sh_cache, g_sh.reshape(-1, 27))
        self.dx.backward(dx_cache, g_dx * self.config.max_displacement * (1.0 - th * th))

    def sample_ao(self, x0: np.ndarray, t: float):
        xn = self.normalize(np.asarray(x0, dtype=np.float64).reshape(-1, 3))
        gamma = np.broadcast_to(positional_encode_time(t, self.config.n_freq), (len(xn), 2 * self.config.n_freq))
        raw, cache = self.ao.forward(xn, gamma)
        ao = 0.5 * (1.0 + np.tanh(0.5 * raw[:, 0]))
        return ao, (cache, ao)

    def ao_backward(self, cache, g_ao) -> None:
        inner, ao = cache
        self.ao.backward(inner, (g_ao * ao * (1.0 - ao))[:, None])

    def zero_grad(self) -> None:
        for f in (self.sh, self.dx, self.ao):
            f.zero_grad()

    def fields(self):
        return {"sh": self.sh, "dx": self.dx, "ao": self.ao}
