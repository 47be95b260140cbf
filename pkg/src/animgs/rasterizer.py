"""Differentiable tile-based Gaussian splatting on the CPU.

Pipeline: ``project_gaussians`` maps posed 3D Gaussians to screen-space
splats (EWA affine approximation), ``rasterize_forward`` bins splats into
16x16 tiles, depth-sorts each tile and alpha-composites front to back,
``rasterize_backward`` reverses the compositing recurrence per pixel.
``reference_rasterize`` is a brute-force per-pixel oracle with identical
thresholds and no tiling.

Pixel ``(x, y)`` samples the image plane at integer coordinates ``(x, y)``.
Tiles are independent work items; ``set_num_threads`` controls how many run
concurrently. Backward gradients are written to per-(tile, splat) slots and
reduced serially in entry order, so results do not depend on thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ConsistencyError, InvalidParameterError


@dataclass(frozen=True)
class RasterConfig:
    tile_size: int = 16
    extent_sigma: float = 3.0
    dilation: float = 0.3
    alpha_cap: float = 0.99
    alpha_min: float = 1.0 / 255.0
    min_transmittance: float = 1e-4
    min_det: float = 1e-12


DEFAULT_RASTER = RasterConfig()

_threads = 1
_pool: ThreadPoolExecutor | None = None


def set_num_threads(n: int) -> None:
    global _threads, _pool
    n = max(1, int(n))
    if n != _threads and _pool is not None:
        _pool.shutdown()
        _pool = None
    _threads = n


def get_num_threads() -> int:
    return _threads


def _run_chunks(fn, n_items: int) -> None:
    """Call ``fn(begin, end)`` over ``range(n_items)`` split across the pool."""
    global _pool
    if _threads == 1 or n_items < 2:
        fn(0, n_items)
        return
    if _pool is None:
        _pool = ThreadPoolExecutor(max_workers=_threads)
    n_chunks = min(n_items, 4 * _threads)
    bounds = np.linspace(0, n_items, n_chunks + 1).astype(int)
    futures = [_pool.submit(fn, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    for f in futures:
        f.result()


# --- cameras and projection --------------------------------------------------

@dataclass
class Camera:
    world_to_camera: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    z_near: float = 0.01

    def __post_init__(self):
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64).reshape(4, 4)
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidParameterError("focal lengths must be positive")
        if self.z_near <= 0:
            raise InvalidParameterError("z_near must be positive")
        self.width, self.height = int(self.width), int(self.height)

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @classmethod
    def look_at(cls, eye, target, up, fx, fy, width, height, cx=None, cy=None, z_near=0.01):
        """Camera at ``eye`` looking at ``target``; +y points down the image."""
        eye, target, up = (np.asarray(v, dtype=np.float64) for v in (eye, target, up))
        f = target - eye
        f /= np.linalg.norm(f)
        r = np.cross(f, up)
        r /= np.linalg.norm(r)
        d = np.cross(f, r)
        R = np.stack([r, d, f])
        W = np.eye(4)
        W[:3, :3] = R
        W[:3, 3] = -R @ eye
        cx = (width - 1) / 2.0 if cx is None else cx
        cy = (height - 1) / 2.0 if cy is None else cy
        return cls(W, fx, fy, cx, cy, width, height, z_near)

    def to_dict(self) -> dict:
        return {"world_to_camera": self.world_to_camera.tolist(), "fx": self.fx, "fy": self.fy,
                "cx": self.cx, "cy": self.cy, "width": self.width, "height": self.height,
                "z_near": self.z_near}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(np.array(d["world_to_camera"]), float(d["fx"]), float(d["fy"]), float(d["cx"]),
                   float(d["cy"]), int(d["width"]), int(d["height"]), float(d.get("z_near", 0.01)))


@dataclass
class Splat2D:
    mean: np.ndarray
    cov: np.ndarray
    depth: float
    color: np.ndarray
    alpha: float
    index: int = 0


@dataclass
class Splats:
    """Structure-of-arrays batch of screen-space splats."""

    means: np.ndarray
    covs: np.ndarray
    depths: np.ndarray
    colors: np.ndarray
    alphas: np.ndarray
    source: np.ndarray = None

    def __post_init__(self):
        self.means = np.ascontiguousarray(self.means, dtype=np.float64).reshape(-1, 2)
        self.covs = np.ascontiguousarray(self.covs, dtype=np.float64).reshape(-1, 2, 2)
        self.depths = np.ascontiguousarray(self.depths, dtype=np.float64).reshape(-1)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.float64).reshape(-1, 3)
        self.alphas = np.ascontiguousarray(self.alphas, dtype=np.float64).reshape(-1)
        if self.source is None:
            self.source = np.arange(len(self.depths))
        self.source = np.asarray(self.source, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.depths)

    @classmethod
    def from_list(cls, items) -> "Splats":
        items = list(items)
        if not items:
            return cls.empty()
        return cls(np.array([s.mean for s in items]), np.array([s.cov for s in items]),
                   np.array([s.depth for s in items]), np.array([s.color for s in items]),
                   np.array([s.alpha for s in items]), np.array([s.index for s in items]))

    @classmethod
    def empty(cls) -> "Splats":
        return cls(np.zeros((0, 2)), np.zeros((0, 2, 2)), np.zeros(0), np.zeros((0, 3)), np.zeros(0))

    @classmethod
    def concatenate(cls, parts, reindex: bool = True) -> "Splats":
        """Stack batches; with ``reindex`` source ids are offset to stay unique."""
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        offsets = np.cumsum([0] + [len(p) for p in parts[:-1]]) if reindex else [0] * len(parts)
        return cls(np.concatenate([p.means for p in parts]), np.concatenate([p.covs for p in parts]),
                   np.concatenate([p.depths for p in parts]), np.concatenate([p.colors for p in parts]),
                   np.concatenate([p.alphas for p in parts]),
                   np.concatenate([p.source + o for p, o in zip(parts, offsets)]))


@dataclass
class Projection:
    means: np.ndarray
    covs: np.ndarray
    depths: np.ndarray
    valid: np.ndarray
    p_cam: np.ndarray
    T2: np.ndarray
    cov3: np.ndarray


def project_gaussians(x_t: np.ndarray, cov3: np.ndarray, cam: Camera,
                      cfg: RasterConfig = DEFAULT_RASTER) -> Projection:
    """EWA projection of posed centers (N, 3) and covariances (N, 3, 3)."""
    Rw = cam.rotation
    p = x_t @ Rw.T + cam.translation
    z = p[:, 2]
    valid = z > cam.z_near
    zs = np.where(valid, z, 1.0)
    means = np.stack([cam.fx * p[:, 0] / zs + cam.cx, cam.fy * p[:, 1] / zs + cam.cy], axis=1)
    J = np.zeros((len(p), 2, 3))
    J[:, 0, 0] = cam.fx / zs
    J[:, 0, 2] = -cam.fx * p[:, 0] / zs ** 2
    J[:, 1, 1] = cam.fy / zs
    J[:, 1, 2] = -cam.fy * p[:, 1] / zs ** 2
    T2 = J @ Rw
    covs = np.einsum("nij,njk,nlk->nil", T2, cov3, T2) + cfg.dilation * np.eye(2)
    return Projection(means, covs, z, valid, p, T2, cov3)


def project_gaussian(x_t, sigma_t, cam: Camera, cfg: RasterConfig = DEFAULT_RASTER):
    """Single-Gaussian projection; ``None`` when culled by the near plane."""
    cov = sigma_t.matrix() if hasattr(sigma_t, "matrix") else np.asarray(sigma_t, dtype=np.float64)
    pr = project_gaussians(np.asarray(x_t, dtype=np.float64).reshape(1, 3), cov.reshape(1, 3, 3), cam, cfg)
    if not pr.valid[0]:
        return None
    return Splat2D(pr.means[0], pr.covs[0], float(pr.depths[0]), np.zeros(3), 1.0, 0)


def splat_radius(cov2: np.ndarray, alpha: np.ndarray, cfg: RasterConfig = DEFAULT_RASTER) -> np.ndarray:
    """Screen-space extent (pixels) outside which a splat's alpha is below the skip threshold.

    Never smaller than ``extent_sigma`` standard deviations along the major axis.
    """
    a, b, c = cov2[:, 0, 0], cov2[:, 0, 1], cov2[:, 1, 1]
    lam = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    a_eff = np.clip(np.minimum(alpha, cfg.alpha_cap) / cfg.alpha_min, 1.0, None)
    m = np.maximum(cfg.extent_sigma, np.sqrt(2.0 * np.log(a_eff)))
    return (m + 1e-6) * np.sqrt(np.maximum(lam, 0.0)) + 1e-6


def project_backward(proj: Projection, cam: Camera, g_means: np.ndarray, g_covs: np.ndarray):
    """Pull screen-space gradients back to posed centers and covariances."""
    p, T2, cov3 = proj.p_cam, proj.T2, proj.cov3
    valid = proj.valid
    z = np.where(valid, p[:, 2], 1.0)
    x, y = p[:, 0], p[:, 1]
    fx, fy = cam.fx, cam.fy
    g_means = np.where(valid[:, None], g_means, 0.0)
    g_covs = np.where(valid[:, None, None], g_covs, 0.0)
    gs = 0.5 * (g_covs + np.swapaxes(g_covs, 1, 2))

    g_cov3 = np.einsum("nji,njk,nkl->nil", T2, gs, T2)
    g_T2 = 2.0 * np.einsum("nij,njk,nkl->nil", gs, T2, cov3)
    g_J = g_T2 @ cam.rotation.T
    g_p = np.zeros_like(p)
    g_p[:, 0] = g_means[:, 0] * fx / z - g_J[:, 0, 2] * fx / z ** 2
    g_p[:, 1] = g_means[:, 1] * fy / z - g_J[:, 1, 2] * fy / z ** 2
    g_p[:, 2] = (-g_means[:, 0] * fx * x / z ** 2 - g_means[:, 1] * fy * y / z ** 2
                 - g_J[:, 0, 0] * fx / z ** 2 + g_J[:, 0, 2] * 2 * fx * x / z ** 3
                 - g_J[:, 1, 1] * fy / z ** 2 + g_J[:, 1, 2] * 2 * fy * y / z ** 3)
    g_xt = g_p @ cam.rotation
    return g_xt, g_cov3


# --- compositing kernels -----------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _render_tiles(t0, t1, ranges, entries, means, conics, alphas, floor, colors, bg, width, height,
                  ts, ntx, alpha_cap, alpha_min, t_min, out_color, out_T, out_n):
    for tile in range(t0, t1):
        tx = tile % ntx
        ty = tile // ntx
        start = ranges[tile, 0]
        end = ranges[tile, 1]
        for py in range(ty * ts, min(ty * ts + ts, height)):
            for px in range(tx * ts, min(tx * ts + ts, width)):
                T = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                last = start
                for e in range(start, end):
                    s = entries[e]
                    dx = px - means[s, 0]
                    dy = py - means[s, 1]
                    power = -0.5 * (conics[s, 0] * dx * dx + conics[s, 2] * dy * dy) \
                        - conics[s, 1] * dx * dy
                    if power > 0.0 or power < floor[s]:
                        continue
                    alpha = min(alpha_cap, alphas[s] * np.exp(power))
                    if alpha < alpha_min:
                        continue
                    test_T = T * (1.0 - alpha)
                    if test_T < t_min:
                        break
                    w = alpha * T
                    c0 += colors[s, 0] * w
                    c1 += colors[s, 1] * w
                    c2 += colors[s, 2] * w
                    T = test_T
                    last = e + 1
                out_color[py, px, 0] = c0 + T * bg[0]
                out_color[py, px, 1] = c1 + T * bg[1]
                out_color[py, px, 2] = c2 + T * bg[2]
                out_T[py, px] = T
                out_n[py, px] = last - start


@numba.njit(cache=True, nogil=True)
def _backward_tiles(t0, t1, ranges, entries, means, conics, alphas, floor, colors, bg, width, height,
                    ts, ntx, alpha_cap, alpha_min, final_T, n_contrib, g_img,
                    g_mean_e, g_conic_e, g_alpha_e, g_color_e):
    for tile in range(t0, t1):
        tx = tile % ntx
        ty = tile // ntx
        start = ranges[tile, 0]
        for py in range(ty * ts, min(ty * ts + ts, height)):
            for px in range(tx * ts, min(tx * ts + ts, width)):
                T = final_T[py, px]
                g0 = g_img[py, px, 0]
                g1 = g_img[py, px, 1]
                g2 = g_img[py, px, 2]
                # color seen behind the current splat, normalized by its transmittance
                r0 = bg[0]
                r1 = bg[1]
                r2 = bg[2]
                for e in range(start + n_contrib[py, px] - 1, start - 1, -1):
                    s = entries[e]
                    dx = px - means[s, 0]
                    dy = py - means[s, 1]
                    a = conics[s, 0]
                    b = conics[s, 1]
                    c = conics[s, 2]
                    power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
                    if power > 0.0 or power < floor[s]:
                        continue
                    G = np.exp(power)
                    raw = alphas[s] * G
                    alpha = min(alpha_cap, raw)
                    if alpha < alpha_min:
                        continue
                    T = T / (1.0 - alpha)
                    w = alpha * T
                    g_color_e[e, 0] += w * g0
                    g_color_e[e, 1] += w * g1
                    g_color_e[e, 2] += w * g2
                    g_alpha = T * (g0 * (colors[s, 0] - r0) + g1 * (colors[s, 1] - r1)
                                   + g2 * (colors[s, 2] - r2))
                    r0 = alpha * colors[s, 0] + (1.0 - alpha) * r0
                    r1 = alpha * colors[s, 1] + (1.0 - alpha) * r1
                    r2 = alpha * colors[s, 2] + (1.0 - alpha) * r2
                    if raw >= alpha_cap:
                        continue
                    g_alpha_e[e] += g_alpha * G
                    g_power = g_alpha * alpha
                    g_mean_e[e, 0] += g_power * (a * dx + b * dy)
                    g_mean_e[e, 1] += g_power * (b * dx + c * dy)
                    g_conic_e[e, 0] += -0.5 * g_power * dx * dx
                    g_conic_e[e, 1] += -g_power * dx * dy
                    g_conic_e[e, 2] += -0.5 * g_power * dy * dy


@numba.njit(cache=True, nogil=True)
def _reduce_entries(entries, g_mean_e, g_conic_e, g_alpha_e, g_color_e,
                    g_mean, g_conic, g_alpha, g_color):
    for e in range(entries.shape[0]):
        s = entries[e]
        g_mean[s, 0] += g_mean_e[e, 0]
        g_mean[s, 1] += g_mean_e[e, 1]
        for k in range(3):
            g_conic[s, k] += g_conic_e[e, k]
            g_color[s, k] += g_color_e[e, k]
        g_alpha[s] += g_alpha_e[e]


@numba.njit(cache=True, nogil=True)
def _reference_kernel(order, means, conics, alphas, floor, colors, bg, width, height,
                      alpha_cap, alpha_min, t_min, out_color, out_T, out_n):
    for py in range(height):
        for px in range(width):
            T = 1.0
            c0 = 0.0
            c1 = 0.0
            c2 = 0.0
            n = 0
            for k in range(order.shape[0]):
                s = order[k]
                dx = px - means[s, 0]
                dy = py - means[s, 1]
                power = -0.5 * (conics[s, 0] * dx * dx + conics[s, 2] * dy * dy) \
                    - conics[s, 1] * dx * dy
                if power > 0.0 or power < floor[s]:
                    continue
                alpha = min(alpha_cap, alphas[s] * np.exp(power))
                if alpha < alpha_min:
                    continue
                test_T = T * (1.0 - alpha)
                if test_T < t_min:
                    break
                w = alpha * T
                c0 += colors[s, 0] * w
                c1 += colors[s, 1] * w
                c2 += colors[s, 2] * w
                T = test_T
                n += 1
            out_color[py, px, 0] = c0 + T * bg[0]
            out_color[py, px, 1] = c1 + T * bg[1]
            out_color[py, px, 2] = c2 + T * bg[2]
            out_T[py, px] = T
            out_n[py, px] = n


@dataclass
class _Binning:
    conics: np.ndarray
    keep: np.ndarray
    entries: np.ndarray
    ranges: np.ndarray
    ntx: int
    nty: int
    n_splats: int
    checksum: float


@dataclass
class FrameBuffers:
    color: np.ndarray
    transmittance: np.ndarray
    n_contrib: np.ndarray
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    aux: _Binning | None = None


def _conics(covs: np.ndarray, cfg: RasterConfig):
    a, b, c = covs[:, 0, 0], covs[:, 0, 1], covs[:, 1, 1]
    det = a * c - b * b
    ok = det > cfg.min_det
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    return np.ascontiguousarray(np.stack([c * inv, -b * inv, a * inv], axis=1)), ok


def _power_floor(alphas: np.ndarray, cfg: RasterConfig) -> np.ndarray:
    # exponent below which alpha * exp(power) drops under alpha_min; lets kernels skip the exp
    with np.errstate(divide="ignore"):
        return np.log(cfg.alpha_min) - np.log(alphas)


def _checksum(splats: Splats) -> float:
    return float(np.sum(splats.means) + np.sum(splats.depths) + np.sum(splats.alphas))


def _bin(splats: Splats, cam: Camera, cfg: RasterConfig) -> _Binning:
    ts = cfg.tile_size
    ntx = (cam.width + ts - 1) // ts
    nty = (cam.height + ts - 1) // ts
    conics, ok = _conics(splats.covs, cfg)
    keep = ok & (splats.alphas >= cfg.alpha_min)
    r = splat_radius(splats.covs, splats.alphas, cfg)
    mx, my = splats.means[:, 0], splats.means[:, 1]
    keep &= (mx + r >= 0) & (mx - r <= cam.width - 1) & (my + r >= 0) & (my - r <= cam.height - 1)
    idx = np.flatnonzero(keep)
    x0 = np.clip(np.floor((mx[idx] - r[idx]) / ts), 0, ntx - 1).astype(np.int64)
    x1 = np.clip(np.floor((mx[idx] + r[idx]) / ts), 0, ntx - 1).astype(np.int64)
    y0 = np.clip(np.floor((my[idx] - r[idx]) / ts), 0, nty - 1).astype(np.int64)
    y1 = np.clip(np.floor((my[idx] + r[idx]) / ts), 0, nty - 1).astype(np.int64)
    nx, ny = x1 - x0 + 1, y1 - y0 + 1
    counts = nx * ny
    total = int(counts.sum())
    owner = np.repeat(np.arange(len(idx)), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    tiles = (y0[owner] + local // nx[owner]) * ntx + x0[owner] + local % nx[owner]
    sid = idx[owner]
    order = np.lexsort((sid, splats.source[sid], splats.depths[sid], tiles))
    entries = np.ascontiguousarray(sid[order])
    tiles = tiles[order]
    bounds = np.searchsorted(tiles, np.arange(ntx * nty + 1))
    ranges = np.ascontiguousarray(np.stack([bounds[:-1], bounds[1:]], axis=1).astype(np.int64))
    return _Binning(conics, keep, entries, ranges, ntx, nty, len(splats), _checksum(splats))


def rasterize_forward(splats: Splats, cam: Camera, background=(0.0, 0.0, 0.0),
                      cfg: RasterConfig = DEFAULT_RASTER) -> FrameBuffers:
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    H, W = cam.height, cam.width
    binning = _bin(splats, cam, cfg)
    floor = _power_floor(splats.alphas, cfg)
    color = np.empty((H, W, 3))
    T = np.empty((H, W))
    n = np.empty((H, W), dtype=np.int64)

    def work(a, b):
        _render_tiles(a, b, binning.ranges, binning.entries, splats.means, binning.conics,
                      splats.alphas, floor, splats.colors, bg, W, H, cfg.tile_size, binning.ntx,
                      cfg.alpha_cap, cfg.alpha_min, cfg.min_transmittance, color, T, n)

    _run_chunks(work, binning.ntx * binning.nty)
    return FrameBuffers(color, T, n, bg, binning)


@dataclass
class SplatGrads:
    means: np.ndarray
    covs: np.ndarray
    colors: np.ndarray
    alphas: np.ndarray


def rasterize_backward(splats: Splats, buffers: FrameBuffers, grad_image: np.ndarray,
                       cfg: RasterConfig = DEFAULT_RASTER) -> SplatGrads:
    aux = buffers.aux
    if aux is None or aux.n_splats != len(splats) or aux.checksum != _checksum(splats):
        raise ConsistencyError("frame buffers were not produced from these splats")
    grad_image = np.ascontiguousarray(grad_image, dtype=np.float64)
    if grad_image.shape != buffers.color.shape:
        raise ConsistencyError(f"image gradient shape {grad_image.shape} != {buffers.color.shape}")
    H, W = buffers.color.shape[:2]
    E = len(aux.entries)
    g_mean_e = np.zeros((E, 2))
    g_conic_e = np.zeros((E, 3))
    g_alpha_e = np.zeros(E)
    g_color_e = np.zeros((E, 3))
    floor = _power_floor(splats.alphas, cfg)

    def work(a, b):
        _backward_tiles(a, b, aux.ranges, aux.entries, splats.means, aux.conics, splats.alphas,
                        floor, splats.colors, buffers.background, W, H, cfg.tile_size, aux.ntx,
                        cfg.alpha_cap, cfg.alpha_min, buffers.transmittance, buffers.n_contrib,
                        grad_image, g_mean_e, g_conic_e, g_alpha_e, g_color_e)

    _run_chunks(work, aux.ntx * aux.nty)
    M = len(splats)
    g_mean = np.zeros((M, 2))
    g_conic = np.zeros((M, 3))
    g_alpha = np.zeros(M)
    g_color = np.zeros((M, 3))
    _reduce_entries(aux.entries, g_mean_e, g_conic_e, g_alpha_e, g_color_e,
                    g_mean, g_conic, g_alpha, g_color)

    # conic = inverse(cov): dL/dcov = -K^T G K^T with G the full-matrix conic gradient
    K = np.empty((M, 2, 2))
    K[:, 0, 0], K[:, 0, 1], K[:, 1, 0], K[:, 1, 1] = (aux.conics[:, 0], aux.conics[:, 1],
                                                      aux.conics[:, 1], aux.conics[:, 2])
    G = np.empty((M, 2, 2))
    G[:, 0, 0], G[:, 1, 1] = g_conic[:, 0], g_conic[:, 2]
    G[:, 0, 1] = G[:, 1, 0] = 0.5 * g_conic[:, 1]
    g_cov = -K @ G @ K
    return SplatGrads(g_mean, g_cov, g_color, g_alpha)


def reference_rasterize(splats: Splats, cam: Camera, background=(0.0, 0.0, 0.0),
                        cfg: RasterConfig = DEFAULT_RASTER) -> FrameBuffers:
    """Per-pixel compositing over every splat in global depth order."""
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    conics, ok = _conics(splats.covs, cfg)
    idx = np.flatnonzero(ok)
    order = idx[np.lexsort((idx, splats.source[idx], splats.depths[idx]))]
    H, W = cam.height, cam.width
    color = np.empty((H, W, 3))
    T = np.empty((H, W))
    n = np.empty((H, W), dtype=np.int64)
    _reference_kernel(np.ascontiguousarray(order), splats.means, conics, splats.alphas,
                      _power_floor(splats.alphas, cfg), splats.colors,
                      bg, W, H, cfg.alpha_cap, cfg.alpha_min, cfg.min_transmittance, color, T, n)
    return FrameBuffers(color, T, n, bg, None)
