"""Full differentiable pipeline: fields -> skinning -> shading -> splatting.

``render_avatars`` deforms and shades each avatar independently, concatenates
all splats and rasterizes once, so depth ordering is global across avatars.
``render_backward`` pushes an image gradient back to every trainable array of
every avatar (accumulated into ``model.grad`` and the field buffers) and
returns the pose gradients, which are not model parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import covariance_from_linear, quat_to_rotmat, quat_to_rotmat_backward, sigmoid
from .model import SkinnedGaussianModel
from .rasterizer import (DEFAULT_RASTER, Camera, FrameBuffers, RasterConfig, Splats,
                         project_backward, project_gaussians, rasterize_backward, rasterize_forward)
from .shading import shade, shade_backward
from .skinning import (Pose, blend_transforms, blend_transforms_backward, compute_bone_transforms,
                       compute_bone_transforms_backward, invert_linear)


@dataclass
class AvatarState:
    """Forward intermediates of one avatar for one view."""

    model: SkinnedGaussianModel
    pose: Pose
    use_ao: bool
    sh: np.ndarray
    field_cache: tuple
    uv_cache: tuple | None
    ao: np.ndarray
    ao_cache: tuple | None
    xc: np.ndarray
    A: np.ndarray
    R: np.ndarray
    M: np.ndarray
    xt: np.ndarray
    d_t: np.ndarray
    dist: np.ndarray
    Linv: np.ndarray
    singular: np.ndarray
    u: np.ndarray
    d_c: np.ndarray
    shade_cache: tuple
    alpha: np.ndarray
    proj: object
    valid_idx: np.ndarray
    offset: int


@dataclass
class PoseGrad:
    omega: np.ndarray
    translation: np.ndarray


@dataclass
class RenderContext:
    avatars: list
    splats: Splats
    buffers: FrameBuffers
    camera: Camera
    raster: RasterConfig


def deform_avatar(model: SkinnedGaussianModel, pose: Pose, cam: Camera, use_ao: bool = True,
                  raster: RasterConfig = DEFAULT_RASTER):
    """Posed, shaded Gaussians of one avatar as seen from ``cam``."""
    xq = model.query_positions()
    sh, dx, field_cache = model.fields.sample_shape_appearance(xq)
    uv_cache = None
    if model.sh_mode == "uv":
        flat, uv_cache = model.atlas.sample(model.uv)
        sh = flat.reshape(-1, 9, 3)
    use_ao = use_ao and model.ao_enabled
    if use_ao:
        ao, ao_cache = model.fields.sample_ao(xq, pose.t)
    else:
        ao, ao_cache = np.ones(len(model)), None

    xc = model.x0 + dx
    B = compute_bone_transforms(model.skeleton, pose)
    A = blend_transforms(model.skin_idx, model.skin_w, B)
    L = A[:, :, :3]
    xt = np.einsum("nij,nj->ni", L, xc) + A[:, :, 3]
    R = quat_to_rotmat(model.quat)
    M = L @ R
    cov3 = covariance_from_linear(M, model.log_scale)

    v = xt - cam.center
    dist = np.linalg.norm(v, axis=1)
    d_t = v / dist[:, None]
    Linv, singular = invert_linear(L)
    u = np.einsum("nij,nj->ni", Linv, d_t)
    d_c = u / np.linalg.norm(u, axis=1, keepdims=True)
    color, shade_cache = shade(sh, d_c, ao)
    alpha = sigmoid(model.opacity_logit)

    proj = project_gaussians(xt, cov3, cam, raster)
    valid_idx = np.flatnonzero(proj.valid)
    st = AvatarState(model, pose, use_ao, sh, field_cache, uv_cache, ao, ao_cache, xc, A, R, M, xt,
                     d_t, dist, Linv, singular, u, d_c, shade_cache, alpha, proj, valid_idx, 0)
    splats = Splats(proj.means[valid_idx], proj.covs[valid_idx], proj.depths[valid_idx],
                    color[valid_idx], alpha[valid_idx], valid_idx)
    return splats, st


def render_avatars(avatars, cam: Camera, background=(0.0, 0.0, 0.0), use_ao: bool = True,
                   raster: RasterConfig = DEFAULT_RASTER):
    """Render ``[(model, pose), ...]`` into one image.

    Returns ``(FrameBuffers, RenderContext)``; the context feeds ``render_backward``.
    """
    parts, states = [], []
    offset = 0
    for model, pose in avatars:
        splats, st = deform_avatar(model, pose, cam, use_ao, raster)
        st.offset = offset
        offset += len(model)
        splats.source = splats.source + st.offset
        parts.append(splats)
        states.append(st)
    all_splats = Splats.concatenate(parts, reindex=False)
    buffers = rasterize_forward(all_splats, cam, background, raster)
    return buffers, RenderContext(states, all_splats, buffers, cam, raster)


def render_image(avatars, cam, background=(0.0, 0.0, 0.0), use_ao=True, raster=DEFAULT_RASTER):
    return render_avatars(avatars, cam, background, use_ao, raster)[0].color


def _sym(m):
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def render_backward(ctx: RenderContext, grad_image: np.ndarray) -> list:
    """Accumulate parameter gradients for every avatar; returns per-avatar ``PoseGrad``."""
    sg = rasterize_backward(ctx.splats, ctx.buffers, grad_image, ctx.raster)
    out = []
    start = 0
    for st in ctx.avatars:
        m = len(st.valid_idx)
        sl = slice(start, start + m)
        start += m
        out.append(_avatar_backward(st, ctx.camera, sg.means[sl], sg.covs[sl], sg.colors[sl], sg.alphas[sl]))
    return out


def _avatar_backward(st: AvatarState, cam: Camera, g_mean_v, g_cov_v, g_color_v, g_alpha_v) -> PoseGrad:
    model = st.model
    n = len(model)
    vi = st.valid_idx
    g_means = np.zeros((n, 2))
    g_covs = np.zeros((n, 2, 2))
    g_color = np.zeros((n, 3))
    g_alpha = np.zeros(n)
    g_means[vi], g_covs[vi], g_color[vi], g_alpha[vi] = g_mean_v, g_cov_v, g_color_v, g_alpha_v

    model.grad["opacity_logit"] += g_alpha * st.alpha * (1.0 - st.alpha)

    g_sh, g_dc, g_ao = shade_backward(st.sh, st.d_c, st.ao, st.shade_cache, g_color)

    # d_c = u / |u|, u = Linv d_t
    un = np.linalg.norm(st.u, axis=1, keepdims=True)
    g_u = (g_dc - st.d_c * np.sum(st.d_c * g_dc, axis=1, keepdims=True)) / un
    g_dt = np.einsum("nji,nj->ni", st.Linv, g_u)
    g_L = -np.einsum("nji,nj,nk->nik", st.Linv, g_u, st.u)
    g_L[st.singular] = 0.0
    # d_t = v / |v|, v = x_t - camera center
    g_xt = (g_dt - st.d_t * np.sum(st.d_t * g_dt, axis=1, keepdims=True)) / st.dist[:, None]

    g_xt_p, g_cov3 = project_backward(st.proj, cam, g_means, g_covs)
    g_xt += g_xt_p

    gs = _sym(g_cov3)
    s2 = np.exp(2.0 * model.log_scale)
    g_M = 2.0 * np.einsum("nij,njk,nk->nik", gs, st.M, s2)
    model.grad["log_scale"] += 2.0 * s2 * np.einsum("nji,njk,nki->ni", st.M, gs, st.M)
    L = st.A[:, :, :3]
    g_L += g_M @ np.swapaxes(st.R, 1, 2)
    g_R = np.swapaxes(L, 1, 2) @ g_M
    model.grad["quat"] += quat_to_rotmat_backward(model.quat, g_R)

    g_L += np.einsum("ni,nj->nij", g_xt, st.xc)
    g_xc = np.einsum("nji,nj->ni", L, g_xt)
    model.grad["x0"] += g_xc

    g_A = np.concatenate([g_L, g_xt[:, :, None]], axis=2)
    g_B = blend_transforms_backward(model.skin_idx, model.skin_w, g_A, model.skeleton.n_bones)
    g_J, g_omega, g_T = compute_bone_transforms_backward(model.skeleton, st.pose, g_B)
    model.grad["joints"] += g_J

    fields = model.fields
    fields.shape_appearance_backward(st.field_cache, g_sh if model.sh_mode == "hash" else None, g_xc)
    if model.sh_mode == "uv":
        model.atlas.backward(st.uv_cache, g_sh.reshape(n, 27))
    if st.use_ao:
        fields.ao_backward(st.ao_cache, g_ao)
    return PoseGrad(g_omega, g_T)
