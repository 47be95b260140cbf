"""Seeded synthetic avatars and multi-view datasets with known ground truth.

The avatar is a vertical chain of bones, each wrapped in a tube of template
vertices. Ground-truth Gaussians are seeded around those vertices, colored by
a small random field, animated by smooth sinusoidal joint curves and rendered
from a ring of cameras with this package's own renderer. The generator writes
the dataset, a noisy copy of the template (what a user would start from) and
the generating checkpoint.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, save_checkpoint
from .config import apply_overrides
from .core import logit
from .dataio import TemplateModel, save_template, write_dataset
from .errors import ConfigurationError
from .fields import FieldConfig, HashGridConfig, MlpConfig
from .model import SkinnedGaussianModel
from .rasterizer import Camera
from .render import render_image
from .skinning import Pose, Skeleton
from .training import init_from_skinned_model

# small field for the ground-truth colors: smooth over the body
GT_FIELD = FieldConfig(
    sh_grid=HashGridConfig(levels=4, features=2, base_resolution=2, max_resolution=8, table_size=2 ** 12),
    dx_grid=HashGridConfig(levels=1, features=2, base_resolution=2, max_resolution=4, table_size=2 ** 6),
    ao_grid=HashGridConfig(levels=1, features=2, base_resolution=2, max_resolution=4, table_size=2 ** 6),
    mlp=MlpConfig(2, 16), max_displacement=0.10, ao_init=0.9)


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings; ``n_points`` is approximate (vertex count times ``k + 1``)."""

    seed: int = 0
    n_bones: int = 3
    n_points: int = 5000
    k: int = 20
    n_cameras: int = 6
    n_test_cameras: int = 1
    n_frames: int = 24
    image_size: int = 128
    focal: float = 180.0
    camera_radius: float = 3.0
    bone_length: float = 0.45
    tube_radius: float = 0.12
    around: int = 10
    motion_amplitude: float = 0.35
    ao_dimming: float = 0.0
    ao_mean: float = 0.7
    vertex_noise: float = 0.02
    gt_radius: float = 0.03
    gt_opacity: float = 0.9
    gt_scale_factor: float = 0.6
    color_contrast: float = 2.0
    view_dependence: float = 0.05
    n_avatars: int = 1
    avatar_spacing: float = 0.45
    fps: float = 30.0
    uv: bool = True
    background: float = 0.0

    def __post_init__(self):
        checks = {"n_bones": self.n_bones >= 1, "n_points": self.n_points >= 1, "k": self.k >= 0,
                  "n_cameras": self.n_cameras >= 1, "n_test_cameras": self.n_test_cameras >= 0,
                  "n_frames": self.n_frames >= 2, "image_size": self.image_size >= 8,
                  "around": self.around >= 3, "n_avatars": self.n_avatars >= 1,
                  "ao_dimming": 0.0 <= self.ao_dimming < 1.0,
                  "ao_mean": 0.0 < self.ao_mean * (1 + self.ao_dimming) < 1.0}
        for key, ok in checks.items():
            if not ok:
                raise ConfigurationError(f"invalid generator setting {key}={getattr(self, key)!r}")

    def updated(self, overrides: dict) -> "SynthConfig":
        return apply_overrides(self, overrides)

    def to_dict(self) -> dict:
        return asdict(self)


def build_template(cfg: SynthConfig) -> TemplateModel:
    """Tube-wrapped bone chain standing along +z, clean (no noise)."""
    nb, L = cfg.n_bones, cfg.bone_length
    rings = max(1, int(round(cfg.n_points / ((cfg.k + 1) * cfg.around * nb))))
    parents = np.arange(-1, nb - 1)
    joints = np.zeros((nb, 3))
    joints[1:, 2] = L
    n_rings = rings * nb
    z = (np.arange(n_rings) + 0.5) * (nb * L / n_rings)
    ang = 2 * np.pi * np.arange(cfg.around) / cfg.around
    zz, aa = np.meshgrid(z, ang, indexing="ij")
    stagger = np.pi / cfg.around * (np.arange(n_rings) % 2)
    aa = aa + stagger[:, None]
    r = cfg.tube_radius * (1.0 + 0.15 * np.sin(2 * np.pi * zz / L))
    verts = np.stack([r * np.cos(aa), r * np.sin(aa), zz], axis=-1).reshape(-1, 3)

    # weights fall off with distance from each bone's segment midpoint, two strongest kept
    mids = (np.arange(nb) + 0.5) * L
    d = np.abs(verts[:, 2:3] - mids[None, :]) / L
    w = np.exp(-(d / 0.35) ** 2)
    order = np.argsort(-w, axis=1, kind="stable")[:, :min(2, nb)]
    idx = order
    ww = np.take_along_axis(w, order, axis=1)
    ww /= ww.sum(axis=1, keepdims=True)

    bone = np.minimum((verts[:, 2] // L).astype(int), nb - 1)
    frac = (np.arctan2(verts[:, 1], verts[:, 0]) / (2 * np.pi)) % 1.0
    u = (bone + 0.05 + 0.9 * frac) / nb
    v = 0.05 + 0.9 * np.clip(verts[:, 2] / L - bone, 0.0, 1.0)
    uv = np.stack([u, v], axis=1) if cfg.uv else None
    return TemplateModel(verts, idx, ww, Skeleton(parents, joints), uv)


def ground_truth_model(cfg: SynthConfig, template: TemplateModel, seed: int) -> SkinnedGaussianModel:
    """Avatar on ``template`` with a random SH table and decoder head, plus optional global AO dimming."""
    rng = np.random.default_rng([seed, 1])
    m = init_from_skinned_model(template, cfg.k, cfg.gt_radius, seed, "hash", GT_FIELD)
    n = len(m)
    m.opacity_logit[:] = logit(cfg.gt_opacity)
    m.log_scale += np.log(cfg.gt_scale_factor / 0.5) + 0.15 * rng.standard_normal((n, 3))
    q = rng.standard_normal((n, 4))
    m.quat[:] = q / np.linalg.norm(q, axis=1, keepdims=True)

    sh = m.fields.sh
    sh.grid.table[:] = rng.uniform(-1.0, 1.0, sh.grid.table.shape).astype(sh.grid.table.dtype)
    head = rng.normal(0.0, 1.0, sh.mlp.weights[-1].shape) / np.sqrt(sh.mlp.weights[-1].shape[0])
    head = head.reshape(-1, 9, 3)
    head[:, 0, :] *= cfg.color_contrast
    head[:, 1:, :] *= cfg.view_dependence
    sh.mlp.weights[-1][:] = head.reshape(sh.mlp.weights[-1].shape)
    sh.mlp.biases[-1][:] = (rng.uniform(-0.2, 0.2, (9, 3)) * np.r_[1.0, [cfg.view_dependence] * 8][:, None]).ravel()

    if cfg.ao_dimming > 0:
        # global dimming ao(t) = sigmoid(beta + alpha sin 2 pi t) reaching mean * (1 -/+ dimming)
        lo = logit(cfg.ao_mean * (1 - cfg.ao_dimming))
        hi = logit(cfg.ao_mean * (1 + cfg.ao_dimming))
        alpha, beta = (hi - lo) / 2.0, (hi + lo) / 2.0
        ao = m.fields.ao
        for W in ao.mlp.weights:
            W[:] = 0.0
        for b in ao.mlp.biases:
            b[:] = 0.0
        sin2pi = ao.grid.output_dim + 2
        ao.mlp.weights[0][sin2pi, 0] = 1.0
        ao.mlp.biases[0][0] = 1.0
        for W in ao.mlp.weights[1:-1]:
            W[0, 0] = 1.0
        ao.mlp.weights[-1][0, 0] = alpha
        ao.mlp.biases[-1][0] = beta - alpha
        m.ao_enabled = True
    return m


def _poses(cfg: SynthConfig, rng: np.random.Generator, a: int) -> list:
    nb = cfg.n_bones
    t = np.arange(cfg.n_frames) / (cfg.n_frames - 1)
    freq = rng.uniform(0.6, 1.4, (nb, 3))
    phase = rng.uniform(0, 2 * np.pi, (nb, 3))
    amp = cfg.motion_amplitude * rng.uniform(0.5, 1.0, (nb, 3))
    amp[0] *= 0.3
    amp[:, 2] *= 0.5
    tr_amp = rng.uniform(0.02, 0.06, 3)
    tr_phase = rng.uniform(0, 2 * np.pi, 3)
    offset = np.array([cfg.avatar_spacing * (a - (cfg.n_avatars - 1) / 2.0), 0.0, 0.0])
    out = []
    for ti in t:
        omega = amp * np.sin(2 * np.pi * freq * ti + phase)
        tr = offset + tr_amp * np.sin(2 * np.pi * ti + tr_phase)
        out.append(Pose(omega, tr, ti))
    return out


def ring_cameras(cfg: SynthConfig) -> tuple:
    """Training ring plus held-out cameras between ring positions at another height."""
    height = 0.5 * cfg.n_bones * cfg.bone_length
    target = np.array([0.0, 0.0, height])
    cams, splits = {}, {}
    total = cfg.n_cameras + cfg.n_test_cameras
    for c in range(total):
        if c < cfg.n_cameras:
            az = 2 * np.pi * c / cfg.n_cameras
            z = height + 0.3
        else:
            j = c - cfg.n_cameras
            az = 2 * np.pi * (j + 0.5) / cfg.n_cameras
            z = height + 0.6
        eye = np.array([cfg.camera_radius * np.cos(az), cfg.camera_radius * np.sin(az), z])
        cams[c] = Camera.look_at(eye, target, [0, 0, 1], cfg.focal, cfg.focal, cfg.image_size, cfg.image_size)
        splits[c] = "train" if c < cfg.n_cameras else "test"
    return cams, splits


def generate_synthetic_dataset(cfg: SynthConfig, out) -> dict:
    """Write ``out/`` with the dataset, ``template.json`` (noisy) and ``ground_truth.ckpt``.

    Returns a summary with camera, frame and point counts.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    clean = build_template(cfg)
    models, poses_by_avatar = [], []
    for a in range(cfg.n_avatars):
        models.append(ground_truth_model(cfg, clean, cfg.seed * 1000 + a))
        poses_by_avatar.append(_poses(cfg, np.random.default_rng([cfg.seed, 2, a]), a))
    cams, splits = ring_cameras(cfg)
    background = (cfg.background,) * 3
    poses = [[poses_by_avatar[a][f] for a in range(cfg.n_avatars)] for f in range(cfg.n_frames)]
    images = {}
    for f in range(cfg.n_frames):
        for cid, cam in cams.items():
            images[(f, cid)] = render_image(list(zip(models, poses[f])), cam, background)
    timestamps = np.arange(cfg.n_frames) / cfg.fps
    write_dataset(out, cams, splits, timestamps, poses, images, background)

    rng = np.random.default_rng([cfg.seed, 3])
    noisy = TemplateModel(clean.vertices + cfg.vertex_noise * rng.standard_normal(clean.vertices.shape),
                          clean.skin_idx, clean.skin_w, clean.skeleton.copy(), clean.uv)
    save_template(noisy, out / "template.json")
    save_template(clean, out / "template_clean.json")
    save_checkpoint(Checkpoint(models, {"generator": cfg.to_dict()}, cfg.seed), out / "ground_truth.ckpt")
    return {"cameras": len(cams), "train_cameras": cfg.n_cameras, "test_cameras": cfg.n_test_cameras,
            "frames": cfg.n_frames, "avatars": cfg.n_avatars, "points": sum(len(m) for m in models),
            "path": str(out)}
