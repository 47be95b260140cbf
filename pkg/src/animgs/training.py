"""Initialization from a skinned template and the optimization loop."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .checkpoint import Checkpoint, save_checkpoint
from .config import apply_overrides
from .core import logit
from .dataio import DatasetManifest, TemplateModel, quantize_srgb8
from .errors import ConfigurationError, DatasetError, InvalidParameterError, NumericalError
from .fields import FieldConfig, HashGridConfig, MlpConfig, UvAtlas
from .losses import LossConfig, psnr, ssim, total_loss
from .model import SkinnedGaussianModel
from .optim import TrainState, adam_step, named_parameters
from .rasterizer import set_num_threads
from .render import render_avatars, render_backward

log = logging.getLogger(__name__)

LR_GROUPS = ("centers", "rotations", "scales", "opacities", "joints", "hash_tables", "mlp", "atlas")


@dataclass(frozen=True)
class TrainConfig:
    """Everything ``fit`` needs besides data; flat so it maps onto ``key = value`` files."""

    epochs: int = 10
    ao_start_epoch: int = 5
    seed: int = 0
    k: int = 20
    init_radius: float = 0.02
    init_opacity: float = 0.1
    lam: float = 0.2
    sh_mode: str = "hash"
    use_ao: bool = True
    threads: int = 1
    lr_centers: float = 2e-4
    lr_rotations: float = 1e-3
    lr_scales: float = 5e-3
    lr_opacities: float = 5e-2
    lr_joints: float = 1e-4
    lr_hash_tables: float = 1e-2
    lr_mlp: float = 1e-3
    lr_atlas: float = 3e-3
    hash_levels: int = 16
    hash_features: int = 2
    hash_base_resolution: int = 16
    hash_max_resolution: int = 2048
    hash_table_size: int = 2 ** 17
    ao_table_size: int = 2 ** 19
    hash_dtype: str = "float32"
    mlp_width: int = 64
    mlp_layers: int = 2
    max_displacement: float = 0.10
    ao_init: float = 0.9
    atlas_size: int = 64

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.ao_start_epoch < 1:
            raise ConfigurationError("ao_start_epoch must be >= 1")
        if self.k < 0:
            raise ConfigurationError("k must be >= 0")
        if self.sh_mode not in ("hash", "uv"):
            raise ConfigurationError(f"sh_mode must be 'hash' or 'uv', got {self.sh_mode!r}")
        if not 0.0 < self.ao_init < 1.0:
            raise ConfigurationError("ao_init must lie strictly between 0 and 1")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")
        for g in LR_GROUPS:
            if not getattr(self, f"lr_{g}") > 0:
                raise ConfigurationError(f"learning rate lr_{g} must be > 0")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError(f"lam must lie in [0, 1], got {self.lam}")

    @property
    def learning_rates(self) -> dict:
        return {g: getattr(self, f"lr_{g}") for g in LR_GROUPS}

    @property
    def loss(self) -> LossConfig:
        return LossConfig(self.lam)

    def field_config(self) -> FieldConfig:
        def grid(size):
            return HashGridConfig(levels=self.hash_levels, features=self.hash_features,
                                  base_resolution=self.hash_base_resolution,
                                  max_resolution=self.hash_max_resolution, table_size=size,
                                  dtype=self.hash_dtype)
        return FieldConfig(sh_grid=grid(self.hash_table_size), dx_grid=grid(self.hash_table_size),
                           ao_grid=grid(self.ao_table_size),
                           mlp=MlpConfig(self.mlp_layers, self.mlp_width),
                           max_displacement=self.max_displacement, ao_init=self.ao_init)

    def to_dict(self) -> dict:
        """Settings that shape the result; the thread count does not and is left out."""
        d = asdict(self)
        del d["threads"]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls().updated(d)

    def updated(self, overrides: dict) -> "TrainConfig":
        """Copy with ``overrides`` applied; string values are coerced to the field type."""
        return apply_overrides(self, overrides)


# --- initialization ------------------------------------------------------------

def sample_uvs(verts: np.ndarray, uv: np.ndarray, offsets: np.ndarray, n_neighbors: int = 8) -> np.ndarray:
    """UVs of points displaced by ``offsets`` (V, k, 3) from their template vertex.

    Each vertex gets a 2x3 UV Jacobian fitted by ridge least squares to its
    nearest neighbors. Neighbors whose UV step exceeds 2.5 times the vertex's
    median step are treated as lying across a chart seam and left out. The
    result is clipped to [0, 1]. Vertices without a usable fit fall back to
    copying their own UV.
    """
    V = len(verts)
    k = offsets.shape[1]
    if k == 0 or V < 3:
        return np.repeat(uv, k, axis=0).reshape(V, k, 2)
    m = min(n_neighbors, V - 1)
    _, nbr = cKDTree(verts).query(verts, k=m + 1)
    dx = verts[nbr[:, 1:]] - verts[:, None, :]
    du = uv[nbr[:, 1:]] - uv[:, None, :]
    step = np.linalg.norm(du, axis=2)
    keep = step <= 2.5 * np.median(step, axis=1, keepdims=True) + 1e-12
    dx = dx * keep[..., None]
    du = du * keep[..., None]
    gram = np.einsum("vni,vnj->vij", dx, dx)
    ridge = 1e-6 * np.trace(gram, axis1=1, axis2=2)[:, None, None] + 1e-18
    jac_t = np.linalg.solve(gram + ridge * np.eye(3), np.einsum("vni,vnj->vij", dx, du))
    jac_t[keep.sum(axis=1) < 2] = 0.0
    return np.clip(uv[:, None, :] + np.einsum("vki,vij->vkj", offsets, jac_t), 0.0, 1.0)


def init_from_skinned_model(template: TemplateModel, k: int = 20, radius: float = 0.02, seed: int = 0,
                            sh_mode: str = "hash", field_config: FieldConfig | None = None,
                            init_opacity: float = 0.1, atlas_size: int = 64) -> SkinnedGaussianModel:
    """Gaussians at every template vertex plus ``k`` random points around each.

    Extra points are uniform in a ball of ``radius`` around their source
    vertex and copy its skin weights. Their UVs are extrapolated to first
    order from the source vertex (see ``sample_uvs``). Points ``0..V-1`` are
    the vertices; the samples of vertex ``v`` follow at ``V + v*k .. V + v*k + k-1``.
    """
    verts = np.asarray(template.vertices, dtype=np.float64)
    V = len(verts)
    if V == 0:
        raise InvalidParameterError("template has no vertices")
    if k < 0 or radius < 0:
        raise InvalidParameterError("k and radius must be non-negative")
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((V, k, 3))
    d /= np.maximum(np.linalg.norm(d, axis=2, keepdims=True), 1e-300)
    r = radius * rng.random((V, k, 1)) ** (1.0 / 3.0)
    extra = (verts[:, None, :] + d * r).reshape(-1, 3)
    x0 = np.concatenate([verts, extra])
    src = np.concatenate([np.arange(V), np.repeat(np.arange(V), k)])

    if V > 1:
        nn = min(3, V - 1)
        dist, _ = cKDTree(verts).query(verts, k=nn + 1)
        spacing = dist[:, 1:].mean(axis=1)
    else:
        spacing = np.full(1, max(radius, 1e-2))
    spacing = np.maximum(spacing, 1e-6)
    log_scale = np.repeat(np.log(0.5 * spacing)[src, None], 3, axis=1)

    n = len(x0)
    quat = np.zeros((n, 4))
    quat[:, 0] = 1.0
    uv = None
    if template.uv is not None:
        tuv = np.asarray(template.uv, dtype=np.float64)
        uv = np.concatenate([tuv, sample_uvs(verts, tuv, d * r).reshape(-1, 2)])
    atlas = None
    if sh_mode == "uv":
        atlas = UvAtlas(atlas_size, atlas_size)
    return SkinnedGaussianModel(x0, quat, log_scale, np.full(n, logit(init_opacity)),
                                template.skin_idx[src], template.skin_w[src], template.skeleton.copy(),
                                uv=uv, sh_mode=sh_mode, atlas=atlas, field_config=field_config, seed=seed)


# --- metrics log ----------------------------------------------------------------

class MetricsLog:
    """Line-delimited JSON records, optionally mirrored to a file."""

    def __init__(self, path=None):
        self.records = []
        self._fh = open(path, "a", encoding="utf-8") if path is not None else None

    def write(self, **rec) -> None:
        self.records.append(rec)
        if self._fh is not None:
            self._fh.write(json.dumps(rec, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


# --- training loop ----------------------------------------------------------------

def _check_compatible(dataset: DatasetManifest, templates) -> None:
    if len(templates) != dataset.n_avatars:
        raise DatasetError(f"dataset has {dataset.n_avatars} avatars but {len(templates)} templates were given")
    for a, tpl in enumerate(templates):
        if tpl.skeleton.n_bones != dataset.n_bones:
            raise DatasetError(f"template {a} has {tpl.skeleton.n_bones} bones, dataset poses have {dataset.n_bones}")


def fit(dataset: DatasetManifest, template, cfg: TrainConfig = TrainConfig(), log_path=None,
        resume: Checkpoint | None = None, metrics: MetricsLog | None = None,
        epoch_callback=None) -> Checkpoint:
    """Optimize avatars against the dataset's training views.

    ``template`` is one ``TemplateModel`` or a list (one per avatar).
    Resuming from a checkpoint written by ``fit`` continues the exact
    trajectory of an uninterrupted run.
    """
    templates = template if isinstance(template, (list, tuple)) else [template]
    _check_compatible(dataset, templates)
    set_num_threads(cfg.threads)
    views = dataset.views("train")
    if not views:
        raise DatasetError(f"{dataset.root}: no training views")

    if resume is not None:
        models, state = resume.models, resume.state or TrainState()
    else:
        fcfg = cfg.field_config()
        models = [init_from_skinned_model(t, cfg.k, cfg.init_radius, cfg.seed + a, cfg.sh_mode, fcfg,
                                          cfg.init_opacity, cfg.atlas_size)
                  for a, t in enumerate(templates)]
        state = TrainState()

    own_log = metrics is None
    metrics = metrics or MetricsLog(log_path)
    lrs = cfg.learning_rates
    try:
        while state.epoch < cfg.epochs:
            epoch = state.epoch + 1
            ao_on = cfg.use_ao and epoch >= cfg.ao_start_epoch
            state.ao_enabled = state.ao_enabled or ao_on
            for m in models:
                m.ao_enabled = ao_on
            params = named_parameters(models, include_ao=ao_on)
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(views))
            t_epoch = time.perf_counter()
            losses, psnrs = [], []
            for vi in order:
                t0 = time.perf_counter()
                f, cid = views[vi]
                frame = dataset.frames[f]
                gt = dataset.image(f, cid)
                for m in models:
                    m.zero_grad()
                buf, ctx = render_avatars(list(zip(models, frame.poses)), dataset.cameras[cid],
                                          dataset.background, use_ao=ao_on)
                loss, g_img = total_loss(buf.color, gt, cfg.loss, grad=True)
                if not np.isfinite(loss):
                    raise NumericalError(f"non-finite loss at step {state.step + 1} (epoch {epoch})")
                render_backward(ctx, g_img)
                adam_step(state, params, lrs)
                for m in models:
                    m.renormalize()
                state.step += 1
                p = psnr(buf.color, gt)
                losses.append(loss)
                psnrs.append(p)
                metrics.write(kind="step", step=state.step, epoch=epoch, loss=loss, psnr=p,
                              wall_ms=1e3 * (time.perf_counter() - t0))
            state.epoch = epoch
            metrics.write(kind="epoch", step=state.step, epoch=epoch, loss=float(np.mean(losses)),
                          psnr=float(np.mean(psnrs)), wall_ms=1e3 * (time.perf_counter() - t_epoch))
            log.info("epoch %d: loss %.5f psnr %.2f", epoch, np.mean(losses), np.mean(psnrs))
            if epoch_callback is not None:
                epoch_callback(epoch, Checkpoint(models, cfg.to_dict(), cfg.seed, state))
    finally:
        if own_log:
            metrics.close()
    for m in models:
        m.ao_enabled = cfg.use_ao and state.epoch >= cfg.ao_start_epoch
    return Checkpoint(models, cfg.to_dict(), cfg.seed, state)


def evaluate(models, dataset: DatasetManifest, split: str = "test", use_ao: bool = True,
             quantize: bool = True) -> dict:
    """Per-view PSNR/SSIM of ``models`` against ``dataset`` plus their means.

    With ``quantize`` the render goes through the same 8-bit sRGB round trip
    as the stored images, so a perfect model scores the PSNR cap.
    """
    views = dataset.views(split)
    if not views:
        raise DatasetError(f"{dataset.root}: split {split!r} has no views")
    rows = []
    for f, cid in views:
        frame = dataset.frames[f]
        buf, _ = render_avatars(list(zip(models, frame.poses)), dataset.cameras[cid],
                                dataset.background, use_ao=use_ao)
        img = quantize_srgb8(buf.color) if quantize else buf.color
        gt = dataset.image(f, cid)
        rows.append({"frame": frame.index, "camera": cid, "psnr": psnr(img, gt), "ssim": ssim(img, gt)})
    return {"split": split, "views": rows,
            "mean": {"psnr": float(np.mean([r["psnr"] for r in rows])),
                     "ssim": float(np.mean([r["ssim"] for r in rows]))}}


def write_checkpoint_every_epoch(path):
    """``epoch_callback`` that overwrites ``path`` after every epoch."""
    path = Path(path)

    def cb(epoch, ckpt):
        save_checkpoint(ckpt, path)
    return cb
