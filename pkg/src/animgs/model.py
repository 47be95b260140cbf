"""The animatable avatar: canonical skinned Gaussians, skeleton and fields."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GaussianGeometry, SkinnedGaussian, normalize_quat, sigmoid
from .errors import ConfigurationError, InvalidParameterError
from .fields import FieldBank, FieldConfig, UvAtlas
from .skinning import Skeleton

POINT_PARAMS = ("x0", "quat", "log_scale", "opacity_logit")


@dataclass
class ParamRef:
    """One optimizable array with its gradient buffer.

    ``live`` is a boolean row mask marking the only rows that ever received
    gradient (hash tables); ``None`` means the whole array is live.
    """

    group: str
    name: str
    value: np.ndarray
    grad: np.ndarray
    live: np.ndarray | None = None


class SkinnedGaussianModel:
    """Structure-of-arrays container for one avatar.

    Skin weights are sparse: ``skin_idx`` / ``skin_w`` are (N, 4), rows sum
    to one. Skin weights and UVs are fixed; everything else is trainable.
    """

    def __init__(self, x0, quat, log_scale, opacity_logit, skin_idx, skin_w, skeleton: Skeleton,
                 fields: FieldBank | None = None, uv=None, sh_mode: str = "hash",
                 atlas: UvAtlas | None = None, ao_enabled: bool = False,
                 field_config: FieldConfig | None = None, seed: int = 0):
        self.x0 = np.array(x0, dtype=np.float64).reshape(-1, 3)
        n = len(self.x0)
        self.quat = np.array(quat, dtype=np.float64).reshape(n, 4)
        self.log_scale = np.array(log_scale, dtype=np.float64).reshape(n, 3)
        self.opacity_logit = np.array(opacity_logit, dtype=np.float64).reshape(n)
        self.skin_idx = np.array(skin_idx, dtype=np.int64).reshape(n, -1)
        self.skin_w = np.array(skin_w, dtype=np.float64).reshape(n, -1)
        self.skeleton = skeleton
        self.uv = None if uv is None else np.array(uv, dtype=np.float64).reshape(n, 2)
        self._check()
        if fields is None:
            cfg = field_config or FieldConfig()
            lo, hi = self.x0.min(axis=0), self.x0.max(axis=0)
            pad = 0.1 * np.max(hi - lo) + cfg.max_displacement
            fields = FieldBank(lo - pad, hi + pad, cfg, seed=seed)
        self.fields = fields
        if sh_mode not in ("hash", "uv"):
            raise ConfigurationError(f"sh_mode must be 'hash' or 'uv', got {sh_mode!r}")
        if sh_mode == "uv":
            if self.uv is None:
                raise ConfigurationError(
                    "UV-encoded SH requested but the model has no UV coordinates; use sh_mode='hash'")
            atlas = atlas or UvAtlas()
        self.sh_mode = sh_mode
        self.atlas = atlas
        self.ao_enabled = bool(ao_enabled)
        self.field_anchor = None
        self.grad = {}
        self.zero_grad()

    def _check(self) -> None:
        n = len(self.x0)
        if self.skin_idx.shape != self.skin_w.shape or self.skin_idx.shape[1] > 4:
            raise InvalidParameterError("skin weights must be (N, <=4) index/weight pairs")
        if np.any(self.skin_w < 0) or np.any(np.abs(self.skin_w.sum(axis=1) - 1.0) > 1e-6):
            raise InvalidParameterError("skin weights must be non-negative and sum to 1")
        if np.any(self.skin_idx < 0) or np.any(self.skin_idx >= self.skeleton.n_bones):
            raise InvalidParameterError("skin bone index out of range")
        if n == 0:
            raise InvalidParameterError("model has no points")

    def __len__(self) -> int:
        return len(self.x0)

    @property
    def n_points(self) -> int:
        return len(self.x0)

    @property
    def opacity(self) -> np.ndarray:
        return sigmoid(self.opacity_logit)

    def query_positions(self) -> np.ndarray:
        return self.x0 if self.field_anchor is None else self.field_anchor

    def gaussian(self, i: int) -> SkinnedGaussian:
        """Value-object view of point ``i`` with its field samples at t=0."""
        x = self.x0[i:i + 1]
        sh, dx, _ = self.fields.sample_shape_appearance(x)
        if self.sh_mode == "uv":
            sh = self.atlas.sample(self.uv[i:i + 1])[0].reshape(-1, 9, 3)
        ao = float(self.fields.sample_ao(x, 0.0)[0][0]) if self.ao_enabled else 1.0
        skin = tuple((int(b), float(w)) for b, w in zip(self.skin_idx[i], self.skin_w[i]) if w > 0)
        geom = GaussianGeometry(self.x0[i], self.quat[i], self.log_scale[i], float(self.opacity_logit[i]))
        return SkinnedGaussian(geom, skin, sh[0], dx[0], ao)

    # --- optimization plumbing -------------------------------------------------

    def zero_grad(self) -> None:
        # buffers are zeroed in place so ParamRefs taken earlier stay valid
        for name, arr in [(n, getattr(self, n)) for n in POINT_PARAMS] + [("joints", self.skeleton.joints)]:
            g = self.grad.get(name)
            if g is None or g.shape != arr.shape:
                self.grad[name] = np.zeros_like(arr)
            else:
                g[...] = 0.0
        self.fields.zero_grad()
        if self.atlas is not None:
            self.atlas.zero_grad()

    def parameters(self, include_ao: bool = True):
        """All trainable arrays grouped for the optimizer."""
        refs = [ParamRef("centers", "x0", self.x0, self.grad["x0"]),
                ParamRef("rotations", "quat", self.quat, self.grad["quat"]),
                ParamRef("scales", "log_scale", self.log_scale, self.grad["log_scale"]),
                ParamRef("opacities", "opacity_logit", self.opacity_logit, self.grad["opacity_logit"]),
                ParamRef("joints", "joints", self.skeleton.joints, self.grad["joints"])]
        names = ["dx"] + (["sh"] if self.sh_mode == "hash" else []) + (["ao"] if include_ao else [])
        for fname in names:
            f = self.fields.fields()[fname]
            refs.append(ParamRef("hash_tables", f"{fname}.table", f.grid.table, f.grid.grad, f.grid.live))
            for i, (W, b) in enumerate(zip(f.mlp.weights, f.mlp.biases)):
                refs.append(ParamRef("mlp", f"{fname}.W{i}", W, f.mlp.grad_weights[i]))
                refs.append(ParamRef("mlp", f"{fname}.b{i}", b, f.mlp.grad_biases[i]))
        if self.sh_mode == "uv":
            refs.append(ParamRef("atlas", "atlas", self.atlas.texture, self.atlas.grad))
        return refs

    def renormalize(self) -> None:
        self.quat[...] = normalize_quat(self.quat)
