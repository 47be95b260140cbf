"""Datasets, skinned templates, images and point-cloud export.

Dataset directory layout::

    manifest.json
    poses.json
    images/cam{c}_frame{f}.png      8-bit sRGB, linear after loading

``manifest.json``::

    {"format": "animgs-dataset", "version": 1,
     "avatars": 1,                          number of animated characters
     "background": [r, g, b],               linear RGB behind everything
     "poses": "poses.json",
     "cameras": [{"id": 0, "split": "train" | "test",
                  "world_to_camera": 4x4, "fx", "fy", "cx", "cy",
                  "width", "height", "z_near"}, ...],
     "frames": [{"index": 0, "timestamp": 0.0,
                 "images": {"0": "images/cam0_frame0.png", ...}}, ...]}

``poses.json``::

    {"version": 1,
     "frames": [{"index": 0,
                 "avatars": [{"omega": [[x, y, z] per bone], "translation": [x, y, z]}, ...]}, ...]}

Timestamps must increase strictly; they are normalized to ``[0, 1]``.

Template files are JSON; large arrays are stored as base64 blocks
``{"dtype": "<f8", "shape": [...], "data": "..."}``::

    {"format": "animgs-template", "version": 1,
     "parents": [-1, 0, ...],              root first, parents before children
     "joints": block (n_bones, 3),         offset of each joint from its parent
     "vertices": block (V, 3),
     "skin_indices": block (V, k), "skin_weights": block (V, k),
     "uv": block (V, 2)                    optional}
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .core import sigmoid
from .errors import DatasetError, InvalidParameterError, InvalidSkeletonError
from .model import SkinnedGaussianModel
from .rasterizer import Camera
from .shading import C0, COLOR_OFFSET
from .skinning import Pose, Skeleton, blend_transforms, compute_bone_transforms

DATASET_VERSION = 1
TEMPLATE_VERSION = 1
MAX_INFLUENCES = 4
WEIGHT_TOLERANCE = 1e-4


# --- images ------------------------------------------------------------------

def srgb_to_linear(c):
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c):
    c = np.clip(np.asarray(c, dtype=np.float64), 0.0, 1.0)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1 / 2.4) - 0.055)


def encode_srgb8(img) -> np.ndarray:
    return np.round(linear_to_srgb(img) * 255.0).astype(np.uint8)


def decode_srgb8(img) -> np.ndarray:
    return srgb_to_linear(np.asarray(img, dtype=np.float64) / 255.0)


def quantize_srgb8(img) -> np.ndarray:
    """Linear image as it would read back after an 8-bit sRGB round trip."""
    return decode_srgb8(encode_srgb8(img))


def save_image(path, img) -> None:
    Image.fromarray(encode_srgb8(img), mode="RGB").save(path, format="PNG", optimize=False)


def load_image(path) -> np.ndarray:
    """Linear float (H, W, 3) image from an 8-bit sRGB file."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"))
    except FileNotFoundError:
        raise DatasetError(f"{path}: image file not found") from None
    except OSError as exc:
        raise DatasetError(f"{path}: cannot decode image ({exc})") from None
    return decode_srgb8(arr)


# --- base64 array blocks -------------------------------------------------------

def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    a = a.astype(a.dtype.newbyteorder("<"), copy=False)
    return {"dtype": a.dtype.str, "shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(block, where: str) -> np.ndarray:
    if isinstance(block, list):
        return np.asarray(block)
    try:
        dtype = np.dtype(block["dtype"])
        shape = tuple(int(s) for s in block["shape"])
        raw = base64.b64decode(block["data"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{where}: malformed array block ({exc})") from None
    if len(raw) != dtype.itemsize * int(np.prod(shape)):
        raise DatasetError(f"{where}: array data has {len(raw)} bytes, expected shape {shape} of {dtype}")
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def _read_json(path: Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise DatasetError(f"{path}: file not found") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DatasetError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise DatasetError(f"{path}: top level must be an object")
    return doc


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


# --- templates ---------------------------------------------------------------

@dataclass
class TemplateModel:
    """Skinned mesh prior: vertices, sparse skin weights, skeleton, optional UVs."""

    vertices: np.ndarray
    skin_idx: np.ndarray
    skin_w: np.ndarray
    skeleton: Skeleton
    uv: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.vertices)


def sparsify_weights(indices, weights, where: str = "template"):
    """Validate per-vertex weights and keep the strongest ``MAX_INFLUENCES``.

    Rows off from unit sum by less than ``WEIGHT_TOLERANCE`` are renormalized;
    larger violations are rejected.
    """
    idx = np.asarray(indices, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    if idx.shape != w.shape or w.ndim != 2:
        raise DatasetError(f"{where}: skin indices {idx.shape} and weights {w.shape} must match")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise DatasetError(f"{where}: skin weights must be finite and non-negative")
    err = np.abs(w.sum(axis=1) - 1.0)
    bad = np.flatnonzero(err > WEIGHT_TOLERANCE)
    if len(bad):
        raise DatasetError(f"{where}: skin weights of vertex {bad[0]} sum to {w[bad[0]].sum():.6g}, "
                           f"off by more than {WEIGHT_TOLERANCE}")
    if w.shape[1] > MAX_INFLUENCES:
        order = np.argsort(-w, axis=1, kind="stable")[:, :MAX_INFLUENCES]
        idx = np.take_along_axis(idx, order, axis=1)
        w = np.take_along_axis(w, order, axis=1)
    return idx, w / w.sum(axis=1, keepdims=True)


def load_template(path) -> TemplateModel:
    path = Path(path)
    doc = _read_json(path)
    where = str(path)
    if doc.get("format") != "animgs-template":
        raise DatasetError(f"{where}: not a template file (format={doc.get('format')!r})")
    if doc.get("version") != TEMPLATE_VERSION:
        raise DatasetError(f"{where}: unsupported template version {doc.get('version')!r}")
    for key in ("parents", "joints", "vertices", "skin_indices", "skin_weights"):
        if key not in doc:
            raise DatasetError(f"{where}: missing field {key!r}")
    try:
        skeleton = Skeleton(np.asarray(doc["parents"], dtype=np.int64), decode_array(doc["joints"], f"{where}: joints"))
    except InvalidSkeletonError as exc:
        raise InvalidSkeletonError(f"{where}: {exc}") from None
    verts = decode_array(doc["vertices"], f"{where}: vertices").astype(np.float64)
    if verts.ndim != 2 or verts.shape[1] != 3 or len(verts) == 0:
        raise DatasetError(f"{where}: vertices must be a non-empty (V, 3) array")
    if not np.all(np.isfinite(verts)):
        raise DatasetError(f"{where}: vertices must be finite")
    idx, w = sparsify_weights(decode_array(doc["skin_indices"], f"{where}: skin_indices"),
                              decode_array(doc["skin_weights"], f"{where}: skin_weights"), where)
    if len(idx) != len(verts):
        raise DatasetError(f"{where}: {len(idx)} weight rows for {len(verts)} vertices")
    if np.any(idx < 0) or np.any(idx >= skeleton.n_bones):
        raise DatasetError(f"{where}: skin index outside 0..{skeleton.n_bones - 1}")
    uv = None
    if doc.get("uv") is not None:
        uv = decode_array(doc["uv"], f"{where}: uv").astype(np.float64)
        if uv.shape != (len(verts), 2):
            raise DatasetError(f"{where}: uv must be ({len(verts)}, 2), got {uv.shape}")
    return TemplateModel(verts, idx, w, skeleton, uv)


def save_template(template: TemplateModel, path) -> None:
    doc = {"format": "animgs-template", "version": TEMPLATE_VERSION,
           "parents": [int(p) for p in template.skeleton.parents],
           "joints": encode_array(template.skeleton.joints.astype("<f8")),
           "vertices": encode_array(np.asarray(template.vertices, dtype="<f8")),
           "skin_indices": encode_array(np.asarray(template.skin_idx, dtype="<i4")),
           "skin_weights": encode_array(np.asarray(template.skin_w, dtype="<f8"))}
    if template.uv is not None:
        doc["uv"] = encode_array(np.asarray(template.uv, dtype="<f8"))
    _write_json(path, doc)


# --- datasets ----------------------------------------------------------------

@dataclass
class FrameRecord:
    index: int
    timestamp: float
    t: float
    poses: list
    images: dict


@dataclass
class DatasetManifest:
    """A validated dataset; images are decoded lazily and cached."""

    root: Path
    cameras: dict
    splits: dict
    frames: list
    n_avatars: int
    background: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    def camera_ids(self, split: str | None = None) -> list:
        return [c for c in self.cameras if split is None or self.splits[c] == split]

    def views(self, split: str | None = None) -> list:
        """All ``(frame_position, camera_id)`` pairs of a split."""
        return [(i, c) for i in range(len(self.frames)) for c in self.camera_ids(split)]

    def image(self, frame_pos: int, cam_id: int) -> np.ndarray:
        key = (frame_pos, cam_id)
        if key not in self._cache:
            self._cache[key] = load_image(self.root / self.frames[frame_pos].images[cam_id])
        return self._cache[key]

    @property
    def n_bones(self) -> int:
        return len(self.frames[0].poses[0].omega)


def _field(obj, key, where, kind=None):
    if not isinstance(obj, dict) or key not in obj:
        raise DatasetError(f"{where}: missing field {key!r}")
    val = obj[key]
    if kind is not None and not isinstance(val, kind):
        raise DatasetError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}")
    return val


def _vector(val, shape, where):
    try:
        a = np.asarray(val, dtype=np.float64)
    except (TypeError, ValueError):
        raise DatasetError(f"{where}: expected numbers") from None
    if (shape is not None and a.shape != shape) or not np.all(np.isfinite(a)):
        raise DatasetError(f"{where}: expected finite array of shape {shape}, got {a.shape}")
    return a


def load_dataset(path) -> DatasetManifest:
    """Load and eagerly validate a dataset directory."""
    root = Path(path)
    mpath = root / "manifest.json"
    doc = _read_json(mpath)
    where = str(mpath)
    if doc.get("version") != DATASET_VERSION:
        raise DatasetError(f"{where}: unsupported dataset version {doc.get('version')!r}")
    n_av = _field(doc, "avatars", where, int)
    if n_av < 1:
        raise DatasetError(f"{where}: avatars must be >= 1")
    background = _vector(doc.get("background", [0.0, 0.0, 0.0]), (3,), f"{where}: background")

    cams, splits = {}, {}
    cam_docs = _field(doc, "cameras", where, list)
    if not cam_docs:
        raise DatasetError(f"{where}: no cameras")
    for i, cd in enumerate(cam_docs):
        cw = f"{where}: cameras[{i}]"
        cid = _field(cd, "id", cw, int)
        if cid in cams:
            raise DatasetError(f"{cw}: duplicate camera id {cid}")
        split = cd.get("split", "train")
        if split not in ("train", "test"):
            raise DatasetError(f"{cw}: split must be 'train' or 'test', got {split!r}")
        for key in ("world_to_camera", "fx", "fy", "cx", "cy", "width", "height"):
            _field(cd, key, cw)
        _vector(cd["world_to_camera"], (4, 4), f"{cw}.world_to_camera")
        try:
            cams[cid] = Camera.from_dict(cd)
        except (InvalidParameterError, TypeError, ValueError) as exc:
            raise DatasetError(f"{cw}: {exc}") from None
        splits[cid] = split

    ppath = root / _field(doc, "poses", where, str)
    pdoc = _read_json(ppath)
    pose_frames = {}
    for i, pf in enumerate(_field(pdoc, "frames", str(ppath), list)):
        pw = f"{ppath}: frames[{i}]"
        pose_frames[_field(pf, "index", pw, int)] = pf

    frame_docs = _field(doc, "frames", where, list)
    if not frame_docs:
        raise DatasetError(f"{where}: no frames")
    raw = []
    n_bones = None
    for i, fd in enumerate(frame_docs):
        fw = f"{where}: frames[{i}]"
        fidx = _field(fd, "index", fw, int)
        ts = float(_vector(_field(fd, "timestamp", fw), (), f"{fw}.timestamp"))
        if raw and ts <= raw[-1][1]:
            raise DatasetError(f"{fw}: timestamp {ts} does not increase (previous {raw[-1][1]})")
        images = {}
        img_doc = _field(fd, "images", fw, dict)
        for cid in cams:
            rel = img_doc.get(str(cid))
            if rel is None:
                raise DatasetError(f"{fw} (frame {fidx}): no image for camera {cid}")
            if not (root / rel).is_file():
                raise DatasetError(f"{fw} (frame {fidx}): image file {root / rel} does not exist")
            images[cid] = rel
        pf = pose_frames.get(fidx)
        if pf is None:
            raise DatasetError(f"{ppath}: no poses for frame {fidx}")
        av_docs = _field(pf, "avatars", f"{ppath}: frame {fidx}", list)
        poses = []
        for a in range(n_av):
            aw = f"{ppath}: frame {fidx}: avatar {a}"
            if a >= len(av_docs):
                raise DatasetError(f"{ppath}: frame {fidx} is missing a pose for avatar {a}")
            omega = _vector(_field(av_docs[a], "omega", aw), None, f"{aw}.omega")
            if omega.ndim != 2 or omega.shape[1] != 3:
                raise DatasetError(f"{aw}.omega: expected (n_bones, 3), got {omega.shape}")
            if n_bones is None:
                n_bones = len(omega)
            elif len(omega) != n_bones:
                raise DatasetError(f"{aw}.omega: {len(omega)} bones, expected {n_bones}")
            poses.append((omega, _vector(_field(av_docs[a], "translation", aw), (3,), f"{aw}.translation")))
        raw.append((fidx, ts, poses, images))

    t0, t1 = raw[0][1], raw[-1][1]
    span = t1 - t0
    frames = []
    for fidx, ts, poses, images in raw:
        t = 0.0 if span == 0 else min(1.0, max(0.0, (ts - t0) / span))
        frames.append(FrameRecord(fidx, ts, t, [Pose(o, tr, t) for o, tr in poses], images))
    return DatasetManifest(root, cams, splits, frames, n_av, background)


def write_dataset(root, cameras: dict, splits: dict, timestamps, poses, images, background=(0, 0, 0)) -> None:
    """Write a dataset directory.

    ``poses[f][a]`` is a ``Pose``; ``images[(f, cam_id)]`` a linear image.
    """
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    frames, pose_frames = [], []
    for f, ts in enumerate(timestamps):
        names = {}
        for cid in cameras:
            rel = f"images/cam{cid}_frame{f}.png"
            save_image(root / rel, images[(f, cid)])
            names[str(cid)] = rel
        frames.append({"index": f, "timestamp": float(ts), "images": names})
        pose_frames.append({"index": f, "avatars": [
            {"omega": p.omega.tolist(), "translation": p.translation.tolist()} for p in poses[f]]})
    cams = [dict(id=int(cid), split=splits[cid], **cameras[cid].to_dict()) for cid in cameras]
    _write_json(root / "manifest.json", {
        "format": "animgs-dataset", "version": DATASET_VERSION, "avatars": len(poses[0]),
        "background": [float(b) for b in background], "poses": "poses.json",
        "cameras": cams, "frames": frames})
    _write_json(root / "poses.json", {"version": DATASET_VERSION, "frames": pose_frames})


# --- point clouds --------------------------------------------------------------

def posed_centers(model: SkinnedGaussianModel, pose: Pose | None = None) -> np.ndarray:
    """Deformed centers ``x0 + dx`` pushed through the blended bone transforms."""
    _, dx, _ = model.fields.sample_shape_appearance(model.x0)
    xc = model.x0 + dx
    if pose is None:
        return xc
    A = blend_transforms(model.skin_idx, model.skin_w, compute_bone_transforms(model.skeleton, pose))
    return np.einsum("nij,nj->ni", A[:, :, :3], xc) + A[:, :, 3]


def export_ply(model: SkinnedGaussianModel, path, pose: Pose | None = None) -> None:
    """ASCII PLY with position, DC color and opacity; canonical when ``pose`` is None."""
    xyz = posed_centers(model, pose)
    if model.sh_mode == "uv":
        sh = model.atlas.sample(model.uv)[0].reshape(-1, 9, 3)
    else:
        sh = model.fields.sample_shape_appearance(model.x0)[0]
    rgb = np.clip(COLOR_OFFSET + C0 * sh[:, 0, :], 0.0, 1.0)
    rgb8 = np.round(linear_to_srgb(rgb) * 255).astype(int)
    alpha = sigmoid(model.opacity_logit)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(xyz)}",
             "property float x", "property float y", "property float z",
             "property uchar red", "property uchar green", "property uchar blue",
             "property float opacity", "end_header"]
    for p, c, a in zip(xyz, rgb8, alpha):
        lines.append(f"{p[0]:.7g} {p[1]:.7g} {p[2]:.7g} {c[0]} {c[1]} {c[2]} {a:.7g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_ply(path):
    """Minimal ASCII PLY reader: returns (property names, (N, P) float array)."""
    text = Path(path).read_text(encoding="ascii").splitlines()
    if not text or text[0] != "ply" or text[1] != "format ascii 1.0":
        raise DatasetError(f"{path}: not an ASCII PLY file")
    n, names, i = 0, [], 2
    while text[i] != "end_header":
        parts = text[i].split()
        if parts[0] == "element" and parts[1] == "vertex":
            n = int(parts[2])
        elif parts[0] == "property":
            names.append(parts[-1])
        i += 1
    rows = [list(map(float, ln.split())) for ln in text[i + 1:i + 1 + n]]
    data = np.array(rows, dtype=np.float64).reshape(n, len(names))
    return names, data
