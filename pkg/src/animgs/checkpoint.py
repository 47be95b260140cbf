"""Binary checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic b"ANIMGSCK"
    u32       format version
    u64       header length H
    H bytes   UTF-8 JSON header: array table, model metadata, config echo
    payload   raw little-endian array sections at the offsets listed in the header

The header records the payload size and its CRC-32, so truncation or bit rot
is detected before any state is built.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, UnsupportedVersionError
from .fields import FieldBank, FieldConfig, UvAtlas
from .model import SkinnedGaussianModel
from .optim import Moments, TrainState
from .skinning import Skeleton

MAGIC = b"ANIMGSCK"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


@dataclass
class Checkpoint:
    models: list
    config: dict = field(default_factory=dict)
    seed: int = 0
    state: TrainState | None = None


def _model_arrays(prefix: str, m: SkinnedGaussianModel) -> dict:
    arrs = {"x0": m.x0, "quat": m.quat, "log_scale": m.log_scale, "opacity_logit": m.opacity_logit,
            "skin_idx": m.skin_idx, "skin_w": m.skin_w, "parents": m.skeleton.parents,
            "joints": m.skeleton.joints, "bbox_min": m.fields.bbox_min, "bbox_max": m.fields.bbox_max}
    if m.uv is not None:
        arrs["uv"] = m.uv
    for name, f in m.fields.fields().items():
        arrs[f"{name}.table"] = f.grid.table
        arrs[f"{name}.live_rows"] = f.grid.live_rows
        for i, (W, b) in enumerate(zip(f.mlp.weights, f.mlp.biases)):
            arrs[f"{name}.W{i}"] = W
            arrs[f"{name}.b{i}"] = b
    if m.atlas is not None:
        arrs["atlas"] = m.atlas.texture
    return {f"{prefix}/{k}": v for k, v in arrs.items()}


def _table_rows(models, key: str):
    a, name = key.split("/", 1)
    if not name.endswith(".table"):
        return None
    model = models[int(a[len("avatar"):])]
    return model.fields.fields()[name[:-len(".table")]].grid.live_rows


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    arrays = {}
    avatars = []
    for a, m in enumerate(ckpt.models):
        arrays.update(_model_arrays(f"avatar{a}", m))
        avatars.append({"sh_mode": m.sh_mode, "ao_enabled": m.ao_enabled,
                        "field_config": m.fields.config.to_dict(), "n_points": len(m)})
    opt = None
    if ckpt.state is not None:
        opt = {"step": ckpt.state.step, "epoch": ckpt.state.epoch, "ao_enabled": ckpt.state.ao_enabled,
               "counts": {}}
        for key in sorted(ckpt.state.moments):
            mom = ckpt.state.moments[key]
            rows = _table_rows(ckpt.models, key)
            opt["counts"][key] = mom.count
            if rows is None:
                arrays[f"opt/{key}/m"], arrays[f"opt/{key}/v"] = mom.m, mom.v
            else:
                # untouched table rows have zero moments; store only the live ones
                arrays[f"opt/{key}/m"], arrays[f"opt/{key}/v"] = mom.m[rows], mom.v[rows]

    table, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes()
        table.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {"format": "animgs-checkpoint", "version": VERSION, "seed": int(ckpt.seed),
              "config": ckpt.config, "avatars": avatars, "optimizer": opt, "arrays": table,
              "payload_bytes": len(payload), "crc32": zlib.crc32(payload)}
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)
    tmp.replace(path)


def _read(path) -> tuple:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"{path}: checkpoint not found") from None
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint ({len(data)} bytes)")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    start = _PREFIX.size + hlen
    if len(data) < start:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(data[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    payload = data[start:]
    if len(payload) != header.get("payload_bytes"):
        raise CheckpointError(f"{path}: truncated or padded payload "
                              f"({len(payload)} of {header.get('payload_bytes')} bytes)")
    if zlib.crc32(payload) != header.get("crc32"):
        raise CheckpointError(f"{path}: payload checksum mismatch")
    arrays = {}
    for entry in header["arrays"]:
        buf = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(buf, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return header, arrays


def _build_model(prefix: str, meta: dict, arrays: dict) -> SkinnedGaussianModel:
    def get(name):
        return arrays[f"{prefix}/{name}"]

    cfg = FieldConfig.from_dict(meta["field_config"])
    bank = FieldBank(get("bbox_min"), get("bbox_max"), cfg)
    for name, f in bank.fields().items():
        f.grid.table = get(f"{name}.table").copy()
        f.grid.live[:] = False
        f.grid.live[get(f"{name}.live_rows")] = True
        f.grid.grad = np.zeros(f.grid.table.shape)
        f.mlp.weights = [get(f"{name}.W{i}").copy() for i in range(len(f.mlp.weights))]
        f.mlp.biases = [get(f"{name}.b{i}").copy() for i in range(len(f.mlp.biases))]
        f.mlp.grad_weights = None
        f.mlp.zero_grad()
    atlas = UvAtlas(values=get("atlas")) if f"{prefix}/atlas" in arrays else None
    skel = Skeleton(get("parents"), get("joints"))
    uv = get("uv") if f"{prefix}/uv" in arrays else None
    return SkinnedGaussianModel(get("x0"), get("quat"), get("log_scale"), get("opacity_logit"),
                                get("skin_idx"), get("skin_w"), skel, fields=bank, uv=uv,
                                sh_mode=meta["sh_mode"], atlas=atlas, ao_enabled=meta["ao_enabled"])


def load_checkpoint(path) -> Checkpoint:
    header, arrays = _read(path)
    try:
        models = [_build_model(f"avatar{a}", meta, arrays) for a, meta in enumerate(header["avatars"])]
        for m, meta in zip(models, header["avatars"]):
            if len(m) != meta["n_points"]:
                raise CheckpointError(f"{path}: point count {len(m)} != recorded {meta['n_points']}")
        state = None
        opt = header.get("optimizer")
        if opt is not None:
            state = TrainState(opt["step"], opt["epoch"], opt["ao_enabled"])
            for key, count in opt["counts"].items():
                m, v = arrays[f"opt/{key}/m"], arrays[f"opt/{key}/v"]
                rows = _table_rows(models, key)
                if rows is not None:
                    shape = models[int(key.split("/")[0][len("avatar"):])].fields.fields()[
                        key.split("/", 1)[1][:-len(".table")]].grid.table.shape
                    fm, fv = np.zeros(shape, m.dtype), np.zeros(shape, v.dtype)
                    fm[rows], fv[rows] = m, v
                    m, v = fm, fv
                state.moments[key] = Moments(m, v, int(count))
    except (KeyError, ValueError, IndexError, TypeError) as exc:
        raise CheckpointError(f"{path}: inconsistent checkpoint contents ({exc!r})") from None
    return Checkpoint(models, header.get("config", {}), int(header.get("seed", 0)), state)
