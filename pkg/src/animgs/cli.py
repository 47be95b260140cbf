"""Command-line entry point: ``animgs {synth,train,render,eval,export}``.

Settings come from built-in defaults, then ``--config FILE`` (``key = value``
lines), then positional ``key=value`` overrides, then dedicated flags.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import parse_overrides, read_config_file
from .dataio import export_ply, load_dataset, load_template, save_image
from .errors import (ConfigurationError, DatasetError, InvalidParameterError, InvalidSkeletonError,
                     NumericalError)
from .rasterizer import set_num_threads
from .render import render_image
from .skinning import Pose
from .synthetic import SynthConfig, generate_synthetic_dataset
from .training import MetricsLog, TrainConfig, evaluate, fit

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _settings(args) -> dict:
    merged = read_config_file(args.config) if args.config else {}
    merged.update(parse_overrides(args.overrides))
    return merged


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="key = value settings file (overridden by key=value arguments)")
    p.add_argument("--seed", type=int, help="random seed (default from config, else 0)")
    p.add_argument("--threads", type=int, help="rasterizer worker threads (default 1)")
    p.add_argument("overrides", nargs="*", metavar="key=value", help="setting overrides")


def cmd_synth(args) -> int:
    over = _settings(args)
    if args.seed is not None:
        over["seed"] = args.seed
    cfg = SynthConfig().updated(over)
    set_num_threads(args.threads or 1)
    summary = generate_synthetic_dataset(cfg, args.out)
    print(f"wrote {summary['path']}: {summary['cameras']} cameras "
          f"({summary['train_cameras']} train, {summary['test_cameras']} test), "
          f"{summary['frames']} frames, {summary['avatars']} avatar(s), {summary['points']} points")
    return EXIT_OK


def cmd_train(args) -> int:
    over = _settings(args)
    flags = {"seed": args.seed, "threads": args.threads, "epochs": args.epochs,
             "ao_start_epoch": args.ao_start_epoch, "lam": args.lam, "sh_mode": args.sh_mode}
    over.update({k: v for k, v in flags.items() if v is not None})
    if args.no_ao:
        over["use_ao"] = False
    cfg = TrainConfig().updated(over)
    dataset = load_dataset(args.dataset)
    templates = [load_template(t) for t in args.template]
    if len(templates) == 1 and dataset.n_avatars > 1:
        templates = templates * dataset.n_avatars
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resume = load_checkpoint(args.checkpoint) if args.checkpoint else None
    ckpt_path = out / "checkpoint.ckpt"

    metrics = MetricsLog(out / "metrics.jsonl")

    def report(epoch, ck):
        rec = metrics.records[-1]
        print(f"epoch {epoch}/{cfg.epochs}: loss {rec['loss']:.5f}, train psnr {rec['psnr']:.2f} dB", flush=True)
        if args.save_every_epoch:
            save_checkpoint(ck, ckpt_path)

    try:
        ckpt = fit(dataset, templates, cfg, resume=resume, metrics=metrics, epoch_callback=report)
    finally:
        metrics.close()
    save_checkpoint(ckpt, ckpt_path)
    print(f"wrote {ckpt_path}")
    return EXIT_OK


def _load_poses(path, n_avatars: int) -> list:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        frames = []
        for fr in doc["frames"]:
            frames.append((int(fr["index"]), [Pose(a["omega"], a["translation"], 0.0)
                                              for a in fr["avatars"][:n_avatars]]))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DatasetError(f"{path}: cannot read poses ({exc})") from None
    for idx, poses in frames:
        if len(poses) != n_avatars:
            raise DatasetError(f"{path}: frame {idx} has {len(poses)} poses, checkpoint has {n_avatars} avatars")
    return frames


def cmd_render(args) -> int:
    set_num_threads(args.threads or 1)
    ckpt = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    cams = args.camera if args.camera else list(dataset.cameras)
    for c in cams:
        if c not in dataset.cameras:
            raise DatasetError(f"unknown camera id {c}; dataset has {sorted(dataset.cameras)}")
    use_ao = not args.no_ao
    if args.poses:
        # novel poses carry no timestamp, so the time-dependent AO is not used
        frames = _load_poses(args.poses, len(ckpt.models))
        use_ao = False
    else:
        frames = [(fr.index, fr.poses) for fr in dataset.frames]
    if args.frame:
        wanted = set(args.frame)
        frames = [f for f in frames if f[0] in wanted]
        missing = wanted - {f[0] for f in frames}
        if missing:
            raise DatasetError(f"unknown frame index {sorted(missing)[0]}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for idx, poses in frames:
        for c in cams:
            img = render_image(list(zip(ckpt.models, poses)), dataset.cameras[c], dataset.background, use_ao)
            save_image(out / f"cam{c}_frame{idx}.png", img)
    print(f"wrote {len(frames) * len(cams)} images to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    set_num_threads(args.threads or 1)
    ckpt = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    report = evaluate(ckpt.models, dataset, args.split, use_ao=not args.no_ao)
    text = json.dumps(report, indent=1, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_export(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if not 0 <= args.avatar < len(ckpt.models):
        raise DatasetError(f"checkpoint has {len(ckpt.models)} avatar(s), no avatar {args.avatar}")
    pose = None
    if args.frame is not None:
        if not args.dataset:
            raise ConfigurationError("--frame needs --dataset to look up the pose")
        dataset = load_dataset(args.dataset)
        match = [f for f in dataset.frames if f.index == args.frame]
        if not match:
            raise DatasetError(f"unknown frame index {args.frame}")
        pose = match[0].poses[args.avatar]
    export_ply(ckpt.models[args.avatar], args.out, pose)
    print(f"wrote {len(ckpt.models[args.avatar])} points to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="animgs", description="Animatable Gaussian avatars from multi-view video.")
    sub = p.add_subparsers(dest="command", required=True, metavar="{synth,train,render,eval,export}")

    s = sub.add_parser("synth", help="generate a synthetic dataset with ground truth",
                       description="Generate a synthetic multi-view dataset, a noisy template and the "
                                   "ground-truth checkpoint. Generator keys are set with key=value.")
    s.add_argument("--out", required=True, metavar="DIR", help="output dataset directory")
    _common(s)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="fit an avatar to a dataset",
                       description="Optimize avatars initialized from a template against a dataset's "
                                   "training cameras. Writes checkpoint.ckpt and metrics.jsonl to --out.")
    t.add_argument("--dataset", required=True, metavar="DIR", help="dataset directory")
    t.add_argument("--template", required=True, action="append", metavar="FILE",
                   help="template JSON (repeat once per avatar, or give one for all)")
    t.add_argument("--checkpoint", metavar="FILE", help="resume from this checkpoint")
    t.add_argument("--epochs", type=int, help="number of epochs (default 10)")
    t.add_argument("--ao-start-epoch", dest="ao_start_epoch", type=int,
                   help="first epoch with ambient occlusion enabled (default 5)")
    t.add_argument("--lambda", dest="lam", type=float, help="D-SSIM weight in the loss (default 0.2)")
    t.add_argument("--sh-mode", dest="sh_mode", choices=("hash", "uv"), help="SH source: hash field or UV atlas")
    t.add_argument("--no-ao", dest="no_ao", action="store_true", help="train without ambient occlusion")
    t.add_argument("--save-every-epoch", action="store_true", help="rewrite the checkpoint after each epoch")
    t.add_argument("--out", required=True, metavar="DIR", help="output directory")
    _common(t)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render images from a checkpoint",
                       description="Render one image per (frame, camera). Cameras and poses come from the "
                                   "dataset unless --poses gives novel poses (rendered without AO).")
    r.add_argument("--checkpoint", required=True, metavar="FILE", help="trained checkpoint")
    r.add_argument("--dataset", required=True, metavar="DIR", help="dataset supplying cameras and poses")
    r.add_argument("--poses", metavar="FILE", help="poses JSON for novel-pose rendering")
    r.add_argument("--camera", type=int, action="append", metavar="ID", help="camera id (repeatable; default all)")
    r.add_argument("--frame", type=int, action="append", metavar="INDEX", help="frame index (repeatable; default all)")
    r.add_argument("--no-ao", dest="no_ao", action="store_true", help="force ambient occlusion to 1")
    r.add_argument("--out", required=True, metavar="DIR", help="output image directory")
    _common(r)
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint on a dataset split",
                       description="Report per-view and mean PSNR and SSIM as JSON.")
    e.add_argument("--checkpoint", required=True, metavar="FILE", help="trained checkpoint")
    e.add_argument("--dataset", required=True, metavar="DIR", help="dataset directory")
    e.add_argument("--split", default="test", choices=("train", "test"), help="camera split (default test)")
    e.add_argument("--no-ao", dest="no_ao", action="store_true", help="force ambient occlusion to 1")
    e.add_argument("--out", metavar="FILE", help="also write the report here")
    _common(e)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export", help="write a PLY point cloud",
                       description="Export centers, DC color and opacity as ASCII PLY, canonical by default.")
    x.add_argument("--checkpoint", required=True, metavar="FILE", help="trained checkpoint")
    x.add_argument("--dataset", metavar="DIR", help="dataset supplying the pose for --frame")
    x.add_argument("--frame", type=int, metavar="INDEX", help="export posed at this frame")
    x.add_argument("--avatar", type=int, default=0, metavar="N", help="avatar index (default 0)")
    x.add_argument("--out", required=True, metavar="FILE", help="output .ply path")
    _common(x)
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    # key=value overrides may sit anywhere on the line, also after options
    args, extra = parser.parse_known_args(argv)
    stray = [e for e in extra if e.startswith("-") or "=" not in e]
    if stray:
        parser.error(f"unrecognized arguments: {' '.join(stray)}")
    args.overrides = list(args.overrides or ()) + extra
    try:
        return args.func(args)
    except (DatasetError, InvalidSkeletonError) as exc:
        print(f"animgs {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigurationError, InvalidParameterError) as exc:
        print(f"animgs {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"animgs {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
