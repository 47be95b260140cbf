"""End to end: generate a synthetic multi-view dataset, fit an avatar, evaluate.

Run: python demos/train_synthetic.py [workdir]

Uses a reduced setup that finishes in about a minute on one core. The full
default dataset (128x128, ~5,000 Gaussians, 24 frames) trains with
``animgs train`` in roughly seven minutes.
"""

import sys
import tempfile
from pathlib import Path

from animgs.checkpoint import load_checkpoint, save_checkpoint
from animgs.dataio import load_dataset, load_template
from animgs.synthetic import SynthConfig, generate_synthetic_dataset
from animgs.training import TrainConfig, evaluate, fit

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="animgs_demo_"))
synth = SynthConfig(n_points=1500, image_size=64, focal=90.0, n_frames=8)
summary = generate_synthetic_dataset(synth, work / "data")
print(f"dataset: {summary['cameras']} cameras, {summary['frames']} frames, {summary['points']} GT Gaussians")

dataset = load_dataset(work / "data")
template = load_template(work / "data" / "template.json")

# The ground truth reproduces its own images up to 8-bit rounding.
gt = load_checkpoint(work / "data" / "ground_truth.ckpt")
print("ground truth held-out PSNR:", evaluate(gt.models, dataset, "test")["mean"]["psnr"])

cfg = TrainConfig(epochs=4, ao_start_epoch=3, k=synth.k)
ckpt = fit(dataset, template, cfg, epoch_callback=lambda e, ck: print(
    f"epoch {e}: held-out {evaluate(ck.models, dataset, 'test')['mean']}"))
save_checkpoint(ckpt, work / "trained.ckpt")
print("wrote", work / "trained.ckpt")
