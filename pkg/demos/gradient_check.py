"""Checking the hand-written backward pass against finite differences.

Run: python demos/gradient_check.py
"""

import numpy as np

from animgs.fields import FieldConfig, HashGridConfig, MlpConfig
from animgs.losses import total_loss
from animgs.model import SkinnedGaussianModel
from animgs.rasterizer import Camera, RasterConfig
from animgs.render import render_avatars, render_backward, render_image
from animgs.skinning import Pose, Skeleton

rng = np.random.default_rng(0)
grid = HashGridConfig(levels=4, base_resolution=4, max_resolution=16, table_size=2 ** 12, init_range=0.5,
                      dtype="float64")
fields = FieldConfig(sh_grid=grid, dx_grid=grid, ao_grid=grid, mlp=MlpConfig(2, 16), n_freq=3,
                     max_displacement=0.05)
n = 10
x0 = rng.normal(0, 0.15, (n, 3)) + [0, 0.2, 0]
w1 = rng.uniform(0, 1, n)
model = SkinnedGaussianModel(x0, rng.normal(size=(n, 4)), np.log(rng.uniform(0.05, 0.12, (n, 3))),
                             rng.normal(0.5, 1, n), np.tile([0, 1], (n, 1)), np.stack([w1, 1 - w1], 1),
                             Skeleton([-1, 0], [[0, 0, 0], [0, 0.25, 0]]), field_config=fields,
                             ao_enabled=True, seed=1)
for f in model.fields.fields().values():
    f.mlp.weights[-1][:] = rng.normal(0, 0.3, f.mlp.weights[-1].shape)
model.field_anchor = model.x0.copy()
pose = Pose(rng.normal(0, 0.3, (2, 3)), rng.normal(0, 0.05, 3), 0.3)
cam = Camera.look_at([0.3, 0.2, -1.5], [0, 0.2, 0], [0, -1, 0], 40, 40, 32, 32)
target = rng.uniform(0, 1, (32, 32, 3))

# The skip and termination thresholds make the image piecewise; turning them
# off keeps the function smooth so central differences are meaningful.
smooth = RasterConfig(alpha_min=1e-12, min_transmittance=0.0)


def loss():
    return total_loss(render_image([(model, pose)], cam, raster=smooth), target)


buf, ctx = render_avatars([(model, pose)], cam, raster=smooth)
model.zero_grad()
_, g_img = total_loss(buf.color, target, grad=True)
pose_grad = render_backward(ctx, g_img)[0]

checks = {"centers": (model.x0, model.grad["x0"]), "rotations": (model.quat, model.grad["quat"]),
          "joints": (model.skeleton.joints, model.grad["joints"]),
          "sh table": (model.fields.sh.grid.table, model.fields.sh.grid.grad),
          "ao table": (model.fields.ao.grid.table, model.fields.ao.grid.grad),
          "root rotation": (pose.omega, pose_grad.omega)}
h = 1e-4
for name, (arr, grad) in checks.items():
    i = int(np.argmax(np.abs(grad)))
    old = arr.flat[i]
    arr.flat[i] = old + h
    lp = loss()
    arr.flat[i] = old - h
    lm = loss()
    arr.flat[i] = old
    fd = (lp - lm) / (2 * h)
    print(f"{name:14s} analytic {grad.flat[i]: .6e}  finite diff {fd: .6e}  rel err "
          f"{abs(grad.flat[i] - fd) / abs(fd):.1e}")
