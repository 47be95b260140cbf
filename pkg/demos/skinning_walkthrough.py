"""Posing a small skeleton and deforming Gaussians with linear blend skinning.

Run: python demos/skinning_walkthrough.py
"""

import numpy as np

from animgs.core import build_covariance
from animgs.skinning import (Pose, Skeleton, canonicalize_direction, compute_bone_transforms, deform_point,
                             deform_rotation)

# A two-bone arm: the root at the origin, the second joint one unit up +y.
# Joint positions are offsets from the parent joint.
arm = Skeleton(parents=[-1, 0], joints=[[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]])

# The rest pose maps every point to itself.
rest = compute_bone_transforms(arm, Pose.rest(2))
print("rest-pose transforms are identity:", np.allclose(rest, np.eye(4)))

# Rotate the root a quarter turn about z; the child joint swings to -x.
pose = Pose(omega=[[0.0, 0.0, np.pi / 2], [0.0, 0.0, 0.0]], translation=[0.0, 0.0, 0.0])
B = compute_bone_transforms(arm, pose)
print("child joint after quarter turn:", np.round(deform_point([0, 1, 0], [(1, 1.0)], B), 6))

# Bending only the elbow leaves points bound to the root in place while
# points blended between the bones move part of the way.
bend = Pose(omega=[[0.0, 0.0, 0.0], [0.0, 0.0, np.pi / 2]], translation=[0.0, 0.0, 0.0])
B = compute_bone_transforms(arm, bend)
tip = [0.0, 2.0, 0.0]
for w_child in (0.0, 0.5, 1.0):
    w = [(0, 1.0 - w_child), (1, w_child)]
    print(f"tip with child weight {w_child:.1f} ->", np.round(deform_point(tip, w, B), 4))

# A Gaussian's covariance follows the blended linear map. Blending two
# different rotations shrinks the frame, which keeps the covariance positive
# semi-definite but slightly smaller.
q = np.array([1.0, 0.0, 0.0, 0.0])
log_s = np.log([0.05, 0.2, 0.05])
w = [(0, 0.5), (1, 0.5)]
R_t = deform_rotation(np.eye(3), w, B)
cov_c = build_covariance(q, log_s).matrix()
cov_t = R_t @ cov_c @ R_t.T
print("posed covariance eigenvalues:", np.round(np.linalg.eigvalsh(cov_t), 6))

# View directions are pulled back into the canonical frame before shading.
d_c = canonicalize_direction(np.array([1.0, 0.0, 0.0]), w, B)
print("canonical view direction:", np.round(d_c, 4), "norm", round(float(np.linalg.norm(d_c)), 6))
