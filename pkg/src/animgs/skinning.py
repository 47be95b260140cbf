"""Skeleton, bone transforms and linear blend skinning.

Euler angles ``(ax, ay, az)`` map to ``Rz(az) @ Ry(ay) @ Rx(ax)``. Joint
positions ``J`` are local offsets from the parent joint in the canonical
(rest) pose, where every local rotation is the identity. The root offset
``J[0]`` is the root joint's canonical world position; the pose translation
``T`` is added on top of it, so ``omega = 0, T = 0`` is the rest pose.

All batched functions take skin weights in sparse form: ``skin_idx`` (N, 4)
bone indices and ``skin_w`` (N, 4) weights (unused slots carry weight 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, InvalidSkeletonError

SINGULAR_DET = 1e-9


@dataclass
class Skeleton:
    parents: np.ndarray
    joints: np.ndarray

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=np.int64).reshape(-1)
        self.joints = np.asarray(self.joints, dtype=np.float64).reshape(-1, 3)
        validate_parents(self.parents)
        if len(self.joints) != len(self.parents):
            raise InvalidSkeletonError(
                f"{len(self.parents)} parents but {len(self.joints)} joint positions")
        if not np.all(np.isfinite(self.joints)):
            raise InvalidSkeletonError("joint positions must be finite")

    @property
    def n_bones(self) -> int:
        return len(self.parents)

    def canonical_joint_positions(self) -> np.ndarray:
        P = np.zeros_like(self.joints)
        for k in range(self.n_bones):
            p = self.parents[k]
            P[k] = self.joints[k] if p < 0 else P[p] + self.joints[k]
        return P

    def copy(self) -> "Skeleton":
        return Skeleton(self.parents.copy(), self.joints.copy())


@dataclass
class Pose:
    omega: np.ndarray
    translation: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=np.float64).reshape(-1, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not 0.0 <= self.t <= 1.0:
            raise InvalidParameterError(f"timestamp must be normalized to [0, 1], got {self.t}")

    @classmethod
    def rest(cls, n_bones: int, t: float = 0.0) -> "Pose":
        return cls(np.zeros((n_bones, 3)), np.zeros(3), t)


def validate_parents(parents) -> None:
    """Raise unless ``parents`` is a tree rooted at 0 in topological order."""
    parents = np.asarray(parents)
    if parents.ndim != 1 or len(parents) == 0:
        raise InvalidSkeletonError("skeleton needs at least one bone")
    if parents[0] != -1:
        raise InvalidSkeletonError(
            f"bone 0 must be the root (parent -1), got parent {parents[0]}: cycle or missing root")
    for i in range(1, len(parents)):
        p = parents[i]
        if p == i:
            raise InvalidSkeletonError(f"bone {i} is its own parent (cycle)")
        if p < 0:
            raise InvalidSkeletonError(f"bone {i} is a second root")
        if p >= len(parents):
            raise InvalidSkeletonError(f"bone {i} has out-of-range parent {p}")
        if p > i:
            # follow the chain to tell a cycle from a mere ordering problem
            seen, cur = {i}, p
            while cur > 0:
                if cur in seen:
                    raise InvalidSkeletonError(f"parent array has a cycle through bone {i}")
                seen.add(cur)
                cur = parents[cur]
            raise InvalidSkeletonError(f"bone {i} precedes its parent {p}; bones must be topologically ordered")


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def _drx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[0, 0, 0], [0, -s, -c], [0, c, -s]])


def _dry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[-s, 0, c], [0, 0, 0], [-c, 0, -s]])


def _drz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[-s, -c, 0], [c, -s, 0], [0, 0, 0]])


def euler_to_matrix(omega) -> np.ndarray:
    ax, ay, az = np.asarray(omega, dtype=np.float64)
    return _rz(az) @ _ry(ay) @ _rx(ax)


def euler_backward(omega, grad_R) -> np.ndarray:
    ax, ay, az = np.asarray(omega, dtype=np.float64)
    Rx, Ry, Rz = _rx(ax), _ry(ay), _rz(az)
    return np.array([
        np.sum(grad_R * (Rz @ Ry @ _drx(ax))),
        np.sum(grad_R * (Rz @ _dry(ay) @ Rx)),
        np.sum(grad_R * (_drz(az) @ Ry @ Rx)),
    ])


def _check_pose(skel: Skeleton, pose: Pose) -> None:
    if pose.omega.shape[0] != skel.n_bones:
        raise InvalidParameterError(
            f"pose has {pose.omega.shape[0]} rotations for a {skel.n_bones}-bone skeleton")


def compute_bone_transforms(skel: Skeleton, pose: Pose) -> np.ndarray:
    """Canonical-to-posed 4x4 transforms ``B_k = B_posed,k @ inv(B_can,k)``."""
    _check_pose(skel, pose)
    validate_parents(skel.parents)
    nb = skel.n_bones
    Rw = np.zeros((nb, 3, 3))
    tw = np.zeros((nb, 3))
    P = skel.canonical_joint_positions()
    for k in range(nb):
        E = euler_to_matrix(pose.omega[k])
        p = skel.parents[k]
        if p < 0:
            Rw[k] = E
            tw[k] = skel.joints[k] + pose.translation
        else:
            Rw[k] = Rw[p] @ E
            tw[k] = Rw[p] @ skel.joints[k] + tw[p]
    B = np.zeros((nb, 4, 4))
    B[:, :3, :3] = Rw
    # inverse canonical transform is a pure translation by -P
    B[:, :3, 3] = tw - np.einsum("kij,kj->ki", Rw, P)
    B[:, 3, 3] = 1.0
    return B


def compute_bone_transforms_backward(skel: Skeleton, pose: Pose, grad_B: np.ndarray):
    """Gradients of a scalar w.r.t. (joints, omega, translation) given dL/dB.

    Only the upper 3x4 block of ``grad_B`` is used.
    """
    nb = skel.n_bones
    Rw = np.zeros((nb, 3, 3))
    tw = np.zeros((nb, 3))
    E = np.zeros((nb, 3, 3))
    P = skel.canonical_joint_positions()
    for k in range(nb):
        E[k] = euler_to_matrix(pose.omega[k])
        p = skel.parents[k]
        if p < 0:
            Rw[k], tw[k] = E[k], skel.joints[k] + pose.translation
        else:
            Rw[k], tw[k] = Rw[p] @ E[k], Rw[p] @ skel.joints[k] + tw[p]

    gL = grad_B[:, :3, :3]
    gtau = grad_B[:, :3, 3]
    g_Rw = gL - np.einsum("ki,kj->kij", gtau, P)
    g_tw = gtau.copy()
    g_P = -np.einsum("kji,kj->ki", Rw, gtau)
    g_J = np.zeros((nb, 3))
    g_omega = np.zeros((nb, 3))
    g_T = np.zeros(3)
    for k in range(nb - 1, -1, -1):
        p = skel.parents[k]
        if p < 0:
            g_omega[k] = euler_backward(pose.omega[k], g_Rw[k])
            g_T += g_tw[k]
            g_J[k] += g_tw[k] + g_P[k]
        else:
            g_E = Rw[p].T @ g_Rw[k]
            g_omega[k] = euler_backward(pose.omega[k], g_E)
            g_Rw[p] += g_Rw[k] @ E[k].T + np.outer(g_tw[k], skel.joints[k])
            g_J[k] += Rw[p].T @ g_tw[k] + g_P[k]
            g_tw[p] += g_tw[k]
            g_P[p] += g_P[k]
    return g_J, g_omega, g_T


def _as_sparse(w):
    """Accept ``[(bone, weight), ...]`` or a dense weight vector."""
    if isinstance(w, dict):
        return np.array(list(w.keys()), dtype=np.int64), np.array(list(w.values()), dtype=np.float64)
    w = list(w)
    if w and np.ndim(w[0]) == 1:
        idx = np.array([int(b) for b, _ in w], dtype=np.int64)
        wt = np.array([float(v) for _, v in w], dtype=np.float64)
        return idx, wt
    dense = np.asarray(w, dtype=np.float64)
    return np.arange(len(dense)), dense


def blend_transform(w, B: np.ndarray) -> np.ndarray:
    idx, wt = _as_sparse(w)
    return np.einsum("k,kij->ij", wt, B[idx])


def deform_point(x_c, w, B) -> np.ndarray:
    A = blend_transform(w, B)
    return A[:3, :3] @ np.asarray(x_c, dtype=np.float64) + A[:3, 3]


def deform_rotation(R_c, w, B) -> np.ndarray:
    A = blend_transform(w, B)
    return A[:3, :3] @ np.asarray(R_c, dtype=np.float64)


def canonicalize_direction(d_t, w, B, return_flag: bool = False):
    """Map a posed-space view direction back through the inverse blend.

    When the blended linear part is singular the direction is passed through
    unchanged; with ``return_flag`` the second return value reports that case.
    """
    A = blend_transform(w, B)[:3, :3]
    d_t = np.asarray(d_t, dtype=np.float64)
    if abs(np.linalg.det(A)) <= SINGULAR_DET:
        out, flag = d_t / np.linalg.norm(d_t), True
    else:
        u = np.linalg.solve(A, d_t)
        out, flag = u / np.linalg.norm(u), False
    return (out, flag) if return_flag else out


# --- batched forms used by the renderer -------------------------------------

def blend_transforms(skin_idx: np.ndarray, skin_w: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Per-point blended affine maps, (N, 3, 4)."""
    return np.einsum("nk,nkij->nij", skin_w, B[skin_idx, :3, :])


def blend_transforms_backward(skin_idx, skin_w, grad_A: np.ndarray, n_bones: int) -> np.ndarray:
    g = np.zeros((n_bones, 4, 4))
    contrib = skin_w[:, :, None, None] * grad_A[:, None, :, :]
    np.add.at(g[:, :3, :], skin_idx.reshape(-1), contrib.reshape(-1, 3, 4))
    return g


def invert_linear(L: np.ndarray):
    """Batched inverse of 3x3 maps plus a singular mask; singular rows get identity."""
    det = np.linalg.det(L)
    singular = np.abs(det) <= SINGULAR_DET
    Ls = L.copy()
    Ls[singular] = np.eye(3)
    return np.linalg.inv(Ls), singular
