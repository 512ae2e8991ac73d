"""Differentiable forward kinematics."""
from __future__ import annotations

import numpy as np

from .rotation import rot6d_to_matrix
from .skeleton import Skeleton
from .tensor import Tensor, _make, as_tensor


def _fk_numpy(R: np.ndarray, root: np.ndarray, skeleton: Skeleton, order: list[int]):
    offsets = skeleton.offsets.astype(R.dtype)
    G = np.empty_like(R)
    P = np.empty(R.shape[:-1], dtype=R.dtype)
    for j in order:
        p = skeleton.parents[j]
        if p < 0:
            G[..., j, :, :] = R[..., j, :, :]
            P[..., j, :] = root
        else:
            G[..., j, :, :] = G[..., p, :, :] @ R[..., j, :, :]
            P[..., j, :] = P[..., p, :] + G[..., p, :, :] @ offsets[j]
    return G, P


def global_rotations(R: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    """Compose local rotations ``[..., J, 3, 3]`` root-first into world-frame rotations."""
    R = np.asarray(R)
    G, _ = _fk_numpy(R, np.zeros(R.shape[:-3] + (3,), dtype=R.dtype), skeleton, skeleton.topological_order())
    return G


def forward_kinematics(rotations, skeleton: Skeleton, root_translation=None):
    """World-space joint positions from local joint rotations.

    ``rotations`` is ``[..., J, 3, 3]`` or ``[..., J, 6]`` (6D), as a
    ``Tensor`` or array. The root joint's rotation is the global orientation.
    ``root_translation`` (``[..., 3]``) defaults to zero. Returns ``[..., J, 3]``
    of the same kind as ``rotations``.
    """
    is_tensor = isinstance(rotations, Tensor)
    R = rotations if is_tensor else Tensor(np.asarray(rotations))
    if R.shape[-1] == 6:
        R = rot6d_to_matrix(R)
    if R.shape[-3] != skeleton.n_joints:
        raise ValueError(f"pose has {R.shape[-3]} joints, skeleton has {skeleton.n_joints}")
    lead = R.shape[:-3]
    if root_translation is None:
        root = Tensor(np.zeros(lead + (3,), dtype=R.dtype))
    else:
        root = as_tensor(root_translation, R)
        if root.shape != lead + (3,):
            root = root + Tensor(np.zeros(lead + (3,), dtype=R.dtype))
    order = skeleton.topological_order()
    offsets = skeleton.offsets.astype(R.dtype)
    G, P = _fk_numpy(R.data, root.data, skeleton, order)

    def bw(gP):
        gP = gP.copy()
        gG = np.zeros_like(G)
        gR = np.zeros_like(R.data)
        groot = None
        for j in reversed(order):
            p = skeleton.parents[j]
            if p < 0:
                gR[..., j, :, :] = gG[..., j, :, :]
                groot = gP[..., j, :]
                continue
            Gp = G[..., p, :, :]
            gR[..., j, :, :] = np.swapaxes(Gp, -1, -2) @ gG[..., j, :, :]
            gG[..., p, :, :] += gG[..., j, :, :] @ np.swapaxes(R.data[..., j, :, :], -1, -2)
            gP[..., p, :] += gP[..., j, :]
            gG[..., p, :, :] += gP[..., j, :, None] * offsets[j]
        return gR, groot

    out = _make(P, (R, root), bw, "forward_kinematics")
    return out if is_tensor else out.data
