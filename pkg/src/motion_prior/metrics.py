"""Pose and motion error metrics. Positions are metres in, millimetres out."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .kinematics import global_rotations
from .rotation import matrix_to_quat
from .skeleton import Skeleton


def _check_same(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return pred, gt


def mpjpe(pred: np.ndarray, gt: np.ndarray, root: int = 0) -> float:
    """Mean per-joint position error after aligning the root joint per frame, in mm.

    The alignment joint itself is left out of the mean (it is zero by
    construction) unless it is the only joint.
    """
    pred, gt = _check_same(pred, gt)
    pred = pred - pred[..., root:root + 1, :]
    gt = gt - gt[..., root:root + 1, :]
    err = np.linalg.norm(pred - gt, axis=-1)
    if err.shape[-1] > 1:
        err = np.delete(err, root, axis=-1)
    return float(err.mean() * 1000.0)


def procrustes_align(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Similarity transform of ``pred`` (``[J, 3]``) that best matches ``gt`` in least squares."""
    mu_p, mu_g = pred.mean(0), gt.mean(0)
    X, Y = pred - mu_p, gt - mu_g
    var = (X * X).sum()
    if var < 1e-12:
        raise ValueError("degenerate frame: all predicted joints coincide")
    U, S, Vt = np.linalg.svd(X.T @ Y)
    if np.linalg.matrix_rank(X, tol=1e-9) < 2 or np.linalg.matrix_rank(Y, tol=1e-9) < 2:
        raise ValueError("degenerate frame: joints are collinear")
    d = np.sign(np.linalg.det(U @ Vt))
    D = np.diag([1.0, 1.0, d])
    R = U @ D @ Vt                      # X @ R ~ Y
    s = (S * np.diag(D)).sum() / var
    return s * X @ R + mu_g


def pa_mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
    """MPJPE after per-frame similarity Procrustes alignment, in mm."""
    pred, gt = _check_same(pred, gt)
    P = pred.reshape(-1, *pred.shape[-2:])
    G = gt.reshape(-1, *gt.shape[-2:])
    aligned = np.stack([procrustes_align(p, g) for p, g in zip(P, G)])
    return float(np.linalg.norm(aligned - G, axis=-1).mean() * 1000.0)


def accel_metrics(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """Mean acceleration magnitude of ``pred`` and mean acceleration error, mm/frame^2.

    The time axis is the third from last: ``[..., T, J, 3]``.
    """
    pred, gt = _check_same(pred, gt)
    if pred.shape[-3] < 3:
        raise ValueError("acceleration needs at least 3 frames")

    def acc(p):
        return p[..., 2:, :, :] - 2 * p[..., 1:-1, :, :] + p[..., :-2, :, :]

    a_pred, a_gt = acc(pred), acc(gt)
    accel = np.linalg.norm(a_pred, axis=-1).mean() * 1000.0
    err = np.linalg.norm(a_pred - a_gt, axis=-1).mean() * 1000.0
    return float(accel), float(err)


def global_quat_loss(pred_rot: np.ndarray, gt_rot: np.ndarray, skeleton: Skeleton) -> float:
    """Mean L2 distance between hemisphere-canonical global joint quaternions."""
    pred_rot, gt_rot = _check_same(pred_rot, gt_rot)
    qp = matrix_to_quat(global_rotations(pred_rot, skeleton), check=False)
    qg = matrix_to_quat(global_rotations(gt_rot, skeleton), check=False)
    return float(np.linalg.norm(qp - qg, axis=-1).mean())


@dataclass
class MetricReport:
    mpjpe: float
    pa_mpjpe: float
    accel: float
    accel_err: float
    global_quat: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate(pred_rot: np.ndarray, gt_rot: np.ndarray, skeleton: Skeleton, fps: float | None = None,
             pred_pos: np.ndarray | None = None, gt_pos: np.ndarray | None = None) -> MetricReport:
    """All metrics for a pair of local-rotation sequences ``[T, J, 3, 3]``.

    Positions default to zero-translation forward kinematics. When ``fps`` is
    given, accelerations are converted from per-frame^2 to per-second^2.
    """
    from .kinematics import forward_kinematics

    if pred_pos is None:
        pred_pos = forward_kinematics(pred_rot, skeleton)
    if gt_pos is None:
        gt_pos = forward_kinematics(gt_rot, skeleton)
    root = skeleton.root
    acc, acc_err = accel_metrics(pred_pos, gt_pos)
    if fps is not None:
        acc, acc_err = acc * fps * fps, acc_err * fps * fps
    return MetricReport(
        mpjpe=mpjpe(pred_pos, gt_pos, root),
        pa_mpjpe=pa_mpjpe(pred_pos, gt_pos),
        accel=acc,
        accel_err=acc_err,
        global_quat=global_quat_loss(pred_rot, gt_rot, skeleton),
    )
