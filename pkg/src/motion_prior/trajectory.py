"""Root trajectory: per-frame root velocity from joint positions, integrated to a path."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tc
from .data import MotionClip, root_velocity, window_starts
from .optim import Adam
from .skeleton import NeighborTable, PoolingPlan, Skeleton, init_pair_weights, neighbors_within, pooling_hierarchy, \
    skeleton_conv, skeleton_pool
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrajectoryConfig:
    widths: tuple[int, ...] = (32, 32, 64, 64)
    distance: int = 2
    kernel: int = 3
    slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) != 4:
            raise ValueError("the trajectory network has four skeleton convolution layers")


@dataclass
class TrajectoryModel:
    config: TrajectoryConfig
    skeleton: Skeleton
    params: dict[str, Tensor] = field(default_factory=dict)

    def __post_init__(self):
        self.plans: list[PoolingPlan] = pooling_hierarchy(self.skeleton, 4)
        self.neighbors: list[NeighborTable] = [neighbors_within(p.source, self.config.distance) for p in self.plans]

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def descriptor(self) -> dict:
        return {
            "kind": "trajectory",
            "config": asdict(self.config),
            "skeleton": self.skeleton.to_dict(),
            "params": [[n, list(t.shape)] for n, t in self.params.items()],
        }


def make_trajectory_model(config: TrajectoryConfig, skeleton: Skeleton, seed: int = 0,
                          dtype=np.float32) -> TrajectoryModel:
    model = TrajectoryModel(config, skeleton)
    rng = np.random.default_rng(seed)
    k = config.kernel
    chans = [3] + list(config.widths)
    for l in range(4):
        w, b = init_pair_weights(rng, model.neighbors[l], k, chans[l], chans[l + 1], dtype)
        model.params[f"conv{l + 1}.w"] = Tensor(w, requires_grad=True)
        model.params[f"conv{l + 1}.b"] = Tensor(b, requires_grad=True)
    feat = model.plans[-1].n_groups * chans[-1]
    bound = 1.0 / np.sqrt(feat)
    model.params["out.w"] = Tensor(rng.uniform(-bound, bound, (feat, 3)).astype(dtype), requires_grad=True)
    model.params["out.b"] = Tensor(np.zeros(3, dtype=dtype), requires_grad=True)
    return model


def predict_root_velocity(model: TrajectoryModel, P) -> Tensor:
    """Root velocity ``[..., T, 3]`` from root-relative joint positions ``[..., T, J, 3]``."""
    P = tc.as_tensor(P)
    if P.shape[-2:] != (model.skeleton.n_joints, 3):
        raise ValueError(f"positions have shape {P.shape}, expected [..., T, {model.skeleton.n_joints}, 3]")
    p = model.params
    h = Tensor(P.data.astype(model.dtype)) if not P.requires_grad else P
    for l in range(4):
        h = skeleton_conv(h, p[f"conv{l + 1}.w"], p[f"conv{l + 1}.b"], model.neighbors[l], 1)
        h = skeleton_pool(h, model.plans[l])
        h = tc.leaky_relu(h, model.config.slope)
    flat = h.reshape(h.shape[:-2] + (h.shape[-2] * h.shape[-1],))
    return tc.linear(flat, p["out.w"], p["out.b"])


def integrate_trajectory(V):
    """Inclusive prefix sum over time: ``G_t = sum_{i<=t} V_i``."""
    if isinstance(V, Tensor):
        return tc.cumsum(V, axis=V.ndim - 2)
    return np.cumsum(np.asarray(V), axis=-2)


def trajectory_loss(V_pred, V, G_pred, G) -> Tensor:
    """Sum over frames of squared velocity error plus squared position error, batch-averaged."""
    V_pred, G_pred = tc.as_tensor(V_pred), tc.as_tensor(G_pred)
    V = np.asarray(V.data if isinstance(V, Tensor) else V)
    G = np.asarray(G.data if isinstance(G, Tensor) else G)
    if V_pred.shape != V.shape or G_pred.shape != G.shape:
        raise ValueError(f"shape mismatch: {V_pred.shape}/{V.shape}, {G_pred.shape}/{G.shape}")
    dv = V_pred - V
    dg = G_pred - G
    B = V.size // (V.shape[-1] * V.shape[-2])
    return ((dv * dv).sum() + (dg * dg).sum()) * (1.0 / B)


def trajectory_windows(clips: list[MotionClip], T: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Root-relative joint positions ``[N, T, J, 3]`` and root velocities ``[N, T, 3]``."""
    Ps, Vs = [], []
    for clip in clips:
        P = clip.positions(with_translation=False)
        V = root_velocity(clip.root_translation)
        for s in window_starts(len(clip), T, stride):
            Ps.append(P[s:s + T])
            Vs.append(V[s:s + T])
    return np.stack(Ps), np.stack(Vs)


@dataclass
class TrajectoryTrainConfig:
    batch: int = 8
    iters: int = 1000
    lr: float = 1e-3
    seed: int = 0


def train_trajectory(model: TrajectoryModel, P: np.ndarray, V: np.ndarray,
                     cfg: TrajectoryTrainConfig) -> tuple[TrajectoryModel, list[dict]]:
    """Fit on ground-truth positions (teacher forcing); returns the model and a loss log."""
    if len(P) == 0:
        raise ValueError("empty trajectory dataset")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(list(model.params.values()), lr=cfg.lr)
    G = integrate_trajectory(V)
    history = []
    n = len(P)
    b = min(cfg.batch, n)
    perm, pos = rng.permutation(n), 0
    for it in range(cfg.iters):
        if pos + b > n:
            perm, pos = rng.permutation(n), 0
        idx = perm[pos:pos + b]
        pos += b
        opt.zero_grad()
        Vp = predict_root_velocity(model, Tensor(P[idx].astype(model.dtype)))
        loss = trajectory_loss(Vp, V[idx].astype(model.dtype), integrate_trajectory(Vp), G[idx].astype(model.dtype))
        if not np.isfinite(loss.item()):
            raise FloatingPointError(f"non-finite trajectory loss at iteration {it}")
        tc.backward(loss)
        opt.step()
        history.append({"iter": it, "loss": loss.item()})
    return model, history


def velocity_mse(model: TrajectoryModel, P: np.ndarray, V: np.ndarray) -> float:
    Vp = predict_root_velocity(model, Tensor(np.asarray(P, dtype=model.dtype))).data
    return float(np.mean((Vp - V) ** 2))


def trajectory_csv(V: np.ndarray, G: np.ndarray) -> str:
    lines = ["t,vx,vy,vz,gx,gy,gz"]
    for t, (v, g) in enumerate(zip(V, G)):
        lines.append(",".join([str(t)] + [f"{x:.9g}" for x in (*v, *g)]))
    return "\n".join(lines) + "\n"
