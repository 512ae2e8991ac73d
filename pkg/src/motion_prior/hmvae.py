"""Hierarchical motion VAE with local and global latent spaces.

The encoder is four blocks of skeleton convolution, skeleton pooling and
LeakyReLU. A linear head after the first block gives the local posterior and
one after the last block gives the global posterior. The decoder mirrors the
encoder (upsample, unpool, skeleton convolution); the decoded global path is
concatenated channel-wise with the local path before the final block.

Two ablations share the code path: ``M-VAE`` drops the local latent and
``TCN-VAE`` replaces the skeleton operators by plain temporal convolution over
flattened joint channels.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator

import numpy as np

from . import tensor as tc
from .kinematics import forward_kinematics
from .optim import Adam
from .rotation import rot6d_to_matrix
from .skeleton import NeighborTable, PoolingPlan, Skeleton, init_pair_weights, neighbors_within, pooling_hierarchy, \
    skeleton_conv, skeleton_pool, skeleton_unpool
from .tensor import Tensor

log = logging.getLogger(__name__)

VARIANTS = ("HM-VAE", "M-VAE", "TCN-VAE")


@dataclass(frozen=True)
class ArchConfig:
    variant: str = "HM-VAE"
    window: int = 64
    widths: tuple[int, ...] = (32, 64, 128, 256)
    strides: tuple[int, ...] = (2, 2, 2, 2)
    distance: int = 2
    kernel: int = 3
    latent_local: int = 64
    latent_global: int = 64
    slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if len(self.widths) != 4 or len(self.strides) != 4:
            raise ValueError("the encoder has exactly four blocks: need 4 widths and 4 strides")
        if self.window % int(np.prod(self.strides)) != 0:
            raise ValueError(f"window {self.window} is not divisible by the stride product {self.strides}")

    @property
    def hierarchical(self) -> bool:
        return self.variant == "HM-VAE"

    def frames_per_level(self) -> list[int]:
        t, out = self.window, [self.window]
        for s in self.strides:
            t //= s
            out.append(t)
        return out


def toy_arch(variant: str = "HM-VAE", window: int = 16) -> ArchConfig:
    """Desk-scale architecture used by the tests and the toy experiments."""
    return ArchConfig(variant=variant, window=window, widths=(16, 32, 32, 64),
                      latent_local=16, latent_global=16)


def refine_arch(variant: str = "HM-VAE", **overrides) -> ArchConfig:
    """Short-window model used for sliding-window refinement."""
    return ArchConfig(**{"variant": variant, "window": 8, "strides": (2, 2, 1, 1), **overrides})


@dataclass
class GaussianParams:
    mu: Tensor
    log_var: Tensor

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var.data)


@dataclass
class LatentPair:
    z_l: Tensor | None
    z_g: Tensor


@dataclass
class HmVaeModel:
    arch: ArchConfig
    skeleton: Skeleton
    params: dict[str, Tensor] = field(default_factory=dict)

    def __post_init__(self):
        self.plans: list[PoolingPlan] = pooling_hierarchy(self.skeleton, 4)
        # block l convolves on the topology before its pooling step
        self.neighbors: list[NeighborTable] = [neighbors_within(p.source, self.arch.distance) for p in self.plans]

    # -- descriptor ----------------------------------------------------------------
    @property
    def joints_per_level(self) -> list[int]:
        return [self.plans[0].n_source] + [p.n_groups for p in self.plans]

    def tcn_channels(self) -> list[int]:
        """Flattened channel counts per level; same feature-map sizes as the skeleton variants."""
        J = self.joints_per_level
        return [6 * J[0]] + [J[l + 1] * w for l, w in enumerate(self.arch.widths)]

    def descriptor(self) -> dict:
        desc = {
            "kind": "hmvae",
            "arch": asdict(self.arch),
            "skeleton": self.skeleton.to_dict(),
            "joints_per_level": self.joints_per_level,
            "frames_per_level": self.arch.frames_per_level(),
            "params": [[name, list(t.shape)] for name, t in self.params.items()],
        }
        if self.arch.variant != "TCN-VAE":
            desc["pooling"] = [[list(g) for g in p.groups] for p in self.plans]
        return desc

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def parameters(self, prefix: str | tuple[str, ...] = "") -> list[Tensor]:
        return [t for n, t in self.params.items() if n.startswith(prefix)]

    def decoder_names(self) -> list[str]:
        return [n for n in self.params if n.startswith("dec")]

    def clone(self) -> "HmVaeModel":
        out = copy.copy(self)
        out.params = {n: Tensor(t.data.copy(), requires_grad=True) for n, t in self.params.items()}
        return out

    def n_parameters(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    @property
    def feature_dims(self) -> tuple[int, int]:
        """Flattened sizes of the post-B1 and post-B4 feature maps."""
        T = self.arch.frames_per_level()
        J = self.joints_per_level
        w = self.arch.widths
        return T[1] * J[1] * w[0], T[4] * J[4] * w[3]


def make_variant(arch: ArchConfig, skeleton: Skeleton, variant: str | None = None, seed: int = 0,
                 dtype=np.float32) -> HmVaeModel:
    """Build and initialise a model; ``variant`` overrides ``arch.variant``."""
    if variant is not None:
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
        arch = replace(arch, variant=variant)
    model = HmVaeModel(arch, skeleton)
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)

    k = arch.kernel
    chans = [6] + list(arch.widths)
    J = model.joints_per_level
    T = arch.frames_per_level()
    f_local, f_global = model.feature_dims
    p = model.params

    if arch.variant == "TCN-VAE":
        tchans = model.tcn_channels()
        for l in range(4):
            p[f"enc{l + 1}.w"] = uniform((k, tchans[l], tchans[l + 1]), k * tchans[l])
            p[f"enc{l + 1}.b"] = uniform((tchans[l + 1],), k * tchans[l])
    else:
        for l in range(4):
            w, b = init_pair_weights(rng, model.neighbors[l], k, chans[l], chans[l + 1], dtype)
            p[f"enc{l + 1}.w"] = Tensor(w, requires_grad=True)
            p[f"enc{l + 1}.b"] = Tensor(b, requires_grad=True)

    dh_g = arch.latent_global
    p["head_global.w"] = uniform((f_global, 2 * dh_g), f_global)
    p["head_global.b"] = uniform((2 * dh_g,), f_global)
    if arch.hierarchical:
        dh_l = arch.latent_local
        p["head_local.w"] = uniform((f_local, 2 * dh_l), f_local)
        p["head_local.b"] = uniform((2 * dh_l,), f_local)

    p["dec_global_in.w"] = uniform((dh_g, f_global), dh_g)
    p["dec_global_in.b"] = uniform((f_global,), dh_g)
    if arch.hierarchical:
        p["dec_local_in.w"] = uniform((arch.latent_local, f_local), arch.latent_local)
        p["dec_local_in.b"] = uniform((f_local,), arch.latent_local)

    for l in range(4, 0, -1):
        if arch.variant == "TCN-VAE":
            tchans = model.tcn_channels()
            cin, cout = tchans[l], tchans[l - 1]
            p[f"dec{l}.w"] = uniform((k, cin, cout), k * cin)
            p[f"dec{l}.b"] = uniform((cout,), k * cin)
        else:
            cin = chans[l] * (2 if (l == 1 and arch.hierarchical) else 1)
            cout = chans[l - 1]
            w, b = init_pair_weights(rng, model.neighbors[l - 1], k, cin, cout, dtype)
            p[f"dec{l}.w"] = Tensor(w, requires_grad=True)
            p[f"dec{l}.b"] = Tensor(b, requires_grad=True)
    return model


# -- forward passes ------------------------------------------------------------------

def _check_window(model: HmVaeModel, x: Tensor) -> None:
    T, J = model.arch.window, model.skeleton.n_joints
    if x.shape[-3:] != (T, J, 6):
        raise ValueError(f"motion window has shape {x.shape[-3:]}, model expects ({T}, {J}, 6)")


def _split_gaussian(h: Tensor) -> GaussianParams:
    d = h.shape[-1] // 2
    return GaussianParams(h[..., :d], h[..., d:])


def encode_features(model: HmVaeModel, x: Tensor) -> tuple[Tensor, Tensor]:
    """Post-B1 and post-B4 feature maps."""
    a = model.arch
    p = model.params
    h = x
    feats = []
    if a.variant == "TCN-VAE":
        h = h.reshape(h.shape[:-2] + (h.shape[-2] * h.shape[-1],))
        for l in range(4):
            h = tc.conv1d_temporal(h, p[f"enc{l + 1}.w"], p[f"enc{l + 1}.b"], stride=a.strides[l])
            h = tc.leaky_relu(h, a.slope)
            feats.append(h)
    else:
        for l in range(4):
            h = skeleton_conv(h, p[f"enc{l + 1}.w"], p[f"enc{l + 1}.b"], model.neighbors[l], a.strides[l])
            h = skeleton_pool(h, model.plans[l])
            h = tc.leaky_relu(h, a.slope)
            feats.append(h)
    return feats[0], feats[3]


def _flatten(h: Tensor) -> Tensor:
    B = h.shape[0]
    return h.reshape(B, h.size // B)


def encode(model: HmVaeModel, x, with_local: bool = True) -> tuple[GaussianParams | None, GaussianParams]:
    """Posterior parameters ``(local, global)`` for a batch ``[B, T, J, 6]``.

    ``local`` is ``None`` for single-latent variants or when ``with_local`` is
    false (the warm-up phase of training).
    """
    x = tc.as_tensor(x)
    squeeze = x.ndim == 3
    if squeeze:
        x = x.reshape((1,) + x.shape)
    _check_window(model, x)
    f_local, f_global = encode_features(model, x)
    p = model.params
    g = _split_gaussian(tc.linear(_flatten(f_global), p["head_global.w"], p["head_global.b"]))
    loc = None
    if model.arch.hierarchical and with_local:
        loc = _split_gaussian(tc.linear(_flatten(f_local), p["head_local.w"], p["head_local.b"]))
    if squeeze:
        g = GaussianParams(g.mu[0], g.log_var[0])
        if loc is not None:
            loc = GaussianParams(loc.mu[0], loc.log_var[0])
    return loc, g


def reparameterize(params: GaussianParams, noise) -> Tensor:
    """``mu + exp(log_var / 2) * noise``."""
    noise = np.asarray(noise.data if isinstance(noise, Tensor) else noise)
    if noise.shape != params.mu.shape:
        raise ValueError(f"noise shape {noise.shape} does not match latent shape {params.mu.shape}")
    sigma = tc.exp(params.log_var * 0.5)
    return params.mu + sigma * Tensor(noise.astype(params.mu.dtype))


def decode(model: HmVaeModel, z: LatentPair) -> Tensor:
    """Latent codes (batched ``[B, d_h]`` or single ``[d_h]``) to a motion window ``[B, T, J, 6]``."""
    a = model.arch
    p = model.params
    zg = tc.as_tensor(z.z_g)
    squeeze = zg.ndim == 1
    if squeeze:
        zg = zg.reshape(1, -1)
    if zg.shape[-1] != a.latent_global:
        raise ValueError(f"global latent has dim {zg.shape[-1]}, model expects {a.latent_global}")
    B = zg.shape[0]
    T = a.frames_per_level()
    J = model.joints_per_level
    w = (6,) + a.widths
    tcn = a.variant == "TCN-VAE"

    h = tc.linear(zg, p["dec_global_in.w"], p["dec_global_in.b"])
    h = h.reshape((B, T[4], J[4] * w[4])) if tcn else h.reshape((B, T[4], J[4], w[4]))
    for l in range(4, 0, -1):
        if l == 1 and a.hierarchical:
            zl = z.z_l
            if zl is None:
                zl = Tensor(np.zeros((B, a.latent_local), dtype=model.dtype))
            zl = tc.as_tensor(zl)
            if zl.ndim == 1:
                zl = zl.reshape(1, -1)
            if zl.shape[-1] != a.latent_local:
                raise ValueError(f"local latent has dim {zl.shape[-1]}, model expects {a.latent_local}")
            loc = tc.linear(zl, p["dec_local_in.w"], p["dec_local_in.b"]).reshape((B, T[1], J[1], w[1]))
            h = tc.concat([h, loc], axis=-1)
        h = tc.upsample_temporal(h, a.strides[l - 1]) if tcn else _upsample_bones(h, a.strides[l - 1])
        if tcn:
            h = tc.conv1d_temporal(h, p[f"dec{l}.w"], p[f"dec{l}.b"], stride=1)
        else:
            h = skeleton_unpool(h, model.plans[l - 1])
            h = skeleton_conv(h, p[f"dec{l}.w"], p[f"dec{l}.b"], model.neighbors[l - 1], 1)
        if l > 1:
            h = tc.leaky_relu(h, a.slope)
    if tcn:
        h = h.reshape((B, a.window, model.skeleton.n_joints, 6))
    return h[0] if squeeze else h


def _upsample_bones(h: Tensor, factor: int) -> Tensor:
    # [B, T, J, C] -> repeat along T
    if factor == 1:
        return h
    B, T, J, C = h.shape
    return tc.upsample_temporal(h.reshape(B, T, J * C), factor).reshape(B, T * factor, J, C)


# -- losses ----------------------------------------------------------------------------

def kl_divergence(params: GaussianParams) -> Tensor:
    """KL(N(mu, sigma) || N(0, I)) summed over latent dims, averaged over the batch."""
    mu, lv = params.mu, params.log_var
    per = (mu * mu + tc.exp(lv) - 1.0 - lv) * 0.5
    if per.ndim == 1:
        return per.sum()
    return per.sum() * (1.0 / per.shape[0])


@dataclass
class Targets:
    """Constant reconstruction targets precomputed from a ground-truth window batch."""

    x: np.ndarray
    R: np.ndarray
    P: np.ndarray

    @classmethod
    def from_windows(cls, x: np.ndarray, skeleton: Skeleton, dtype=np.float32) -> "Targets":
        x = np.asarray(x, dtype=np.float64)
        R = rot6d_to_matrix(x)
        P = forward_kinematics(R, skeleton)
        return cls(x.astype(dtype), R.astype(dtype), P.astype(dtype))


def reconstruction_loss(x_rec: Tensor, targets: Targets, skeleton: Skeleton, lam: float,
                        entry_mask: np.ndarray | None = None, position_mask: np.ndarray | None = None
                        ) -> tuple[Tensor, dict[str, float]]:
    """``L_6d + L_rot + lam * L_joints`` summed over frames, averaged over the batch.

    Masks are ``[..., T, J]`` booleans selecting which (frame, joint) entries
    count towards the rotation terms and the joint-position term.
    """
    B = x_rec.shape[0] if x_rec.ndim == 4 else 1
    R_rec = rot6d_to_matrix(x_rec)
    P_rec = forward_kinematics(R_rec, skeleton)
    d6 = x_rec - targets.x
    dR = R_rec - targets.R
    dP = P_rec - targets.P
    if entry_mask is not None:
        m = np.asarray(entry_mask, dtype=x_rec.dtype)
        d6 = d6 * m[..., None]
        dR = dR * m[..., None, None]
    if position_mask is not None:
        dP = dP * np.asarray(position_mask, dtype=x_rec.dtype)[..., None]
    l6d = (d6 * d6).sum() * (1.0 / B)
    lrot = (dR * dR).sum() * (1.0 / B)
    lj = (dP * dP).sum() * (1.0 / B)
    total = l6d + lrot + lj * lam
    return total, {"l6d": l6d.item(), "lrot": lrot.item(), "ljoints": lj.item()}


def loss_total(model: HmVaeModel, x, x_rec: Tensor, params_l: GaussianParams | None,
               params_g: GaussianParams | None, beta: float = 0.003, lam: float = 10.0,
               targets: Targets | None = None) -> tuple[Tensor, dict[str, float]]:
    """Reconstruction terms plus beta-weighted KL for each latent that is present."""
    if targets is None:
        xd = x.data if isinstance(x, Tensor) else np.asarray(x)
        targets = Targets.from_windows(xd, model.skeleton, x_rec.dtype)
    total, comps = reconstruction_loss(x_rec, targets, model.skeleton, lam)
    comps["kl_l"] = comps["kl_g"] = 0.0
    for key, prm in (("kl_l", params_l), ("kl_g", params_g)):
        if prm is None:
            continue
        kl = kl_divergence(prm)
        comps[key] = kl.item()
        total = total + kl * beta
    comps["total"] = total.item()
    if not np.isfinite(comps["total"]):
        raise FloatingPointError(f"non-finite loss: {comps}")
    return total, comps


# -- training ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    batch: int = 8
    iters: int = 2000
    beta: float = 0.003
    lam: float = 10.0
    switch_iter: int = 500
    lr: float = 1e-4
    seed: int = 0


def _batches(n: int, batch: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    while True:
        perm = rng.permutation(n)
        for s in range(0, n - batch + 1 if n >= batch else 1, batch):
            yield perm[s:s + batch]


def training_step(model: HmVaeModel, xb: np.ndarray, iteration: int, cfg: TrainConfig,
                  rng: np.random.Generator, targets: Targets | None = None
                  ) -> tuple[Tensor, dict[str, float]]:
    x = Tensor(xb.astype(model.dtype))
    local_on = model.arch.hierarchical and iteration >= cfg.switch_iter
    pl, pg = encode(model, x, with_local=local_on)
    zg = reparameterize(pg, rng.standard_normal(pg.mu.shape))
    zl = reparameterize(pl, rng.standard_normal(pl.mu.shape)) if pl is not None else None
    x_rec = decode(model, LatentPair(zl, zg))
    return loss_total(model, x, x_rec, pl, pg, cfg.beta, cfg.lam, targets)


def train(model: HmVaeModel, dataset: np.ndarray, cfg: TrainConfig) -> tuple[HmVaeModel, list[dict]]:
    """Optimise ``model`` in place on windows ``[N, T, J, 6]``; returns the model and a per-iteration log.

    Before ``cfg.switch_iter`` only the global latent is trained: the local
    latent is pinned to the prior mean and the local head is left out of the
    graph, so it receives neither gradient nor KL.
    """
    data = np.asarray(dataset)
    if data.ndim != 4 or data.shape[0] == 0:
        raise ValueError("training needs a non-empty dataset of windows [N, T, J, 6]")
    _check_window(model, Tensor(data[:1]))
    targets_all = Targets.from_windows(data, model.skeleton, model.dtype)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(list(model.params.values()), lr=cfg.lr)
    batches = _batches(len(data), min(cfg.batch, len(data)), rng)
    history = []
    for it in range(cfg.iters):
        idx = next(batches)
        tg = Targets(targets_all.x[idx], targets_all.R[idx], targets_all.P[idx])
        opt.zero_grad()
        loss, comps = training_step(model, data[idx], it, cfg, rng, tg)
        tc.backward(loss)
        opt.step()
        comps["iter"] = it
        history.append(comps)
        if it % 500 == 0:
            log.info("iter %d loss %.5f", it, comps["total"])
    return model, history


# -- inference helpers -------------------------------------------------------------------

def reconstruct(model: HmVaeModel, windows: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Decode from posterior means (no sampling)."""
    windows = np.asarray(windows)
    out = []
    for s in range(0, len(windows), chunk):
        x = Tensor(windows[s:s + chunk].astype(model.dtype))
        pl, pg = encode(model, x)
        z = LatentPair(None if pl is None else pl.mu, pg.mu)
        out.append(decode(model, z).data)
    return np.concatenate(out, axis=0)


def sample(model: HmVaeModel, n: int, rng: np.random.Generator) -> np.ndarray:
    a = model.arch
    zg = Tensor(rng.standard_normal((n, a.latent_global)).astype(model.dtype))
    zl = Tensor(rng.standard_normal((n, a.latent_local)).astype(model.dtype)) if a.hierarchical else None
    return decode(model, LatentPair(zl, zg)).data
