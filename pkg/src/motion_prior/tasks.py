"""Inference procedures over a frozen model: refinement, in-betweening, completion."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .hmvae import HmVaeModel, LatentPair, Targets, decode, encode, reconstruction_loss
from .optim import make_optimizer
from .rotation import matrix_to_quat, matrix_to_rot6d, quat_to_matrix, rot6d_to_matrix, slerp
from .skeleton import Skeleton
from .tensor import Tensor

LEG_KEYWORDS = ("hip", "upleg", "thigh", "leg", "knee", "ankle", "foot", "toe")


# -- sliding-window refinement -----------------------------------------------------------

def refine_sequence(model: HmVaeModel, noisy: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Denoise a ``[L, J, 6]`` sequence one centre frame per window position.

    Each window is encoded to its posterior means and decoded; only the
    centre frame (index ``T // 2``) is kept. The leading frames come from the
    first window's decode and the trailing frames from the last one's.
    """
    noisy = np.asarray(noisy)
    T = model.arch.window
    L = len(noisy)
    if L < T:
        raise ValueError(f"sequence of length {L} is shorter than the model window {T}")
    c = T // 2
    starts = np.arange(L - T + 1)
    decoded = []
    for s in range(0, len(starts), chunk):
        batch = np.stack([noisy[i:i + T] for i in starts[s:s + chunk]]).astype(model.dtype)
        pl, pg = encode(model, Tensor(batch))
        z = LatentPair(None if pl is None else pl.mu, pg.mu)
        decoded.append(decode(model, z).data)
    dec = np.concatenate(decoded, axis=0)
    out = np.empty(noisy.shape, dtype=np.float64)
    out[:c] = dec[0, :c]
    out[c:c + len(starts)] = dec[:, c]
    out[c + len(starts):] = dec[-1, c + 1:]
    return out


def centre_indices(L: int, T: int) -> list[int]:
    return [s + T // 2 for s in range(L - T + 1)]


# -- constraint masks ------------------------------------------------------------------------

@dataclass
class ConstraintMask:
    frames: np.ndarray       # bool [T]
    joints: np.ndarray       # bool [J]
    targets: np.ndarray | None = None   # [T, J, 6]

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=bool)
        self.joints = np.asarray(self.joints, dtype=bool)
        if not (self.frames.any() and self.joints.any()):
            raise ValueError("constraint mask is empty")

    @property
    def entries(self) -> np.ndarray:
        return self.frames[:, None] & self.joints[None, :]

    def with_targets(self, targets: np.ndarray) -> "ConstraintMask":
        return ConstraintMask(self.frames.copy(), self.joints.copy(), np.asarray(targets).copy())


def make_keyframe_mask(T: int, lead: int, trail: int, n_joints: int = 1, gap: int | None = None,
                       targets: np.ndarray | None = None) -> ConstraintMask:
    """Known frames ``[0, lead)`` and ``trail`` frames after the gap, all joints.

    Without ``gap`` the trailing keyframes are the last ``trail`` frames of the window.
    """
    if lead < 0 or trail < 0:
        raise ValueError("lead and trail must be non-negative")
    if gap is None:
        gap = T - lead - trail
    if lead + gap + trail > T or gap < 0:
        raise ValueError(f"lead {lead} + gap {gap} + trail {trail} exceeds the window {T}")
    frames = np.zeros(T, dtype=bool)
    frames[:lead] = True
    frames[lead + gap:lead + gap + trail] = True
    if not frames.any():
        raise ValueError("keyframe mask is empty: lead and trail are both zero")
    return ConstraintMask(frames, np.ones(n_joints, dtype=bool), targets)


def body_part_joints(skeleton: Skeleton, part: str) -> np.ndarray:
    """Boolean joint selection for ``"all"``, ``"upper"`` or ``"lower"``.

    Legs are the subtrees hanging off the root whose first joint's name looks
    like a hip/leg. ``"upper"`` is everything else (root-to-head chain and
    arms); ``"lower"`` is the root plus the legs.
    """
    J = skeleton.n_joints
    if part == "all":
        return np.ones(J, dtype=bool)
    legs = np.zeros(J, dtype=bool)
    for c in skeleton.children(skeleton.root):
        if any(k in skeleton.names[c].lower() for k in LEG_KEYWORDS):
            stack = [c]
            while stack:
                j = stack.pop()
                legs[j] = True
                stack.extend(skeleton.children(j))
    if part == "upper":
        return ~legs
    if part == "lower":
        out = legs.copy()
        out[skeleton.root] = True
        return out
    raise ValueError(f"unknown body part {part!r}; choose from all, upper, lower")


def make_body_part_mask(skeleton: Skeleton, part: str, T: int = 1,
                        targets: np.ndarray | None = None) -> ConstraintMask:
    joints = body_part_joints(skeleton, part)
    if not joints.any():
        raise ValueError(f"body part {part!r} resolves to no joints")
    return ConstraintMask(np.ones(T, dtype=bool), joints, targets)


def position_mask(mask: ConstraintMask, skeleton: Skeleton) -> np.ndarray:
    """Entries whose joint and all of its ancestors are constrained."""
    ok = np.array([mask.joints[j] and all(mask.joints[a] for a in skeleton.ancestors(j))
                   for j in range(skeleton.n_joints)])
    return mask.frames[:, None] & ok[None, :]


# -- latent optimisation ------------------------------------------------------------------------

@dataclass
class OptimConfig:
    phase1_iters: int = 50
    phase2_iters: int = 100
    lambda1: float = 10.0
    lambda2: float = 1.0
    lr: float = 0.3
    lr_decoder: float = 3e-3
    optimizer: str = "adam"
    restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.phase1_iters < 0 or self.phase2_iters < 0:
            raise ValueError("iteration counts must be >= 0")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be >= 0")


INTERPOLATION_BUDGET = OptimConfig(phase1_iters=50, phase2_iters=100)
COMPLETION_BUDGET = OptimConfig(phase1_iters=100, phase2_iters=200)


@dataclass
class OptimResult:
    window: np.ndarray
    trace: list[dict]
    z: LatentPair
    decoder_shift: float

    def trace_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.trace)


def _masked_loss(model: HmVaeModel, x_rec: Tensor, targets: Targets, mask: ConstraintMask, lam: float,
                 pos_mask: np.ndarray):
    return reconstruction_loss(x_rec, targets, model.skeleton, lam, mask.entries, pos_mask)


def _single_run(model: HmVaeModel, mask: ConstraintMask, cfg: OptimConfig, seed: int) -> OptimResult:
    a = model.arch
    rng = np.random.default_rng(seed)
    dtype = model.dtype
    target = np.asarray(mask.targets, dtype=np.float64).copy()
    # unconstrained entries only feed the masked-out terms; keep them valid rotations
    target[~mask.entries] = np.array([1.0, 0, 0, 0, 1, 0])
    targets = Targets.from_windows(target, model.skeleton, dtype)
    pmask = position_mask(mask, model.skeleton)

    zg = Tensor(rng.standard_normal(a.latent_global).astype(dtype), requires_grad=True)
    zl = Tensor(rng.standard_normal(a.latent_local).astype(dtype), requires_grad=True) if a.hierarchical else None
    z = LatentPair(zl, zg)
    trace = []

    frozen = model.clone()
    for t in frozen.params.values():
        t.requires_grad = False
    opt = make_optimizer(cfg.optimizer, [t for t in (zl, zg) if t is not None], cfg.lr)
    for it in range(cfg.phase1_iters):
        opt.zero_grad()
        loss, comps = _masked_loss(frozen, decode(frozen, z), targets, mask, cfg.lambda1, pmask)
        if not np.isfinite(loss.item()):
            raise FloatingPointError(f"non-finite loss in phase 1 at iteration {it}")
        tc.backward(loss)
        opt.step()
        trace.append({"phase": 1, "iteration": it, "loss": loss.item(), **comps})

    for t in (zl, zg):
        if t is not None:
            t.requires_grad = False
    tuned = model.clone()
    names = tuned.decoder_names()
    for n, t in tuned.params.items():
        t.requires_grad = n in names
    reference = {n: model.params[n].data.astype(dtype) for n in names}
    opt = make_optimizer(cfg.optimizer, [tuned.params[n] for n in names], cfg.lr_decoder)
    for it in range(cfg.phase2_iters):
        opt.zero_grad()
        rec, comps = _masked_loss(tuned, decode(tuned, z), targets, mask, cfg.lambda1, pmask)
        reg = None
        for n in names:
            d = tuned.params[n] - reference[n]
            term = (d * d).sum()
            reg = term if reg is None else reg + term
        loss = rec + reg * cfg.lambda2
        if not np.isfinite(loss.item()):
            raise FloatingPointError(f"non-finite loss in phase 2 at iteration {it}")
        tc.backward(loss)
        opt.step()
        trace.append({"phase": 2, "iteration": it, "loss": loss.item(), "reg": reg.item(), **comps})

    out = decode(tuned, z).data.astype(np.float64)
    shift = float(np.sqrt(sum(((tuned.params[n].data - reference[n]) ** 2).sum() for n in names)))
    return OptimResult(out, trace, z, shift)


def optimize_latent(model: HmVaeModel, mask: ConstraintMask, cfg: OptimConfig) -> OptimResult:
    """Fit latent codes, then decoder weights, to the constrained entries of ``mask``.

    Phase 1 optimises ``z_l, z_g`` (drawn from the prior with ``cfg.seed``)
    with the decoder frozen. Phase 2 freezes the codes and tunes a private copy
    of the decoder, penalised by ``lambda2 * ||theta' - theta||^2``. With
    several restarts the run with the lowest final loss wins.
    """
    if mask.targets is None:
        raise ValueError("constraint mask has no targets")
    if mask.targets.shape != (model.arch.window, model.skeleton.n_joints, 6):
        raise ValueError(f"targets shape {mask.targets.shape} does not match the model window")
    best = None
    for r in range(max(cfg.restarts, 1)):
        res = _single_run(model, mask, cfg, cfg.seed + r)
        final = res.trace[-1]["loss"] if res.trace else 0.0
        if best is None or final < best[0]:
            best = (final, res)
    return best[1]


def masked_reconstruction(model: HmVaeModel, window: np.ndarray, mask: ConstraintMask, lam: float) -> float:
    target = np.asarray(mask.targets, dtype=np.float64).copy()
    target[~mask.entries] = np.array([1.0, 0, 0, 0, 1, 0])
    targets = Targets.from_windows(target, model.skeleton, np.float64)
    loss, _ = reconstruction_loss(Tensor(np.asarray(window, dtype=np.float64)), targets, model.skeleton, lam,
                                  mask.entries, position_mask(mask, model.skeleton))
    return loss.item()


# -- baselines ------------------------------------------------------------------------------------

def slerp_inbetween(window: np.ndarray, lead: int, gap: int) -> np.ndarray:
    """Replace frames ``[lead, lead+gap)`` of a ``[T, J, 6]`` window by per-joint Slerp."""
    window = np.asarray(window, dtype=np.float64)
    out = window.copy()
    if gap == 0:
        return out
    if lead < 1 or lead + gap >= len(window):
        raise ValueError("Slerp needs a keyframe on both sides of the gap")
    R = rot6d_to_matrix(window[[lead - 1, lead + gap]])
    q0 = matrix_to_quat(R[0], check=False)
    q1 = matrix_to_quat(R[1], check=False)
    ts = np.arange(1, gap + 1) / (gap + 1)
    q = slerp(np.broadcast_to(q0, (gap,) + q0.shape), np.broadcast_to(q1, (gap,) + q1.shape),
              ts[:, None] * np.ones(q0.shape[0]))
    out[lead:lead + gap] = matrix_to_rot6d(quat_to_matrix(q), check=False)
    return out


def lerp_inbetween(values: np.ndarray, lead: int, gap: int) -> np.ndarray:
    """Linear interpolation along axis 0 (e.g. root positions ``[T, 3]``) across the gap."""
    values = np.asarray(values, dtype=np.float64)
    out = values.copy()
    if gap == 0:
        return out
    if lead < 1 or lead + gap >= len(values):
        raise ValueError("interpolation needs a keyframe on both sides of the gap")
    a, b = values[lead - 1], values[lead + gap]
    ts = (np.arange(1, gap + 1) / (gap + 1)).reshape((gap,) + (1,) * a.ndim)
    out[lead:lead + gap] = (1 - ts) * a + ts * b
    return out


def lerp6d_inbetween(window: np.ndarray, lead: int, gap: int) -> np.ndarray:
    """Channel-wise linear interpolation of 6D rotations, re-orthonormalised."""
    out = lerp_inbetween(window, lead, gap)
    if gap:
        out[lead:lead + gap] = matrix_to_rot6d(rot6d_to_matrix(out[lead:lead + gap]), check=False)
    return out


def interpolate_window(model: HmVaeModel, window: np.ndarray, lead: int, gap: int, trail: int,
                       cfg: OptimConfig) -> OptimResult:
    T = model.arch.window
    mask = make_keyframe_mask(T, lead, trail, model.skeleton.n_joints, gap=gap, targets=np.asarray(window))
    return optimize_latent(model, mask, cfg)


def complete_window(model: HmVaeModel, window: np.ndarray, part: str, cfg: OptimConfig) -> OptimResult:
    mask = make_body_part_mask(model.skeleton, part, model.arch.window, targets=np.asarray(window))
    return optimize_latent(model, mask, cfg)
