"""Motion clips: BVH and CSV I/O, synthetic generation, windowing, augmentation."""
from __future__ import annotations

import csv
import io
import re
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .kinematics import forward_kinematics
from .rotation import axis_angle_matrix, euler_to_matrix, matrix_to_euler, matrix_to_rot6d, rot6d_to_matrix
from .skeleton import Skeleton, preset

ROT_CHANNELS = ("Xrotation", "Yrotation", "Zrotation")
POS_CHANNELS = ("Xposition", "Yposition", "Zposition")
DEFAULT_ROOT_CHANNELS = ("Xposition", "Yposition", "Zposition", "Zrotation", "Xrotation", "Yrotation")
DEFAULT_CHANNELS = ("Zrotation", "Xrotation", "Yrotation")


class BVHError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class MotionClip:
    skeleton: Skeleton
    rotations: np.ndarray          # [L, J, 3, 3] local rotations, root = global orientation
    root_translation: np.ndarray   # [L, 3] metres
    fps: float = 30.0
    channels: list[tuple[str, ...]] | None = None
    end_sites: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        self.root_translation = np.asarray(self.root_translation, dtype=np.float64)
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.rotations.shape[1:] != (self.skeleton.n_joints, 3, 3):
            raise ValueError(f"rotations shape {self.rotations.shape} does not match skeleton")
        if self.root_translation.shape != (len(self.rotations), 3):
            raise ValueError("root translation needs one 3-vector per frame")

    def __len__(self) -> int:
        return len(self.rotations)

    @property
    def rot6d(self) -> np.ndarray:
        return matrix_to_rot6d(self.rotations, check=False)

    def positions(self, with_translation: bool = True) -> np.ndarray:
        return forward_kinematics(self.rotations, self.skeleton,
                                  self.root_translation if with_translation else None)

    def slice(self, start: int, stop: int) -> "MotionClip":
        return replace(self, rotations=self.rotations[start:stop], root_translation=self.root_translation[start:stop])

    def channel_layout(self) -> list[tuple[str, ...]]:
        if self.channels is not None:
            return self.channels
        return [DEFAULT_ROOT_CHANNELS if p < 0 else DEFAULT_CHANNELS for p in self.skeleton.parents]


# -- BVH --------------------------------------------------------------------------------

_TOKEN = re.compile(r"\S+")


def parse_bvh(text: str, scale: float = 0.01) -> MotionClip:
    """Parse BVH text. ``scale`` converts file units to metres (0.01 for centimetres)."""
    lines = text.splitlines()
    names, parents, offsets, channels = [], [], [], []
    end_sites: dict[int, np.ndarray] = {}
    stack: list[int] = []
    pending: int | None = None       # joint index awaiting its "{"
    in_end = False
    i = 0
    saw_hierarchy = False
    while i < len(lines):
        toks = _TOKEN.findall(lines[i])
        lineno = i + 1
        i += 1
        if not toks:
            continue
        head = toks[0]
        if head == "HIERARCHY":
            saw_hierarchy = True
        elif head in ("ROOT", "JOINT"):
            if len(toks) < 2:
                raise BVHError(f"{head} without a name", lineno)
            if head == "ROOT" and names:
                raise BVHError("multiple ROOT joints", lineno)
            names.append(" ".join(toks[1:]))
            parents.append(stack[-1] if stack else -1)
            offsets.append(np.zeros(3))
            channels.append(())
            pending = len(names) - 1
        elif head == "End":
            in_end = True
        elif head == "{":
            if in_end:
                stack.append(-2)
            elif pending is not None:
                stack.append(pending)
                pending = None
            else:
                raise BVHError("unexpected '{'", lineno)
        elif head == "}":
            if not stack:
                raise BVHError("unbalanced '}'", lineno)
            top = stack.pop()
            if top == -2:
                in_end = False
        elif head == "OFFSET":
            if len(toks) != 4:
                raise BVHError("OFFSET needs 3 values", lineno)
            vals = np.array([float(v) for v in toks[1:]]) * scale
            if in_end:
                end_sites[stack[-2]] = vals
            else:
                offsets[stack[-1]] = vals
        elif head == "CHANNELS":
            n = int(toks[1])
            chans = tuple(toks[2:])
            if len(chans) != n:
                raise BVHError(f"CHANNELS declares {n} channels but lists {len(chans)}", lineno)
            for c in chans:
                if c not in ROT_CHANNELS + POS_CHANNELS:
                    raise BVHError(f"unknown channel token {c!r}", lineno)
            if sum(c in ROT_CHANNELS for c in chans) != 3:
                raise BVHError("each joint needs exactly three rotation channels", lineno)
            channels[stack[-1]] = chans
        elif head == "MOTION":
            break
        else:
            raise BVHError(f"unexpected token {head!r}", lineno)
    else:
        raise BVHError("missing MOTION section")
    if not saw_hierarchy or not names:
        raise BVHError("missing HIERARCHY section")

    def header(prefix: str) -> tuple[list[str], int]:
        nonlocal i
        while i < len(lines) and not lines[i].strip():
            i += 1
        if i >= len(lines) or not lines[i].strip().startswith(prefix):
            raise BVHError(f"expected '{prefix}'", i + 1)
        toks = lines[i].split(":", 1)[1].split()
        i += 1
        return toks, i

    toks, ln = header("Frames")
    n_frames = int(toks[0])
    toks, ln = header("Frame Time")
    frame_time = float(toks[0])
    if frame_time <= 0:
        raise BVHError("frame time must be positive", ln)

    width = sum(len(c) for c in channels)
    rows = []
    while i < len(lines):
        lineno = i + 1
        vals = lines[i].split()
        i += 1
        if not vals:
            continue
        if len(vals) != width:
            raise BVHError(f"frame has {len(vals)} values, channels declare {width}", lineno)
        rows.append([float(v) for v in vals])
    if len(rows) != n_frames:
        raise BVHError(f"header declares {n_frames} frames, found {len(rows)}")
    data = np.asarray(rows, dtype=np.float64).reshape(n_frames, width)

    skeleton = Skeleton(names, parents, np.asarray(offsets))
    J = len(names)
    R = np.empty((n_frames, J, 3, 3))
    root = np.zeros((n_frames, 3))
    col = 0
    for j, chans in enumerate(channels):
        block = data[:, col:col + len(chans)]
        col += len(chans)
        rot_idx = [k for k, c in enumerate(chans) if c in ROT_CHANNELS]
        order = "".join(chans[k][0] for k in rot_idx)
        R[:, j] = euler_to_matrix(block[:, rot_idx], order)
        if parents[j] < 0:
            pos = {c: block[:, k] for k, c in enumerate(chans) if c in POS_CHANNELS}
            for a, c in enumerate(POS_CHANNELS):
                root[:, a] = pos[c] * scale if c in pos else skeleton.offsets[j, a]
    # nine significant digits undo the reciprocal's rounding for rates like 29.97
    fps = float(f"{1.0 / frame_time:.9g}")
    return MotionClip(skeleton, R, root, fps=fps, channels=[tuple(c) for c in channels],
                      end_sites=end_sites)


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def write_bvh(clip: MotionClip, scale: float = 0.01) -> str:
    sk = clip.skeleton
    chans = clip.channel_layout()
    out = io.StringIO()
    out.write("HIERARCHY\n")

    def emit(j: int, depth: int) -> None:
        ind = "\t" * depth
        kind = "ROOT" if sk.parents[j] < 0 else "JOINT"
        out.write(f"{ind}{kind} {sk.names[j]}\n{ind}{{\n")
        off = sk.offsets[j] / scale
        out.write(f"{ind}\tOFFSET {' '.join(_fmt(v) for v in off)}\n")
        out.write(f"{ind}\tCHANNELS {len(chans[j])} {' '.join(chans[j])}\n")
        kids = sk.children(j)
        for c in kids:
            emit(c, depth + 1)
        if not kids:
            end = clip.end_sites.get(j, np.zeros(3)) / scale
            out.write(f"{ind}\tEnd Site\n{ind}\t{{\n{ind}\t\tOFFSET {' '.join(_fmt(v) for v in end)}\n{ind}\t}}\n")
        elif j in clip.end_sites:
            end = clip.end_sites[j] / scale
            out.write(f"{ind}\tEnd Site\n{ind}\t{{\n{ind}\t\tOFFSET {' '.join(_fmt(v) for v in end)}\n{ind}\t}}\n")
        out.write(f"{ind}}}\n")

    emit(sk.root, 0)
    # BVH stores joints depth-first; keep the skeleton's own order if it already is
    order = _dfs_order(sk)
    out.write(f"MOTION\nFrames: {len(clip)}\nFrame Time: {float(1.0 / clip.fps)!r}\n")
    cols = []
    for j in order:
        rot_order = "".join(c[0] for c in chans[j] if c in ROT_CHANNELS)
        eul = matrix_to_euler(clip.rotations[:, j], rot_order)
        k = 0
        for c in chans[j]:
            if c in ROT_CHANNELS:
                cols.append(eul[:, k])
                k += 1
            else:
                a = POS_CHANNELS.index(c)
                src = clip.root_translation[:, a] if sk.parents[j] < 0 else np.full(len(clip), sk.offsets[j, a])
                cols.append(src / scale)
    data = np.stack(cols, axis=1) if cols else np.zeros((len(clip), 0))
    for row in data:
        out.write(" ".join(_fmt(v) for v in row) + "\n")
    return out.getvalue()


def _dfs_order(sk: Skeleton) -> list[int]:
    order: list[int] = []

    def visit(j: int) -> None:
        order.append(j)
        for c in sk.children(j):
            visit(c)

    visit(sk.root)
    return order


def read_bvh(path: str | Path, scale: float = 0.01) -> MotionClip:
    return parse_bvh(Path(path).read_text(), scale)


# -- CSV ----------------------------------------------------------------------------------

def write_csv(clip: MotionClip) -> str:
    """Frame-per-row text: root translation then six 6D values per joint."""
    J = clip.skeleton.n_joints
    header = ["frame", "root_tx", "root_ty", "root_tz"] + [f"j{j}_r{k}" for j in range(J) for k in range(6)]
    r6 = clip.rot6d.reshape(len(clip), J * 6)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for t in range(len(clip)):
        w.writerow([t] + [_fmt(v) for v in clip.root_translation[t]] + [_fmt(v) for v in r6[t]])
    return buf.getvalue()


def parse_csv(text: str, skeleton: Skeleton, fps: float = 30.0) -> MotionClip:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:4] != ["frame", "root_tx", "root_ty", "root_tz"]:
        raise ValueError("CSV motion needs a header starting frame,root_tx,root_ty,root_tz")
    J = skeleton.n_joints
    if len(rows[0]) != 4 + 6 * J:
        raise ValueError(f"CSV has {(len(rows[0]) - 4) / 6:g} joints, skeleton has {J}")
    data = np.asarray([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    root = data[:, 1:4]
    R = rot6d_to_matrix(data[:, 4:].reshape(-1, J, 6))
    return MotionClip(skeleton, R, root, fps=fps)


def load_motion(path: str | Path, skeleton: Skeleton | None = None, fps: float = 30.0,
                scale: float = 0.01) -> MotionClip:
    path = Path(path)
    if path.suffix.lower() == ".bvh":
        return read_bvh(path, scale)
    if path.suffix.lower() == ".csv":
        if skeleton is None:
            raise ValueError("reading a CSV motion needs a skeleton")
        return parse_csv(path.read_text(), skeleton, fps)
    raise ValueError(f"unsupported motion file type {path.suffix!r} (use .bvh or .csv)")


def save_motion(clip: MotionClip, path: str | Path, scale: float = 0.01) -> None:
    path = Path(path)
    text = write_bvh(clip, scale) if path.suffix.lower() == ".bvh" else write_csv(clip)
    path.write_text(text)


# -- synthetic motion ------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    skeleton: str = "toy-7"
    length: int = 64
    fps: float = 30.0
    freq_range: tuple[float, float] = (0.5, 1.5)     # Hz, gait cycle frequency per clip
    amp_range: tuple[float, float] = (5.0, 35.0)     # degrees
    speed_range: tuple[float, float] = (0.5, 1.5)    # m/s
    turn_range: tuple[float, float] = (-30.0, 30.0)  # degrees/s
    energy_range: tuple[float, float] = (0.6, 1.0)   # per-clip amplitude scale
    style_jitter: float = 0.15                       # relative amplitude / radian phase noise

    def __post_init__(self):
        for name in ("freq_range", "amp_range", "speed_range", "turn_range", "energy_range"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise ValueError(f"{name} must be a finite (low, high) pair")
        if self.length < 1 or self.fps <= 0:
            raise ValueError("length must be >= 1 and fps > 0")


def _yaw(angle: np.ndarray) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    R = np.zeros(angle.shape + (3, 3))
    R[..., 0, 0], R[..., 0, 2] = c, s
    R[..., 1, 1] = 1.0
    R[..., 2, 0], R[..., 2, 2] = -s, c
    return R


def gait_template(sk: Skeleton, cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-joint, per-axis amplitude (degrees) and phase shared by every clip of a skeleton.

    Mirrored ``right_*`` joints copy their ``left_*`` partner and swing in antiphase.
    """
    rng = np.random.default_rng(zlib.crc32(",".join(sk.names).encode()))
    amp = rng.uniform(*cfg.amp_range, size=(sk.n_joints, 3))
    phase = rng.uniform(0, 2 * np.pi, size=(sk.n_joints, 3))
    index = {n: j for j, n in enumerate(sk.names)}
    for j, n in enumerate(sk.names):
        if n.startswith("right_") and "left_" + n[6:] in index:
            k = index["left_" + n[6:]]
            amp[j], phase[j] = amp[k], phase[k] + np.pi
    return amp, phase


def synth_clip(cfg: SynthConfig, rng: np.random.Generator) -> MotionClip:
    """Periodic gait-like clip: every joint angle is a sinusoid of the clip's cycle phase.

    Amplitudes and phase offsets follow the skeleton's gait template with a
    per-clip energy scale and small style jitter; ground speed is stride
    length times cadence, pulsing twice per cycle.
    """
    sk = preset(cfg.skeleton)
    J, L = sk.n_joints, cfg.length
    t = np.arange(L) / cfg.fps
    amp_t, phase_t = gait_template(sk, cfg)
    freq = rng.uniform(*cfg.freq_range)
    energy = rng.uniform(*cfg.energy_range)
    cycle = 2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi)
    amp = amp_t * energy * (1 + cfg.style_jitter * rng.standard_normal((J, 3)))
    amp = np.clip(amp, *cfg.amp_range)
    amp[sk.root] *= 0.25    # keep the pelvis steadier than the limbs
    phase = phase_t + cfg.style_jitter * rng.standard_normal((J, 3))
    ang = amp[None] * np.sin(cycle[:, None, None] + phase[None])       # [L, J, 3] degrees
    R = euler_to_matrix(ang.reshape(-1, 3), "ZXY").reshape(L, J, 3, 3)
    heading = np.deg2rad(rng.uniform(0, 360)) + np.deg2rad(rng.uniform(*cfg.turn_range)) * t
    Y = _yaw(heading)
    R[:, sk.root] = Y @ R[:, sk.root]
    e_lo, e_hi = cfg.energy_range
    f_lo, f_hi = cfg.freq_range
    u = 0.5 * ((energy - e_lo) / max(e_hi - e_lo, 1e-12) + (freq - f_lo) / max(f_hi - f_lo, 1e-12))
    base = cfg.speed_range[0] + u * (cfg.speed_range[1] - cfg.speed_range[0])
    speed = base * (1.0 + 0.3 * np.sin(2 * cycle))
    fwd = Y @ np.array([0.0, 0.0, 1.0])
    vel = fwd * (speed / cfg.fps)[:, None]
    root = np.cumsum(vel, axis=0) + rng.uniform(-1, 1, size=3) * np.array([1.0, 0.0, 1.0])
    return MotionClip(sk, R, root, fps=cfg.fps)


def synth_dataset(cfg: SynthConfig, n: int) -> list[MotionClip]:
    """``n`` gait-like clips, deterministic in ``cfg.seed``."""
    if n < 1:
        raise ValueError("need at least one clip")
    rng = np.random.default_rng(cfg.seed)
    return [synth_clip(cfg, rng) for _ in range(n)]


# -- windowing and augmentation -----------------------------------------------------------

def window_starts(length: int, T: int, stride: int) -> range:
    if length < T:
        raise ValueError(f"clip of length {length} is shorter than the window {T}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return range(0, (length - T) // stride * stride + 1, stride)


def window(clip: MotionClip, T: int, stride: int) -> list[np.ndarray]:
    """Exact ``[T, J, 6]`` slices starting every ``stride`` frames."""
    r6 = clip.rot6d
    return [r6[s:s + T] for s in window_starts(len(clip), T, stride)]


def windows_array(clips: Sequence[MotionClip], T: int, stride: int) -> np.ndarray:
    return np.stack([w for c in clips for w in window(c, T, stride)])


def root_velocity(root: np.ndarray) -> np.ndarray:
    """Per-frame displacement; the first frame reuses the second frame's value."""
    v = np.diff(root, axis=0)
    return np.concatenate([v[:1], v], axis=0)


@dataclass(frozen=True)
class AugmentConfig:
    rate_factors: tuple[float, ...] = (1, 2, 4)
    rotate: bool = True
    seed: int = 0


def resample(clip: MotionClip, factor: float) -> MotionClip:
    """Integer subsampling (``factor >= 1``) or repetition (``factor = 1/n``)."""
    if factor <= 0:
        raise ValueError("rate factor must be positive")
    if factor >= 1:
        step = int(round(factor))
        idx = np.arange(0, len(clip), step)
    else:
        idx = np.repeat(np.arange(len(clip)), int(round(1.0 / factor)))
    return replace(clip, rotations=clip.rotations[idx], root_translation=clip.root_translation[idx])


def rotate_clip(clip: MotionClip, R0: np.ndarray) -> MotionClip:
    rots = clip.rotations.copy()
    r = clip.skeleton.root
    rots[:, r] = R0 @ rots[:, r]
    return replace(clip, rotations=rots, root_translation=clip.root_translation @ R0.T)


def augment(clip: MotionClip, cfg: AugmentConfig) -> tuple[MotionClip, dict]:
    """Random frame-rate change and random rotation about the vertical axis."""
    if any(f <= 0 for f in cfg.rate_factors):
        raise ValueError("rate factors must be positive")
    rng = np.random.default_rng(cfg.seed)
    factor = float(cfg.rate_factors[rng.integers(len(cfg.rate_factors))])
    out = resample(clip, factor)
    angle = 0.0
    R0 = np.eye(3)
    if cfg.rotate:
        angle = float(rng.uniform(0, 2 * np.pi))
        R0 = axis_angle_matrix([0.0, 1.0, 0.0], angle)
        out = rotate_clip(out, R0)
    return out, {"rate_factor": factor, "yaw": angle, "R0": R0}
