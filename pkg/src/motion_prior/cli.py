"""Command-line entry point: ``motion-prior <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, data, hmvae, tasks, trajectory
from .kinematics import forward_kinematics
from .metrics import MetricReport, evaluate
from .rotation import rot6d_to_matrix
from .skeleton import preset

log = logging.getLogger("motion_prior")


class UsageError(Exception):
    pass


def read_config_file(path: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in str(s).replace(",", " ").split())


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (falls back to $MOTION_PRIOR_SEED, then 0)")
    p.add_argument("--threads", type=int, default=1, help="cap on BLAS worker threads")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--verbose", action="store_true")


def _motion_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--skeleton", default="toy-7", help="preset used for CSV motion files")
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--scale", type=float, default=0.01, help="BVH units to metres")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="motion-prior", description="Hierarchical motion VAE toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic motion clips")
    _common(p)
    p.add_argument("--preset", default="toy-7", choices=["toy-7", "smpl-24"])
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--length", type=int, default=64)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--format", default="bvh", choices=["bvh", "csv"])

    p = sub.add_parser("train", help="train a motion VAE or a trajectory model")
    _common(p)
    _motion_args(p)
    p.add_argument("--model", default="hmvae", choices=["hmvae", "trajectory"])
    p.add_argument("--variant", default="HM-VAE", choices=list(hmvae.VARIANTS))
    p.add_argument("--data", nargs="*", default=[], help="BVH/CSV files; synthetic data when empty")
    p.add_argument("--synth-n", type=int, default=16)
    p.add_argument("--synth-length", type=int, default=None)
    p.add_argument("--window", type=int, default=16)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--widths", type=_ints, default=(16, 32, 32, 64))
    p.add_argument("--strides", type=_ints, default=(2, 2, 2, 2))
    p.add_argument("--latent", type=int, default=16)
    p.add_argument("--distance", type=int, default=2)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--beta", type=float, default=0.003)
    p.add_argument("--lam", type=float, default=10.0)
    p.add_argument("--switch-iter", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--augment", action="store_true", help="random frame-rate and global-rotation augmentation")

    p = sub.add_parser("refine", help="sliding-window refinement of a noisy motion")
    _common(p)
    _motion_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--gt", help="ground-truth motion for a metric report")

    p = sub.add_parser("interpolate", help="keyframe in-betweening")
    _common(p)
    _motion_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="ground-truth motion providing the keyframes")
    p.add_argument("--trajectory-checkpoint")
    p.add_argument("--gap", type=int, default=30, help="missing frames (the benchmark uses 5, 15, 30, 45)")
    p.add_argument("--lead", type=int, default=10)
    p.add_argument("--trail", type=int, default=1)
    p.add_argument("--start", type=int, default=0, help="first frame of the window in the input")
    p.add_argument("--baseline", default="slerp", choices=["slerp", "lerp"])
    _budget_args(p, tasks.INTERPOLATION_BUDGET)

    p = sub.add_parser("complete", help="partial-body motion completion")
    _common(p)
    _motion_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--part", default="upper", choices=["upper", "lower", "all"])
    p.add_argument("--start", type=int, default=0)
    _budget_args(p, tasks.COMPLETION_BUDGET)

    p = sub.add_parser("eval", help="metric report comparing two motion files")
    _common(p)
    _motion_args(p)
    p.add_argument("pred")
    p.add_argument("gt")

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable operator")
    _common(p)
    p.add_argument("--seeds", type=int, default=20)
    return parser


def _budget_args(p: argparse.ArgumentParser, budget: tasks.OptimConfig) -> None:
    p.add_argument("--phase1-iters", type=int, default=budget.phase1_iters)
    p.add_argument("--phase2-iters", type=int, default=budget.phase2_iters)
    p.add_argument("--lambda1", type=float, default=budget.lambda1)
    p.add_argument("--lambda2", type=float, default=budget.lambda2)
    p.add_argument("--lr", type=float, default=budget.lr)
    p.add_argument("--lr-decoder", type=float, default=budget.lr_decoder)
    p.add_argument("--restarts", type=int, default=budget.restarts)


def _optim_config(args) -> tasks.OptimConfig:
    return tasks.OptimConfig(phase1_iters=args.phase1_iters, phase2_iters=args.phase2_iters,
                             lambda1=args.lambda1, lambda2=args.lambda2, lr=args.lr,
                             lr_decoder=args.lr_decoder, restarts=args.restarts, seed=args.seed)


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            values = read_config_file(args.config)
        except OSError as e:
            raise UsageError(f"cannot read config file: {e}") from e
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        for k in values:
            if k not in known:
                raise UsageError(f"unknown config key {k!r} for {args.command}")
        # flags override the file: re-parse with the file values as defaults
        defaults = {}
        for k, v in values.items():
            act = known[k]
            if act.nargs in ("*", "+"):
                defaults[k] = v.split()
            elif isinstance(act, argparse._StoreTrueAction):
                defaults[k] = v.lower() in ("1", "true", "yes", "on")
            else:
                defaults[k] = act.type(v) if act.type else v
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if args.seed is None:
        env = os.environ.get("MOTION_PRIOR_SEED")
        args.seed = int(env) if env else 0
    return args


def _write_manifest(out: Path, args: argparse.Namespace) -> None:
    cfg = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items()}
    (out / "manifest.json").write_text(json.dumps(cfg, indent=2, sort_keys=True, default=str) + "\n")


def _load(path: str, args) -> data.MotionClip:
    return data.load_motion(path, preset(args.skeleton), fps=args.fps, scale=args.scale)


def _require(model, kind):
    if not isinstance(model, kind):
        raise UsageError(f"checkpoint holds a {type(model).__name__}, expected {kind.__name__}")
    return model


# -- commands ---------------------------------------------------------------------------------

def cmd_synth(args, out: Path) -> None:
    cfg = data.SynthConfig(seed=args.seed, skeleton=args.preset, length=args.length, fps=args.fps)
    for i, clip in enumerate(data.synth_dataset(cfg, args.n)):
        data.save_motion(clip, out / f"clip_{i:03d}.{args.format}")
    log.info("wrote %d clips to %s", args.n, out)


def _training_clips(args) -> list[data.MotionClip]:
    if args.data:
        clips = [_load(p, args) for p in args.data]
    else:
        length = args.synth_length or args.window
        clips = data.synth_dataset(data.SynthConfig(seed=args.seed, skeleton=args.skeleton, length=length,
                                                    fps=args.fps), args.synth_n)
    if args.augment:
        extra = []
        for i, c in enumerate(clips):
            aug, _ = data.augment(c, data.AugmentConfig(seed=args.seed * 100003 + i))
            if len(aug) >= args.window:
                extra.append(aug)
        clips = clips + extra
    return clips


def cmd_train(args, out: Path) -> None:
    clips = _training_clips(args)
    stride = args.stride or args.window
    skel = clips[0].skeleton
    if args.model == "hmvae":
        arch = hmvae.ArchConfig(variant=args.variant, window=args.window, widths=args.widths, strides=args.strides,
                                distance=args.distance, kernel=args.kernel, latent_local=args.latent,
                                latent_global=args.latent)
        model = hmvae.make_variant(arch, skel, seed=args.seed)
        windows = data.windows_array(clips, args.window, stride)
        cfg = hmvae.TrainConfig(batch=args.batch, iters=args.iters, beta=args.beta, lam=args.lam,
                                switch_iter=args.switch_iter, lr=args.lr, seed=args.seed)
        model, history = hmvae.train(model, windows, cfg)
    else:
        tcfg = trajectory.TrajectoryConfig(widths=args.widths, distance=args.distance, kernel=args.kernel)
        model = trajectory.make_trajectory_model(tcfg, skel, seed=args.seed)
        P, V = trajectory.trajectory_windows(clips, args.window, stride)
        model, history = trajectory.train_trajectory(
            model, P, V, trajectory.TrajectoryTrainConfig(batch=args.batch, iters=args.iters, lr=args.lr,
                                                          seed=args.seed))
    checkpoint.save(model, out / "model.ckpt")
    (out / "loss_log.json").write_text(json.dumps(history, sort_keys=True) + "\n")
    log.info("trained %s for %d iterations; final loss %s", args.model, args.iters, history[-1] if history else None)


def cmd_refine(args, out: Path) -> None:
    model = _require(checkpoint.load(args.checkpoint), hmvae.HmVaeModel)
    clip = _load(args.input, args)
    refined6 = tasks.refine_sequence(model, clip.rot6d)
    refined = data.MotionClip(clip.skeleton, rot6d_to_matrix(refined6), clip.root_translation, fps=clip.fps)
    data.save_motion(refined, out / "refined.csv")
    if args.gt:
        gt = _load(args.gt, args)
        reports = {"input": evaluate(clip.rotations, gt.rotations, gt.skeleton).as_dict(),
                   "refined": evaluate(refined.rotations, gt.rotations, gt.skeleton).as_dict()}
        (out / "metrics.json").write_text(json.dumps(reports, indent=2, sort_keys=True) + "\n")


def _window_from(clip: data.MotionClip, start: int, T: int) -> data.MotionClip:
    if start < 0 or start + T > len(clip):
        raise UsageError(f"window [{start}, {start + T}) does not fit a clip of {len(clip)} frames")
    return clip.slice(start, start + T)


def cmd_interpolate(args, out: Path) -> None:
    model = _require(checkpoint.load(args.checkpoint), hmvae.HmVaeModel)
    T = model.arch.window
    if args.lead + args.gap + args.trail > T:
        raise UsageError(f"lead {args.lead} + gap {args.gap} + trail {args.trail} exceeds the model window {T}")
    gt = _window_from(_load(args.input, args), args.start, T)
    res = tasks.interpolate_window(model, gt.rot6d, args.lead, args.gap, args.trail, _optim_config(args))
    lo, hi = args.lead, args.lead + args.gap
    root_lerp = tasks.lerp_inbetween(gt.root_translation, lo, args.gap)
    if args.baseline == "slerp":
        base6 = tasks.slerp_inbetween(gt.rot6d, lo, args.gap)
    else:
        base6 = tasks.lerp6d_inbetween(gt.rot6d, lo, args.gap)
    ours_R = rot6d_to_matrix(res.window)
    base_R = rot6d_to_matrix(base6)

    root_ours = root_lerp
    if args.trajectory_checkpoint:
        traj = _require(checkpoint.load(args.trajectory_checkpoint), trajectory.TrajectoryModel)
        P = forward_kinematics(ours_R, gt.skeleton)
        V = trajectory.predict_root_velocity(traj, P).data.astype(np.float64)
        # anchor the integrated path at the first keyframe
        root_ours = gt.root_translation[0] + trajectory.integrate_trajectory(V) - V[0]
    (out / "trajectory_optimized.csv").write_text(
        trajectory.trajectory_csv(data.root_velocity(root_ours), root_ours))
    (out / f"trajectory_{args.baseline}.csv").write_text(
        trajectory.trajectory_csv(data.root_velocity(root_lerp), root_lerp))

    data.save_motion(data.MotionClip(gt.skeleton, ours_R, root_ours, fps=gt.fps), out / "optimized.csv")
    data.save_motion(data.MotionClip(gt.skeleton, base_R, root_lerp, fps=gt.fps), out / f"{args.baseline}.csv")
    (out / "diagnostics.jsonl").write_text(res.trace_jsonl())
    sl = slice(lo, hi) if args.gap > 0 else slice(0, T)
    reports = {
        "gap_frames": [lo, hi],
        "optimized": _report(ours_R, gt.rotations, gt.skeleton, sl),
        args.baseline: _report(base_R, gt.rotations, gt.skeleton, sl),
    }
    (out / "metrics.json").write_text(json.dumps(reports, indent=2, sort_keys=True) + "\n")


def _report(pred_R, gt_R, skeleton, sl: slice) -> dict:
    # accelerations need neighbours of the gap frames
    wide = slice(max(sl.start - 1, 0), min(sl.stop + 1, len(gt_R)))
    full = evaluate(pred_R[wide], gt_R[wide], skeleton)
    gap = evaluate(pred_R[sl], gt_R[sl], skeleton) if sl.stop - sl.start >= 3 else full
    return MetricReport(gap.mpjpe, gap.pa_mpjpe, full.accel, full.accel_err, gap.global_quat).as_dict()


def cmd_complete(args, out: Path) -> None:
    model = _require(checkpoint.load(args.checkpoint), hmvae.HmVaeModel)
    gt = _window_from(_load(args.input, args), args.start, model.arch.window)
    res = tasks.complete_window(model, gt.rot6d, args.part, _optim_config(args))
    R = rot6d_to_matrix(res.window)
    data.save_motion(data.MotionClip(gt.skeleton, R, gt.root_translation, fps=gt.fps), out / "completed.csv")
    (out / "diagnostics.jsonl").write_text(res.trace_jsonl())
    (out / "metrics.json").write_text(evaluate(R, gt.rotations, gt.skeleton).to_json() + "\n")


def cmd_eval(args, out: Path) -> None:
    pred, gt = _load(args.pred, args), _load(args.gt, args)
    if pred.skeleton.n_joints != gt.skeleton.n_joints or len(pred) != len(gt):
        raise ValueError("motions differ in joint count or length")
    report = evaluate(pred.rotations, gt.rotations, gt.skeleton, fps=None)
    text = report.to_json()
    (out / "metrics.json").write_text(text + "\n")
    print(text)


def cmd_gradcheck(args, out: Path) -> int:
    from .gradcheck import run_suite

    results = run_suite(seeds=args.seeds, seed=args.seed)
    ok = True
    for r in results:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['name']:<28} max rel err {r['max_rel_err']:.2e} "
              f"(tol {r['tol']:.0e}, {r['seeds']} seeds)")
        ok &= r["passed"]
    (out / "gradcheck.json").write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
    return 0 if ok else 1


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "refine": cmd_refine, "interpolate": cmd_interpolate,
    "complete": cmd_complete, "eval": cmd_eval, "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as e:
        print(f"motion-prior: usage error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    out = Path(args.out)
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=args.threads):
            out.mkdir(parents=True, exist_ok=True)
            _write_manifest(out, args)
            code = COMMANDS[args.command](args, out)
        return int(code or 0)
    except UsageError as e:
        print(f"motion-prior: usage error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # one-line diagnostic, nonzero exit
        print(f"motion-prior: error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
