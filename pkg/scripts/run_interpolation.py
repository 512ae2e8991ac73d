"""In-betweening on held-out toy windows: latent optimisation against Slerp."""
import argparse
import json

import numpy as np

from motion_prior import checkpoint, data, hmvae, metrics, skeleton as sk, tasks
from motion_prior.kinematics import forward_kinematics
from motion_prior.rotation import rot6d_to_matrix


def gap_pa_mpjpe(x, gt, skel, frames):
    P = forward_kinematics(rot6d_to_matrix(x), skel)[frames]
    G = forward_kinematics(rot6d_to_matrix(gt), skel)[frames]
    return metrics.pa_mpjpe(P, G)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--checkpoint", help="reuse a trained toy model instead of training one")
    ap.add_argument("--save", help="write the trained model here")
    ap.add_argument("--clips", type=int, default=256)
    ap.add_argument("--iters", type=int, default=8000)
    ap.add_argument("--test-seeds", type=int, nargs="+", default=[777, 4242, 9001])
    ap.add_argument("--per-seed", type=int, default=6)
    ap.add_argument("--lead", type=int, default=4)
    ap.add_argument("--gap", type=int, default=8)
    ap.add_argument("--trail", type=int, default=4)
    ap.add_argument("--phase1", type=int, default=25)
    ap.add_argument("--phase2", type=int, default=50)
    ap.add_argument("--lr", type=float, default=tasks.OptimConfig.lr)
    ap.add_argument("--lr-decoder", type=float, default=tasks.OptimConfig.lr_decoder)
    args = ap.parse_args()

    skel = sk.toy7()
    if args.checkpoint:
        model = checkpoint.load(args.checkpoint)
    else:
        W = data.windows_array(data.synth_dataset(data.SynthConfig(seed=0, length=32), args.clips), 16, 2)
        model = hmvae.make_variant(hmvae.toy_arch(), skel, seed=0)
        model, _ = hmvae.train(model, W, hmvae.TrainConfig(iters=args.iters, lr=1e-3, switch_iter=500, seed=0))
        if args.save:
            checkpoint.save(model, args.save)
    cfg = tasks.OptimConfig(args.phase1, args.phase2, lr=args.lr, lr_decoder=args.lr_decoder)
    frames = slice(args.lead, args.lead + args.gap)
    rows = []
    for s in args.test_seeds:
        for c in data.synth_dataset(data.SynthConfig(seed=s, length=model.arch.window), args.per_seed):
            x = c.rot6d
            res = tasks.interpolate_window(model, x, args.lead, args.gap, args.trail, cfg)
            rows.append({"optimized": gap_pa_mpjpe(res.window, x, skel, frames),
                         "slerp": gap_pa_mpjpe(tasks.slerp_inbetween(x, args.lead, args.gap), x, skel, frames),
                         "lerp": gap_pa_mpjpe(tasks.lerp6d_inbetween(x, args.lead, args.gap), x, skel, frames)})
            print(rows[-1], flush=True)
    summary = {k: float(np.median([r[k] for r in rows])) for k in rows[0]}
    summary["wins_over_slerp"] = int(sum(r["optimized"] < r["slerp"] for r in rows))
    summary["windows"] = len(rows)
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
