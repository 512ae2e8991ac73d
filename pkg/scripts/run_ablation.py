"""Reconstruction MPJPE of HM-VAE, M-VAE and TCN-VAE on a small toy training set."""
import argparse
import json
import time

import numpy as np

from motion_prior import data, hmvae, metrics, skeleton as sk
from motion_prior.kinematics import forward_kinematics


def recon_mpjpe(model, W):
    rec = hmvae.reconstruct(model, W).astype(np.float64)
    return metrics.mpjpe(forward_kinematics(rec, model.skeleton), forward_kinematics(W, model.skeleton))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--clips", type=int, default=16)
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--variants", nargs="+", default=list(hmvae.VARIANTS))
    args = ap.parse_args()

    skel = sk.toy7()
    W = data.windows_array(data.synth_dataset(data.SynthConfig(seed=0, length=16), args.clips), 16, 16)
    results = {}
    for variant in args.variants:
        runs = []
        for seed in range(args.seeds):
            m = hmvae.make_variant(hmvae.toy_arch(variant), skel, seed=seed)
            before = recon_mpjpe(m, W)
            t = time.time()
            m, _ = hmvae.train(m, W, hmvae.TrainConfig(iters=args.iters, lr=1e-3, switch_iter=500, seed=seed))
            runs.append({"seed": seed, "before": before, "after": recon_mpjpe(m, W), "seconds": time.time() - t})
            print(variant, runs[-1], flush=True)
        results[variant] = {"runs": runs, "median_after": float(np.median([r["after"] for r in runs]))}
    print(json.dumps({v: r["median_after"] for v, r in results.items()}, indent=2))


if __name__ == "__main__":
    main()
