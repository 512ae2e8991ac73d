"""Sliding-window refinement of noise-corrupted toy sequences."""
import argparse
import json

import numpy as np

from motion_prior import data, hmvae, metrics, skeleton as sk, tasks
from motion_prior.rotation import rot6d_to_matrix


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--clips", type=int, default=128)
    ap.add_argument("--iters", type=int, default=3000)
    ap.add_argument("--sigma", type=float, default=0.05)
    ap.add_argument("--test-clips", type=int, default=6)
    ap.add_argument("--length", type=int, default=32)
    args = ap.parse_args()

    skel = sk.toy7()
    W = data.windows_array(data.synth_dataset(data.SynthConfig(seed=0, length=32), args.clips), 8, 2)
    arch = hmvae.refine_arch(widths=(16, 32, 32, 64), latent_local=16, latent_global=16)
    model = hmvae.make_variant(arch, skel, seed=0)
    model, _ = hmvae.train(model, W, hmvae.TrainConfig(iters=args.iters, lr=1e-3, switch_iter=500, seed=0))
    rng = np.random.default_rng(5)
    rows = []
    for c in data.synth_dataset(data.SynthConfig(seed=4242, length=args.length), args.test_clips):
        noisy = c.rot6d + args.sigma * rng.standard_normal(c.rot6d.shape)
        refined = tasks.refine_sequence(model, noisy)
        rows.append({"input": metrics.evaluate(rot6d_to_matrix(noisy), c.rotations, skel).as_dict(),
                     "refined": metrics.evaluate(rot6d_to_matrix(refined), c.rotations, skel).as_dict()})
        print(rows[-1], flush=True)
    summary = {side: {k: float(np.mean([r[side][k] for r in rows])) for k in rows[0][side]}
               for side in ("input", "refined")}
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
