"""Root-velocity regression on toy sequences, with displacement error by horizon."""
import argparse
import json

import numpy as np

from motion_prior import data, skeleton as sk, trajectory


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--clips", type=int, default=32)
    ap.add_argument("--iters", type=int, default=1500)
    ap.add_argument("--window", type=int, default=16)
    args = ap.parse_args()

    skel = sk.toy7()
    P, V = trajectory.trajectory_windows(data.synth_dataset(data.SynthConfig(seed=0, length=32), args.clips),
                                         args.window, 4)
    Pt, Vt = trajectory.trajectory_windows(data.synth_dataset(data.SynthConfig(seed=4242, length=32), 8),
                                           args.window, args.window)
    model = trajectory.make_trajectory_model(trajectory.TrajectoryConfig(widths=(16, 16, 32, 32)), skel, seed=0)
    untrained = trajectory.velocity_mse(model, Pt, Vt)
    model, _ = trajectory.train_trajectory(model, P, V, trajectory.TrajectoryTrainConfig(iters=args.iters))
    Vp = trajectory.predict_root_velocity(model, Pt).data.astype(np.float64)
    drift = np.linalg.norm(trajectory.integrate_trajectory(Vp) - trajectory.integrate_trajectory(Vt), axis=-1)
    print(json.dumps({
        "velocity_mse_untrained": untrained,
        "velocity_mse_trained": trajectory.velocity_mse(model, Pt, Vt),
        # accumulated displacement error grows with the horizon
        "displacement_error_m_by_frame": [round(float(v), 5) for v in drift.mean(axis=0)],
    }, indent=2))


if __name__ == "__main__":
    main()
