"""Why the regressor is warmed up with an MSE stage.

Trains the same network on the synthetic linear pose problem three ways and
prints held-out median geodesic errors. Starting straight on the geodesic
loss tends to settle in alias minima (axis-angle vectors longer than pi),
whereas a short MSE stage first puts the outputs near the canonical
log-map targets.

    python3 demos/two_stage_training.py [n_seeds]
"""

import sys

import numpy as np

from posereg.network import CategoryBank
from posereg.rotations import geodesic_dist_mat
from posereg.synth import SyntheticSpec, make_dataset, split
from posereg.training import TrainConfig, predict_rotations, train_two_stage

SCHEDULES = {"MSE(20)": (20, 0), "GVE(20)": (0, 20), "MSE(10)+GVE(10)": (10, 10)}


def held_out(seed, epochs):
    train, test = split(make_dataset(SyntheticSpec(n_samples=700, seed=seed)), 500, seed=seed)
    cfg = TrainConfig(epochs_mse=epochs[0], epochs_gve=epochs[1], seed=seed)
    bank = CategoryBank.create(["car"], seed=seed, layer_sizes=(32,) + cfg.hidden)
    bank, _ = train_two_stage(bank, train, cfg)
    pred = predict_rotations(bank, test)
    err = np.rad2deg(geodesic_dist_mat(test.rotations, pred))
    y = bank["car"].forward(test.features)[0]
    return np.median(err), np.mean(np.linalg.norm(y, axis=1) > np.pi)


def main(n_seeds=5):
    print(f"{'schedule':<18}{'median err (deg)':>18}{'|y| > pi':>10}")
    for name, epochs in SCHEDULES.items():
        res = np.array([held_out(s, epochs) for s in range(n_seeds)])
        print(f"{name:<18}{res[:, 0].mean():>18.2f}{res[:, 1].mean():>10.1%}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 5)
