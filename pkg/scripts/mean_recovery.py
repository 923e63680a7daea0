"""Constant-rate fits on log-uniform rates: MLPP recovers the arithmetic mean,
HMPP with reciprocal weights recovers the harmonic mean."""
import argparse
import math

from hmpp.objectives import WeightingConfig
from hmpp.simulator import SimConfig, simulate_dataset
from hmpp.trainer import TrainConfig, train

LN10 = math.log(10)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--samples", type=int, default=5000)
    p.add_argument("--seeds", type=int, default=5)
    a = p.parse_args()

    print(f"targets: arithmetic {(1e2 - 1e-2) / (4 * LN10):.4f}  harmonic {4 * LN10 / (1e2 - 1e-2):.4f}")
    hm = WeightingConfig(10.0, 0.0, "true_rate")
    for seed in range(a.seeds):
        d = simulate_dataset(SimConfig(samples=a.samples, seed=seed))
        m, _ = train(d, TrainConfig(seed=seed, selection="last"), "constant")
        h, _ = train(d, TrainConfig(objective="hmpp", weighting=hm, seed=seed, selection="last"), "constant")
        print(f"seed {seed}: mlpp {math.exp(m.params[0]):.4f}  hmpp {math.exp(h.params[0]):.4f}")


if __name__ == "__main__":
    main()
