"""Per-example effective sample size of the interval weights as a function of
gamma, for log-uniform rates on [1e-2, 1e2]."""
import argparse

import numpy as np

from hmpp.objectives import WeightingConfig, effective_sample_size, interval_weight


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=0.0)
    a = p.parse_args()

    lam = 10 ** np.random.default_rng(a.seed).uniform(-2, 2, a.samples)
    for gamma in (1, 1.5, 2, 3, 5, 10, 20, 100):
        w = interval_weight(lam, WeightingConfig(gamma, a.epsilon))
        print(f"gamma {gamma:>5}: ESS/n {effective_sample_size(w)['per_example']:.4f}")


if __name__ == "__main__":
    main()
