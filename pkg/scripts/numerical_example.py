"""Simulate the three-arc example, fit it with VB and print the posterior table.

    python3 scripts/numerical_example.py --measurement 2 --seed 0 --out results/numex.json
"""
import argparse
import time

import numpy as np

from eis_bayes.formats import write_json
from eis_bayes.presets import NOISE_LEVELS, NUMERICAL_EXAMPLE, numerical_example_prior
from eis_bayes.signal import simulate_spectrum
from eis_bayes.vb import Likelihood, VbConfig, display_order, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--measurement", type=int, default=2, choices=sorted(NOISE_LEVELS))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--learning-rate", type=float, default=0.05)
    ap.add_argument("--out", help="optional JSON summary")
    args = ap.parse_args()

    spectrum = simulate_spectrum(NUMERICAL_EXAMPLE, *NOISE_LEVELS[args.measurement], seed=args.seed)
    prior = numerical_example_prior()
    start = time.perf_counter()
    report = fit(Likelihood(spectrum, 3, NUMERICAL_EXAMPLE.l), prior, prior,
                 VbConfig(learning_rate=args.learning_rate, seed=args.seed))
    seconds = time.perf_counter() - start

    truth = NUMERICAL_EXAMPLE.to_vector()
    fam = report.family
    means, stds = fam.means(), fam.stds()
    print(f"{report.n_iter} iterations ({report.stop_reason}), {seconds:.1f} s")
    print(f"{'param':>8} {'truth':>10} {'mean':>10} {'std':>10} {'rel err':>8}")
    rows = {}
    # series resistance, then arcs from fastest to slowest, then the noise scale
    order = [0] + [1 + 3 * i + k for i in display_order(fam) for k in range(3)] + [len(fam) - 1]
    for j in order:
        name = fam.names[j]
        if name == "sigma_n":
            # the spectral noise scale has no single true value
            t = None
            print(f"{name:>8} {'-':>10} {means[j]:10.4g} {stds[j]:10.3g} {'-':>8}")
        else:
            t = truth[j]
            print(f"{name:>8} {t:10.4g} {means[j]:10.4g} {stds[j]:10.3g} {means[j] / t - 1:+8.3f}")
        rows[name] = {"truth": t, "mean": means[j], "std": stds[j], "factor": fam.factors[j].as_dict()}
    if args.out:
        write_json(args.out, {"measurement": args.measurement, "seed": args.seed,
                              "learning_rate": args.learning_rate, "n_iter": report.n_iter,
                              "stop_reason": report.stop_reason, "posterior": rows,
                              "elbo_last_1000": float(np.mean(report.elbo_trace[-1000:]))})


if __name__ == "__main__":
    main()
