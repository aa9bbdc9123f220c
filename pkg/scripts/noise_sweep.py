"""Fit the three-arc example at every simulated noise level and several seeds.

Prints per-level recovery error, dc resistance, stopping iteration and band
coverage of the true curve.

    python3 scripts/noise_sweep.py --seeds 3
"""
import argparse

import numpy as np

from eis_bayes.formats import write_json
from eis_bayes.presets import NOISE_LEVELS, NUMERICAL_EXAMPLE, numerical_example_prior
from eis_bayes.signal import reference_spectrum, simulate_spectrum
from eis_bayes.vb import Likelihood, VbConfig, extract_bands, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--learning-rate", type=float, default=0.05)
    ap.add_argument("--out", help="optional JSON summary")
    args = ap.parse_args()

    prior = numerical_example_prior()
    truth = NUMERICAL_EXAMPLE.to_vector()[:-1]
    summary = {}
    print(f"{'level':>5} {'seed':>4} {'iters':>6} {'max rel err':>11} {'dc ohm':>8} {'coverage':>8}")
    for level, (sc, sv) in NOISE_LEVELS.items():
        rows = []
        for seed in range(args.seeds):
            spectrum = simulate_spectrum(NUMERICAL_EXAMPLE, sc, sv, seed=seed)
            lik = Likelihood(spectrum, 3, NUMERICAL_EXAMPLE.l)
            report = fit(lik, prior, prior, VbConfig(learning_rate=args.learning_rate, seed=seed))
            rel = report.posterior_means()[:-1] / truth - 1
            bands = extract_bands(report, 3, spectrum.grid, 1000, seed=seed)
            ref = reference_spectrum(NUMERICAL_EXAMPLE, spectrum.freqs_hz).z
            inside = ((ref.real >= bands.lower.real) & (ref.real <= bands.upper.real)
                      & (ref.imag >= bands.lower.imag) & (ref.imag <= bands.upper.imag))
            dc = report.posterior_params().dc_resistance
            row = {"seed": seed, "n_iter": report.n_iter, "max_rel_err": float(np.max(np.abs(rel))),
                   "dc_resistance": dc, "band_coverage": float(np.mean(inside))}
            rows.append(row)
            print(f"{level:>5} {seed:>4} {report.n_iter:>6} {row['max_rel_err']:>11.4f} {dc:>8.3f} "
                  f"{row['band_coverage']:>8.2f}")
        summary[str(level)] = rows
    if args.out:
        write_json(args.out, {"learning_rate": args.learning_rate, "levels": summary})


if __name__ == "__main__":
    main()
