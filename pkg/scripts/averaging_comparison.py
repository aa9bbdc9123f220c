"""Single-spectrum VB mean curve against the pointwise average of N spectra.

    python3 scripts/averaging_comparison.py --measurement 3 --learning-rate 0.005
"""
import argparse

import numpy as np

from eis_bayes.ecm import impedance_batch
from eis_bayes.formats import write_json
from eis_bayes.presets import NOISE_LEVELS, NUMERICAL_EXAMPLE, numerical_example_prior
from eis_bayes.signal import average_spectra, reference_spectrum, simulate_spectrum
from eis_bayes.vb import Likelihood, VbConfig, fit


def rms(a, b):
    return float(np.sqrt(np.mean(np.abs(a - b) ** 2)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--measurement", type=int, default=3, choices=sorted(NOISE_LEVELS))
    ap.add_argument("--n", type=int, default=10)
    ap.add_argument("--learning-rate", type=float, default=0.005)
    ap.add_argument("--first-seed", type=int, default=200)
    ap.add_argument("--out", help="optional JSON summary")
    args = ap.parse_args()

    sc, sv = NOISE_LEVELS[args.measurement]
    spectra = [simulate_spectrum(NUMERICAL_EXAMPLE, sc, sv, seed=args.first_seed + k) for k in range(args.n)]
    truth = reference_spectrum(NUMERICAL_EXAMPLE, spectra[0].freqs_hz)
    avg = rms(average_spectra(spectra).z, truth.z)
    prior = numerical_example_prior()
    single = []
    for k, s in enumerate(spectra):
        report = fit(Likelihood(s, 3, NUMERICAL_EXAMPLE.l), prior, prior,
                     VbConfig(learning_rate=args.learning_rate, seed=k))
        curve = impedance_batch(report.posterior_means(), truth.grid.omega, NUMERICAL_EXAMPLE.l)
        single.append(rms(curve, truth.z))
        print(f"spectrum {k}: raw rms {rms(s.z, truth.z):.4g}, VB mean-curve rms {single[-1]:.4g}, "
              f"final ELBO window {np.mean(report.elbo_trace[-1000:]):.1f}")
    single = np.array(single)
    print(f"average of {args.n} spectra: rms {avg:.4g}")
    print(f"VB / average: mean {single.mean() / avg:.2f}, median {np.median(single) / avg:.2f}")
    if args.out:
        write_json(args.out, {"measurement": args.measurement, "learning_rate": args.learning_rate,
                              "average_rms": avg, "single_vb_rms": single})


if __name__ == "__main__":
    main()
