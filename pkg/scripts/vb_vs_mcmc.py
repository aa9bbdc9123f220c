"""Compare VB and MCMC posteriors on the single-arc problem, with timings.

    python3 scripts/vb_vs_mcmc.py --iters 200000 --workers 4
"""
import argparse
import time

import numpy as np

from eis_bayes.formats import write_json
from eis_bayes.mcmc import McmcConfig, sample
from eis_bayes.presets import one_rq_prior, one_rq_spectrum
from eis_bayes.vb import Likelihood, VbConfig, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iters", type=int, default=200_000)
    ap.add_argument("--chains", type=int, default=4)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="optional JSON summary")
    args = ap.parse_args()

    spectrum, prior = one_rq_spectrum(), one_rq_prior()
    lik = Likelihood(spectrum, 1)
    start = time.perf_counter()
    report = fit(lik, prior, prior, VbConfig(seed=args.seed + 1))
    vb_s = time.perf_counter() - start
    start = time.perf_counter()
    chains = sample(lik, prior, McmcConfig(n_iters=args.iters, n_chains=args.chains,
                                           seed=args.seed, workers=args.workers))
    mcmc_s = time.perf_counter() - start

    fam = report.family
    vm, vv = fam.means(), fam.variances()
    mm, mv = chains.means(), chains.variances()
    print(f"VB {report.n_iter} iterations in {vb_s:.2f} s; MCMC {args.chains} x {args.iters} in {mcmc_s:.1f} s")
    print(f"{'param':>8} {'VB mean':>10} {'MCMC mean':>10} {'ratio':>7} {'var ratio':>9} {'R-hat':>7} {'ESS':>8}")
    rows = {}
    for j, name in enumerate(fam.names):
        print(f"{name:>8} {vm[j]:10.4g} {mm[j]:10.4g} {vm[j] / mm[j]:7.4f} {vv[j] / mv[j]:9.3f} "
              f"{chains.rhat[j]:7.4f} {chains.ess[j]:8.0f}")
        rows[name] = {"vb_mean": vm[j], "mcmc_mean": mm[j], "vb_var": vv[j], "mcmc_var": mv[j],
                      "rhat": chains.rhat[j], "ess": chains.ess[j]}
    corr = np.corrcoef(chains.flat, rowvar=False)
    print("MCMC correlation matrix (mean-field VB sets all of these to zero):")
    print(np.array2string(corr, precision=2, suppress_small=True))
    if args.out:
        write_json(args.out, {"parameters": rows, "vb_seconds": vb_s, "mcmc_seconds": mcmc_s,
                              "mcmc_ok": chains.ok, "correlation": corr})


if __name__ == "__main__":
    main()
