"""
``eis-bayes`` command-line interface.

Subcommands::

    simulate   circuit + noise config  -> per-record time series + reference spectrum
    estimate   time series             -> spectrum (Morlet CWT)
    fit-vb     spectrum + prior        -> variational posterior report, bands, trace
    fit-mcmc   spectrum + prior        -> chains + diagnostics
    average    spectra                 -> pointwise mean spectrum
    compare    VB report + (report | chains | spectrum) -> comparison metrics

Exit codes: 0 success, 2 invalid input or configuration, 3 convergence or
diagnostic failure. Outputs depend only on inputs, config and seed; run
times are logged to stderr and never written to files.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtri

from . import __version__
from .config import (
    ConfigError,
    check_top_level,
    family_from_config,
    mcmc_config_from_config,
    model_from_config,
    noise_from_config,
    params_from_config,
    resolved_dataclass,
    resolved_params,
    sweep_from_config,
    vb_config_from_config,
)
from .ecm import FrequencyGrid, impedance_batch, n_elements_for
from .formats import (
    FormatError,
    read_columns,
    read_header,
    read_json,
    read_spectrum,
    read_timeseries,
    write_columns,
    write_json,
    write_spectrum,
    write_timeseries,
)
from .mcmc import McmcDiagnosticError, sample
from .probdist import InversionError, VariationalFamily, beta_ppf
from .signal import (
    ImpedanceSpectrum,
    average_spectra,
    estimate_impedance_cwt,
    plan_records,
    record_configs,
    reference_spectrum,
    simulate,
)
from .vb import DivergenceError, Likelihood, display_order, extract_bands, fit

log = logging.getLogger("eis_bayes")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DIAGNOSTIC = 3
MANIFEST = "manifest.json"


class DiagnosticFailure(RuntimeError):
    """Outputs were written but a convergence diagnostic failed."""


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _input(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"input file not found: {p}")
    return p


def _input_record(path: Path) -> dict:
    return {"path": str(path), "sha256": _sha256(path)}


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    return read_json(_input(path))


def _threads() -> Optional[int]:
    env = os.environ.get("EIS_BAYES_THREADS")
    if env is None or env == "":
        return None
    try:
        n = int(env)
    except ValueError:
        raise ConfigError(f"EIS_BAYES_THREADS must be a positive integer, got {env!r}") from None
    if n < 1:
        raise ConfigError(f"EIS_BAYES_THREADS must be a positive integer, got {env!r}")
    return n


def _seed(args, cfg: dict, default: int = 0) -> int:
    seed = args.seed if args.seed is not None else cfg.get("seed", default)
    if not isinstance(seed, int) or seed < 0 or seed >= 2**64:
        raise ConfigError("seed must be an integer in [0, 2^64)")
    return seed


# -- simulate ----------------------------------------------------------------


def cmd_simulate(args, cfg: dict, out: Path) -> int:
    check_top_level(cfg, {"circuit", "noise", "sweep", "excitation", "seed"})
    params = params_from_config(cfg.get("circuit"))
    sigma_i, sigma_v = noise_from_config(cfg.get("noise"))
    sweep = sweep_from_config(cfg.get("sweep"))
    exc = cfg.get("excitation") or {}
    if not isinstance(exc, dict) or set(exc) - {"amplitude", "dc_offset"}:
        raise ConfigError("excitation: only 'amplitude' and 'dc_offset' are configurable")
    amplitude = float(exc.get("amplitude", 1.0))
    dc_offset = float(exc.get("dc_offset", 0.0))
    seed = _seed(args, cfg)
    try:
        configs = record_configs(params, plan_records(**sweep), sigma_i, sigma_v, seed,
                                 amplitude, dc_offset)
    except ValueError as exc_:
        raise ConfigError(str(exc_)) from exc_

    records = []
    tones = []
    for r, sim in enumerate(configs):
        cur, volt = simulate(sim)
        f = sim.excited_frequencies()
        tones.append(f)
        meta = {"record": r, "tones_hz": f}
        names = {}
        for rec in (cur, volt):
            name = f"record_{r:02d}_{rec.channel}.csv"
            write_timeseries(out / name, rec, meta)
            names[rec.channel] = name
        records.append({"current": names["current"], "voltage": names["voltage"], "tones_hz": f})
    ref = reference_spectrum(params, np.sort(np.concatenate(tones)))
    write_spectrum(out / "reference.csv", ref)
    resolved = {
        "circuit": resolved_params(params),
        "noise": {"sigma_current": sigma_i, "sigma_voltage": sigma_v},
        "sweep": sweep,
        "excitation": {"amplitude": amplitude, "dc_offset": dc_offset},
        "seed": seed,
    }
    write_json(out / MANIFEST, {
        "command": "simulate",
        "config": resolved,
        "records": records,
        "reference": "reference.csv",
        "dc_resistance_ohm": params.dc_resistance,
    })
    log.info("simulated %d records, %d samples per channel",
             len(configs), sum(c.n_samples for c in configs))
    return EXIT_OK


# -- estimate ----------------------------------------------------------------


def _pairs_from_inputs(inputs: Sequence[str]) -> list[tuple[Path, Path]]:
    """(current, voltage) file pairs from a manifest, a directory or channel files."""
    if len(inputs) == 1:
        p = _input(inputs[0])
        manifest = p / MANIFEST if p.is_dir() else p
        if manifest.suffix == ".json":
            doc = read_json(_input(manifest))
            try:
                return [(manifest.parent / r["current"], manifest.parent / r["voltage"])
                        for r in doc["records"]]
            except (KeyError, TypeError):
                raise FormatError(f"{manifest}: not a simulation manifest") from None
    paths = [_input(p) for p in inputs]
    by_record: dict = {}
    for k, p in enumerate(paths):
        meta = read_json(_input(p.with_suffix(".json")))
        key = meta.get("record", k // 2)
        slot = by_record.setdefault(key, {})
        ch = meta.get("channel")
        if ch in slot:
            raise ConfigError(f"record {key}: two {ch} files")
        slot[ch] = p
    pairs = []
    for key in sorted(by_record, key=str):
        slot = by_record[key]
        if set(slot) != {"current", "voltage"}:
            raise ConfigError(f"record {key}: need one current and one voltage file")
        pairs.append((slot["current"], slot["voltage"]))
    return pairs


def cmd_estimate(args, cfg: dict, out: Path) -> int:
    check_top_level(cfg, {"morlet_omega0", "trim_coi", "freqs_hz"})
    omega0 = float(cfg.get("morlet_omega0", 6.0))
    trim = bool(cfg.get("trim_coi", True))
    if not omega0 > 0:
        raise ConfigError("morlet_omega0 must be positive")
    forced = cfg.get("freqs_hz")
    pairs = _pairs_from_inputs(args.inputs)
    parts = []
    inputs = []
    for cur_path, volt_path in pairs:
        cur, cur_meta = read_timeseries(_input(cur_path))
        volt, volt_meta = read_timeseries(_input(volt_path))
        if cur.channel != "current" or volt.channel != "voltage":
            raise ConfigError(f"{cur_path}, {volt_path}: channel tags do not form a current/voltage pair")
        freqs = forced if forced is not None else cur_meta.get("tones_hz")
        if freqs is None:
            raise ConfigError(f"{cur_path}: no tones in the sidecar; set 'freqs_hz' in the config")
        parts.append(estimate_impedance_cwt(cur, volt, FrequencyGrid(freqs), omega0, trim))
        inputs += [_input_record(Path(cur_path)), _input_record(Path(volt_path))]
    spectrum = ImpedanceSpectrum.concatenate(parts)
    write_spectrum(out / "spectrum.csv", spectrum)
    write_json(out / "estimate.json", {
        "command": "estimate",
        "config": {"morlet_omega0": omega0, "trim_coi": trim, "freqs_hz": forced},
        "inputs": inputs,
        "n_points": len(spectrum),
    })
    return EXIT_OK


# -- fit-vb ------------------------------------------------------------------


def _bands_columns(bands) -> dict:
    return {
        "freq_hz": bands.freqs_hz,
        "mean_re_ohm": bands.mean.real, "mean_im_ohm": bands.mean.imag,
        "lower_re_ohm": bands.lower.real, "lower_im_ohm": bands.lower.imag,
        "upper_re_ohm": bands.upper.real, "upper_im_ohm": bands.upper.imag,
    }


def cmd_fit_vb(args, cfg: dict, out: Path) -> int:
    check_top_level(cfg, {"model", "prior", "init", "vb", "quantiles"})
    spec_path = _input(args.spectrum)
    spectrum = read_spectrum(spec_path)
    n, l = model_from_config(cfg.get("model"))
    prior = family_from_config(cfg.get("prior"), n)
    init = family_from_config(cfg["init"], n, "init") if "init" in cfg else prior
    conf = vb_config_from_config(cfg.get("vb"), _seed(args, cfg.get("vb") or {}), args.paper_epsilon)
    quantiles = tuple(float(q) for q in cfg.get("quantiles", (0.025, 0.975)))
    if len(quantiles) != 2 or not 0 < quantiles[0] < quantiles[1] < 1:
        raise ConfigError("quantiles must be two increasing probabilities")

    lik = Likelihood(spectrum, n, l)
    report = fit(lik, prior, init, conf)
    report.bands = extract_bands(report, n, spectrum.grid, conf.band_samples, quantiles, l, conf.seed)
    log.info("fit-vb: %d iterations (%s), %.2f s", report.n_iter, report.stop_reason, report.duration_s)

    fam = report.family
    w = min(conf.convergence_window, report.n_iter)
    write_columns(out / "bands.csv", _bands_columns(report.bands))
    trace = {"iteration": np.arange(1, report.n_iter + 1), "elbo": report.elbo_trace}
    for j, name in enumerate(fam.names):
        trace[f"mean_{name}"] = report.mean_trace[:, j]
    for j, name in enumerate(fam.names):
        trace[f"std_{name}"] = report.spread_trace[:, j]
    write_columns(out / "trace.csv", trace)
    posterior = {}
    for name, f, m, s in zip(fam.names, fam.factors, fam.means(), fam.stds()):
        entry = f.as_dict()
        entry.update({"mean": m, "std": s})
        posterior[name] = entry
    write_json(out / "report.json", {
        "command": "fit-vb",
        "config": {
            "model": {"n_elements": n, "inductance": l},
            "prior": prior.as_dict(),
            "init": init.as_dict(),
            "vb": resolved_dataclass(conf),
            "quantiles": list(quantiles),
        },
        "input": _input_record(spec_path),
        "names": list(fam.names),
        "posterior": posterior,
        "n_iter": report.n_iter,
        "stop_reason": report.stop_reason,
        "elbo_last_window_mean": float(np.mean(report.elbo_trace[-w:])),
        "display_order": display_order(fam),
        "bands": _bands_columns(report.bands),
    })
    return EXIT_OK


# -- fit-mcmc ----------------------------------------------------------------


def cmd_fit_mcmc(args, cfg: dict, out: Path) -> int:
    check_top_level(cfg, {"model", "prior", "mcmc", "thin"})
    spec_path = _input(args.spectrum)
    spectrum = read_spectrum(spec_path)
    n, l = model_from_config(cfg.get("model"))
    prior = family_from_config(cfg.get("prior"), n)
    mcfg = dict(cfg.get("mcmc") or {})
    if "workers" in mcfg:
        raise ConfigError("mcmc: parallelism is set with EIS_BAYES_THREADS, not in the config")
    conf = mcmc_config_from_config(mcfg, _seed(args, mcfg))
    thin = cfg.get("thin", 1)
    if not isinstance(thin, int) or thin < 1:
        raise ConfigError("thin must be a positive integer")
    conf = replace(conf, workers=_threads() or 1)
    result = sample(Likelihood(spectrum, n, l), prior, conf)
    log.info("fit-mcmc: %d chains x %d iterations, %.2f s", conf.n_chains, conf.n_iters, result.duration_s)

    draws = result.draws[:, ::thin, :]
    m, k, p = draws.shape
    cols = {"chain": np.repeat(np.arange(m), k), "draw": np.tile(np.arange(k) * thin, m)}
    for j, name in enumerate(result.names):
        cols[name] = draws[:, :, j].ravel()
    write_columns(out / "chains.csv", cols)
    summary = {}
    mean, var, mcse = result.means(), result.variances(), result.mcse()
    for j, name in enumerate(result.names):
        summary[name] = {"mean": mean[j], "variance": var[j], "mcse": mcse[j],
                         "rhat": result.rhat[j], "ess": result.ess[j]}
    write_json(out / "diagnostics.json", {
        "command": "fit-mcmc",
        "config": {
            "model": {"n_elements": n, "inductance": l},
            "prior": prior.as_dict(),
            "mcmc": resolved_dataclass(conf, drop=("workers",)),
            "thin": thin,
        },
        "input": _input_record(spec_path),
        "names": list(result.names),
        "acceptance": result.acceptance,
        "summary": summary,
        "problems": result.problems,
        "ok": result.ok,
    })
    if not result.ok:
        raise DiagnosticFailure("; ".join(result.problems))
    return EXIT_OK


# -- average -----------------------------------------------------------------


def cmd_average(args, cfg: dict, out: Path) -> int:
    check_top_level(cfg, set())
    paths = [_input(p) for p in args.inputs]
    avg = average_spectra([read_spectrum(p) for p in paths])
    write_spectrum(out / "average.csv", avg)
    write_json(out / "average.json", {
        "command": "average",
        "config": {},
        "inputs": [_input_record(p) for p in paths],
        "n_spectra": len(paths),
    })
    return EXIT_OK


# -- compare -----------------------------------------------------------------


def _report_family(doc: dict) -> tuple[VariationalFamily, int, float]:
    try:
        names = doc["names"]
        post = doc["posterior"]
        spec = {name: {k: v for k, v in post[name].items() if k not in ("mean", "std")} for name in names}
        fam = VariationalFamily.from_dict(spec)
        model = doc["config"]["model"]
        return fam, int(model["n_elements"]), float(model["inductance"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"not a fit-vb report: {exc}") from None


def _family_quantiles(fam: VariationalFamily, q: Sequence[float]) -> np.ndarray:
    out = np.empty((len(q), len(fam)))
    for j, f in enumerate(fam.factors):
        for i, qi in enumerate(q):
            if f.kind == "lognormal":
                out[i, j] = np.exp(f.mu_ln + f.sigma_ln * ndtri(qi))
            else:
                out[i, j] = beta_ppf(qi, f.a, f.b)
    return out


def _overlap(a_lo, a_hi, b_lo, b_hi) -> np.ndarray:
    inter = np.clip(np.minimum(a_hi, b_hi) - np.maximum(a_lo, b_lo), 0, None)
    union = np.maximum(a_hi, b_hi) - np.minimum(a_lo, b_lo)
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 1.0)


def _rms(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.abs(a - b) ** 2)))


def _parameter_comparison(names, m1, v1, q1, m2, v2, q2) -> dict:
    overlap = _overlap(q1[0], q1[1], q2[0], q2[1])
    per = {}
    for j, name in enumerate(names):
        per[name] = {
            "mean_a": m1[j], "mean_b": m2[j], "mean_ratio": m1[j] / m2[j],
            "variance_a": v1[j], "variance_b": v2[j], "variance_ratio": v1[j] / v2[j],
            "interval_overlap": overlap[j],
        }
    ratios = np.asarray(m1) / np.asarray(m2)
    vr = np.asarray(v1) / np.asarray(v2)
    return {
        "parameters": per,
        "max_abs_mean_ratio_minus_one": float(np.max(np.abs(ratios - 1))),
        "variance_ratio_range": [float(np.min(vr)), float(np.max(vr))],
        "min_interval_overlap": float(np.min(overlap)),
    }


def _kind_of(path: Path) -> str:
    if path.suffix == ".json":
        return "report"
    header = read_header(path)
    if header[:3] == ["freq_hz", "re_ohm", "im_ohm"]:
        return "spectrum"
    if header[:2] == ["chain", "draw"]:
        return "chains"
    raise FormatError(f"{path}: neither a report, a chains file nor a spectrum")


def cmd_compare(args, cfg: dict, out: Path) -> int:
    check_top_level(cfg, {"quantiles", "band_samples", "seed"})
    quantiles = tuple(float(q) for q in cfg.get("quantiles", (0.025, 0.975)))
    if len(quantiles) != 2 or not 0 < quantiles[0] < quantiles[1] < 1:
        raise ConfigError("quantiles must be two increasing probabilities")
    band_samples = int(cfg.get("band_samples", 1000))
    seed = _seed(args, cfg)
    rep_path, other_path = _input(args.report), _input(args.other)
    doc = read_json(rep_path)
    fam, n, l = _report_family(doc)
    kind = _kind_of(other_path)
    result = {
        "command": "compare",
        "config": {"quantiles": list(quantiles), "band_samples": band_samples, "seed": seed},
        "inputs": {"report": _input_record(rep_path), "other": _input_record(other_path),
                   "other_kind": kind},
    }
    m1, v1 = fam.means(), fam.variances()
    q1 = _family_quantiles(fam, quantiles)
    curve_freqs = None
    if kind == "report":
        fam2, n2, l2 = _report_family(read_json(other_path))
        if fam2.names != fam.names:
            raise ConfigError("reports describe different models")
        result.update(_parameter_comparison(
            fam.names, m1, v1, q1, fam2.means(), fam2.variances(), _family_quantiles(fam2, quantiles)))
        grid = FrequencyGrid(doc["bands"]["freq_hz"])
        other_curve = impedance_batch(fam2.means(), grid.omega, l2)
        curve_freqs = grid
    elif kind == "chains":
        cols = read_columns(other_path)
        missing = [nm for nm in fam.names if nm not in cols]
        if missing:
            raise ConfigError(f"chains file lacks columns {missing}")
        draws = np.column_stack([cols[nm] for nm in fam.names])
        q2 = np.quantile(draws, quantiles, axis=0)
        result.update(_parameter_comparison(
            fam.names, m1, v1, q1, draws.mean(axis=0), draws.var(axis=0, ddof=1), q2))
    else:
        other = read_spectrum(other_path)
        curve_freqs = other.grid
        other_curve = other.z
        bands = extract_bands(fam, n, other.grid, band_samples, quantiles, l, seed)
        inside = ((other.z.real >= bands.lower.real) & (other.z.real <= bands.upper.real)
                  & (other.z.imag >= bands.lower.imag) & (other.z.imag <= bands.upper.imag))
        result["band_coverage_of_other"] = float(np.mean(inside))
    if curve_freqs is not None:
        vb_curve = impedance_batch(m1, curve_freqs.omega, l)
        result["rms_vb_mean_curve_to_other"] = _rms(vb_curve, other_curve)
        if args.truth is not None:
            truth = read_spectrum(_input(args.truth))
            if truth.freqs_hz.shape != curve_freqs.freqs_hz.shape or np.any(
                truth.freqs_hz != curve_freqs.freqs_hz
            ):
                raise ConfigError("truth spectrum is on a different frequency grid")
            result["inputs"]["truth"] = _input_record(Path(args.truth))
            rms_vb = _rms(vb_curve, truth.z)
            rms_other = _rms(other_curve, truth.z)
            result["rms_vb_mean_curve_to_truth"] = rms_vb
            result["rms_other_to_truth"] = rms_other
            result["rms_ratio_vb_over_other"] = rms_vb / rms_other if rms_other > 0 else None
    write_json(out / "comparison.json", result)
    return EXIT_OK


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="seed (overrides the config)")
    common.add_argument("--out", default=".", help="output directory (created if missing)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="eis-bayes", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="simulate time series of a circuit")
    p = sub.add_parser("estimate", parents=[common], help="CWT spectrum from time series")
    p.add_argument("inputs", nargs="+", help="simulation manifest, its directory, or channel CSVs")
    p = sub.add_parser("fit-vb", parents=[common], help="variational posterior of a spectrum")
    p.add_argument("spectrum")
    p.add_argument("--paper-epsilon", action="store_true",
                   help="use the learning rate as the Adam denominator guard")
    p = sub.add_parser("fit-mcmc", parents=[common], help="MCMC posterior of a spectrum")
    p.add_argument("spectrum")
    p = sub.add_parser("average", parents=[common], help="pointwise mean of spectra")
    p.add_argument("inputs", nargs="+")
    p = sub.add_parser("compare", parents=[common], help="compare a VB report with another result")
    p.add_argument("report", help="fit-vb report.json")
    p.add_argument("other", help="report.json, chains.csv or a spectrum CSV")
    p.add_argument("--truth", help="noise-free spectrum for rms-to-truth metrics")
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "fit-vb": cmd_fit_vb,
    "fit-mcmc": cmd_fit_mcmc,
    "average": cmd_average,
    "compare": cmd_compare,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    start = time.perf_counter()
    try:
        cfg = _load_config(args.config)
        _threads()
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        code = COMMANDS[args.command](args, cfg, out)
    except (DivergenceError, InversionError, McmcDiagnosticError, DiagnosticFailure) as exc:
        print(f"eis-bayes {args.command}: diagnostic failure: {exc}", file=sys.stderr)
        return EXIT_DIAGNOSTIC
    except (ConfigError, FormatError, ValueError, OSError) as exc:
        print(f"eis-bayes {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    log.info("%s finished in %.2f s", args.command, time.perf_counter() - start)
    return code


if __name__ == "__main__":
    sys.exit(main())
