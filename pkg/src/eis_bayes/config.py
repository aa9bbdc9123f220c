"""
Run configuration: JSON blocks to library objects, and back.

Every block rejects unknown keys so that a typo fails loudly instead of
silently falling back to a default. Each ``*_from_config`` function returns
the parsed object; ``resolved_*`` helpers give the fully expanded form that
is echoed into output files.
"""
from __future__ import annotations

import dataclasses
from typing import Any, Optional

from .ecm import EcmParams, RqElement, param_names
from .mcmc import McmcConfig
from .presets import (
    DEFAULT_NOISE_PRIOR,
    NOISE_LEVELS,
    NUMERICAL_EXAMPLE,
    numerical_example_prior,
    stack_prior,
)
from .probdist import VariationalFamily, factor_from_dict
from .vb import VbConfig

PRIOR_PRESETS = {"numerical_example": numerical_example_prior, "stack": stack_prior}
CIRCUIT_PRESETS = {"numerical_example": NUMERICAL_EXAMPLE}
SWEEP_KEYS = (
    "f_min", "f_max", "points_per_decade", "decades_per_record", "interleave", "cycles", "oversample",
)


class ConfigError(ValueError):
    """The run configuration is malformed or inconsistent."""


def _block(cfg: Any, where: str, allowed) -> dict:
    if cfg is None:
        return {}
    if not isinstance(cfg, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    return cfg


def check_top_level(cfg: dict, allowed) -> dict:
    return _block(cfg, "config", set(allowed) | {"schema_version"})


def dataclass_from_config(cls, cfg: Optional[dict], where: str, **overrides):
    names = [f.name for f in dataclasses.fields(cls)]
    cfg = dict(_block(cfg, where, names))
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def vb_config_from_config(cfg, seed=None, paper_epsilon=False) -> VbConfig:
    conf = dataclass_from_config(VbConfig, cfg, "vb", seed=seed)
    return conf.with_paper_epsilon() if paper_epsilon else conf


def mcmc_config_from_config(cfg, seed=None) -> McmcConfig:
    return dataclass_from_config(McmcConfig, cfg, "mcmc", seed=seed)


def resolved_dataclass(obj, drop=()) -> dict:
    return {k: v for k, v in dataclasses.asdict(obj).items() if k not in drop}


# -- circuit -----------------------------------------------------------------


def params_from_config(cfg) -> EcmParams:
    """``{"preset": name}`` or explicit ``r_s``/``elements``/``inductance``/``noise_scale``."""
    cfg = _block(cfg or {"preset": "numerical_example"}, "circuit",
                 {"preset", "r_s", "elements", "inductance", "noise_scale"})
    if "preset" in cfg:
        if len(cfg) > 1:
            raise ConfigError("circuit: 'preset' cannot be combined with explicit values")
        try:
            return CIRCUIT_PRESETS[cfg["preset"]]
        except KeyError:
            raise ConfigError(f"circuit: unknown preset {cfg['preset']!r}") from None
    try:
        elements = []
        for j, e in enumerate(cfg["elements"]):
            e = _block(e, f"circuit.elements[{j}]", {"r", "q", "alpha"})
            elements.append(RqElement(float(e["r"]), float(e["q"]), float(e["alpha"])))
        return EcmParams(
            float(cfg["r_s"]), tuple(elements),
            l=float(cfg.get("inductance", 0.0)),
            noise_scale=float(cfg.get("noise_scale", 1.0)),
        )
    except KeyError as exc:
        raise ConfigError(f"circuit: missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"circuit: {exc}") from exc


def resolved_params(params: EcmParams) -> dict:
    return {
        "r_s": params.r_s,
        "elements": [{"r": e.r, "q": e.q, "alpha": e.alpha} for e in params.elements],
        "inductance": params.l,
        "noise_scale": params.noise_scale,
    }


def noise_from_config(cfg) -> tuple[float, float]:
    """``{"measurement": 1|2|3}`` or explicit ``sigma_current``/``sigma_voltage``."""
    cfg = _block(cfg or {"measurement": 1}, "noise", {"measurement", "sigma_current", "sigma_voltage"})
    if "measurement" in cfg:
        if len(cfg) > 1:
            raise ConfigError("noise: 'measurement' cannot be combined with explicit values")
        try:
            return NOISE_LEVELS[int(cfg["measurement"])]
        except (KeyError, ValueError, TypeError):
            raise ConfigError(f"noise: measurement must be one of {sorted(NOISE_LEVELS)}") from None
    try:
        sc, sv = float(cfg.get("sigma_current", 0.0)), float(cfg.get("sigma_voltage", 0.0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"noise: {exc}") from exc
    if sc < 0 or sv < 0:
        raise ConfigError("noise: standard deviations must be non-negative")
    return sc, sv


def sweep_from_config(cfg) -> dict:
    cfg = _block(cfg, "sweep", SWEEP_KEYS)
    out = {"f_min": 1e-4, "f_max": 1e4, "points_per_decade": 6, "decades_per_record": 2.0,
           "interleave": 2, "cycles": 30.0, "oversample": 10.0}
    out.update(cfg)
    for key in ("points_per_decade", "interleave"):
        if not isinstance(out[key], int) or out[key] < 1:
            raise ConfigError(f"sweep: {key} must be a positive integer")
    for key in ("f_min", "f_max", "decades_per_record", "cycles", "oversample"):
        if not isinstance(out[key], (int, float)) or not out[key] > 0:
            raise ConfigError(f"sweep: {key} must be positive")
    if out["f_max"] <= out["f_min"]:
        raise ConfigError("sweep: f_max must exceed f_min")
    if out["oversample"] <= 2:
        raise ConfigError("sweep: oversample must exceed 2 (Nyquist)")
    return out


# -- model and priors --------------------------------------------------------


def model_from_config(cfg) -> tuple[int, float]:
    cfg = _block(cfg, "model", {"n_elements", "inductance"})
    n = cfg.get("n_elements", 3)
    l = cfg.get("inductance", 0.0)
    if not isinstance(n, int) or n < 1:
        raise ConfigError("model: n_elements must be a positive integer")
    if not isinstance(l, (int, float)) or l < 0:
        raise ConfigError("model: inductance must be a non-negative number")
    return n, float(l)


def family_from_config(cfg, n_elements: int, where: str = "prior") -> VariationalFamily:
    """Mean-field family from a preset or per-parameter factor specs.

    Factor specs accept ``mean``/``variance`` (moment matched) or native
    hyperparameters. ``sigma_n`` may be omitted and then gets the default
    broad lognormal.
    """
    cfg = _block(cfg or {"preset": "numerical_example"}, where, {"preset", "factors"})
    names = param_names(n_elements)
    if "preset" in cfg:
        if "factors" in cfg:
            raise ConfigError(f"{where}: give either 'preset' or 'factors'")
        try:
            fam = PRIOR_PRESETS[cfg["preset"]]()
        except KeyError:
            raise ConfigError(f"{where}: unknown preset {cfg['preset']!r}") from None
        if fam.names != tuple(names):
            raise ConfigError(f"{where}: preset {cfg['preset']!r} does not match a {n_elements}-element model")
        return fam
    specs = _block(cfg.get("factors"), f"{where}.factors", names)
    factors = []
    for name in names:
        if name not in specs:
            if name == "sigma_n":
                factors.append(DEFAULT_NOISE_PRIOR)
                continue
            raise ConfigError(f"{where}: missing factor for {name}")
        try:
            f = factor_from_dict(specs[name])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}.{name}: {exc}") from exc
        want = "beta" if name.startswith("alpha") else "lognormal"
        if f.kind != want:
            raise ConfigError(f"{where}.{name}: must be a {want} factor")
        factors.append(f)
    return VariationalFamily(tuple(names), tuple(factors))
