"""Run configuration: one TOML or JSON file, command-line flags win.

Sections mirror the pipeline: [input], [thresholds], [priors], [mcmc],
[postprocess], [regression], [output].  Every section is optional; typed
builders below fill defaults and reject unknown keys so typos fail loudly
instead of silently running defaults.
"""

from __future__ import annotations

import json
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .dataset import ThresholdRule
from .model import Priors
from .sampler import Mc3Config

KNOWN_SECTIONS = (
    "input",
    "thresholds",
    "priors",
    "mcmc",
    "postprocess",
    "regression",
    "output",
)


def load_config(path) -> dict:
    """Parse a .toml or .json config file into a plain dict."""
    path = Path(path)
    if not path.exists():
        raise ValueError(f"config file {path} does not exist")
    if path.suffix == ".toml":
        with open(path, "rb") as fh:
            config = tomllib.load(fh)
    elif path.suffix == ".json":
        with open(path) as fh:
            config = json.load(fh)
    else:
        raise ValueError(
            f"config file {path} must end in .toml or .json"
        )
    unknown = sorted(set(config) - set(KNOWN_SECTIONS))
    if unknown:
        raise ValueError(f"unknown config sections {unknown}; known: {list(KNOWN_SECTIONS)}")
    return config


def _check_keys(section: dict, allowed: tuple, where: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ValueError(f"unknown keys {unknown} in [{where}]; allowed: {list(allowed)}")


def build_priors(config: dict) -> Priors:
    section = dict(config.get("priors", {}))
    _check_keys(
        section,
        ("lambda", "k_max", "gamma", "alpha", "beta", "k_prior", "weight_prior"),
        "priors",
    )
    return Priors(
        lam=float(section.get("lambda", 1.0)),
        k_max=int(section.get("k_max", 50)),
        gamma=float(section.get("gamma", 1.0)),
        alpha=float(section.get("alpha", 1.0)),
        beta=float(section.get("beta", 1.0)),
        k_prior_kind=section.get("k_prior", "truncated_poisson"),
        weight_prior_kind=section.get("weight_prior", "unit"),
    )


def build_mc3(config: dict, overrides: dict | None = None) -> Mc3Config:
    section = dict(config.get("mcmc", {}))
    _check_keys(
        section,
        (
            "iterations",
            "burn_in",
            "thin",
            "chains",
            "delta_t",
            "swap_attempts",
            "k_move_probability",
            "impute",
            "swap_pairs",
            "seed",
        ),
        "mcmc",
    )
    for key, value in (overrides or {}).items():
        if value is not None:
            section[key] = value
    return Mc3Config(
        n_iterations=int(section.get("iterations", 15000)),
        burn_in_iterations=int(section.get("burn_in", 5000)),
        thin=int(section.get("thin", 10)),
        n_chains=int(section.get("chains", 4)),
        delta_t=float(section.get("delta_t", 0.025)),
        swap_attempts_per_iteration=int(section.get("swap_attempts", 1)),
        k_move_probability=float(section.get("k_move_probability", 1.0)),
        impute=bool(section.get("impute", True)),
        swap_pair_scheme=section.get("swap_pairs", "adjacent"),
        seed=int(section.get("seed", 0)),
    )


def build_threshold_rules(config: dict) -> tuple[dict, str]:
    """Per-column ThresholdRule mapping plus the default rule kind."""
    section = dict(config.get("thresholds", {}))
    _check_keys(section, ("default", "columns"), "thresholds")
    default_kind = section.get("default", "median_split")
    rules = {}
    for name, entry in dict(section.get("columns", {})).items():
        _check_keys(dict(entry), ("kind", "value"), f"thresholds.columns.{name}")
        kind = entry.get("kind", default_kind)
        value = entry.get("value")
        rules[name] = ThresholdRule(kind, float(value) if value is not None else None)
    return rules, default_kind


def config_echo(config: dict, overrides: dict | None = None) -> dict:
    """What actually ran: the file contents with flag overrides folded in."""
    echo = json.loads(json.dumps(config))  # deep copy, JSON-safe
    if overrides:
        echo["_flag_overrides"] = {
            k: v for k, v in overrides.items() if v is not None
        }
    return echo
