"""Command-line pipeline: binarize, fit, regress, verify, export-geojson.

One config file (TOML or JSON) drives everything; explicit flags override
it.  Exit codes: 0 success, 1 input or configuration problem, 2 compute
failure, 3 verification failure.  A fit that dies midway leaves a
`.partial` marker in the output directory; the samples file itself is
written atomically so it is never silently truncated.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .config import (
    build_mc3,
    build_priors,
    build_threshold_rules,
    config_echo,
    load_config,
)
from .dataset import (
    binarize,
    compute_thresholds,
    load_binary_dataset,
    load_table,
    save_binary_dataset,
    save_threshold_manifest,
)
from .postprocess import (
    export_assignments_csv,
    export_imputations_csv,
    export_profile_weights_csv,
    export_reclassification_csv,
    export_theta_csv,
    geojson_join,
    imputation_summary,
    load_assignments_csv,
    summarize_samples,
)
from .regression import (
    CovariateSpec,
    build_design,
    export_odds_ratios_csv,
    fit_logistic,
    forest_payload,
    load_patient_table,
    odds_ratios,
)
from .sampler import run_mc3
from .verify import run_full_checks, run_quick_checks

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_COMPUTE = 2
EXIT_VERIFY = 3

PARTIAL_MARKER = ".partial"


def _load_config(args) -> dict:
    if getattr(args, "config", None):
        return load_config(args.config)
    return {}


def _out_dir(args, config) -> Path:
    out = args.out or config.get("output", {}).get("directory") or "bernmix_out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(payload: dict, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _manifest_base(command: str, config: dict, overrides: dict) -> dict:
    return {
        "tool": "bernmix",
        "version": __version__,
        "command": command,
        "config": config_echo(config, overrides),
    }


def cmd_binarize(args) -> int:
    try:
        config = _load_config(args)
        section = config.get("input", {})
        table_path = args.table or section.get("table")
        if not table_path:
            raise ValueError("no input table: pass --table or set [input].table")
        delimiter = args.delimiter or section.get("delimiter", ",")
        id_column = args.id_column or section.get("id_column")
        rules, default_kind = build_threshold_rules(config)
        out = _out_dir(args, config)
        started = time.perf_counter()
        table = load_table(table_path, delimiter=delimiter, id_column=id_column)
        spec = compute_thresholds(table, rules, default_kind=default_kind)
        dataset = binarize(table, spec)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    matrix_path = out / "binary_matrix.csv"
    save_binary_dataset(dataset, matrix_path, delimiter=delimiter)
    save_threshold_manifest(spec, out / "thresholds.json")
    n_missing = int((~dataset.observed).sum())
    manifest = _manifest_base(
        "binarize", config, {"table": args.table, "out": args.out}
    )
    manifest.update(
        {
            "input_table": str(table_path),
            "n_units": dataset.n_units,
            "n_variables": dataset.n_variables,
            "n_missing_cells": n_missing,
            "elapsed_seconds": round(time.perf_counter() - started, 3),
            "outputs": ["binary_matrix.csv", "thresholds.json"],
        }
    )
    _write_json(manifest, out / "binarize_manifest.json")
    print(
        f"binarized {dataset.n_units} units x {dataset.n_variables} variables "
        f"({n_missing} missing cells) -> {matrix_path}"
    )
    return EXIT_OK


def cmd_fit(args) -> int:
    try:
        config = _load_config(args)
        data_path = args.data or config.get("input", {}).get("binary_matrix")
        if not data_path:
            raise ValueError("no input matrix: pass --data or set [input].binary_matrix")
        delimiter = args.delimiter or config.get("input", {}).get("delimiter", ",")
        priors = build_priors(config)
        if args.k_max is not None:
            priors = dataclasses.replace(priors, k_max=args.k_max)
        overrides = {
            "seed": args.seed,
            "iterations": args.iterations,
            "burn_in": args.burn_in,
            "thin": args.thin,
            "chains": args.chains,
            "delta_t": args.delta_t,
        }
        mc3 = build_mc3(config, overrides)
        threshold = (
            args.reclassify_threshold
            if args.reclassify_threshold is not None
            else config.get("postprocess", {}).get("reclassify_threshold", 0.05)
        )
        data = load_binary_dataset(data_path, delimiter=delimiter)
        out = _out_dir(args, config)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    marker = out / PARTIAL_MARKER
    marker.write_text(f"fit started, pid {os.getpid()}\n")
    started = time.perf_counter()
    try:
        samples = run_mc3(data, priors, mc3, progress=args.verbose)
        tmp = out / "samples.jsonl.tmp"
        samples.save_jsonl(tmp)
        os.replace(tmp, out / "samples.jsonl")

        summary = summarize_samples(
            samples,
            data.unit_ids,
            data.column_names,
            reclassify_threshold=threshold,
        )
        pre = summary.pre or summary
        export_assignments_csv(summary, out / "profile_assignments.csv")
        export_assignments_csv(
            pre, out / "profile_assignments_pre_reclassification.csv"
        )
        export_theta_csv(summary, out / "profile_probabilities.csv")
        export_profile_weights_csv(summary, out / "profile_weights.csv")
        if summary.reclassification is not None:
            export_reclassification_csv(summary, out / "reclassification_log.csv")
        imputed = imputation_summary(samples, data)
        if imputed:
            export_imputations_csv(imputed, out / "imputations.csv")

        from .plots import (
            plot_assignment_probabilities,
            plot_k_distribution,
            plot_profile_probabilities,
        )

        plot_profile_probabilities(summary, out / "profile_probabilities.png")
        plot_assignment_probabilities(summary, out / "assignment_probabilities.png")
        plot_k_distribution(samples, out / "k_nonempty.png")
    except Exception as exc:  # compute failure: marker stays behind
        print(f"compute error: {exc}", file=sys.stderr)
        logger.debug("fit failed", exc_info=True)
        return EXIT_COMPUTE

    swap_rate = samples.swap_acceptance_rate()
    manifest = _manifest_base("fit", config, overrides)
    manifest.update(
        {
            "input_matrix": str(data_path),
            "n_units": data.n_units,
            "n_variables": data.n_variables,
            "seed": mc3.seed,
            "n_iterations": mc3.n_iterations,
            "burn_in_iterations": mc3.burn_in_iterations,
            "thin": mc3.thin,
            "n_chains": mc3.n_chains,
            "delta_t": mc3.delta_t,
            "retained_draws": samples.n_draws,
            "swap_acceptance": swap_rate,
            "k_move_acceptance_per_chain": [
                (int(a), int(b))
                for a, b in zip(samples.k_move_accepts, samples.k_move_attempts)
            ],
            "k_map": summary.k_map,
            "profiles": summary.k_profiles,
            "profile_sizes": summary.sizes.tolist(),
            "reclassify_threshold": threshold,
            "n_missing_cells": int((~data.observed).sum()),
            "elapsed_seconds": round(time.perf_counter() - started, 3),
            "outputs": sorted(
                p.name for p in out.iterdir() if p.name != PARTIAL_MARKER
            ),
        }
    )
    _write_json(manifest, out / "fit_manifest.json")
    marker.unlink()
    rate_text = "n/a" if swap_rate is None else f"{swap_rate:.2f}"
    print(
        f"fit done: k_map = {summary.k_map}, {summary.k_profiles} profiles, "
        f"sizes {summary.sizes.tolist()}, swap acceptance {rate_text}"
    )
    print(f"outputs in {out}")
    return EXIT_OK


def _profile_spec_from_config(section: dict, values) -> CovariateSpec:
    levels = section.get("profile_levels")
    if levels is None:
        unique = sorted(set(values), key=lambda v: (len(v), v))
        reference = str(section.get("profile_reference", unique[0] if unique else "1"))
        levels = [reference] + [v for v in unique if v != reference]
    return CovariateSpec(section.get("profile_column", "profile"), tuple(str(v) for v in levels))


def cmd_regress(args) -> int:
    try:
        config = _load_config(args)
        section = dict(config.get("regression", {}))
        patients_path = args.patients or section.get("patients")
        if not patients_path:
            raise ValueError("no patient table: pass --patients or set [regression].patients")
        outcome_column = args.outcome or section.get("outcome")
        if not outcome_column:
            raise ValueError("no outcome column: pass --outcome or set [regression].outcome")
        profile_column = section.get("profile_column", "profile")
        covariates = tuple(section.get("covariates", ()))
        table = load_patient_table(
            patients_path,
            outcome_column=outcome_column,
            profile_column=profile_column,
            covariate_columns=covariates,
            delimiter=section.get("delimiter", ","),
        )
        covariate_specs = {}
        for name, entry in dict(section.get("levels", {})).items():
            covariate_specs[name] = CovariateSpec(name, tuple(str(v) for v in entry["order"]))
        profile_spec = _profile_spec_from_config(section, table.profile)
        design = build_design(
            table,
            profile_spec=profile_spec,
            covariate_specs=covariate_specs,
            profile_column_name=profile_column,
        )
        out = _out_dir(args, config)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    started = time.perf_counter()
    try:
        fit = fit_logistic(
            design,
            table.outcome,
            prior_sd=float(section.get("prior_sd", 5.0)),
            n_iterations=int(args.iterations or section.get("iterations", 15000)),
            burn_in=int(args.burn_in or section.get("burn_in", 5000)),
            thin=int(args.thin or section.get("thin", 5)),
            seed=int(args.seed if args.seed is not None else section.get("seed", 0)),
        )
        rows = odds_ratios(fit, point=section.get("point", "mean"))
        export_odds_ratios_csv(rows, out / "odds_ratios.csv")
        payload = forest_payload(rows, title=f"odds of {outcome_column}")
        _write_json(payload, out / "forest.json")

        from .plots import plot_forest

        plot_forest(payload, out / "odds_ratios.png")
    except ValueError as exc:
        # rank deficiency and friends: bad design, not a crash
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:
        print(f"compute error: {exc}", file=sys.stderr)
        logger.debug("regress failed", exc_info=True)
        return EXIT_COMPUTE

    manifest = _manifest_base(
        "regress", config, {"patients": args.patients, "seed": args.seed}
    )
    manifest.update(
        {
            "patients": str(patients_path),
            "n_patients": len(table.patient_ids),
            "outcome": outcome_column,
            "design_columns": design.names,
            "acceptance_rate": fit.acceptance_rate,
            "min_ess": float(fit.ess.min()),
            "elapsed_seconds": round(time.perf_counter() - started, 3),
            "outputs": ["odds_ratios.csv", "forest.json", "odds_ratios.png"],
        }
    )
    _write_json(manifest, out / "regress_manifest.json")
    print(
        f"regress done: {len(rows)} coefficients, acceptance "
        f"{fit.acceptance_rate:.2f}, min ESS {fit.ess.min():.0f}"
    )
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        checks = run_quick_checks(args.seed) if args.quick else run_full_checks(args.seed)
    except Exception as exc:
        print(f"compute error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    failed = 0
    for check in checks:
        print(check.line())
        failed += 0 if check.passed else 1
    total = len(checks)
    print(f"{total - failed}/{total} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def cmd_export_geojson(args) -> int:
    try:
        with open(args.boundaries) as fh:
            boundaries = json.load(fh)
        unit_ids, profiles, probs = load_assignments_csv(args.assignments)
        joined, matched, unmatched = geojson_join(
            boundaries, unit_ids, profiles, probs, key=args.key
        )
        if matched == 0:
            raise ValueError(
                f"no feature matched on property {args.key!r}; wrong key?"
            )
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out_path = Path(args.out)
    tmp = out_path.with_name(out_path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(joined, fh)
        fh.write("\n")
    os.replace(tmp, out_path)
    if unmatched:
        print(
            f"warning: {len(unmatched)} assigned units have no boundary feature",
            file=sys.stderr,
        )
    print(f"annotated {matched} features -> {out_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bernmix",
        description="Bayesian Bernoulli mixture profiling pipeline",
    )
    parser.add_argument("--version", action="version", version=f"bernmix {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML or JSON config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--verbose", action="store_true", help="log progress to stderr")

    p = sub.add_parser("binarize", help="threshold a numeric table into 0/1/NA")
    common(p)
    p.add_argument("--table", help="delimited numeric input table")
    p.add_argument("--delimiter", help="field delimiter (default comma)")
    p.add_argument("--id-column", help="unit id column (default: first)")
    p.set_defaults(func=cmd_binarize)

    p = sub.add_parser("fit", help="run the mixture sampler and summarize profiles")
    common(p)
    p.add_argument("--data", help="binary matrix csv from `binarize`")
    p.add_argument("--delimiter", help="field delimiter (default comma)")
    p.add_argument("--seed", type=int, help="override mcmc seed")
    p.add_argument("--iterations", type=int, help="override iteration count")
    p.add_argument("--burn-in", type=int, dest="burn_in", help="override burn-in")
    p.add_argument("--thin", type=int, help="override thinning interval")
    p.add_argument("--chains", type=int, help="override chain count")
    p.add_argument("--delta-t", type=float, dest="delta_t", help="override heat spacing")
    p.add_argument("--k-max", type=int, dest="k_max", help="override component cap")
    p.add_argument(
        "--reclassify-threshold",
        type=float,
        dest="reclassify_threshold",
        help="dissolve profiles under this unit share (0 disables)",
    )
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("regress", help="logistic regression of an outcome on profiles")
    common(p)
    p.add_argument("--patients", help="patient csv with outcome and profile columns")
    p.add_argument("--outcome", help="outcome column name")
    p.add_argument("--seed", type=int, help="override regression seed")
    p.add_argument("--iterations", type=int, help="override iteration count")
    p.add_argument("--burn-in", type=int, dest="burn_in", help="override burn-in")
    p.add_argument("--thin", type=int, help="override thinning interval")
    p.set_defaults(func=cmd_regress)

    p = sub.add_parser("verify", help="run the oracle-backed self checks")
    p.add_argument("--quick", action="store_true", help="fast tier only")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("export-geojson", help="join assignments onto boundaries")
    p.add_argument("--boundaries", required=True, help="GeoJSON FeatureCollection")
    p.add_argument("--assignments", required=True, help="profile_assignments.csv")
    p.add_argument("--out", required=True, help="annotated GeoJSON path")
    p.add_argument("--key", default="GEOID", help="feature property holding unit id")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_export_geojson)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    return args.func(args)


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
