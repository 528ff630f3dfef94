"""Command-line entry point: ``radrepro {synth,extract,repro,survival,analyze}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, pipeline, tables
from .preprocess import SETTING_NAMES, get_setting, load_settings
from .repro_stats import DegenerateDataError
from .survival.cindex import NoComparablePairsError
from .survival.cox import CollinearityError
from .survival.cv import SUMMARY_COLUMNS, GridSpec, load_grid, run_grid
from .synth import SynthSpec, SynthSpecError, load_synth_spec, write_cohort
from .volume_io import load_manifest

logger = logging.getLogger("radrepro")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
NUMERICAL_ERRORS = (CollinearityError, DegenerateDataError, NoComparablePairsError, np.linalg.LinAlgError, FloatingPointError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _settings(arg: str):
    """``all``, a comma list of setting names, or a JSON settings file."""
    if arg.endswith(".json"):
        return list(load_settings(arg).values())
    names = SETTING_NAMES if arg.strip().lower() == "all" else [s.strip() for s in arg.split(",") if s.strip()]
    bad = [n for n in names if n not in SETTING_NAMES]
    if bad:
        raise UsageError(f"unknown setting(s) {', '.join(bad)}; valid names: all, {', '.join(SETTING_NAMES)}")
    return [get_setting(n) for n in names]


def _read_outcomes(path):
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), [])
    if "image_path" in header:
        return pipeline.manifest_outcomes(load_manifest(path))
    return tables.read_outcomes(path)


# --------------------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    spec = load_synth_spec(args.spec) if args.spec else SynthSpec()
    overrides = {}
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    if args.n_subjects is not None:
        overrides["n_subjects"] = args.n_subjects
    if overrides:
        spec = SynthSpec(**{**spec.__dict__, **overrides})
    manifest = write_cohort(spec, args.out, workers=args.workers, with_outcomes=args.outcomes)
    m = load_manifest(manifest)
    n_images = len({e.image_path for e in m})
    print(f"cohort: {spec.n_subjects} subjects, {len(spec.reconstructions)} reconstructions each, {n_images} image volumes")
    print(f"manifest: {manifest}")
    if m.is_survival:
        events = sum(e for _, e in m.survival().values())
        print(f"outcomes: {events} events, {spec.n_subjects - events} censored")
    return EXIT_OK


def cmd_extract(args) -> int:
    configs = _settings(args.settings)
    manifest = load_manifest(args.manifest)
    n_rows, n_fail = pipeline.extract_to_csv(manifest, configs, args.out, workers=args.workers)
    print(f"{n_rows} feature rows written to {args.out}; {n_fail} ROI extraction failure(s)")
    return EXIT_OK


def cmd_repro(args) -> int:
    table = tables.read_feature_table(args.features)
    results, excluded, wilcoxon = pipeline.reproducibility(table, reference_asir=args.reference_asir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tables.write_repro_results(results, out / "repro.csv")
    tables.write_rows(
        out / "wilcoxon.csv",
        ("extractor", "pair_a", "pair_b", "n", "median_ccc_a", "median_ccc_b", "statistic", "pvalue", "method"),
        wilcoxon,
    )
    tables.write_rows(out / "excluded.csv", ("feature_family", "feature_name", "roi", "extractor"), sorted(excluded))
    n_gen = sum(r.kind == "generalized" for r in results)
    print(f"{n_gen} generalized CCCs, {len(results) - n_gen} pairwise CCCs, {len(excluded)} excluded; written to {out}")
    return EXIT_OK


def cmd_survival(args) -> int:
    table = tables.read_feature_table(args.features)
    repro = tables.read_repro_results(args.repro)
    outcomes = _read_outcomes(args.outcomes)
    extractors = sorted(table["extractor"].unique())
    grid = load_grid(args.grid, extractors) if args.grid else GridSpec(tuple(extractors) + ("all",))
    if args.seed is not None:
        grid = GridSpec(**{**grid.__dict__, "rng_seed": args.seed})
    designs = pipeline.survival_designs(table, repro, outcomes, [x for x in grid.extractors if x != "all"])
    rows = run_grid(designs, grid, workers=args.workers)
    out = Path(args.out)
    tables.write_rows(out, SUMMARY_COLUMNS, rows)
    top = sorted(rows, key=lambda r: (-r["mean_test_cindex"], r["extractor"], r["ccc_threshold"], r["n_features"]))[:10]
    tables.write_rows(out.with_name(out.stem + "_top10.csv"), SUMMARY_COLUMNS, top)
    print(f"{len(rows)} grid cells written to {out}")
    for r in top[:3]:
        print(f"  {r['extractor']:>4} ccc>={r['ccc_threshold']:<4} k={r['n_features']:<3} C={r['mean_test_cindex']:.3f} ({r['ci_lo']:.3f}-{r['ci_hi']:.3f})")
    return EXIT_OK


def cmd_analyze(args) -> int:
    repro = tables.read_repro_results(args.repro)
    cindex_rows = []
    if args.features and args.outcomes:
        table = tables.read_feature_table(args.features)
        designs = pipeline.survival_designs(table, repro, _read_outcomes(args.outcomes))
        cindex_rows = analysis.univariate_cindex_rows(designs)
    summary = []
    if args.summary:
        with open(args.summary, newline="") as fh:
            for r in csv.DictReader(fh):
                summary.append(
                    {k: (r[k] if k == "extractor" else int(r[k]) if k == "n_features" else float(r[k]) if r[k] != "" else float("nan")) for k in SUMMARY_COLUMNS}
                )
    wilcoxon = []
    if args.wilcoxon:
        with open(args.wilcoxon, newline="") as fh:
            wilcoxon = list(csv.DictReader(fh))
    files = analysis.emit_reports(args.out, repro, cindex_rows, summary, wilcoxon)
    print(f"{len(files)} report file(s) written to {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="radrepro", description="Reproducibility and survival analysis of radiomic features.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    default_workers = pipeline.default_workers()

    s = sub.add_parser("synth", help="generate a synthetic cohort")
    s.add_argument("--spec", help="JSON cohort spec (defaults used when omitted)")
    s.add_argument("--out", required=True, help="cohort directory")
    s.add_argument("--seed", type=int)
    s.add_argument("--n-subjects", type=int)
    s.add_argument("--outcomes", action=argparse.BooleanOptionalAction, default=None, help="write survival columns")
    s.add_argument("--workers", type=int, default=default_workers)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("extract", help="extract features for every manifest entry")
    s.add_argument("manifest")
    s.add_argument("--settings", default="all", help="'all', comma-separated names, or a JSON settings file")
    s.add_argument("--out", required=True, help="FeatureTable CSV (resumed when present)")
    s.add_argument("--workers", type=int, default=default_workers)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("repro", help="CCC spectrum and thickness-pair Wilcoxon tests")
    s.add_argument("features")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--reference-asir", type=float, default=20.0)
    s.set_defaults(func=cmd_repro)

    s = sub.add_parser("survival", help="cross-validated Cox model grid")
    s.add_argument("features", help="FeatureTable CSV of the survival cohort")
    s.add_argument("repro", help="repro.csv from the repro command")
    s.add_argument("outcomes", help="survival manifest or outcomes CSV")
    s.add_argument("--grid", help="JSON run matrix")
    s.add_argument("--out", required=True, help="summary CSV")
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int, default=default_workers)
    s.set_defaults(func=cmd_survival)

    s = sub.add_parser("analyze", help="clustering, Pareto fronts and report files")
    s.add_argument("repro", help="repro.csv")
    s.add_argument("--features", help="survival FeatureTable CSV")
    s.add_argument("--outcomes", help="survival manifest or outcomes CSV")
    s.add_argument("--summary", help="survival grid summary CSV")
    s.add_argument("--wilcoxon", help="wilcoxon.csv from the repro command")
    s.add_argument("--out", required=True, help="report directory")
    s.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"radrepro: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERICAL_ERRORS as exc:
        print(f"radrepro: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (SynthSpecError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"radrepro: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
