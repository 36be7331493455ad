"""Command-line entry point: ``readease <subcommand> ...``.

Exit status is 0 on success, 1 on a fatal input error and 2 on an invalid
configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from .census import EducationError, load_education
from .core import HashtagPolicy
from .geo import DEFAULT_THRESHOLD_DEG, CentroidError
from .pipeline import (
    SWEEP_MIN_COUNTS,
    BinSpec,
    ConfigError,
    CorpusInput,
    InputError,
    PipelineConfig,
    read_aggregates,
    regress,
    run_pipeline,
    write_histograms,
    write_regression_outputs,
)
from .stats import DEFAULT_SE_FLOOR, histogram

log = logging.getLogger("readease")

SUBCOMMAND_STAGES = {
    "score": {"scores"},
    "hashtag-delta": {"delta"},
    "geo-aggregate": {"geo"},
    "pipeline": {"scores", "histogram", "delta", "geo", "regress"},
}


def _bins(text: str) -> BinSpec:
    try:
        return BinSpec.parse(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(p) for p in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X:Y, got {text!r}") from None
    return a, b


def _add_corpus_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", action="append", required=True, type=Path, metavar="PATH",
                   help="corpus file; repeat for several corpora")
    p.add_argument("--format", action="append", choices=("jsonl", "lines"), metavar="{jsonl,lines}",
                   help="given once for all inputs or once per input (default jsonl)")
    p.add_argument("--name", action="append", help="corpus label per input (default: file stem)")
    p.add_argument("--lang", default="en",
                   help='keep jsonl records with this exact lang code; "" keeps all (default en)')
    p.add_argument("--hashtags", choices=("include", "exclude"), default="exclude")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--bins", type=_bins, default=BinSpec(-50.0, 130.0, 2.0), metavar="LO:HI:W",
                   help="RE histogram bins (default -50:130:2)")
    p.add_argument("--delta-bins", type=_bins, default=BinSpec(-60.0, 120.0, 2.0), metavar="LO:HI:W",
                   help="hashtag-delta histogram bins (default -60:120:2)")


def _add_geo_args(p: argparse.ArgumentParser, required: bool) -> None:
    p.add_argument("--centroids", type=Path, required=required,
                   help="CSV with GEOID, INTPTLAT, INTPTLONG")
    p.add_argument("--geo-threshold", type=float, default=DEFAULT_THRESHOLD_DEG, metavar="DEG")
    p.add_argument("--min-count", type=int, default=10, metavar="N")


def _add_regress_args(p: argparse.ArgumentParser, required: bool) -> None:
    p.add_argument("--education", type=Path, required=required,
                   help="CSV with zcta, pct_hs, pct_bachelors")
    p.add_argument("--x-column", choices=("pct_bachelors", "pct_hs"), default="pct_bachelors")
    p.add_argument("--sweep", type=int, nargs="+", default=list(SWEEP_MIN_COUNTS), metavar="N")
    p.add_argument("--se-floor", type=float, default=DEFAULT_SE_FLOOR)
    p.add_argument("--median-width", type=float, default=5.0)
    p.add_argument("--density-widths", type=_pair, default=(5.0, 5.0), metavar="X:Y")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="readease", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score every message (scores.csv)")
    _add_corpus_args(p)
    p.add_argument("--out", type=Path, required=True, metavar="DIR")

    p = sub.add_parser("histogram", help="histogram of the re column of a scores CSV")
    p.add_argument("--scores", type=Path, required=True, action="append")
    p.add_argument("--name", action="append")
    p.add_argument("--column", default="re")
    p.add_argument("--bins", type=_bins, default=BinSpec(-50.0, 130.0, 2.0), metavar="LO:HI:W")
    p.add_argument("--out", type=Path, required=True, metavar="DIR")

    p = sub.add_parser("hashtag-delta", help="RE change from counting hashtags")
    _add_corpus_args(p)
    p.add_argument("--out", type=Path, required=True, metavar="DIR")

    p = sub.add_parser("geo-aggregate", help="per-ZCTA mean RE and standard error")
    _add_corpus_args(p)
    _add_geo_args(p, required=True)
    p.add_argument("--out", type=Path, required=True, metavar="DIR")

    p = sub.add_parser("regress", help="fit mean RE against an education column")
    p.add_argument("--aggregates", type=Path, required=True,
                   help="zcta aggregates CSV (zcta_aggregates_all.csv for a full sweep)")
    p.add_argument("--min-count", type=int, default=10, metavar="N")
    p.add_argument("--bins", type=_bins, default=BinSpec(-50.0, 130.0, 2.0), metavar="LO:HI:W")
    _add_regress_args(p, required=True)
    p.add_argument("--out", type=Path, required=True, metavar="DIR")

    p = sub.add_parser("pipeline", help="run every stage end to end")
    _add_corpus_args(p)
    _add_geo_args(p, required=False)
    _add_regress_args(p, required=False)
    p.add_argument("--out", type=Path, required=True, metavar="DIR")
    return parser


def _inputs(args) -> list[CorpusInput]:
    formats = args.format or ["jsonl"]
    if len(formats) == 1:
        formats = formats * len(args.input)
    if len(formats) != len(args.input):
        raise ConfigError("give --format once, or once per --input")
    names = args.name or [""] * len(args.input)
    if len(names) != len(args.input):
        raise ConfigError("give --name once per --input")
    return [CorpusInput(p, f, n) for p, f, n in zip(args.input, formats, names)]


def config_from_args(args) -> PipelineConfig:
    stages = set(SUBCOMMAND_STAGES[args.command])
    if args.command == "pipeline":
        if args.centroids is None:
            stages -= {"geo", "regress"}
        elif args.education is None:
            stages -= {"regress"}
    if args.command == "score":
        stages.add("histogram")
    cfg = PipelineConfig(
        inputs=_inputs(args),
        out_dir=args.out,
        lang=args.lang or None,
        policy=HashtagPolicy(args.hashtags),
        workers=args.workers,
        re_bins=args.bins,
        delta_bins=args.delta_bins,
        stages=frozenset(stages),
    )
    if hasattr(args, "centroids"):
        cfg.centroids = args.centroids
        cfg.geo_threshold = args.geo_threshold
        cfg.min_count = args.min_count
    if hasattr(args, "education"):
        cfg.education = args.education
        cfg.x_column = args.x_column
        cfg.sweep = tuple(args.sweep)
        cfg.se_floor = args.se_floor
        cfg.median_width = args.median_width
        cfg.density_widths = args.density_widths
    return cfg


def _cmd_histogram(args) -> None:
    names = args.name or [p.stem for p in args.scores]
    if len(names) != len(args.scores):
        raise ConfigError("give --name once per --scores")
    hists = []
    for path, name in zip(args.scores, names):
        if not path.is_file():
            raise InputError(f"cannot read {path}")
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or args.column not in reader.fieldnames:
                raise InputError(f"{path}: no {args.column!r} column")
            try:
                h = histogram((float(r[args.column]) for r in reader), args.bins.lo, args.bins.hi, args.bins.width)
            except ValueError as exc:
                raise InputError(f"{path}: {exc}") from None
        hists.append((name, h))
    args.out.mkdir(parents=True, exist_ok=True)
    write_histograms(args.out / "histogram.csv", hists)


def _cmd_regress(args) -> None:
    if args.min_count < 1 or any(m < 1 for m in args.sweep):
        raise ConfigError("min-count values must be positive integers")
    for p in (args.aggregates, args.education):
        if not p.is_file():
            raise InputError(f"cannot read {p}")
    groups = read_aggregates(args.aggregates)
    education = load_education(args.education)
    cfg = PipelineConfig(
        inputs=[], out_dir=args.out, min_count=args.min_count, sweep=tuple(args.sweep),
        x_column=args.x_column, se_floor=args.se_floor, median_width=args.median_width,
        density_widths=args.density_widths, re_bins=args.bins,
    )
    outcome = regress(groups, education, args.min_count, args.sweep, args.x_column, args.se_floor)
    args.out.mkdir(parents=True, exist_ok=True)
    stale = args.out / "regression.json"
    if stale.exists():
        stale.unlink()
    if outcome.report is None:
        log.warning("regression skipped: %s", outcome.skipped)
        return
    write_regression_outputs(args.out, outcome, cfg)
    print(json.dumps({k: outcome.report[k] for k in ("slope", "slope_se", "intercept", "n_zcta")}))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "histogram":
            _cmd_histogram(args)
        elif args.command == "regress":
            _cmd_regress(args)
        else:
            result = run_pipeline(config_from_args(args))
            c = result.summary["counts"]
            log.info(
                "read %d, skipped %d, filtered %d, unassigned %d, zcta groups %d, regression %s",
                c["read"], c["skipped"], c["filtered"], c["unassigned"],
                result.summary["zcta_groups"], result.summary["regression"]["status"],
            )
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    except (InputError, CentroidError, EducationError, OSError) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
