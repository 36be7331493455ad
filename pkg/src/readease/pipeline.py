"""End-to-end corpus run: score, histogram, geo-aggregate, join and regress.

Scoring is fanned out over line-aligned byte shards of each input.  Every
piece of cross-shard state is a mergeable accumulator (RunningStats,
Histogram, per-ZCTA RunningStats) combined in shard order, so the result
does not depend on the worker count beyond floating-point merge order.
"""

from __future__ import annotations

import json
import logging
import math
import os
import shutil
import time
from array import array
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import core
from .census import ZctaEducation, join_education, load_education
from .core import HashtagPolicy
from .corpus import FORMATS, ReadCounts, filter_lang, read_messages, shard_offsets
from .geo import (
    DEFAULT_THRESHOLD_DEG,
    CentroidTable,
    GeoPoint,
    ZctaAggregate,
    ZctaAccumulator,
    load_centroids,
    select_groups,
)
from .stats import (
    DEFAULT_SE_FLOOR,
    Histogram,
    RunningStats,
    WeightedLinearFit,
    binned_medians,
    density_grid,
    merge,
    summarize,
    weighted_least_squares,
)

log = logging.getLogger(__name__)

SWEEP_MIN_COUNTS = (1, 5, 10, 20)
STAGES = frozenset({"scores", "histogram", "delta", "geo", "regress"})


class ConfigError(ValueError):
    """Invalid configuration (exit status 2)."""


class InputError(ValueError):
    """Unreadable or malformed input file (exit status 1)."""


@dataclass(frozen=True)
class BinSpec:
    lo: float
    hi: float
    width: float

    @classmethod
    def parse(cls, text: str) -> BinSpec:
        try:
            lo, hi, width = (float(p) for p in text.split(":"))
        except ValueError:
            raise ConfigError(f"bins must look like LO:HI:WIDTH, got {text!r}") from None
        spec = cls(lo, hi, width)
        spec.check()
        return spec

    def check(self) -> None:
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise ConfigError(f"bins need LO < HI, got {self.lo}:{self.hi}")
        if not (self.width > 0 and math.isfinite(self.width)):
            raise ConfigError(f"bin width must be positive, got {self.width}")

    def histogram(self) -> Histogram:
        return Histogram(self.lo, self.hi, self.width)


@dataclass(frozen=True)
class CorpusInput:
    path: Path
    format: str = "jsonl"
    name: str = ""

    def label(self) -> str:
        return self.name or self.path.stem


@dataclass
class PipelineConfig:
    inputs: list[CorpusInput]
    out_dir: Path
    lang: str | None = "en"
    policy: HashtagPolicy = HashtagPolicy.EXCLUDE
    centroids: Path | None = None
    education: Path | None = None
    min_count: int = 10
    sweep: tuple[int, ...] = SWEEP_MIN_COUNTS
    geo_threshold: float = DEFAULT_THRESHOLD_DEG
    re_bins: BinSpec = BinSpec(-50.0, 130.0, 2.0)
    delta_bins: BinSpec = BinSpec(-60.0, 120.0, 2.0)
    median_width: float = 5.0
    density_widths: tuple[float, float] = (5.0, 5.0)
    x_column: str = "pct_bachelors"
    se_floor: float = DEFAULT_SE_FLOOR
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    stages: frozenset[str] = STAGES

    def validate(self) -> None:
        """Check everything that can be checked before reading any corpus."""
        if not self.inputs:
            raise ConfigError("at least one --input is required")
        for inp in self.inputs:
            if inp.format not in FORMATS:
                raise ConfigError(f"unknown format {inp.format!r} for {inp.path}")
        labels = [i.label() for i in self.inputs]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"corpus names must be unique, got {labels}")
        if not set(self.stages) <= STAGES:
            raise ConfigError(f"unknown stages {sorted(set(self.stages) - STAGES)}")
        if self.min_count < 1 or any(m < 1 for m in self.sweep):
            raise ConfigError("min-count values must be positive integers")
        if not (self.geo_threshold > 0 and math.isfinite(self.geo_threshold)):
            raise ConfigError(f"geo threshold must be positive, got {self.geo_threshold}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if not self.median_width > 0 or not all(w > 0 for w in self.density_widths):
            raise ConfigError("bin widths must be positive")
        if not self.se_floor > 0:
            raise ConfigError(f"se floor must be positive, got {self.se_floor}")
        if self.x_column not in ("pct_bachelors", "pct_hs"):
            raise ConfigError(f"x column must be pct_bachelors or pct_hs, got {self.x_column!r}")
        self.re_bins.check()
        self.delta_bins.check()
        if "geo" in self.stages and self.centroids is None:
            raise ConfigError("geo aggregation needs --centroids")
        for inp in self.inputs:
            _check_readable(inp.path)
        for p in (self.centroids, self.education):
            if p is not None:
                _check_readable(p)


def _check_readable(path: Path) -> None:
    if not path.is_file() or not os.access(path, os.R_OK):
        raise InputError(f"cannot read {path}")


def csv_field(s: str) -> str:
    if "," in s or '"' in s or "\n" in s or "\r" in s:
        return '"' + s.replace('"', '""') + '"'
    return s


def fmt3(x: float) -> str:
    s = f"{x:.3f}"
    return "0.000" if s == "-0.000" else s


# ---------------------------------------------------------------------------
# shard scoring
# ---------------------------------------------------------------------------


@dataclass
class ShardTask:
    corpus: int
    path: Path
    format: str
    start: int
    end: int
    first_line: int
    lang: str | None
    policy: HashtagPolicy
    re_bins: BinSpec
    delta_bins: BinSpec
    geo_threshold: float
    scores_part: Path | None
    delta_part: Path | None
    want_geo: bool


@dataclass
class ShardResult:
    corpus: int
    counts: ReadCounts
    null_scores: int = 0
    stats: RunningStats = field(default_factory=RunningStats)
    stats_exclude: RunningStats = field(default_factory=RunningStats)
    stats_include: RunningStats = field(default_factory=RunningStats)
    hist: Histogram | None = None
    delta_hist: Histogram | None = None
    deltas: array = field(default_factory=lambda: array("d"))
    geo_tagged: int = 0
    zcta: dict[str, RunningStats] = field(default_factory=dict)
    unassigned: int = 0

    def absorb(self, other: ShardResult) -> None:
        self.counts += other.counts
        self.null_scores += other.null_scores
        self.stats = merge(self.stats, other.stats)
        self.stats_exclude = merge(self.stats_exclude, other.stats_exclude)
        self.stats_include = merge(self.stats_include, other.stats_include)
        self.hist = self.hist.merge(other.hist)
        self.delta_hist = self.delta_hist.merge(other.delta_hist)
        self.deltas.extend(other.deltas)
        self.geo_tagged += other.geo_tagged
        for zid, rs in other.zcta.items():
            mine = self.zcta.get(zid)
            self.zcta[zid] = rs.copy() if mine is None else merge(mine, rs)
        self.unassigned += other.unassigned


_WORKER_TABLE: CentroidTable | None = None


def _init_worker(table: CentroidTable | None) -> None:
    global _WORKER_TABLE
    _WORKER_TABLE = table


def _run_pooled(task: ShardTask) -> ShardResult:
    return score_shard(task, _WORKER_TABLE)


def score_shard(task: ShardTask, table: CentroidTable | None, batch: int = 65_536) -> ShardResult:
    counts = ReadCounts()
    msgs = read_messages(task.path, task.format, counts, task.start, task.end, task.first_line)
    if task.lang is not None and task.format == "jsonl":
        msgs = filter_lang(msgs, task.lang, counts)

    res = ShardResult(task.corpus, counts)
    res.hist = task.re_bins.histogram()
    res.delta_hist = task.delta_bins.histogram()
    include = task.policy is HashtagPolicy.INCLUDE
    count_both = core.count_both
    flesch = core.flesch_single_sentence
    zacc = ZctaAccumulator(table, task.geo_threshold) if task.want_geo and table is not None else None
    # values are buffered and folded into the mergeable accumulators per batch
    buf: list[float] = []
    buf_ex: list[float] = []
    buf_in: list[float] = []
    buf_d: list[float] = []

    def flush() -> None:
        res.stats = merge(res.stats, RunningStats.from_values(buf))
        res.stats_exclude = merge(res.stats_exclude, RunningStats.from_values(buf_ex))
        res.stats_include = merge(res.stats_include, RunningStats.from_values(buf_in))
        res.hist.add_many(buf)
        res.delta_hist.add_many(buf_d)
        res.deltas.extend(buf_d)
        for b in (buf, buf_ex, buf_in, buf_d):
            b.clear()

    score_f = open(task.scores_part, "w", encoding="utf-8", newline="\n") if task.scores_part else None
    delta_f = open(task.delta_part, "w", encoding="utf-8", newline="\n") if task.delta_part else None
    try:
        for msg in msgs:
            w, s, hw, hs = count_both(msg.text)
            re_ex = flesch(w, s) if w else None
            re_in = flesch(w + hw, s + hs) if (w or hw) else None
            if re_ex is not None:
                buf_ex.append(re_ex)
            if re_in is not None:
                buf_in.append(re_in)
            if include:
                re_, nw, ns = re_in, w + hw, s + hs
            else:
                re_, nw, ns = re_ex, w, s
            if re_ is None:
                res.null_scores += 1
                continue
            buf.append(re_)
            if score_f is not None:
                r3 = f"{re_:.3f}"
                if r3 == "-0.000":
                    r3 = "0.000"
                score_f.write(f"{csv_field(msg.id)},{r3},{nw},{ns}\n")
            if hw and re_ex is not None:
                d = re_ex - re_in
                buf_d.append(d)
                if delta_f is not None:
                    delta_f.write(f"{csv_field(msg.id)},{fmt3(d)}\n")
            if msg.geo is not None:
                res.geo_tagged += 1
                if zacc is not None:
                    zacc.add(msg.geo, re_)
            if len(buf) >= batch:
                flush()
        flush()
    finally:
        if score_f is not None:
            score_f.close()
        if delta_f is not None:
            delta_f.close()
    if zacc is not None:
        zacc.flush()
        res.zcta, res.unassigned = zacc.stats, zacc.unassigned
    return res


# ---------------------------------------------------------------------------
# regression over ZCTA aggregates
# ---------------------------------------------------------------------------


def pooled_sd(groups: Iterable[ZctaAggregate]) -> float | None:
    """Within-ZCTA standard deviation pooled over groups with n >= 2."""
    m2 = dof = 0.0
    for g in groups:
        if g.stats.n >= 2:
            m2 += g.stats.m2
            dof += g.stats.n - 1
    return math.sqrt(m2 / dof) if dof > 0 else None


def regression_points(
    pairs: Sequence[tuple[ZctaAggregate, ZctaEducation]],
    x_column: str,
    fallback_sd: float | None,
) -> list[tuple[float, float, float]]:
    """(x, mean RE, SE of mean) per ZCTA.

    A single-message ZCTA has no SE of its own; it gets ``fallback_sd``
    (the pooled within-ZCTA scatter) over sqrt(1), or is left out when no
    pooled value exists.
    """
    pts = []
    for agg, edu in pairs:
        if agg.stats.n >= 2:
            se = summarize(agg.stats)[1]
        elif fallback_sd is not None:
            se = fallback_sd / math.sqrt(agg.stats.n)
        else:
            continue
        pts.append((edu.column(x_column), agg.stats.mean, se))
    return pts


def _fit_entry(pts, se_floor: float) -> dict:
    try:
        fit = weighted_least_squares(pts, se_floor)
    except ValueError as exc:
        return {"slope": None, "intercept": None, "slope_se": None, "n_zcta": len(pts), "error": str(exc)}
    return _fit_dict(fit)


def _fit_dict(fit: WeightedLinearFit) -> dict:
    return {
        "slope": fit.slope,
        "intercept": fit.intercept,
        "slope_se": fit.slope_se,
        "n_zcta": fit.n_points,
    }


@dataclass
class RegressionOutcome:
    report: dict | None
    skipped: str | None
    fig4_points: list[tuple[float, float]]
    n_unmatched: int


def regress(
    groups_all: list[ZctaAggregate],
    education: dict[str, ZctaEducation],
    min_count: int,
    sweep: Sequence[int],
    x_column: str = "pct_bachelors",
    se_floor: float = DEFAULT_SE_FLOOR,
) -> RegressionOutcome:
    """Fit mean RE against an education column at ``min_count`` and across
    the threshold sweep.  ``groups_all`` holds every assigned ZCTA."""
    fallback = pooled_sd(groups_all)
    main_groups = [g for g in groups_all if g.stats.n >= min_count]
    if not main_groups:
        return RegressionOutcome(None, "no ZCTA groups", [], 0)
    joined = join_education(main_groups, education)
    fig4 = [(edu.column(x_column), agg.stats.mean) for agg, edu in joined.pairs]
    pts = regression_points(joined.pairs, x_column, fallback)
    try:
        fit = weighted_least_squares(pts, se_floor)
    except ValueError as exc:
        return RegressionOutcome(None, f"fit failed: {exc}", fig4, joined.n_unmatched)
    report = {
        "x_column": x_column,
        "min_count": min_count,
        "se_floor": se_floor,
        "pooled_sd": fallback,
        **_fit_dict(fit),
        "n_unmatched": joined.n_unmatched,
        "sweep": [],
    }
    for m in sorted(set(sweep) | {min_count}):
        sub = join_education([g for g in groups_all if g.stats.n >= m], education)
        entry = {"min_count": m, **_fit_entry(regression_points(sub.pairs, x_column, fallback), se_floor)}
        report["sweep"].append(entry)
    return RegressionOutcome(report, None, fig4, joined.n_unmatched)


# ---------------------------------------------------------------------------
# output writers
# ---------------------------------------------------------------------------


def _open_out(path: Path):
    return open(path, "w", encoding="utf-8", newline="\n")


def write_histograms(path: Path, hists: Sequence[tuple[str, Histogram]]) -> None:
    with _open_out(path) as f:
        f.write("corpus,bin,lo,hi,count\n")
        for name, h in hists:
            f.write(f"{name},underflow,,{fmt3(h.lo)},{h.underflow}\n")
            for k, c in enumerate(h.counts):
                lo, hi = h.edges(k)
                f.write(f"{name},{k},{fmt3(lo)},{fmt3(hi)},{c}\n")
            f.write(f"{name},overflow,{fmt3(h.hi)},,{h.overflow}\n")


def write_aggregates(path: Path, groups: Sequence[ZctaAggregate]) -> None:
    with _open_out(path) as f:
        f.write("zcta_id,lat,lon,n,mean_re,se\n")
        for g in groups:
            se = fmt3(summarize(g.stats)[1]) if g.stats.n >= 2 else ""
            f.write(
                f"{g.zcta_id},{g.centroid.lat!r},{g.centroid.lon!r},{g.stats.n},"
                f"{fmt3(g.stats.mean)},{se}\n"
            )


def read_aggregates(path: Path) -> list[ZctaAggregate]:
    """Inverse of :func:`write_aggregates` (mean/SE at display precision)."""
    import csv

    out = []
    with open(path, newline="", encoding="utf-8") as f:
        for rownum, rec in enumerate(csv.DictReader(f), start=2):
            try:
                n = int(rec["n"])
                mean = float(rec["mean_re"])
                se = float(rec["se"]) if rec["se"] else 0.0
                point = GeoPoint(float(rec["lat"]), float(rec["lon"]))
            except (KeyError, TypeError, ValueError):
                raise InputError(f"{path}: row {rownum}: malformed aggregate row") from None
            m2 = se * se * n * (n - 1) if n >= 2 else 0.0
            out.append(ZctaAggregate(rec["zcta_id"], RunningStats(n, mean, m2), point))
    return out


def write_regression_outputs(out_dir: Path, outcome: RegressionOutcome, cfg: PipelineConfig) -> None:
    with _open_out(out_dir / "binned_medians.csv") as f:
        f.write("bin_lo,bin_hi,bin_center,median_re,count\n")
        for b in binned_medians(outcome.fig4_points, cfg.median_width):
            f.write(f"{fmt3(b.lo)},{fmt3(b.hi)},{fmt3(b.center)},{fmt3(b.median)},{b.count}\n")
    xw, yw = cfg.density_widths
    grid = density_grid(outcome.fig4_points, xw, yw, y_range=(cfg.re_bins.lo, cfg.re_bins.hi))
    with _open_out(out_dir / "density_grid.csv") as f:
        f.write("x_lo,x_hi,y_lo,y_hi,count\n")
        nx, ny = grid.shape
        for i in range(nx):
            x_lo = grid.x_lo + i * xw
            for j in range(ny):
                y_lo = grid.y_lo + j * yw
                f.write(
                    f"{fmt3(x_lo)},{fmt3(min(x_lo + xw, grid.x_hi))},"
                    f"{fmt3(y_lo)},{fmt3(min(y_lo + yw, grid.y_hi))},{grid.counts[i][j]}\n"
                )
    # written last and atomically: a crash never leaves a partial fit
    tmp = out_dir / "regression.json.tmp"
    tmp.write_text(json.dumps(outcome.report, indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, out_dir / "regression.json")


def _stats_summary(rs: RunningStats) -> dict:
    if rs.n >= 2:
        mean, se = summarize(rs)
        return {"n": rs.n, "mean": mean, "se": se}
    return {"n": rs.n, "mean": rs.mean if rs.n else None, "se": None}


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


@dataclass
class PipelineResult:
    corpora: dict[str, ShardResult]
    groups: list[ZctaAggregate]
    groups_all: list[ZctaAggregate]
    regression: RegressionOutcome | None
    summary: dict


def _concat(parts: Sequence[Path], dest: Path, header: str) -> None:
    with open(dest, "wb") as out:
        out.write(header.encode())
        for p in parts:
            with open(p, "rb") as f:
                shutil.copyfileobj(f, out)


def run_pipeline(cfg: PipelineConfig) -> PipelineResult:
    """Run the configured stages and write their files into ``cfg.out_dir``.

    Loader errors surface before any corpus is read.
    """
    t0 = time.perf_counter()
    stale = cfg.out_dir / "regression.json"
    if stale.exists():
        stale.unlink()
    cfg.validate()
    table = load_centroids(cfg.centroids) if cfg.centroids is not None and "geo" in cfg.stages else None
    education = load_education(cfg.education) if cfg.education is not None and "regress" in cfg.stages else None
    if table is not None and len(table) == 0:
        raise InputError(f"{cfg.centroids}: centroid table is empty")

    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    parts_dir = out / ".parts"
    parts_dir.mkdir(exist_ok=True)

    tasks: list[ShardTask] = []
    for ci, inp in enumerate(cfg.inputs):
        for si, (a, b, line) in enumerate(shard_offsets(inp.path, cfg.workers)):
            tasks.append(
                ShardTask(
                    ci, inp.path, inp.format, a, b, line, cfg.lang, cfg.policy,
                    cfg.re_bins, cfg.delta_bins, cfg.geo_threshold,
                    parts_dir / f"scores_{ci}_{si}.csv" if "scores" in cfg.stages else None,
                    parts_dir / f"delta_{ci}_{si}.csv" if "delta" in cfg.stages else None,
                    "geo" in cfg.stages,
                )
            )

    if cfg.workers == 1 or len(tasks) == 1:
        results = [score_shard(t, table) for t in tasks]
    else:
        with ProcessPoolExecutor(
            max_workers=min(cfg.workers, len(tasks)), initializer=_init_worker, initargs=(table,)
        ) as pool:
            results = list(pool.map(_run_pooled, tasks))

    corpora: dict[str, ShardResult] = {}
    for inp_idx, inp in enumerate(cfg.inputs):
        mine = [r for r in results if r.corpus == inp_idx]
        acc = mine[0]
        for r in mine[1:]:
            acc.absorb(r)
        corpora[inp.label()] = acc

    if "scores" in cfg.stages:
        _concat([t.scores_part for t in tasks], out / "scores.csv", "id,re,word_count,syllable_count\n")
    if "histogram" in cfg.stages:
        write_histograms(out / "histogram.csv", [(k, r.hist) for k, r in corpora.items()])
    if "delta" in cfg.stages:
        _concat([t.delta_part for t in tasks], out / "hashtag_delta.csv", "id,delta\n")
        write_histograms(out / "hashtag_delta_histogram.csv", [(k, r.delta_hist) for k, r in corpora.items()])
    shutil.rmtree(parts_dir, ignore_errors=True)

    groups: list[ZctaAggregate] = []
    groups_all: list[ZctaAggregate] = []
    regression = None
    unassigned = below = 0
    if table is not None:
        zcta: dict[str, RunningStats] = {}
        for r in corpora.values():
            unassigned += r.unassigned
            for zid, rs in r.zcta.items():
                zcta[zid] = rs.copy() if zid not in zcta else merge(zcta[zid], rs)
        groups_all, _ = select_groups(zcta, table, 1)
        groups, below = select_groups(zcta, table, cfg.min_count)
        write_aggregates(out / "zcta_aggregates.csv", groups)
        write_aggregates(out / "zcta_aggregates_all.csv", groups_all)
        if education is not None:
            regression = regress(groups_all, education, cfg.min_count, cfg.sweep, cfg.x_column, cfg.se_floor)
            if regression.report is not None:
                write_regression_outputs(out, regression, cfg)
            else:
                log.warning("regression skipped: %s", regression.skipped)

    summary = _summary(cfg, corpora, groups, unassigned, below, regression, time.perf_counter() - t0)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return PipelineResult(corpora, groups, groups_all, regression, summary)


def _summary(cfg, corpora, groups, unassigned, below, regression, elapsed) -> dict:
    per_corpus = {}
    totals = ReadCounts()
    for name, r in corpora.items():
        totals += r.counts
        median_delta = float(np.median(np.frombuffer(r.deltas, dtype=float))) if len(r.deltas) else None
        per_corpus[name] = {
            **asdict(r.counts),
            "emitted": r.counts.emitted,
            "null_scores": r.null_scores,
            "scored": r.stats.n,
            "geo_tagged": r.geo_tagged,
            "re": _stats_summary(r.stats),
            "re_exclude_hashtags": _stats_summary(r.stats_exclude),
            "re_include_hashtags": _stats_summary(r.stats_include),
            "with_hashtags": len(r.deltas),
            "median_hashtag_delta": median_delta,
        }
    reg: dict = {"status": "not run"}
    if regression is not None:
        reg = {"status": "skipped", "reason": regression.skipped} if regression.report is None else {
            "status": "ok",
            "slope": regression.report["slope"],
            "slope_se": regression.report["slope_se"],
            "n_zcta": regression.report["n_zcta"],
        }
        reg["n_unmatched"] = regression.n_unmatched
    return {
        "finished_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "elapsed_seconds": round(elapsed, 3),
        "workers": cfg.workers,
        "policy": cfg.policy.value,
        "lang": cfg.lang,
        "counts": {**asdict(totals), "emitted": totals.emitted, "unassigned": unassigned, "below_min_count": below},
        "corpora": per_corpus,
        "zcta_groups": len(groups),
        "regression": reg,
    }
