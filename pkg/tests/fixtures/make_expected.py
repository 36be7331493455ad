"""Regenerate the frozen e2e oracle files from the fixture inputs.

Uses only tests/oracles.py (no readease imports).  Run from the repo root:

    python tests/fixtures/make_expected.py
"""

import csv
import json
import math
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent))

from oracles import (  # noqa: E402
    brute_nearest,
    normal_equation_fit,
    oracle_counts,
    oracle_re,
    two_pass_mean_se,
)

MIN_COUNT = 10


def f3(x):
    s = "%.3f" % x
    return "0.000" if s == "-0.000" else s


def main():
    centroids = []
    with open(HERE / "e2e_centroids.csv") as f:
        for row in csv.DictReader(f):
            centroids.append((row["GEOID"], float(row["INTPTLAT"]), float(row["INTPTLONG"])))
    coords = {z: (a, b) for z, a, b in centroids}
    education = {}
    with open(HERE / "e2e_education.csv") as f:
        for row in csv.DictReader(f):
            education[row["zcta"]] = float(row["pct_bachelors"])

    score_rows = []
    by_zcta = {}
    for line in (HERE / "e2e_messages.jsonl").read_text().splitlines():
        try:
            rec = json.loads(line)
        except ValueError:
            continue
        if not isinstance(rec, dict) or "text" not in rec or "id" not in rec:
            continue
        if rec.get("lang") != "en":
            continue
        re_ = oracle_re(rec["text"])
        if re_ is None:
            continue
        w, s = oracle_counts(rec["text"], False)
        score_rows.append(f"{rec['id']},{f3(re_)},{w},{s}")
        if "lat" in rec:
            zid, _ = brute_nearest(rec["lat"], rec["lon"], centroids)
            if zid is not None:
                by_zcta.setdefault(zid, []).append(re_)

    (HERE / "expected_scores.csv").write_text(
        "id,re,word_count,syllable_count\n" + "\n".join(score_rows) + "\n"
    )

    agg_rows = []
    pts = []
    for zid in sorted(by_zcta):
        vals = by_zcta[zid]
        if len(vals) < MIN_COUNT:
            continue
        mean, se = two_pass_mean_se(vals)
        lat, lon = coords[zid]
        agg_rows.append(f"{zid},{lat!r},{lon!r},{len(vals)},{f3(mean)},{f3(se)}")
        pts.append((education[zid], mean, max(se, 0.01)))
    (HERE / "expected_zcta_aggregates.csv").write_text(
        "zcta_id,lat,lon,n,mean_re,se\n" + "\n".join(agg_rows) + "\n"
    )

    slope, intercept, slope_se = normal_equation_fit(
        [p[0] for p in pts], [p[1] for p in pts], [1 / p[2] ** 2 for p in pts]
    )
    fit = {"slope": slope, "intercept": intercept, "slope_se": slope_se, "n_zcta": len(pts)}
    (HERE / "expected_regression.json").write_text(json.dumps(fit, indent=2) + "\n")
    print(json.dumps(fit), {z: len(v) for z, v in by_zcta.items()}, len(score_rows))


if __name__ == "__main__":
    main()
