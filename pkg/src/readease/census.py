"""ACS educational attainment by ZCTA, and its join onto readability aggregates.

The loader takes a three-column extract (zcta, pct_hs, pct_bachelors) rather
than the raw S1501 table.  One way to build it from an ACS 5-year S1501
download (column names vary between releases)::

    zcta          <- GEO.id2 (5-digit ZCTA)
    pct_hs        <- "Percent high school graduate or higher", population 25+
    pct_bachelors <- "Percent bachelor's degree or higher", population 25+
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable

from .geo import ZctaAggregate

COLUMNS = ("zcta", "pct_hs", "pct_bachelors")


class EducationError(ValueError):
    pass


@dataclass(frozen=True)
class ZctaEducation:
    zcta_id: str
    pct_high_school: float
    pct_bachelors: float

    def column(self, name: str) -> float:
        if name in ("pct_bachelors", "bachelors"):
            return self.pct_bachelors
        if name in ("pct_hs", "pct_high_school", "hs"):
            return self.pct_high_school
        raise KeyError(name)


def _pct(raw: str | None, path, rownum: int, col: str) -> float:
    try:
        v = float(raw)
    except (TypeError, ValueError):
        raise EducationError(f"{path}: row {rownum}: {col} is not a number: {raw!r}") from None
    if not (math.isfinite(v) and 0.0 <= v <= 100.0):
        raise EducationError(f"{path}: row {rownum}: {col}={v} outside [0, 100]")
    return v


def load_education(path) -> dict[str, ZctaEducation]:
    table: dict[str, ZctaEducation] = {}
    with open(path, newline="", encoding="utf-8-sig") as f:
        reader = csv.DictReader(f, skipinitialspace=True)
        if reader.fieldnames is None:
            raise EducationError(f"{path}: missing header row")
        reader.fieldnames = [h.strip() for h in reader.fieldnames]
        missing = set(COLUMNS) - set(reader.fieldnames)
        if missing:
            raise EducationError(f"{path}: missing columns {sorted(missing)}")
        for rownum, rec in enumerate(reader, start=2):
            zid = (rec["zcta"] or "").strip()
            if not zid:
                raise EducationError(f"{path}: row {rownum}: empty zcta")
            if zid in table:
                raise EducationError(f"{path}: row {rownum}: duplicate zcta {zid!r}")
            table[zid] = ZctaEducation(
                zid,
                _pct(rec["pct_hs"], path, rownum, "pct_hs"),
                _pct(rec["pct_bachelors"], path, rownum, "pct_bachelors"),
            )
    return table


@dataclass
class JoinResult:
    pairs: list[tuple[ZctaAggregate, ZctaEducation]]
    n_unmatched: int


def join_education(
    groups: Iterable[ZctaAggregate], table: dict[str, ZctaEducation]
) -> JoinResult:
    """Inner join on ZCTA id, ordered by id."""
    pairs = []
    unmatched = 0
    for g in groups:
        edu = table.get(g.zcta_id)
        if edu is None:
            unmatched += 1
        else:
            pairs.append((g, edu))
    pairs.sort(key=lambda p: p[0].zcta_id)
    return JoinResult(pairs, unmatched)
