"""Nearest-centroid assignment of geo-tagged messages to ZCTAs.

Distances are Euclidean in raw (lat, lon) degrees.  There is no longitude
wraparound at +/-180; the intended use is the continental US.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .stats import RunningStats

DEFAULT_THRESHOLD_DEG = 10.0


class GeoPoint(NamedTuple):
    lat: float
    lon: float


def valid_point(lat: float, lon: float) -> bool:
    return -90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0


class CentroidError(ValueError):
    pass


@dataclass(frozen=True)
class ZctaCentroid:
    zcta_id: str
    point: GeoPoint


class CentroidTable:
    """Immutable centroid set with a k-d tree for candidate lookup.

    The tree only proposes candidates; the winner is chosen by exact squared
    distance with ties going to the smallest ZCTA id, so results match a
    linear scan exactly.
    """

    def __init__(self, centroids: Iterable[ZctaCentroid]):
        rows = sorted(centroids, key=lambda c: c.zcta_id)
        ids = [c.zcta_id for c in rows]
        if len(set(ids)) != len(ids):
            raise CentroidError("duplicate ZCTA id in centroid table")
        self.ids = ids
        self.coords = np.array([c.point for c in rows], dtype=float).reshape(-1, 2)
        self._index = {z: i for i, z in enumerate(ids)}
        self._tree = cKDTree(self.coords) if rows else None

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, zcta_id: str) -> bool:
        return zcta_id in self._index

    def point(self, zcta_id: str) -> GeoPoint:
        lat, lon = self.coords[self._index[zcta_id]]
        return GeoPoint(float(lat), float(lon))

    def nearest_many(self, lats, lons) -> tuple[np.ndarray, np.ndarray]:
        """Row index of the nearest centroid and its distance, per query."""
        if self._tree is None:
            raise ValueError("centroid table is empty")
        q = np.column_stack([np.asarray(lats, float), np.asarray(lons, float)])
        if len(q) == 0:
            return np.empty(0, dtype=np.int64), np.empty(0)
        approx, _ = self._tree.query(q, k=1)
        # widen a little so every exact tie falls inside the ball
        radii = approx * (1 + 1e-9) + 1e-12
        best = np.empty(len(q), dtype=np.int64)
        dist = np.empty(len(q))
        cands = self._tree.query_ball_point(q, radii)
        for i, cand in enumerate(cands):
            cand = np.sort(np.asarray(cand, dtype=np.int64))
            dlat = q[i, 0] - self.coords[cand, 0]
            dlon = q[i, 1] - self.coords[cand, 1]
            d2 = dlat * dlat + dlon * dlon
            # rows are id-sorted, so argmin's first-hit rule is the id tie-break
            j = int(np.argmin(d2))
            best[i] = cand[j]
            dist[i] = math.sqrt(d2[j])
        return best, dist

    def assign_many(self, lats, lons, threshold: float = DEFAULT_THRESHOLD_DEG) -> list[str | None]:
        rows, dist = self.nearest_many(lats, lons)
        ids = self.ids
        return [ids[r] if d <= threshold else None for r, d in zip(rows.tolist(), dist.tolist())]


def load_centroids(path) -> CentroidTable:
    """Read a gazetteer-style CSV with GEOID, INTPTLAT and INTPTLONG columns."""
    seen: set[str] = set()
    rows = []
    with open(path, newline="", encoding="utf-8-sig") as f:
        reader = csv.DictReader(f, skipinitialspace=True)
        if reader.fieldnames is None:
            raise CentroidError(f"{path}: missing header row")
        # Census gazetteer files pad the last header with spaces
        reader.fieldnames = [h.strip() for h in reader.fieldnames]
        missing = {"GEOID", "INTPTLAT", "INTPTLONG"} - set(reader.fieldnames)
        if missing:
            raise CentroidError(f"{path}: missing columns {sorted(missing)}")
        for rownum, rec in enumerate(reader, start=2):
            zid = (rec["GEOID"] or "").strip()
            try:
                lat = float(rec["INTPTLAT"])
                lon = float(rec["INTPTLONG"])
            except (TypeError, ValueError):
                raise CentroidError(f"{path}: row {rownum}: unparseable coordinates") from None
            if not zid:
                raise CentroidError(f"{path}: row {rownum}: empty GEOID")
            if not valid_point(lat, lon):
                raise CentroidError(
                    f"{path}: row {rownum}: coordinates out of range ({lat}, {lon})"
                )
            if zid in seen:
                raise CentroidError(f"{path}: row {rownum}: duplicate GEOID {zid!r}")
            seen.add(zid)
            rows.append(ZctaCentroid(zid, GeoPoint(lat, lon)))
    return CentroidTable(rows)


def assign_zcta(
    point: GeoPoint, table: CentroidTable, threshold: float = DEFAULT_THRESHOLD_DEG
) -> str | None:
    return table.assign_many([point[0]], [point[1]], threshold)[0]


@dataclass
class ZctaAggregate:
    zcta_id: str
    stats: RunningStats
    centroid: GeoPoint


@dataclass
class GroupingResult:
    groups: list[ZctaAggregate]
    n_unassigned: int
    n_below_threshold: int


class ZctaAccumulator:
    """Per-ZCTA running stats fed one message at a time.

    Points are buffered and assigned in batches of ``chunk``.
    """

    def __init__(self, table: CentroidTable, threshold: float = DEFAULT_THRESHOLD_DEG, chunk: int = 50_000):
        self.table = table
        self.threshold = threshold
        self.chunk = chunk
        self.stats: dict[str, RunningStats] = {}
        self.unassigned = 0
        self._lats: list[float] = []
        self._lons: list[float] = []
        self._scores: list[float] = []

    def add(self, point: GeoPoint, re_: float) -> None:
        self._lats.append(point[0])
        self._lons.append(point[1])
        self._scores.append(re_)
        if len(self._scores) >= self.chunk:
            self.flush()

    def flush(self) -> None:
        if not self._scores:
            return
        acc = self.stats
        for zid, re_ in zip(self.table.assign_many(self._lats, self._lons, self.threshold), self._scores):
            if zid is None:
                self.unassigned += 1
            else:
                rs = acc.get(zid)
                if rs is None:
                    rs = acc[zid] = RunningStats()
                rs.update(re_)
        self._lats.clear()
        self._lons.clear()
        self._scores.clear()


def accumulate_by_zcta(
    scored: Iterable[tuple[GeoPoint, float]],
    table: CentroidTable,
    threshold: float = DEFAULT_THRESHOLD_DEG,
) -> tuple[dict[str, RunningStats], int]:
    """Per-ZCTA running stats over every assigned message, plus the count of
    messages no centroid claimed."""
    acc = ZctaAccumulator(table, threshold)
    for point, re_ in scored:
        acc.add(point, re_)
    acc.flush()
    return acc.stats, acc.unassigned


def select_groups(
    acc: dict[str, RunningStats], table: CentroidTable, min_count: int
) -> tuple[list[ZctaAggregate], int]:
    """Keep ZCTAs with at least ``min_count`` members, ordered by id."""
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    groups = []
    dropped = 0
    for zid in sorted(acc):
        rs = acc[zid]
        if rs.n >= min_count:
            groups.append(ZctaAggregate(zid, rs, table.point(zid)))
        else:
            dropped += rs.n
    return groups, dropped


def group_by_zcta(
    scored: Iterable[tuple[GeoPoint, float]],
    table: CentroidTable,
    min_count: int = 10,
    threshold: float = DEFAULT_THRESHOLD_DEG,
) -> GroupingResult:
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    acc, unassigned = accumulate_by_zcta(scored, table, threshold)
    groups, dropped = select_groups(acc, table, min_count)
    return GroupingResult(groups, unassigned, dropped)
