import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from readease.geo import (
    CentroidError,
    CentroidTable,
    GeoPoint,
    ZctaCentroid,
    assign_zcta,
    group_by_zcta,
    load_centroids,
)
from oracles import brute_nearest


def table(*rows):
    return CentroidTable(ZctaCentroid(z, GeoPoint(a, b)) for z, a, b in rows)


def write(tmp_path, text, name="c.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoad:
    def test_row(self, tmp_path):
        t = load_centroids(write(tmp_path, "GEOID,INTPTLAT,INTPTLONG\n98195,47.65,-122.30\n"))
        assert t.ids == ["98195"] and t.point("98195") == (47.65, -122.30)

    def test_extra_columns_and_padding(self, tmp_path):
        p = write(tmp_path, "GEOID,ALAND,INTPTLAT,INTPTLONG        \n00601,1,18.18,-66.75\n")
        assert load_centroids(p).point("00601") == (18.18, -66.75)

    def test_duplicate(self, tmp_path):
        p = write(tmp_path, "GEOID,INTPTLAT,INTPTLONG\n98195,47.65,-122.3\n98195,47,-122\n")
        with pytest.raises(CentroidError, match="row 3.*duplicate"):
            load_centroids(p)

    def test_range(self, tmp_path):
        p = write(tmp_path, "GEOID,INTPTLAT,INTPTLONG\n98195,95,-122.3\n")
        with pytest.raises(CentroidError, match="row 2"):
            load_centroids(p)

    def test_missing_column(self, tmp_path):
        with pytest.raises(CentroidError, match="INTPTLONG"):
            load_centroids(write(tmp_path, "GEOID,INTPTLAT\n1,2\n"))


class TestAssign:
    def test_exact(self):
        t = table(("98195", 47.65, -122.30), ("10027", 40.81, -73.95))
        assert assign_zcta(GeoPoint(47.65, -122.30), t) == "98195"

    def test_beyond_threshold(self):
        t = table(("A", 0.0, 0.0))
        assert assign_zcta(GeoPoint(10.5, 0.0), t) is None
        assert assign_zcta(GeoPoint(10.0, 0.0), t) == "A"
        assert assign_zcta(GeoPoint(6.0, 8.0), t) == "A"
        assert assign_zcta(GeoPoint(10.5, 0.0), t, threshold=11) == "A"

    def test_tie_break(self):
        t = table(("00602", 18.0, -66.0), ("00601", 18.0, -67.0))
        assert assign_zcta(GeoPoint(18.0, -66.5), t) == "00601"

    def test_empty_table(self):
        with pytest.raises(ValueError):
            assign_zcta(GeoPoint(0, 0), CentroidTable([]))

    def test_duplicate_ids_rejected(self):
        with pytest.raises(CentroidError):
            table(("A", 0, 0), ("A", 1, 1))

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1))
    def test_brute_force_equivalence_on_lattice(self, seed):
        # integer lattices make exact distance ties common
        rnd = random.Random(seed)
        rows = {(rnd.randint(0, 8), rnd.randint(0, 8)) for _ in range(25)}
        cents = [(f"{i:05d}", float(a), float(b)) for i, (a, b) in enumerate(rnd.sample(sorted(rows), len(rows)))]
        t = table(*cents)
        qs = [(rnd.randint(-6, 14) / 2, rnd.randint(-6, 14) / 2) for _ in range(40)]
        got = t.assign_many([q[0] for q in qs], [q[1] for q in qs], threshold=3.0)
        rows_, dist = t.nearest_many([q[0] for q in qs], [q[1] for q in qs])
        for q, g, r, d in zip(qs, got, rows_, dist):
            want, wd = brute_nearest(q[0], q[1], cents, threshold=3.0)
            assert g == want
            assert d == wd
            assert t.ids[r] == brute_nearest(q[0], q[1], cents, threshold=1e9)[0]


class TestGroup:
    T = table(("A", 0.0, 0.0), ("B", 30.0, 30.0))

    def test_keep(self):
        res = group_by_zcta([(GeoPoint(0.1, 0), float(i)) for i in range(12)], self.T, 10)
        assert [(g.zcta_id, g.stats.n) for g in res.groups] == [("A", 12)]
        assert g_mean(res) == pytest.approx(5.5)

    def test_below(self):
        res = group_by_zcta([(GeoPoint(0, 0), 1.0)] * 9, self.T, 10)
        assert res.groups == [] and res.n_below_threshold == 9

    def test_unassigned(self):
        res = group_by_zcta([(GeoPoint(60, 60), 1.0), (GeoPoint(0, 0), 2.0)], self.T, 1)
        assert res.n_unassigned == 1
        assert [g.zcta_id for g in res.groups] == ["A"]

    def test_bad_min_count(self):
        with pytest.raises(ValueError):
            group_by_zcta([], self.T, 0)

    @given(st.lists(st.tuples(st.floats(-5, 35), st.floats(-5, 35)), max_size=60), st.integers(1, 8), st.integers(1, 8))
    def test_partition_and_monotone(self, pts, m1, m2):
        lo, hi = sorted((m1, m2))
        msgs = [(GeoPoint(a, b), float(i)) for i, (a, b) in enumerate(pts)]
        one = group_by_zcta(msgs, self.T, 1)
        assert sum(g.stats.n for g in one.groups) + one.n_unassigned == len(msgs)
        low, high = group_by_zcta(msgs, self.T, lo), group_by_zcta(msgs, self.T, hi)
        assert len(high.groups) <= len(low.groups)
        low_by_id = {g.zcta_id: g.stats for g in low.groups}
        for g in high.groups:
            assert low_by_id[g.zcta_id] == g.stats
        for r in (low, high):
            assert sum(g.stats.n for g in r.groups) + r.n_below_threshold + r.n_unassigned == len(msgs)


def g_mean(res):
    return res.groups[0].stats.mean
