import pytest

from readease.census import EducationError, ZctaEducation, join_education, load_education
from readease.geo import GeoPoint, ZctaAggregate
from readease.stats import RunningStats


def edu_file(tmp_path, body):
    p = tmp_path / "edu.csv"
    p.write_text("zcta,pct_hs,pct_bachelors\n" + body)
    return p


def agg(z):
    return ZctaAggregate(z, RunningStats(10, 50.0, 90.0), GeoPoint(0, 0))


def test_load_row(tmp_path):
    t = load_education(edu_file(tmp_path, "98195,95.2,60.1\n"))
    assert t == {"98195": ZctaEducation("98195", 95.2, 60.1)}


@pytest.mark.parametrize("body", ["98195,101,50\n", "98195,90,-1\n", "98195,abc,5\n", "98195,nan,5\n"])
def test_bad_values(tmp_path, body):
    with pytest.raises(EducationError, match="row 2"):
        load_education(edu_file(tmp_path, body))


def test_duplicate(tmp_path):
    with pytest.raises(EducationError, match="row 3"):
        load_education(edu_file(tmp_path, "1,1,1\n1,2,2\n"))


def test_header_only(tmp_path):
    assert load_education(edu_file(tmp_path, "")) == {}


def test_missing_column(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("zcta,pct_hs\n1,2\n")
    with pytest.raises(EducationError):
        load_education(p)


def test_join():
    table = {"A": ZctaEducation("A", 90, 40)}
    res = join_education([agg("A"), agg("B")], table)
    assert [(a.zcta_id, e.zcta_id) for a, e in res.pairs] == [("A", "A")]
    assert res.n_unmatched == 1

    res = join_education([agg("X"), agg("Y")], table)
    assert res.pairs == [] and res.n_unmatched == 2

    table = {z: ZctaEducation(z, 90, 40) for z in "CAB"}
    res = join_education([agg("C"), agg("B"), agg("A")], table)
    assert [a.zcta_id for a, _ in res.pairs] == ["A", "B", "C"]
    assert res.n_unmatched == 0
    assert all(a.zcta_id == e.zcta_id for a, e in res.pairs)


def test_column_lookup():
    e = ZctaEducation("A", 90, 40)
    assert e.column("pct_hs") == 90 and e.column("pct_bachelors") == 40
    with pytest.raises(KeyError):
        e.column("income")
