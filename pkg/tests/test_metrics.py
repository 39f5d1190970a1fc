import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from fredino.errors import EmptyInput, ShapeMismatch, ZeroReference
from fredino.metrics import ErrorRecord, aggregate, error_records, rel_errors, write_records_csv, write_summary_csv

W = np.full(20, 0.05)
F = np.sin(np.linspace(0.1, 3, 20)) + 0.2


def test_rel_errors_examples():
    assert rel_errors(F, F, W) == (0.0, 0.0, 0.0)
    np.testing.assert_allclose(rel_errors(1.01 * F, F, W), 0.01, rtol=1e-12)
    with pytest.raises(ZeroReference):
        rel_errors(F, np.zeros(20), W)
    with pytest.raises(ShapeMismatch):
        rel_errors(F[:5], F, W)


def test_rel_errors_weighted_by_hand():
    f, fh, w = np.array([1.0, 2.0]), np.array([1.5, 2.0]), np.array([0.75, 0.25])
    l1, l2, linf = rel_errors(fh, f, w)
    assert l1 == pytest.approx(0.375 / 1.25)
    assert l2 == pytest.approx(np.sqrt(0.1875) / np.sqrt(1.75))
    assert linf == pytest.approx(0.25)


@given(c=st.floats(0.01, 100) | st.floats(-100, -0.01),
       noise=arrays(np.float64, 20, elements=st.floats(-1, 1)))
def test_rel_errors_scale_invariant(c, noise):
    a = rel_errors(F + noise, F, W)
    b = rel_errors(c * (F + noise), c * F, W)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-15)


def test_error_records_rows():
    recs = error_records(np.vstack([F, 2 * F]), np.vstack([F, F]), W, run_id=3)
    assert [r.test_fn_id for r in recs] == [0, 1] and recs[0].run_id == 3
    assert recs[1].rel_l2 == pytest.approx(1.0)


def rec(v, run=0, i=0):
    return ErrorRecord(run, i, v, v, v)


def test_aggregate_single_and_interpolation():
    s = aggregate([rec(0.3)])["rel_l2"]
    assert s.median == s.p10 == s.p90 == 0.3
    s = aggregate([rec(float(v), i=v) for v in range(1, 11)])["rel_l1"]
    # rank (n - 1) * 0.1 = 0.9 sits between the first two sorted values
    assert s.p10 == pytest.approx(1.9, abs=1e-14)
    assert s.median == pytest.approx(5.5) and s.p90 == pytest.approx(9.1)
    with pytest.raises(EmptyInput):
        aggregate([])
    with pytest.raises(ValueError):
        aggregate([rec(1.0)], by="per_metric")


def test_aggregate_per_run_averages_first():
    recs = [rec(v, run=r, i=i) for r, vals in enumerate([[1, 3], [10, 20], [5, 5]]) for i, v in enumerate(vals)]
    assert aggregate(recs, "per_run")["rel_linf"].median == pytest.approx(5.0)
    assert aggregate(recs, "per_sample")["rel_linf"].median == pytest.approx(5.0)
    assert aggregate(recs, "per_run")["rel_linf"].p90 == pytest.approx(5 + 0.8 * 10)


@given(st.lists(st.floats(0, 10), min_size=1, max_size=30), st.randoms())
def test_aggregate_permutation_invariant(vals, rnd):
    recs = [rec(v, i=i) for i, v in enumerate(vals)]
    shuffled = recs[:]
    rnd.shuffle(shuffled)
    assert aggregate(recs) == aggregate(shuffled)


def test_csv_outputs(tmp_path):
    recs = [rec(0.1 * k, run=k % 2, i=k) for k in range(6)]
    write_summary_csv(tmp_path / "s.csv", "ex5_1", {"per_run": aggregate(recs, "per_run"),
                                                     "per_sample": aggregate(recs)})
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert list(rows[0]) == ["example_id", "protocol", "metric", "median", "p10", "p90"]
    assert len(rows) == 6 and {r["protocol"] for r in rows} == {"per_run", "per_sample"}
    write_records_csv(tmp_path / "r.csv", recs)
    back = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert float(back[3]["rel_l2"]) == recs[3].rel_l2
