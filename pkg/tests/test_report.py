import io
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from voradv.report import (QueryRecord, RunRecord, RunReport, class_closeness, mean_ci,
                           summarize, two_gaussian_closeness)
from voradv.search import BOUNDED, INFEASIBLE_QUERY, OPTIMAL, Certificate


def cert(eps, status=OPTIMAL, lower=None):
    return Certificate(status, eps, eps if lower is None else lower, np.array([eps, 0.0]),
                       cells_visited=2, wall_time=0.01, pop_trace=[0.0, eps])


def report(values_per_run):
    runs = [RunRecord(seed, 10, [QueryRecord(i, 0, cert(v)) for i, v in enumerate(vals)])
            for seed, vals in enumerate(values_per_run)]
    return RunReport({"k": 3}, {"path": "x"}, runs)


def test_closeness_examples():
    # the two-Gaussian construction has KL = 2 alpha^2
    assert two_gaussian_closeness(0.5).closeness == pytest.approx(0.5)
    assert two_gaussian_closeness(1.5, d=20).closeness == pytest.approx(4.5)
    assert two_gaussian_closeness(0.0).closeness == 0.0
    with pytest.raises(ValueError):
        two_gaussian_closeness(-1.0)


@given(st.floats(0.0, 10.0), st.floats(0.0, 10.0))
def test_closeness_monotone(a, b):
    lo, hi = sorted((a, b))
    assert two_gaussian_closeness(lo).closeness <= two_gaussian_closeness(hi).closeness


def test_closeness_excludes_self():
    rep = class_closeness([[0.0], [1.0], [3.0]])
    assert rep.per_class_min_kl == (0.5, 0.5, 2.0)
    with pytest.raises(ValueError):
        class_closeness([[0.0]])


@given(st.lists(st.floats(0.0, 5.0), min_size=2, max_size=30))
def test_mean_ci_matches_scipy(values):
    mean, lo, hi = mean_ci(values)
    assert mean == pytest.approx(np.mean(values))
    if np.std(values) > 1e-12:
        ref = stats.t.interval(0.95, len(values) - 1, loc=np.mean(values),
                               scale=stats.sem(values))
        assert (lo, hi) == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_summary_over_run_means():
    rep = report([[0.1, 0.3], [0.2, 0.2], [0.4, 0.6]])
    s = rep.summary
    assert s["run_means"] == pytest.approx([0.2, 0.2, 0.5])
    assert s["mean_epsilon"] == pytest.approx(0.3)
    _, lo, hi = mean_ci([0.2, 0.2, 0.5])
    assert s["ci95"] == pytest.approx([lo, hi])


def test_summary_skips_misclassified_and_infinite():
    run = RunRecord(0, 10, [QueryRecord(0, 0, cert(0.2)),
                            QueryRecord(1, 0, cert(0.0, INFEASIBLE_QUERY)),
                            QueryRecord(2, 0, cert(np.inf)),
                            QueryRecord(3, 0, cert(0.4, BOUNDED, lower=0.1))])
    s = summarize([run])
    assert s["mean_epsilon"] == pytest.approx(0.3)
    assert s["timeout_count"] == 1
    assert s["status_counts"] == {OPTIMAL: 2, INFEASIBLE_QUERY: 1, BOUNDED: 1}
    assert s["n_queries"] == 4


def test_json_round_trip():
    rep = report([[0.1, np.inf], [0.25]])
    back = RunReport.from_json(rep.to_json())
    assert back.to_dict() == rep.to_dict()
    assert json.loads(rep.to_json())["schema_version"] == 1
    obj = rep.to_dict()
    obj["schema_version"] = 99
    with pytest.raises(ValueError):
        RunReport.from_dict(obj)


def test_csv_rows():
    buf = io.StringIO()
    report([[0.1, 0.2]]).dump(buf, "csv")
    lines = buf.getvalue().strip().splitlines()
    assert len(lines) == 3 and lines[0].startswith("run,seed,index")
    with pytest.raises(ValueError):
        report([[0.1]]).dump(buf, "xml")
