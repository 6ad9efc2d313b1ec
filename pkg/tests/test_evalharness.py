import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from semiq.errors import AlignmentError, DegenerateInputError, NoDataError
from semiq.evalharness import (
    evaluate_run,
    pearson,
    random_baseline_closed_form,
    random_baseline_rmse,
    rmse,
)


def naive_pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    num = sum((a - mx) * (b - my) for a, b in zip(x, y))
    den = math.sqrt(sum((a - mx) ** 2 for a in x)) * math.sqrt(sum((b - my) ** 2 for b in y))
    return num / den


def naive_rmse(x, y):
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(x, y)) / len(x))


def test_pearson_small_fixture():
    x, y = [1, 2, 3, 4], [1.1, 1.9, 3.2, 3.8]
    assert abs(pearson(x, y) - naive_pearson(x, y)) < 1e-12


def test_pearson_trivial_cases():
    x = np.array([0.3, 1.0, -2.0, 4.0])
    assert pearson(x, x) == pytest.approx(1.0, abs=1e-15)
    assert pearson(x, -x) == pytest.approx(-1.0, abs=1e-15)
    with pytest.raises(DegenerateInputError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(AlignmentError):
        pearson([1, 2], [1, 2, 3])


def test_rmse_trivial_cases():
    x = np.arange(10.0)
    assert rmse(x, x) == 0.0
    assert rmse(x, x + 2.5) == pytest.approx(2.5)
    with pytest.raises(AlignmentError):
        rmse([1.0], [1.0, 2.0])


def test_metric_oracles_random():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 50))
        x, y = rng.normal(size=n), rng.normal(size=n)
        assert abs(pearson(x, y) - naive_pearson(x, y)) < 1e-12
        assert abs(rmse(x, y) - naive_rmse(x, y)) < 1e-12


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=100)
@given(
    hnp.arrays(np.float64, st.integers(3, 30), elements=finite),
    st.floats(0.1, 100.0),
    st.floats(-100.0, 100.0),
)
def test_pearson_affine_invariance(x, a, b):
    y = np.sin(np.arange(len(x))) + 0.1 * x
    if np.ptp(x) < 1e-3:
        return
    r = pearson(x, y)
    assert abs(pearson(a * x + b, y) - r) < 1e-9
    assert abs(pearson(-a * x + b, y) + r) < 1e-9


@given(*(hnp.arrays(np.float64, 12, elements=finite) for _ in range(3)))
def test_rmse_triangle(x, y, z):
    assert rmse(x, z) <= rmse(x, y) + rmse(y, z) + 1e-9


def test_random_baseline():
    assert random_baseline_closed_form((-20, 20)) == pytest.approx(40 / math.sqrt(6))
    assert random_baseline_closed_form((0, 0)) == 0.0
    mc = random_baseline_rmse((-20, 20), 100_000, seed=0)
    assert abs(mc - 40 / math.sqrt(6)) < 0.5
    # the reference figure 16.56 sits within 2% of the closed form
    assert abs(16.56 / random_baseline_closed_form((-20, 20)) - 1) < 0.02


def _refs(values, dataset):
    return [{"id": f"{dataset}-{i}", "target": v, "meta": {"dataset": dataset}} for i, v in enumerate(values)]


def test_evaluate_self_predictions():
    refs = _refs([1.0, 2.0, 3.5, 4.0], "a") + _refs([2.0, 3.0, 4.0], "b")
    preds = [{"id": r["id"], "value": r["target"]} for r in refs]
    rep = evaluate_run(preds, refs)
    assert all(s.pearson_r == pytest.approx(1.0) and s.rmse == 0.0 for s in rep.per_dataset.values())
    assert rep.overall == pytest.approx(1.0)


def test_evaluate_groups_average_of_group_means():
    rng = np.random.default_rng(1)
    refs, preds = [], []
    for name, noise in (("a", 0.2), ("b", 1.0), ("c", 0.5)):
        t = rng.uniform(1, 5, 40)
        rr = _refs(t, name)
        refs += rr
        preds += [{"id": r["id"], "value": r["target"] + rng.normal(0, noise)} for r in rr]
    groups = {"speech": ["a", "b"], "mixed": ["c"]}
    rep = evaluate_run(preds, refs, groups=groups)
    ra, rb, rc = (rep.per_dataset[k].pearson_r for k in "abc")
    assert rep.group_averages["speech"] == pytest.approx((ra + rb) / 2)
    assert rep.group_averages["mixed"] == pytest.approx(rc)
    assert rep.overall == pytest.approx(((ra + rb) / 2 + rc) / 2)
    assert list(rep.per_dataset) == ["a", "b", "c"]
    table = rep.to_table().splitlines()
    assert len(table) == 1 + 3 + 2 + 1
    # permutation invariance
    rep2 = evaluate_run(preds[::-1], refs[::-1], groups=groups)
    assert rep2.to_json() == rep.to_json()


def test_table5_style_arithmetic():
    # two groups with averages 0.79 and 0.45 give an overall of 0.62
    speech = [0.79] * 3
    mixed = [0.45] * 2
    overall_group_mean = (np.mean(speech) + np.mean(mixed)) / 2
    assert overall_group_mean == pytest.approx(0.62)
    assert np.mean(speech + mixed) != pytest.approx(0.62)


def test_evaluate_parse_failures():
    refs = _refs([1.0, 2.0, 3.0, 4.0, 5.0], "a")
    preds = [{"id": r["id"], "value": r["target"]} for r in refs]
    preds[2]["value"] = None
    rep = evaluate_run(preds, refs)
    assert rep.parse_failures == 1 and rep.n == 4 and rep.parse_failure_rate == pytest.approx(0.2)
    imp = evaluate_run(preds, refs, policy="midpoint-impute")
    assert imp.n == 5 and imp.per_dataset["a"].rmse == 0.0  # the midpoint equals the missing target
    d = json.loads(rep.to_json())
    assert d["parse_failures"] == 1


def test_evaluate_empty_join():
    with pytest.raises(NoDataError):
        evaluate_run([{"id": "x", "value": 1.0}], _refs([1.0], "a"))


def test_evaluate_all_failed_dataset_serialises():
    refs = _refs([1.0, 2.0], "a") + _refs([1.0, 2.0, 3.0], "b")
    preds = [{"id": r["id"], "value": None if r["meta"]["dataset"] == "a" else r["target"]} for r in refs]
    rep = evaluate_run(preds, refs)
    assert rep.per_dataset["a"].n == 0 and rep.per_dataset["a"].rmse is None
    json.loads(rep.to_json())
