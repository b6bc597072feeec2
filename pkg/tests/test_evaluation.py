import json
import logging
from io import StringIO

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from digicensus.evaluation import (
    CVError,
    CVReport,
    FoldPlan,
    ModelSpec,
    make_fold_plan,
    parse_model_spec,
    report_table,
    run_cv,
)
from helpers import make_matrix


def nested_keys(n=2000, n_tracts=100, seed=0):
    rng = np.random.default_rng(seed)
    tract = rng.integers(0, n_tracts, n)
    return pd.DataFrame({"tract_id": tract.astype(str), "zipcode_id": (tract // 4).astype(str),
                         "district_id": (tract // 20).astype(str)})


class TestFoldPlan:
    def test_one_group_per_fold(self):
        keys = pd.DataFrame({"tract_id": list("abcde") * 3})
        plan = make_fold_plan(keys, "tract", k=5, repetitions=4)
        for rep in range(4):
            for fold in range(5):
                assert len(set(keys.tract_id.iloc[plan.test_rows(rep, fold)])) == 1

    @pytest.mark.parametrize("scheme,col", [("tract", "tract_id"), ("zipcode", "zipcode_id"),
                                            ("district", "district_id")])
    def test_no_leakage_exhaustive(self, scheme, col):
        keys = nested_keys()
        plan = make_fold_plan(keys, scheme, k=5, repetitions=20, seed=7)
        groups = keys[col].to_numpy()
        for rep in range(20):
            seen = np.zeros(len(keys), int)
            for fold in range(5):
                test, train = plan.test_rows(rep, fold), plan.train_rows(rep, fold)
                assert set(groups[test]).isdisjoint(groups[train])
                seen[test] += 1
            assert np.all(seen == 1)

    def test_group_counts_balanced(self):
        keys = nested_keys()
        plan = make_fold_plan(keys, "zipcode", k=5, repetitions=5)
        for rep in range(5):
            counts = [keys.zipcode_id.iloc[plan.test_rows(rep, f)].nunique() for f in range(5)]
            assert max(counts) - min(counts) <= 1

    def test_standard_sizes(self):
        plan = make_fold_plan(nested_keys(n=103), "standard", k=5, repetitions=3)
        for rep in range(3):
            sizes = np.bincount(plan.assignments[rep], minlength=5)
            assert sizes.sum() == 103 and sizes.max() - sizes.min() <= 1

    def test_deterministic(self):
        keys = nested_keys()
        a = make_fold_plan(keys, "tract", seed=3).assignments
        assert np.array_equal(a, make_fold_plan(keys, "tract", seed=3).assignments)
        assert not np.array_equal(a, make_fold_plan(keys, "tract", seed=4).assignments)

    def test_too_few_groups(self):
        with pytest.raises(CVError, match="at least 5 groups"):
            make_fold_plan(pd.DataFrame({"district_id": list("abcd")}), "district")

    def test_bad_scheme(self):
        with pytest.raises(CVError):
            make_fold_plan(nested_keys(n=20), "borough")

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(5, 300), k=st.integers(2, 5), seed=st.integers(0, 1000))
    def test_partition_property(self, n, k, seed):
        plan = make_fold_plan(nested_keys(n=n, seed=seed), "standard", k=k, repetitions=2, seed=seed)
        for rep in range(2):
            rows = np.concatenate([plan.test_rows(rep, f) for f in range(k)])
            assert np.array_equal(np.sort(rows), np.arange(n))


def recount_missing(meta, plan, factor_cols):
    """Brute-force count of test rows whose key was never seen in training."""
    missing = total = 0
    keys = list(zip(*[meta[c].astype(str) for c in factor_cols]))
    for _, _, train, test in plan.splits():
        seen = {keys[i] for i in train}
        missing += sum(keys[i] not in seen for i in test)
        total += len(test)
    return missing / total


class TestRunCV:
    def test_intercept_only_is_null(self, rng):
        n = 5000
        fm = make_matrix(rng.normal(size=(n, 2)), rng.normal(size=n), rng.integers(0, 50, n))
        report = run_cv(fm, ModelSpec("ols", blocks=()), make_fold_plan(fm, "standard", repetitions=3))
        assert abs(report.mean_r2) < 0.05
        assert report.missing_rate == 0.0

    def test_constructed_missing_rate(self, rng):
        tracts = np.repeat(np.arange(10), 5)
        fm = make_matrix(rng.normal(size=50), rng.normal(size=50), tracts)
        fold0 = np.isin(tracts, [0, 1]) | (np.arange(50) % 5 == 0)
        plan = FoldPlan("standard", 2, 1, 0, np.where(fold0, 0, 1)[None, :].astype(np.int16))
        report = run_cv(fm, ModelSpec("ols", dummies=("tract",)), plan)
        assert report.missing_rate == recount_missing(fm.meta, plan, ["tract_id"]) == 10 / 50
        assert [f.n_missing for f in report.per_fold] == [10, 0]

    def test_sparse_tract_quarter_missing_rate(self, rng):
        n = 600
        weights = rng.dirichlet(np.full(12 * 24, 0.3))
        cell = rng.choice(12 * 24, n, p=weights)
        fm = make_matrix(rng.normal(size=(n, 2)), rng.normal(size=n), cell // 24, cell % 24)
        plan = make_fold_plan(fm, "standard", repetitions=3, seed=1)
        report = run_cv(fm, ModelSpec("ols", dummies=("tract_x_quarter",)), plan)
        oracle = recount_missing(fm.meta, plan, ["tract_id", "quarter"])
        assert report.missing_rate > 0 and report.missing_rate == oracle

    def test_no_dummies_no_missing(self, rng):
        fm = make_matrix(rng.normal(size=(100, 3)), rng.normal(size=100), rng.integers(0, 10, 100))
        report = run_cv(fm, ModelSpec("ols"), make_fold_plan(fm, "tract", repetitions=2))
        assert report.missing_rate == 0.0

    def test_undefined_fold_excluded(self, rng, caplog):
        tracts = np.repeat(np.arange(6), 10)
        fm = make_matrix(rng.normal(size=60), rng.normal(size=60), tracts)
        plan = make_fold_plan(fm, "tract", k=2, repetitions=1)
        with caplog.at_level(logging.WARNING):
            report = run_cv(fm, ModelSpec("ols", dummies=("tract",)), plan)
        assert report.undefined_folds == 2 and np.isnan(report.mean_r2)
        assert "no predictable" in caplog.text

    def test_jobs_do_not_change_report(self, rng):
        fm = make_matrix(rng.normal(size=(300, 4)), rng.normal(size=300), rng.integers(0, 20, 300))
        plan = make_fold_plan(fm, "tract", repetitions=4)
        spec = ModelSpec("rf", {"n_estimators": 5, "max_depth": 4})
        assert run_cv(fm, spec, plan, jobs=1).to_json() == run_cv(fm, spec, plan, jobs=3).to_json()

    def test_misaligned_plan(self, rng):
        fm = make_matrix(rng.normal(size=20), rng.normal(size=20), np.arange(20))
        with pytest.raises(CVError):
            run_cv(fm, ModelSpec(), make_fold_plan(nested_keys(n=21), "standard"))

    def test_block_subset(self, rng):
        X = rng.normal(size=(200, 4))
        y = X[:, 3] + 0.1 * rng.normal(size=200)
        fm = make_matrix(X, y, rng.integers(0, 20, 200), split=2)
        plan = make_fold_plan(fm, "standard", repetitions=2)
        with_b = run_cv(fm, ModelSpec("ols", blocks=("a", "b")), plan).mean_r2
        without = run_cv(fm, ModelSpec("ols", blocks=("a",)), plan).mean_r2
        assert with_b > 0.9 > 0.1 > without

    def test_selection_scopes(self, rng):
        X = rng.normal(size=(300, 30))
        y = X[:, :3].sum(axis=1) + rng.normal(size=300)
        fm = make_matrix(X, y, rng.integers(0, 30, 300))
        plan = make_fold_plan(fm, "standard", repetitions=2)
        spec = ModelSpec("ols", select_alpha=0.05)
        per_fold = run_cv(fm, spec, plan)
        full = run_cv(fm, spec, plan, selection_scope="full")
        assert per_fold.model == full.model
        assert per_fold.mean_r2 > 0.5 and full.mean_r2 > 0.5
        with pytest.raises(CVError):
            run_cv(fm, spec, plan, selection_scope="global")


def fake_report(r2_values, reps=2, k=3, model="ols", dataset=None, scheme="standard"):
    from digicensus.evaluation import FoldResult
    folds = [FoldResult(i // k, i % k, r, 0.9, 10, 1, 40) for i, r in enumerate(r2_values)]
    return CVReport(model, ["a"], scheme, k, reps, 0, folds, dataset=dataset)


class TestAggregation:
    def test_fold_pooling(self):
        vals = [0.1, 0.2, 0.3, 0.5, 0.6, 0.7]
        r = fake_report(vals)
        assert r.mean_r2 == pytest.approx(np.mean(vals))
        assert r.std_r2 == pytest.approx(np.std(vals, ddof=1))
        assert r.missing_rate == pytest.approx(6 / 60)

    def test_repetition_mode(self):
        r = fake_report([0.1, 0.2, 0.3, 0.5, 0.6, 0.7])
        r.aggregation = "repetition"
        assert r.mean_r2 == pytest.approx(0.4)
        assert r.std_r2 == pytest.approx(np.std([0.2, 0.6], ddof=1))

    def test_round_trip_with_nan(self):
        r = fake_report([0.1, float("nan"), 0.3, 0.5, 0.6, 0.7])
        back = CVReport.from_dict(json.loads(r.to_json()))
        assert back.to_json() == r.to_json()
        assert back.undefined_folds == 1 and back.mean_r2 == pytest.approx(np.mean([0.1, 0.3, 0.5, 0.6, 0.7]))

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=6, max_size=6))
    def test_aggregation_pure_function_of_folds(self, vals):
        r = fake_report(vals)
        shuffled = fake_report(vals)
        shuffled.per_fold = shuffled.per_fold[::-1]
        assert r.mean_r2 == pytest.approx(shuffled.mean_r2, abs=1e-12)
        assert r.std_r2 == pytest.approx(shuffled.std_r2, abs=1e-12)


class TestReportTable:
    def test_single_cell(self):
        t = report_table([fake_report([0.5] * 6)])
        assert t.formatted().shape == (1, 2)
        assert t.formatted().iloc[0, 1] == "0.5000 (0.0000)"

    def test_model_by_dataset_grid(self):
        cells = [fake_report(list(np.linspace(0.1, 0.6, 6) + i * 0.01 + j * 0.1), model=m, dataset=d)
                 for i, m in enumerate(["ols", "lasso", "rf", "gbt"])
                 for j, d in enumerate(["all", "taxi", "none", "crime", "311"])]
        t = report_table(cells)
        f = t.formatted()
        assert f.shape == (4, 6) and len(t.cells) == 20
        assert list(f.columns[1:]) == ["No digital census", "311 complaint", "Crime complaint",
                                       "Taxi trips", "All digital census"]
        assert list(f.iloc[:, 0]) == ["Linear regression", "Lasso", "Random Forest", "Gradient Tree Boosting"]

    def test_csv_and_json_agree(self):
        cells = [fake_report([0.12345, 0.2, 0.3, 0.4, 0.5, 0.61], model=m, dataset=d)
                 for m in ("ols", "gbt") for d in ("none", "all")]
        t = report_table(cells)
        csv = pd.read_csv(StringIO(t.to_csv()))
        doc = json.loads(t.to_json())
        for cell in doc["cells"]:
            text = csv.loc[csv.iloc[:, 0] == cell["row"], cell["column"]].item()
            mean, std = text.replace("(", "").replace(")", "").split()
            assert float(mean) == cell["mean_r2"] and float(std) == cell["std_r2"]

    def test_best_of_grid_kept(self):
        t = report_table([fake_report([0.1] * 6, model="gbt:max_depth=2"),
                          fake_report([0.3] * 6, model="gbt:max_depth=4")])
        assert t.cells[("Gradient Tree Boosting", "none")]["model"] == "gbt:max_depth=4"

    def test_mixed_schemes_rejected(self):
        with pytest.raises(CVError):
            report_table([fake_report([0.1] * 6), fake_report([0.1] * 6, scheme="tract")])

    def test_scheme_rows(self):
        t = report_table([fake_report([0.1] * 6), fake_report([0.1] * 6, scheme="district")], row_key="scheme")
        assert t.rows == ["Standard", "Grouped by community district"]


class TestModelSpec:
    def test_parse(self):
        s = parse_model_spec("gbt:n_estimators=200,max_depth=3,select_alpha=1e-4,dummies=tract+quarter")
        assert s.kind == "gbt" and s.params == {"n_estimators": 200, "max_depth": 3}
        assert s.select_alpha == 1e-4 and s.dummies == ("tract", "quarter")

    def test_json_form(self):
        s = parse_model_spec('{"kind": "rf", "params": {"n_estimators": 3}, "blocks": ["hc"]}')
        assert s.blocks == ("hc",) and s.build().n_estimators == 3

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            parse_model_spec("svm")
