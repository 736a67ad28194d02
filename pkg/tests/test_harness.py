import warnings
from datetime import date, timedelta

import pytest

from plateopt import ingest
from plateopt.harness import (
    HarnessConfig,
    backtest,
    build_manifest,
    manifest_hash,
    plan_eval,
    plan_issue,
    prepare_title_planner,
    train_gcqr_bundles,
)
from plateopt.features import rank_extra_products
from plateopt.qreg import GbtHyper
from plateopt.synth import GeneratorSpec, generate, holidays_for

warnings.filterwarnings("ignore", message=".*observed issue")

SMALL = GeneratorSpec(seed=21, n_pos=60, n_titles=2, issues_per_title=12)
FAST = HarnessConfig(
    hyper=GbtHyper(n_trees=10, max_depth=3, min_leaf=10, learning_rate=0.3),
    alpha_grid=(0.65, 0.8, 0.95),
    eval_alphas=(0.65, 0.85),
    scenario_budget=10,
)


@pytest.fixture(scope="module")
def world():
    ds, gt = generate(SMALL)
    lo, hi = ds.date_range()
    holidays = holidays_for(lo - timedelta(days=730), hi)
    cutoff = ds.issue_meta[("T00", "I011")].period_start
    return ds, gt, holidays, cutoff


class TestBacktest:
    def test_report_structure_and_baseline_oracle(self, world):
        ds, gt, holidays, cutoff = world
        report = backtest(ds, cutoff, FAST, holidays)
        assert set(report.losses) == {"naive", "s_naive", "gbt_no_refs",
                                      "gbt_linear", "gbt_log", "gbt_log_gcqr"}
        for row in report.losses.values():
            assert set(row) == {0.65, 0.85, "mean"}
            assert all(v >= 0 for v in row.values())
        # independent two-line evaluator for the naive baseline
        from plateopt.core import reconstruct_demand
        from plateopt.qreg import pinball
        ts = ingest.slice(ds, cutoff)
        trained = {r.title for r in ts.train}
        losses = []
        for r in ts.test:
            if r.title not in trained:
                continue
            history = [h for h in ds.history(r.title, r.pos)
                       if h.period_end < ds.issue_meta[(r.title, r.issue)].period_start]
            pred = float(history[-1].sales) if history else 0.0
            losses.append(pinball(0.65, reconstruct_demand(r, 30), pred))
        assert report.losses["naive"][0.65] == pytest.approx(
            sum(losses) / len(losses))

    def test_constant_sales_title_is_predictable(self):
        from conftest import build_dataset, mk_pos, monthly_issues
        issues = monthly_issues("C1", 12)
        poses = [mk_pos(f"P{k}") for k in range(4)]
        obs = [("C1", f"I{k}", f"P{j}", 9, 3)
               for k in range(1, 13) for j in range(4)]
        ds = build_dataset(issues, poses, obs)
        cutoff = ds.issue_meta[("C1", "I11")].period_start
        cfg = HarnessConfig(
            hyper=GbtHyper(n_trees=20, max_depth=3, min_leaf=4, learning_rate=0.3),
            alpha_grid=(0.65, 0.85), eval_alphas=(0.65, 0.85),
            scenario_budget=6)
        report = backtest(ds, cutoff, cfg, frozenset())
        for variant in ("gbt_log", "gbt_linear", "naive"):
            assert report.losses[variant]["mean"] < 0.05

    def test_deterministic_reports(self, world):
        ds, gt, holidays, cutoff = world
        a = backtest(ds, cutoff, FAST, holidays, manifest="m1")
        b = backtest(ds, cutoff, FAST, holidays, manifest="m1")
        assert a.to_csv() == b.to_csv()
        assert a.to_json() == b.to_json()

    def test_skipped_titles_reported(self, world):
        ds, gt, holidays, cutoff = world
        # a title whose records all start after the cutoff cannot train
        from conftest import mk_issue
        from plateopt.core import SalesRecord
        from plateopt.ingest import Dataset
        extra = mk_issue("TX", "I1", (cutoff + timedelta(days=3)).isoformat())
        records = list(ds.records) + [SalesRecord(
            title="TX", issue="I1", pos=sorted(ds.pos_meta)[0], supply=2,
            sales=1, period_start=extra.period_start, period_end=extra.period_end)]
        meta = dict(ds.issue_meta)
        meta[("TX", "I1")] = extra
        ds2 = Dataset.build(records, ds.pos_meta, meta)
        report = backtest(ds2, cutoff, FAST, holidays)
        assert "TX" in report.skipped_titles


class TestPlanEval:
    def test_identity_plan_is_100pct(self, world):
        ds, gt, holidays, cutoff = world
        report = plan_eval(ds, cutoff, FAST, holidays, gt=gt)
        for metric in ("supply", "profit", "oos"):
            assert report.pct("real", metric) == pytest.approx(100.0)

    def test_report_rows_and_csv(self, world):
        ds, gt, holidays, cutoff = world
        report = plan_eval(ds, cutoff, FAST, holidays, gt=gt)
        text = report.to_csv()
        lines = text.splitlines()
        assert lines[0].startswith("plan,")
        assert [l.split(",")[0] for l in lines[1:]] == [
            "real", "qr_scaled_baseline", "optimal_distribution",
            "optimal_supply"]

    def test_without_ground_truth_uses_recorded_sales(self, world):
        ds, gt, holidays, cutoff = world
        report = plan_eval(ds, cutoff, FAST, holidays, gt=None)
        # candidate plans can never sell beyond recorded sales
        real_rev = report.totals["real"]["profit"]
        assert report.totals["optimal_supply"]["supply"] > 0
        assert report.pct("real", "profit") == pytest.approx(100.0)

    def test_deterministic(self, world):
        ds, gt, holidays, cutoff = world
        a = plan_eval(ds, cutoff, FAST, holidays, gt=gt)
        b = plan_eval(ds, cutoff, FAST, holidays, gt=gt)
        assert a.to_csv() == b.to_csv()
        assert a.to_json() == b.to_json()


class TestPlanIssue:
    def test_end_to_end_plan_for_one_issue(self, world):
        ds, gt, holidays, cutoff = world
        ts = ingest.slice(ds, cutoff)
        ranking = rank_extra_products(ds, ts, FAST.cost)
        bundles = train_gcqr_bundles(ds, ts, FAST, ranking, holidays,
                                     titles=["T00"])
        planner = prepare_title_planner(ds, ts, "T00", bundles["T00"], FAST,
                                        ranking, holidays)
        meta = ds.issue_meta[("T00", "I011")]
        plans = plan_issue(planner, ds, meta, FAST, ranking, holidays,
                           plate=sorted(ds.pos_meta))
        assert plans.optimal_supply_plan.label == "optimal_supply"
        assert set(plans.optimal_supply_plan.allocations) == set(ds.pos_meta)
        assert all(v >= 0 for v in plans.optimal_supply_plan.allocations.values())


class TestManifest:
    def test_hash_stable_and_sensitive(self):
        m1 = build_manifest({"a": 1}, {"sales.csv": "ff"}, seed=5)
        m2 = build_manifest({"a": 1}, {"sales.csv": "ff"}, seed=5)
        m3 = build_manifest({"a": 2}, {"sales.csv": "ff"}, seed=5)
        assert manifest_hash(m1) == manifest_hash(m2)
        assert manifest_hash(m1) != manifest_hash(m3)
