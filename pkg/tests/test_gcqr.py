import math
from datetime import date

import numpy as np
import pytest

from plateopt import gcqr, ingest
from plateopt.features import ExtraProductRanking
from plateopt.gcqr import (
    CalibratedQuantileModel,
    CorrectionTable,
    GroupScheme,
    calibrate,
    conformal_quantile,
    fit_calibrated_model,
    predict_calibrated,
    predict_calibrated_grid,
    split_for_title,
)
from plateopt.qreg import GbtHyper

from conftest import build_dataset, mk_issue, mk_pos, monthly_issues

EMPTY_RANKING = ExtraProductRanking(mapping={}, fitted_on=date(2020, 1, 1))
NO_HOLIDAYS = frozenset()


class StubModel:
    """Duck-typed stand-in returning a constant raw prediction."""

    def __init__(self, value, trained_on=frozenset()):
        self.value = value
        self.trained_on = frozenset(trained_on)

    def predict_rows(self, rows):
        return np.full(len(rows), self.value, dtype=np.float64)

    def predict(self, row):
        return self.value


class TestGroupScheme:
    def test_default_bins(self):
        s = GroupScheme()
        assert s.n_groups == 6
        assert s.group_of(0.0) == 0
        assert s.group_of(0.99) == 0
        assert s.group_of(1.0) == 1
        assert s.group_of(4.0) == 2
        assert s.group_of(75.0) == 5
        assert s.group_of(float("nan")) == 0

    def test_boundaries_must_start_at_zero(self):
        with pytest.raises(ValueError):
            GroupScheme((1.0, 2.0))


class TestSplitForTitle:
    def test_monthly_two_latest(self, small_dataset):
        ts = ingest.slice(small_dataset, date(2030, 1, 1))
        split = split_for_title(small_dataset, ts, "T1")
        assert split.cal_issues == ("I9", "I10")
        cal_issue_set = {r.issue for r in split.cal_records}
        assert cal_issue_set == {"I9", "I10"}
        assert all(r.issue not in cal_issue_set for r in split.train_records)

    def test_quarterly_one_latest(self):
        issues = [mk_issue("Q1", f"I{k}", f"2022-0{1 + 2 * (k - 1)}-01",
                           periodicity="quarterly", days=80)
                  for k in (1, 2)]
        ds = build_dataset(issues, [mk_pos("P1")],
                           [("Q1", "I1", "P1", 3, 1), ("Q1", "I2", "P1", 3, 2)])
        ts = ingest.slice(ds, date(2030, 1, 1))
        split = split_for_title(ds, ts, "Q1")
        assert split.cal_issues == ("I2",)

    def test_single_issue_title_warns(self):
        issues = monthly_issues("T1", 1)
        ds = build_dataset(issues, [mk_pos("P1")], [("T1", "I1", "P1", 3, 1)])
        ts = ingest.slice(ds, date(2030, 1, 1))
        with pytest.warns(UserWarning, match="only 1 observed"):
            split = split_for_title(ds, ts, "T1")
        assert split.cal_issues == ("I1",)

    def test_no_observed_issues_is_error(self, small_dataset):
        ts = ingest.slice(small_dataset, date(2030, 1, 1))
        with pytest.raises(ValueError):
            split_for_title(small_dataset, ts, "TX")

    def test_train_includes_other_titles(self):
        issues = monthly_issues("T1", 3) + monthly_issues("T2", 3)
        poses = [mk_pos("P1")]
        obs = [(t, f"I{k}", "P1", 5, k) for t in ("T1", "T2") for k in (1, 2, 3)]
        ds = build_dataset(issues, poses, obs)
        ts = ingest.slice(ds, date(2030, 1, 1))
        split = split_for_title(ds, ts, "T1")
        assert {r.title for r in split.train_records} == {"T1", "T2"}


class TestConformalQuantile:
    def test_order_statistic_example(self):
        # n=5, alpha=0.8: rank ceil(4.8)=5 -> 5th smallest
        assert conformal_quantile([-1, 0, 0, 1, 2], 0.8) == 2

    def test_all_zero(self):
        for a in (0.65, 0.85, 0.99):
            assert conformal_quantile([0.0] * 5, a) == 0.0

    def test_clamp_when_rank_overflows(self):
        # n=1, alpha=0.65: rank ceil(1.3)=2 > 1 -> max
        assert conformal_quantile([3.0], 0.65) == 3.0

    def test_matches_full_sort_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            n = int(rng.integers(1, 40))
            errs = rng.normal(0, 2, n).tolist()
            alpha = float(rng.uniform(0.05, 0.99))
            rank = math.ceil((n + 1) * alpha)
            expected = sorted(errs)[min(rank, n) - 1]
            assert conformal_quantile(errs, alpha) == expected


def quarterly_fixture():
    """One quarterly title, one cal issue, 5 POSes with targets 0,1,1,2,3."""
    issues = [
        mk_issue("Q1", "I1", "2022-01-01", periodicity="quarterly", days=80),
        mk_issue("Q1", "I2", "2022-05-01", periodicity="quarterly", days=80),
    ]
    poses = [mk_pos(f"P{k}") for k in range(1, 6)]
    obs = [("Q1", "I1", f"P{k}", 9, 2) for k in range(1, 6)]
    sales = [0, 1, 1, 2, 3]
    obs += [("Q1", "I2", f"P{k + 1}", 9, sales[k]) for k in range(5)]
    ds = build_dataset(issues, poses, obs)
    ts = ingest.slice(ds, date(2030, 1, 1))
    return ds, ts


class TestCalibrate:
    def test_corrections_from_known_errors(self):
        ds, ts = quarterly_fixture()
        split = split_for_title(ds, ts, "Q1")
        assert split.cal_issues == ("I2",)
        scheme = GroupScheme((0.0, 100.0))
        models = {0.8: StubModel(1.0)}
        table = calibrate(models, split, ds, scheme, 30,
                          ranking=EMPTY_RANKING, holidays=NO_HOLIDAYS)
        # errors = targets - 1.0 = [-1, 0, 0, 1, 2]; all rows in group 0
        assert table.correction(0, 0.8) == 2.0
        assert table.counts[0] == 5
        assert table.counts[1] == 0
        assert 1 in table.empty_groups()

    def test_empty_group_falls_back_to_pooled(self):
        ds, ts = quarterly_fixture()
        split = split_for_title(ds, ts, "Q1")
        scheme = GroupScheme((0.0, 100.0))
        table = calibrate({0.8: StubModel(1.0)}, split, ds, scheme, 30,
                          ranking=EMPTY_RANKING, holidays=NO_HOLIDAYS)
        assert table.corrections[(1, 0.8)] == 0.0  # stored flag value
        assert table.correction(1, 0.8) == table.pooled[0.8]

    def test_refuses_contaminated_models(self):
        ds, ts = quarterly_fixture()
        split = split_for_title(ds, ts, "Q1")
        dirty = StubModel(1.0, trained_on={("Q1", "I2")})
        with pytest.raises(ValueError, match="refusing to calibrate"):
            calibrate({0.8: dirty}, split, ds, GroupScheme((0.0, 100.0)), 30,
                      ranking=EMPTY_RANKING, holidays=NO_HOLIDAYS)


class TestPredictCalibrated:
    def build_model(self, raw, q):
        scheme = GroupScheme((0.0, 100.0))
        table = CorrectionTable(
            n_groups=2, alphas=(0.8,),
            corrections={(0, 0.8): q, (1, 0.8): 0.0},
            counts={0: 5, 1: 0}, pooled={0.8: q},
        )
        return CalibratedQuantileModel(
            title="Q1", alpha_grid=(0.8,), models={0.8: StubModel(raw)},
            scheme=scheme, corrections=table,
        )

    def row(self, mean_sales_12m=0.5):
        from test_qreg import feature_row
        return feature_row(mean_sales_12m=mean_sales_12m)

    def test_additive_correction(self):
        model = self.build_model(raw=1.4, q=0.6)
        assert predict_calibrated(model, self.row(), 0.8) == pytest.approx(2.0)

    def test_clamped_at_zero(self):
        model = self.build_model(raw=0.2, q=-0.5)
        assert predict_calibrated(model, self.row(), 0.8) == 0.0

    def test_alpha_outside_grid_rejected(self):
        model = self.build_model(raw=1.0, q=0.0)
        with pytest.raises(ValueError):
            predict_calibrated(model, self.row(), 0.75)

    def test_correction_constant_within_group(self):
        model = self.build_model(raw=1.0, q=0.37)
        deltas = [
            predict_calibrated(model, self.row(v), 0.8) - 1.0
            for v in (0.0, 0.3, 0.9)
        ]
        assert deltas == [pytest.approx(0.37)] * 3


class TestEndToEnd:
    def test_fit_calibrated_model_and_grid(self, small_dataset):
        ts = ingest.slice(small_dataset, date(2030, 1, 1))
        grid = (0.65, 0.85, 0.95)
        model = fit_calibrated_model(
            small_dataset, ts, "T1",
            ranking=EMPTY_RANKING, holidays=NO_HOLIDAYS, r_pct=30,
            alpha_grid=grid, hyper=GbtHyper(n_trees=10, min_leaf=2),
            scheme=GroupScheme((0.0, 3.0)),
        )
        assert model.title == "T1"
        assert set(model.models) == set(grid)
        # grid predictions are monotone after crossing repair
        from plateopt.features import build_features
        meta = small_dataset.issue_meta[("T1", "I10")]
        row = build_features(small_dataset, ("T1", "I10", "P1"),
                             meta.period_start, EMPTY_RANKING, NO_HOLIDAYS)
        preds = predict_calibrated_grid(model, row)
        values = [preds[a] for a in grid]
        assert values == sorted(values)
        assert all(v >= 0 for v in values)

    def test_grid_matrix_matches_row_path(self, small_dataset):
        ts = ingest.slice(small_dataset, date(2030, 1, 1))
        grid = (0.65, 0.85)
        model = fit_calibrated_model(
            small_dataset, ts, "T1",
            ranking=EMPTY_RANKING, holidays=NO_HOLIDAYS, r_pct=30,
            alpha_grid=grid, hyper=GbtHyper(n_trees=8, min_leaf=2),
        )
        from plateopt.features import build_features
        rows = []
        for pos in ("P1", "P2"):
            meta = small_dataset.issue_meta[("T1", "I10")]
            rows.append(build_features(small_dataset, ("T1", "I10", pos),
                                       meta.period_start, EMPTY_RANKING, NO_HOLIDAYS))
        mat = gcqr.calibrated_grid_matrix(model, rows)
        for i, row in enumerate(rows):
            preds = predict_calibrated_grid(model, row)
            for j, a in enumerate(grid):
                assert mat[i, j] == pytest.approx(preds[a])

    def test_serialization_round_trip(self, small_dataset):
        ts = ingest.slice(small_dataset, date(2030, 1, 1))
        model = fit_calibrated_model(
            small_dataset, ts, "T1",
            ranking=EMPTY_RANKING, holidays=NO_HOLIDAYS, r_pct=30,
            alpha_grid=(0.65, 0.85), hyper=GbtHyper(n_trees=5, min_leaf=2),
        )
        text = model.to_json()
        clone = CalibratedQuantileModel.from_json(text)
        assert clone.to_json() == text
