"""Feature engineering for the demand sensing model.

Every feature of one (issue, POS) pair is computed *as of* a date: only
records whose selling period ended strictly before that date may contribute,
which is what makes the training matrix leak-free by construction.

Aggregates over windows that contain nothing emit NaN, the missing sentinel
the regressor routes natively.  Zero would lie: a POS that sold nothing is
very different from a POS we know nothing about.

Subject-matter experts influence two inputs: per-issue reference issues
(feeding ``mean_ref``/``max_ref``/``oos_rate_ref``) and atypical exclusions,
which drop disruptive issues from trend and yearly-lag aggregates.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields as dc_fields
from datetime import date, timedelta
from typing import Optional, Sequence

from plateopt.core import CostConfig, IssueMeta, plan_kpis, reconstruct_demand
from plateopt.ingest import Dataset, TimeSlice

MISSING = float("nan")

#: Lag and window spans, in days.
AGG_LAG_DAYS = 91
WINDOW_12M_DAYS = 365
WINDOW_6M_DAYS = 182
YEARLY_LAG_TOLERANCE_DAYS = 45

N_EXTRA_PRODUCT_GROUPS = 8
#: Products first seen after the ranking was fitted land in the middle group.
UNSEEN_EXTRA_PRODUCT_GROUP = 3

FEATURE_ORDER = [
    "establishment", "pos_revenue_bracket", "age_bracket", "periodicity",
    "price", "extra_product_power", "mean_sales_12m", "mean_sales_6m",
    "mean_trend", "mean_trend_recent", "max_trend", "oos_rate_trend",
    "mean_ref", "max_ref", "oos_rate_ref", "mean_lag_yearly",
    "max_lag_yearly", "oos_rate_lag_yearly", "selling_duration",
    "holiday_percentage", "week_of_sale_sin", "week_of_sale_cos",
]

CATEGORICAL_FEATURES = ("establishment", "age_bracket", "periodicity")


@dataclass(frozen=True)
class FeatureRow:
    establishment: str
    pos_revenue_bracket: float
    age_bracket: str
    periodicity: str
    price: float
    extra_product_power: float
    mean_sales_12m: float
    mean_sales_6m: float
    mean_trend: float
    mean_trend_recent: float
    max_trend: float
    oos_rate_trend: float
    mean_ref: float
    max_ref: float
    oos_rate_ref: float
    mean_lag_yearly: float
    max_lag_yearly: float
    oos_rate_lag_yearly: float
    selling_duration: float
    holiday_percentage: float
    week_of_sale_sin: float
    week_of_sale_cos: float

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, f) for f in FEATURE_ORDER)


assert [f.name for f in dc_fields(FeatureRow)] == FEATURE_ORDER


@dataclass(frozen=True)
class TrainingExample:
    key: tuple  # (title, issue, pos)
    features: FeatureRow
    target: float


@dataclass(frozen=True)
class ExtraProductRanking:
    """Ordinal 0 (worst) .. 7 (best) per extra-product id, by the average
    per-unit profit of the issues that shipped with it."""

    mapping: dict
    fitted_on: date

    def power(self, extra_product_id: Optional[str]) -> float:
        if extra_product_id is None:
            return MISSING
        if extra_product_id not in self.mapping:
            return float(UNSEEN_EXTRA_PRODUCT_GROUP)
        return float(self.mapping[extra_product_id])


def rank_extra_products(ds: Dataset, train: TimeSlice, cfg: CostConfig) -> ExtraProductRanking:
    """Bucket extra-products into 8 ordinal groups by financial performance.

    Per product: mean over its issues of (issue profit / copies sold).
    Products sort ascending and split into 8 equal-count buckets, remainders
    going to the lowest buckets.
    """
    per_issue: dict = {}
    for r in train.train:
        per_issue.setdefault((r.title, r.issue), []).append(r)
    product_values: dict = {}
    for key, records in sorted(per_issue.items()):
        meta = ds.issue_meta[key]
        if meta.extra_product_id is None:
            continue
        plan = {r.pos: r.supply for r in records}
        sales = {r.pos: r.sales for r in records}
        kpis = plan_kpis(plan, sales, meta.price, cfg)
        sold = sum(sales.values())
        per_unit = float(kpis.profit) / max(sold, 1)
        product_values.setdefault(meta.extra_product_id, []).append(per_unit)
    if not product_values:
        return ExtraProductRanking(mapping={}, fitted_on=train.cutoff)
    averages = sorted(
        (sum(v) / len(v), pid) for pid, v in product_values.items()
    )
    n = len(averages)
    base, rem = divmod(n, N_EXTRA_PRODUCT_GROUPS)
    mapping = {}
    idx = 0
    for bucket in range(N_EXTRA_PRODUCT_GROUPS):
        size = base + (1 if bucket < rem else 0)
        for _ in range(size):
            if idx >= n:
                break
            mapping[averages[idx][1]] = bucket
            idx += 1
    return ExtraProductRanking(mapping=mapping, fitted_on=train.cutoff)


def _observed(records, as_of: date):
    return [r for r in records if r.period_end < as_of]


def _window(records, as_of: date, lag_days: int, span_days: int):
    lo = as_of - timedelta(days=lag_days + span_days)
    hi = as_of - timedelta(days=lag_days)
    return [r for r in records if lo <= r.period_start < hi]


def _mean_per_supplied(records) -> float:
    supplied = [r for r in records if r.supply > 0]
    if not supplied:
        return MISSING
    return sum(r.sales for r in records) / len(supplied)


def _max_sales(records) -> float:
    if not records:
        return MISSING
    return float(max(r.sales for r in records))


def _oos_rate(records) -> float:
    supplied = [r for r in records if r.supply > 0]
    if not supplied:
        return MISSING
    return sum(1 for r in supplied if r.sales == r.supply) / len(supplied)


def _nearest_lag(records, target_start: date, lag_days: int):
    """The record whose period_start is nearest target_start - lag_days,
    within the tolerance window; None when nothing matches."""
    anchor = target_start - timedelta(days=lag_days)
    best = None
    best_gap = None
    for r in records:
        gap = abs((r.period_start - anchor).days)
        if gap > YEARLY_LAG_TOLERANCE_DAYS:
            continue
        if best_gap is None or gap < best_gap:
            best, best_gap = r, gap
    return best


def pos_trend_stats(ds: Dataset, title: str, pos: str, as_of: date,
                    exclusions: frozenset, target_start: Optional[date] = None) -> dict:
    """Trend and yearly-lag aggregates at one POS, exclusions honored.

    Shared by the feature builder and the business-rule sanity caps.
    """
    history = [
        r for r in _observed(ds.history(title, pos), as_of)
        if (r.title, r.issue) not in exclusions
    ]
    history.sort(key=lambda r: (r.period_start, r.issue))
    last3 = history[-3:]
    last2 = history[-2:]
    anchor = target_start if target_start is not None else as_of
    lag_records = [
        r for r in (
            _nearest_lag(history, anchor, 365),
            _nearest_lag(history, anchor, 730),
        ) if r is not None
    ]
    return {
        "mean_trend": _mean_per_supplied(last3),
        "mean_trend_recent": _mean_per_supplied(last2),
        "max_trend": _max_sales(last3),
        "oos_rate_trend": _oos_rate(last3),
        "mean_lag_yearly": _mean_per_supplied(lag_records),
        "max_lag_yearly": _max_sales(lag_records),
        "oos_rate_lag_yearly": _oos_rate(lag_records),
    }


def week_of_sale_encoding(start: date) -> tuple:
    week = start.isocalendar()[1]
    angle = 2.0 * math.pi * week / 52.0
    return math.sin(angle), math.cos(angle)


def build_features(ds: Dataset, target: tuple, as_of: date,
                   ranking: ExtraProductRanking, holidays: frozenset) -> FeatureRow:
    """All predictors of one (title, issue, pos) as of a date.

    ``as_of`` may not be later than the issue's period_start; features for a
    selling period must be computable before the period begins.
    """
    title, issue, pos = target
    meta = ds.issue_meta.get((title, issue))
    if meta is None:
        raise KeyError(f"no IssueMeta for ({title}, {issue})")
    if as_of > meta.period_start:
        raise ValueError(
            f"as_of {as_of} is after the start of ({title}, {issue}); "
            f"features would leak the period being predicted"
        )
    pos_meta = ds.pos_meta.get(pos)
    if pos_meta is None:
        raise KeyError(f"no PosMeta for {pos!r}")

    history = _observed(ds.history(title, pos), as_of)
    trend = pos_trend_stats(ds, title, pos, as_of, meta.atypical_exclusions,
                            target_start=meta.period_start)

    ref_records = []
    for ref_title, ref_issue in meta.references:
        for r in _observed(ds.issue_records(ref_title, ref_issue), as_of):
            if r.pos == pos:
                ref_records.append(r)

    duration = (meta.period_end - meta.period_start).days + 1
    n_holidays = sum(
        1 for d in holidays if meta.period_start <= d <= meta.period_end
    )
    sin_w, cos_w = week_of_sale_encoding(meta.period_start)

    return FeatureRow(
        establishment=pos_meta.establishment,
        pos_revenue_bracket=float(pos_meta.pos_revenue_bracket),
        age_bracket=meta.age_bracket,
        periodicity=meta.periodicity,
        price=float(meta.price),
        extra_product_power=ranking.power(meta.extra_product_id),
        mean_sales_12m=_mean_per_supplied(
            _window(history, as_of, AGG_LAG_DAYS, WINDOW_12M_DAYS)),
        mean_sales_6m=_mean_per_supplied(
            _window(history, as_of, AGG_LAG_DAYS, WINDOW_6M_DAYS)),
        mean_trend=trend["mean_trend"],
        mean_trend_recent=trend["mean_trend_recent"],
        max_trend=trend["max_trend"],
        oos_rate_trend=trend["oos_rate_trend"],
        mean_ref=_mean_per_supplied(ref_records),
        max_ref=_max_sales(ref_records),
        oos_rate_ref=_oos_rate(ref_records),
        mean_lag_yearly=trend["mean_lag_yearly"],
        max_lag_yearly=trend["max_lag_yearly"],
        oos_rate_lag_yearly=trend["oos_rate_lag_yearly"],
        selling_duration=float(duration),
        holiday_percentage=n_holidays / duration,
        week_of_sale_sin=sin_w,
        week_of_sale_cos=cos_w,
    )


def build_training_matrix(ds: Dataset, ts: TimeSlice, ranking: ExtraProductRanking,
                          holidays: frozenset, r_pct: float) -> list:
    """One training example per train-view record.

    Features are taken as of the record's own period_start; the target is
    the reconstructed (de-censored) demand.
    """
    out = []
    for r in ts.train:
        meta = ds.issue_meta[(r.title, r.issue)]
        row = build_features(ds, r.key(), meta.period_start, ranking, holidays)
        out.append(TrainingExample(
            key=r.key(),
            features=row,
            target=reconstruct_demand(r, r_pct),
        ))
    return out


def load_holidays(path) -> frozenset:
    """holidays.txt: one ISO date per line, blank lines ignored."""
    days = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                days.add(date.fromisoformat(line))
    return frozenset(days)


def export_matrix_csv(rows: Sequence[TrainingExample]) -> str:
    """Feature matrix as CSV in the canonical column order (golden tests)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["title", "issue", "pos"] + FEATURE_ORDER + ["target"])
    for ex in rows:
        values = []
        for name, v in zip(FEATURE_ORDER, ex.features.as_tuple()):
            if isinstance(v, float) and math.isnan(v):
                values.append("")
            else:
                values.append(v)
        w.writerow(list(ex.key) + values + [ex.target])
    return buf.getvalue()
