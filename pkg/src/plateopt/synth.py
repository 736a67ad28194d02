"""Synthetic retail network with known ground-truth demand.

Demand per (title, issue, POS) is negative binomial with a multiplicative
mean: POS base rate (log-normal across the network, hence the long tail)
times title popularity, yearly seasonality, a holiday bump and the
extra-product uplift.  Because the law is analytic, every conditional
quantile is known exactly, which turns coverage, loss and optimality claims
into checkable statements.

The historical supply policy censors a configurable fraction of rows
(supply equals realized demand there) and gives the rest headroom above a
high demand quantile, so reconstruction and the optimizer both have real
work to do.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from decimal import Decimal
from pathlib import Path

import numpy as np
from scipy.stats import nbinom

from plateopt.core import DEFAULT_COST_CONFIG, IssueMeta, PosMeta, SalesRecord
from plateopt.ingest import Dataset, write as write_dataset

ESTABLISHMENTS = ("kiosk", "supermarket", "mall", "station", "airport")
AGE_BRACKETS = ("kids", "tweens", "teens")

_PERIOD_STEP_DAYS = {
    "weekly": 7, "monthly": 28, "bimonthly": 56, "quarterly": 91, "special": 35,
}

#: Fixed-date public holidays, repeated every year of the horizon.
HOLIDAY_MONTH_DAYS = ((1, 1), (5, 1), (5, 8), (7, 14), (8, 15),
                      (11, 1), (11, 11), (12, 25))


@dataclass(frozen=True)
class GeneratorSpec:
    seed: int = 7
    n_pos: int = 2500
    n_titles: int = 4
    issues_per_title: int = 18
    periodicity: str = "monthly"
    pos_rate_log_mean: float = 0.0
    pos_rate_log_sigma: float = 1.6
    title_pop_low: float = 0.6
    title_pop_high: float = 1.8
    seasonality_amplitude: float = 0.15
    holiday_uplift: float = 0.10
    n_extra_products: int = 10
    extra_product_prob: float = 0.5
    extra_uplift_low: float = -0.10
    extra_uplift_high: float = 0.25
    anchor_uplift: float = 0.10      # the classic toy-dinosaur effect
    blockbuster_uplift: float = 0.80  # atypical product later issues exclude
    exclusion_threshold: float = 0.50
    dispersion: float = 2.0
    oos_rate: float = 0.12
    headroom_quantile: float = 0.80
    supply_noise_sigma: float = 0.35
    annual_demand_trend: float = -0.15
    r_pct: float = 30.0
    start: date = date(2021, 1, 7)
    price_low: float = 4.0
    price_high: float = 9.0
    delta_frac: float = 0.15

    def __post_init__(self):
        if self.periodicity not in _PERIOD_STEP_DAYS:
            raise ValueError(f"unknown periodicity {self.periodicity!r}")
        for name in ("oos_rate", "extra_product_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.dispersion <= 0:
            raise ValueError("dispersion must be > 0")

    def to_dict(self) -> dict:
        doc = {}
        for f in self.__dataclass_fields__:
            v = getattr(self, f)
            doc[f] = v.isoformat() if isinstance(v, date) else v
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "GeneratorSpec":
        doc = dict(doc)
        if "start" in doc and isinstance(doc["start"], str):
            doc["start"] = date.fromisoformat(doc["start"])
        return cls(**doc)


@dataclass(frozen=True)
class GroundTruth:
    """Latent demand means and the realized draws, keyed (title, issue, pos)."""

    means: dict
    demands: dict
    dispersion: float

    def mean(self, key) -> float:
        return self.means[key]

    def demand(self, key) -> float:
        return self.demands[key]


def holidays_for(start: date, end: date) -> frozenset:
    days = set()
    for year in range(start.year, end.year + 1):
        for month, day in HOLIDAY_MONTH_DAYS:
            d = date(year, month, day)
            if start <= d <= end:
                days.add(d)
    return frozenset(days)


def season_factor(week: int, amplitude: float) -> float:
    return 1.0 + amplitude * math.sin(2.0 * math.pi * week / 52.0)


def true_quantile(gt: GroundTruth, key, alpha: float) -> float:
    """Analytic alpha-quantile of the row's negative-binomial demand law."""
    if key not in gt.means:
        raise KeyError(f"unknown row {key}")
    mu = gt.means[key]
    if mu <= 0:
        return 0.0
    k = gt.dispersion
    return float(nbinom.ppf(alpha, k, k / (k + mu)))


def generate(spec: GeneratorSpec):
    """Build the synthetic world: returns (Dataset, GroundTruth).

    Every draw hangs off the seed, so equal specs give identical worlds.
    """
    rng = np.random.default_rng(spec.seed)
    step = _PERIOD_STEP_DAYS[spec.periodicity]

    pos_ids = [f"P{k:05d}" for k in range(spec.n_pos)]
    bases = rng.lognormal(spec.pos_rate_log_mean, spec.pos_rate_log_sigma,
                          spec.n_pos)
    establishments = rng.choice(ESTABLISHMENTS, size=spec.n_pos)
    brackets = np.searchsorted(np.quantile(bases, [0.2, 0.4, 0.6, 0.8]), bases)
    pos_meta = {
        pid: PosMeta(pos=pid, establishment=str(establishments[i]),
                     pos_revenue_bracket=int(brackets[i]))
        for i, pid in enumerate(pos_ids)
    }

    uplifts = {}
    for p in range(spec.n_extra_products):
        xid = f"XP{p:02d}"
        if p == 0:
            uplifts[xid] = spec.anchor_uplift
        elif p == 1:
            uplifts[xid] = spec.blockbuster_uplift
        else:
            uplifts[xid] = float(rng.uniform(spec.extra_uplift_low,
                                             spec.extra_uplift_high))

    issue_meta = {}
    records = []
    means, demands = {}, {}
    k_disp = spec.dispersion

    horizon_end = spec.start + timedelta(days=step * spec.issues_per_title + 366)
    holidays = holidays_for(spec.start - timedelta(days=366), horizon_end)

    for t in range(spec.n_titles):
        title = f"T{t:02d}"
        pop = float(np.exp(rng.uniform(math.log(spec.title_pop_low),
                                       math.log(spec.title_pop_high))))
        price = Decimal(str(round(float(rng.uniform(spec.price_low,
                                                    spec.price_high)), 2)))
        age = str(rng.choice(AGE_BRACKETS))
        title_issues = []  # (issue_id, start, uplift_value, extra_id)
        for i in range(spec.issues_per_title):
            issue = f"I{i + 1:03d}"
            period_start = spec.start + timedelta(days=step * i)
            duration = step - 2 - int(rng.integers(0, 2))
            period_end = period_start + timedelta(days=duration)

            extra_id = None
            uplift = 0.0
            if rng.uniform() < spec.extra_product_prob and uplifts:
                extra_id = f"XP{int(rng.integers(0, spec.n_extra_products)):02d}"
                uplift = uplifts[extra_id]

            # SMEs point references at the two most similar prior issues and
            # exclude anything that shipped with a blockbuster product.
            refs = ()
            if len(title_issues) >= 2:
                ranked = sorted(
                    title_issues,
                    key=lambda rec: (abs(rec[2] - uplift), rec[0]),
                )
                refs = ((title, ranked[0][0]), (title, ranked[1][0]))
            exclusions = frozenset(
                (title, rec[0]) for rec in title_issues
                if rec[2] >= spec.exclusion_threshold
            )

            week = period_start.isocalendar()[1]
            season = season_factor(week, spec.seasonality_amplitude)
            has_holiday = any(period_start <= d <= period_end for d in holidays)
            holiday_mult = 1.0 + (spec.holiday_uplift if has_holiday else 0.0)
            years = (period_start - spec.start).days / 365.25
            trend = (1.0 + spec.annual_demand_trend) ** years

            mu = bases * pop * season * holiday_mult * (1.0 + uplift) * trend
            p_nb = k_disp / (k_disp + mu)
            demand = rng.negative_binomial(k_disp, p_nb)
            # The historical policy holds stock at a high demand quantile but
            # misallocates it (log-normal noise), like a human plan would.
            headroom = nbinom.ppf(spec.headroom_quantile, k_disp, p_nb)
            noise = rng.lognormal(0.0, spec.supply_noise_sigma, spec.n_pos)
            censored = rng.uniform(size=spec.n_pos) < spec.oos_rate
            supply = np.where(
                censored,
                demand,
                np.maximum(demand + 1, np.round(headroom * noise)).astype(np.int64),
            ).astype(np.int64)
            sales = np.minimum(demand, supply)

            n_total = max(1, int(round(float(mu.sum()))))
            delta = max(1, int(round(spec.delta_frac * n_total)))
            meta = IssueMeta(
                title=title, issue=issue, price=price,
                periodicity=spec.periodicity, age_bracket=age,
                extra_product_id=extra_id, references=refs,
                atypical_exclusions=exclusions,
                period_start=period_start, period_end=period_end,
                n_total=n_total, delta=delta,
            )
            issue_meta[(title, issue)] = meta
            for j, pid in enumerate(pos_ids):
                records.append(SalesRecord(
                    title=title, issue=issue, pos=pid,
                    supply=int(supply[j]), sales=int(sales[j]),
                    period_start=period_start, period_end=period_end,
                ))
                means[(title, issue, pid)] = float(mu[j])
                demands[(title, issue, pid)] = float(demand[j])
            title_issues.append((issue, period_start, uplift, extra_id))

    ds = Dataset.build(records, pos_meta, issue_meta)
    gt = GroundTruth(means=means, demands=demands, dispersion=k_disp)
    return ds, gt


def write_ground_truth(gt: GroundTruth, path) -> None:
    lines = []
    for key in sorted(gt.means):
        title, issue, pos = key
        lines.append(json.dumps({
            "title": title, "issue": issue, "pos": pos,
            "mean": gt.means[key], "demand": gt.demands[key],
            "dispersion": gt.dispersion,
        }, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_ground_truth(path) -> GroundTruth:
    means, demands = {}, {}
    dispersion = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            doc = json.loads(line)
            key = (doc["title"], doc["issue"], doc["pos"])
            means[key] = doc["mean"]
            demands[key] = doc["demand"]
            dispersion = doc["dispersion"]
    if dispersion is None:
        raise ValueError(f"{path}: no ground-truth rows")
    return GroundTruth(means=means, demands=demands, dispersion=dispersion)


def write_world(spec: GeneratorSpec, out_dir) -> None:
    """Emit the full on-disk world: dataset files, holidays, ground truth,
    the default cost config, and the generator spec for provenance."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds, gt = generate(spec)
    write_dataset(ds, out)
    lo, hi = ds.date_range()
    days = sorted(holidays_for(lo - timedelta(days=730), hi + timedelta(days=366)))
    (out / "holidays.txt").write_text(
        "\n".join(d.isoformat() for d in days) + "\n", encoding="utf-8")
    write_ground_truth(gt, out / "groundtruth.jsonl")
    (out / "cost_config.json").write_text(DEFAULT_COST_CONFIG.to_json() + "\n",
                                          encoding="utf-8")
    (out / "generator_spec.json").write_text(
        json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
