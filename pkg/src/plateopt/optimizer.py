"""Scenario-grid supply optimization.

A scenario assigns one quantile level to each sales-scale group.  Candidate
scenarios are replayed against the calibration set, where actual sales are
known: scenario supply is the ceiling of the calibrated quantile prediction
and scenario sales are capped by what really sold.  Scenarios that beat the
actual historical plan on profit without more stockouts form the optimal
set; from it come the two named plans, the profit-maximizing
``optimal_supply`` plan and the ``optimal_distribution`` plan whose total
lands closest to the planner's supply constraint.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from decimal import Decimal
from itertools import combinations_with_replacement
from typing import Mapping, Optional, Sequence

import numpy as np

from plateopt.core import CostConfig, IssueMeta, Kpis, censor, plan_kpis
from plateopt.features import ExtraProductRanking, FeatureRow, build_features
from plateopt.gcqr import (
    CalibratedQuantileModel,
    CalibrationSplit,
    calibrated_grid_matrix,
)
from plateopt.ingest import Dataset

OPTIMAL_SUPPLY_LABEL = "optimal_supply"
OPTIMAL_DISTRIBUTION_LABEL = "optimal_distribution"


@dataclass(frozen=True, order=True)
class Scenario:
    """Per-group quantile levels, one per sales-scale group."""

    alphas: tuple

    def __post_init__(self):
        if not self.alphas:
            raise ValueError("scenario needs at least one group")
        if any(not 0 < a < 1 for a in self.alphas):
            raise ValueError("alphas must be in (0, 1)")


def enumerate_scenarios(grid: tuple, n_groups: int, budget: int) -> list:
    """Deterministic scenario list: every constant vector, then monotone
    non-decreasing staircases in lexicographic order up to the budget.

    Higher-volume groups never get a lower service level than smaller ones,
    which is what keeps the search space tractable.
    """
    if sorted(set(grid)) != sorted(grid):
        raise ValueError("alpha grid must be strictly increasing")
    constants = [tuple([a] * n_groups) for a in sorted(grid)]
    chosen = dict.fromkeys(constants[:budget])
    if len(chosen) < budget:
        for stair in combinations_with_replacement(sorted(grid), n_groups):
            if stair not in chosen:
                chosen[stair] = None
                if len(chosen) >= budget:
                    break
    return [Scenario(alphas) for alphas in sorted(chosen)]


@dataclass(frozen=True)
class ScenarioScore:
    scenario: Scenario
    kpis: Kpis            # replayed on the calibration set
    reference_kpis: Kpis  # the actual historical plan on the same rows


@dataclass(frozen=True)
class ReplayContext:
    """Precomputed per-calibration-row inputs shared by every scenario."""

    keys: tuple            # (issue, pos) per row
    supplies: tuple
    sales: tuple
    groups: tuple
    grid: tuple
    grid_preds: np.ndarray  # (n_rows, n_alphas) calibrated, crossing-repaired

    @classmethod
    def build(cls, model: CalibratedQuantileModel, split: CalibrationSplit,
              ds: Dataset, *, ranking: ExtraProductRanking,
              holidays: frozenset) -> "ReplayContext":
        rows = []
        keys, supplies, sales, groups = [], [], [], []
        for r in split.cal_records:
            meta = ds.issue_meta[(r.title, r.issue)]
            row = build_features(ds, r.key(), meta.period_start, ranking, holidays)
            rows.append(row)
            keys.append((r.issue, r.pos))
            supplies.append(r.supply)
            sales.append(r.sales)
            groups.append(model.scheme.group_of(row.mean_sales_12m))
        preds = calibrated_grid_matrix(model, rows)
        return cls(keys=tuple(keys), supplies=tuple(supplies),
                   sales=tuple(sales), groups=tuple(groups),
                   grid=model.alpha_grid, grid_preds=preds)


def replay(scenario: Scenario, model: CalibratedQuantileModel,
           split: CalibrationSplit, ds: Dataset, price: Decimal,
           cfg: CostConfig, *, ranking: Optional[ExtraProductRanking] = None,
           holidays: frozenset = frozenset(),
           ctx: Optional[ReplayContext] = None) -> ScenarioScore:
    """Score one scenario on the calibration set.

    Scenario supply is ceil of the calibrated prediction at the group's
    alpha; scenario sales are min(actual sales, scenario supply).
    """
    if ctx is None:
        if ranking is None:
            raise ValueError("either ctx or ranking/holidays must be provided")
        ctx = ReplayContext.build(model, split, ds, ranking=ranking,
                                  holidays=holidays)
    if len(scenario.alphas) != model.scheme.n_groups:
        raise ValueError(
            f"scenario has {len(scenario.alphas)} groups, scheme has "
            f"{model.scheme.n_groups}"
        )
    if not ctx.keys:
        raise ValueError("calibration set is empty")
    col_of = {a: j for j, a in enumerate(ctx.grid)}
    plan, realized = {}, {}
    ref_plan, ref_sales = {}, {}
    for i, key in enumerate(ctx.keys):
        alpha = scenario.alphas[ctx.groups[i]]
        if alpha not in col_of:
            raise ValueError(f"scenario alpha {alpha} not in the model grid")
        s_hat = int(math.ceil(ctx.grid_preds[i, col_of[alpha]]))
        z_hat = min(ctx.sales[i], s_hat)
        plan[key] = s_hat
        realized[key] = z_hat
        ref_plan[key] = ctx.supplies[i]
        ref_sales[key] = ctx.sales[i]
    return ScenarioScore(
        scenario=scenario,
        kpis=plan_kpis(plan, realized, price, cfg),
        reference_kpis=plan_kpis(ref_plan, ref_sales, price, cfg),
    )


@dataclass(frozen=True)
class OptimalCriteria:
    """Which replayed scenarios count as optimal, relative to the reference."""

    require_profit_ge_reference: bool = True
    require_oos_le_reference: bool = True


@dataclass(frozen=True)
class SelectedScenarios:
    optimal: tuple               # ScenarioScores forming the optimal set
    max_kpi_efficiency: ScenarioScore
    distribution_hint: ScenarioScore
    used_pareto_fallback: bool


def _pareto_frontier(scores: Sequence[ScenarioScore]) -> list:
    """Non-dominated on (profit up, total supply down)."""
    out = []
    for s in scores:
        dominated = False
        for o in scores:
            if o is s:
                continue
            if (o.kpis.profit >= s.kpis.profit
                    and o.kpis.total_supply <= s.kpis.total_supply
                    and (o.kpis.profit > s.kpis.profit
                         or o.kpis.total_supply < s.kpis.total_supply)):
                dominated = True
                break
        if not dominated:
            out.append(s)
    return out


def select_optimal(scores: Sequence[ScenarioScore], n_total: int, delta: int,
                   criteria: OptimalCriteria = OptimalCriteria()) -> SelectedScenarios:
    """Pick the optimal scenario set and the two named scenarios.

    Falls back to the Pareto frontier when nothing beats the reference on
    both axes.  Ties break deterministically: profit, then lower total
    supply, then lexicographically smaller scenario.
    """
    if not scores:
        raise ValueError("no scenario scores to select from")
    optimal = [
        s for s in scores
        if (not criteria.require_profit_ge_reference
            or s.kpis.profit >= s.reference_kpis.profit)
        and (not criteria.require_oos_le_reference
             or s.kpis.oos_count <= s.reference_kpis.oos_count)
    ]
    fallback = not optimal
    if fallback:
        optimal = _pareto_frontier(list(scores))
    max_kpi = min(
        optimal,
        key=lambda s: (-s.kpis.profit, s.kpis.total_supply, s.scenario),
    )
    dist = min(
        optimal,
        key=lambda s: (abs(s.kpis.total_supply - n_total), -s.kpis.profit, s.scenario),
    )
    return SelectedScenarios(
        optimal=tuple(optimal),
        max_kpi_efficiency=max_kpi,
        distribution_hint=dist,
        used_pareto_fallback=fallback,
    )


@dataclass(frozen=True)
class SupplyPlan:
    label: str
    title: str
    issue: str
    allocations: dict            # PosId -> copies
    kpis_forecast: Kpis
    scenario: Scenario
    demand_forecast: dict = field(default_factory=dict)
    annotations: tuple = ()

    @property
    def total_supply(self) -> int:
        return sum(self.allocations.values())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pos", "supply"])
        for pos in sorted(self.allocations):
            w.writerow([pos, self.allocations[pos]])
        return buf.getvalue()

    def kpi_sidecar(self) -> str:
        doc = {
            "label": self.label,
            "title": self.title,
            "issue": self.issue,
            "scenario": list(self.scenario.alphas),
            "kpis_forecast": self.kpis_forecast.as_dict(),
            "annotations": list(self.annotations),
        }
        return json.dumps(doc, indent=2, sort_keys=True)


@dataclass(frozen=True)
class PlanSet:
    optimal_supply_plan: SupplyPlan
    optimal_distribution_plan: SupplyPlan
    scenario_frontier: tuple
    constraint_status: str  # "met" | "unmet_all"


def _plan_for_scenario(scenario: Scenario, issue: IssueMeta, plate: Sequence[str],
                       features: Mapping[str, FeatureRow],
                       model: CalibratedQuantileModel,
                       grid_preds: np.ndarray, cfg: CostConfig,
                       label: str) -> SupplyPlan:
    col_of = {a: j for j, a in enumerate(model.alpha_grid)}
    allocations, demand, proxy_sales = {}, {}, {}
    for i, pos in enumerate(plate):
        g = model.scheme.group_of(features[pos].mean_sales_12m)
        d_hat = float(grid_preds[i, col_of[scenario.alphas[g]]])
        s = int(math.ceil(d_hat))
        allocations[pos] = s
        demand[pos] = d_hat
        proxy_sales[pos] = censor(d_hat, s)
    kpis = plan_kpis(allocations, proxy_sales, issue.price, cfg)
    return SupplyPlan(label=label, title=issue.title, issue=issue.issue,
                      allocations=allocations, kpis_forecast=kpis,
                      scenario=scenario, demand_forecast=demand)


def emit_plans(model: CalibratedQuantileModel, issue: IssueMeta,
               plate: Sequence[str], features: Mapping[str, FeatureRow],
               selected: SelectedScenarios, cfg: CostConfig) -> PlanSet:
    """Materialize the two named plans for a new issue.

    Every optimal-set scenario is priced on the plate; the supply plan takes
    the max_kpi_efficiency scenario and the distribution plan the scenario
    whose emitted total lands closest to n_total (the replayed calibration
    totals are only a hint: the plate of the new issue is what the
    constraint is about).  Forecast KPIs stand in predicted demand for the
    unknown sales.
    """
    plate = sorted(plate)
    if not plate:
        raise ValueError("plate is empty")
    rows = [features[pos] for pos in plate]
    grid_preds = calibrated_grid_matrix(model, rows)

    plans = {}
    for score in selected.optimal:
        plans[score.scenario] = _plan_for_scenario(
            score.scenario, issue, plate, features, model, grid_preds, cfg,
            label="candidate",
        )
    supply_scenario = selected.max_kpi_efficiency.scenario
    supply_plan = replace(plans[supply_scenario], label=OPTIMAL_SUPPLY_LABEL)

    dist_scenario = min(
        plans,
        key=lambda sc: (abs(plans[sc].total_supply - issue.n_total),
                        -plans[sc].kpis_forecast.profit, sc),
    )
    dist_plan = replace(plans[dist_scenario], label=OPTIMAL_DISTRIBUTION_LABEL)

    lo, hi = issue.n_total - issue.delta, issue.n_total + issue.delta
    status = "met" if lo <= dist_plan.total_supply <= hi else "unmet_all"
    return PlanSet(
        optimal_supply_plan=supply_plan,
        optimal_distribution_plan=dist_plan,
        scenario_frontier=tuple(selected.optimal),
        constraint_status=status,
    )


def frontier_csv(scores: Sequence[ScenarioScore]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "total_supply", "revenue", "cost", "profit",
                "oos_count", "ref_total_supply", "ref_profit", "ref_oos_count"])
    for s in sorted(scores, key=lambda s: s.scenario):
        w.writerow([
            "|".join(repr(a) for a in s.scenario.alphas),
            s.kpis.total_supply, s.kpis.revenue, s.kpis.cost, s.kpis.profit,
            s.kpis.oos_count, s.reference_kpis.total_supply,
            s.reference_kpis.profit, s.reference_kpis.oos_count,
        ])
    return buf.getvalue()
