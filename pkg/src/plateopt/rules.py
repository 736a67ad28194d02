"""Declarative business rules applied to generated supply plans.

Rules are an ordered list (JSON array) evaluated in sequence, so a planner
can express "cap against trend, then floor the flagship stores at 1".
Supported kinds:

* ``cap_vs_trend``       clamp to ceil(k * max_trend) per POS
* ``cap_vs_yearly_lag``  clamp to ceil(k * max_lag_yearly) per POS
* ``floor``              raise allocations below f up to f
* ``override_pos``       set exact values on selected POSes
* ``scale_title``        multiply in-scope allocations by a factor

``reconcile_constraint`` handles the rare plan whose total misses the
n_total band: proportional rescale with largest-remainder rounding (the
result hits n_total exactly), or an explicit relax annotation when the
planner prefers to widen the constraint.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from plateopt.core import CostConfig, DEFAULT_COST_CONFIG, censor, plan_kpis
from plateopt.features import pos_trend_stats
from plateopt.ingest import Dataset
from plateopt.optimizer import SupplyPlan

RULE_KINDS = ("cap_vs_trend", "cap_vs_yearly_lag", "floor", "override_pos",
              "scale_title")

_REQUIRED_PARAMS = {
    "cap_vs_trend": ("k",),
    "cap_vs_yearly_lag": ("k",),
    "floor": ("f",),
    "override_pos": ("supply",),
    "scale_title": ("factor",),
}


@dataclass(frozen=True)
class RuleScope:
    title: Optional[str] = None
    issue: Optional[str] = None
    pos_ids: Optional[tuple] = None

    def covers_plan(self, plan: SupplyPlan) -> bool:
        if self.title is not None and self.title != plan.title:
            return False
        if self.issue is not None and self.issue != plan.issue:
            return False
        return True

    def covers_pos(self, pos: str) -> bool:
        return self.pos_ids is None or pos in self.pos_ids


@dataclass(frozen=True)
class Rule:
    id: str
    kind: str
    params: dict
    scope: RuleScope = RuleScope()

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ValueError(f"rule {self.id!r}: unknown kind {self.kind!r}")
        missing = [p for p in _REQUIRED_PARAMS[self.kind] if p not in self.params]
        if missing:
            raise ValueError(f"rule {self.id!r}: missing params {missing}")
        for p in _REQUIRED_PARAMS[self.kind]:
            if self.params[p] < 0:
                raise ValueError(f"rule {self.id!r}: param {p!r} must be >= 0")


def parse_rules(text: str) -> list:
    """rules.json: an ordered array of rule objects."""
    raw = json.loads(text)
    if not isinstance(raw, list):
        raise ValueError("rules.json must hold a JSON array")
    out = []
    for i, doc in enumerate(raw):
        unknown = set(doc) - {"id", "kind", "params", "scope"}
        if unknown:
            raise ValueError(f"rule #{i}: unknown fields {sorted(unknown)}")
        scope_doc = doc.get("scope", {})
        scope = RuleScope(
            title=scope_doc.get("title"),
            issue=scope_doc.get("issue"),
            pos_ids=tuple(scope_doc["pos_ids"]) if "pos_ids" in scope_doc else None,
        )
        out.append(Rule(id=doc.get("id", f"rule{i}"), kind=doc["kind"],
                        params=dict(doc.get("params", {})), scope=scope))
    return out


@dataclass(frozen=True)
class RuleEffect:
    rule_id: str
    rows_touched: int
    supply_delta: int
    kpis_before: dict
    kpis_after: dict


@dataclass(frozen=True)
class RuleReport:
    effects: tuple

    @property
    def total_supply_delta(self) -> int:
        return sum(e.supply_delta for e in self.effects)

    def to_json(self) -> str:
        return json.dumps(
            [{"rule_id": e.rule_id, "rows_touched": e.rows_touched,
              "supply_delta": e.supply_delta, "kpis_before": e.kpis_before,
              "kpis_after": e.kpis_after} for e in self.effects],
            indent=2, sort_keys=True,
        )


def _forecast_kpis(plan: SupplyPlan, ds: Dataset, cfg: CostConfig):
    price = ds.issue_meta[(plan.title, plan.issue)].price
    proxy = {
        pos: censor(plan.demand_forecast.get(pos, 0.0), alloc)
        for pos, alloc in plan.allocations.items()
    }
    return plan_kpis(plan.allocations, proxy, price, cfg)


def _check_override_conflicts(plan: SupplyPlan, rules: Sequence[Rule]) -> None:
    assigned: dict = {}
    for rule in rules:
        if rule.kind != "override_pos" or not rule.scope.covers_plan(plan):
            continue
        targets = rule.scope.pos_ids or tuple(sorted(plan.allocations))
        for pos in targets:
            want = int(rule.params["supply"])
            if pos in assigned and assigned[pos] != want:
                raise ValueError(
                    f"conflicting overrides on POS {pos!r}: "
                    f"{assigned[pos]} vs {want}"
                )
            assigned[pos] = want


def apply_rules(plan: SupplyPlan, ds: Dataset, rules: Sequence[Rule],
                cfg: CostConfig = DEFAULT_COST_CONFIG):
    """Apply rules in order; returns (adjusted plan, report).

    Cap rules consult the POS trend statistics as of the issue's period
    start; POSes without history are left alone (nothing to sanity-check
    against).  Unknown scope POSes and conflicting overrides are errors.
    """
    for rule in rules:
        if rule.scope.pos_ids:
            unknown = [p for p in rule.scope.pos_ids if p not in plan.allocations]
            if unknown and rule.scope.covers_plan(plan):
                raise ValueError(
                    f"rule {rule.id!r}: scope names POSes outside the plate: {unknown}"
                )
    _check_override_conflicts(plan, rules)

    meta = ds.issue_meta[(plan.title, plan.issue)]
    stats_cache: dict = {}

    def stat(pos: str, name: str) -> float:
        if pos not in stats_cache:
            stats_cache[pos] = pos_trend_stats(
                ds, plan.title, pos, meta.period_start,
                meta.atypical_exclusions, target_start=meta.period_start,
            )
        return stats_cache[pos][name]

    current = dict(plan.allocations)
    effects = []
    for rule in rules:
        if not rule.scope.covers_plan(plan):
            effects.append(RuleEffect(rule.id, 0, 0, {}, {}))
            continue
        before_alloc = dict(current)
        before = _forecast_kpis(replace(plan, allocations=before_alloc), ds, cfg)
        touched = 0
        if rule.kind in ("cap_vs_trend", "cap_vs_yearly_lag"):
            stat_name = "max_trend" if rule.kind == "cap_vs_trend" else "max_lag_yearly"
            k = float(rule.params["k"])
            for pos in sorted(current):
                if not rule.scope.covers_pos(pos):
                    continue
                reference = stat(pos, stat_name)
                if math.isnan(reference):
                    continue
                cap = int(math.ceil(k * reference))
                if current[pos] > cap:
                    current[pos] = cap
                    touched += 1
        elif rule.kind == "floor":
            f = int(rule.params["f"])
            for pos in sorted(current):
                if rule.scope.covers_pos(pos) and current[pos] < f:
                    current[pos] = f
                    touched += 1
        elif rule.kind == "override_pos":
            targets = rule.scope.pos_ids or tuple(sorted(current))
            want = int(rule.params["supply"])
            for pos in targets:
                if current[pos] != want:
                    current[pos] = want
                    touched += 1
        elif rule.kind == "scale_title":
            factor = float(rule.params["factor"])
            in_scope = {p: v for p, v in current.items() if rule.scope.covers_pos(p)}
            scoped_total = sum(in_scope.values())
            target = int(round(scoped_total * factor))
            if scoped_total > 0 and target != scoped_total:
                scaled = largest_remainder(in_scope, target)
                for pos, v in scaled.items():
                    if current[pos] != v:
                        current[pos] = v
                        touched += 1
        after = _forecast_kpis(replace(plan, allocations=dict(current)), ds, cfg)
        effects.append(RuleEffect(
            rule_id=rule.id,
            rows_touched=touched,
            supply_delta=sum(current.values()) - sum(before_alloc.values()),
            kpis_before=before.as_dict(),
            kpis_after=after.as_dict(),
        ))
    assert all(v >= 0 for v in current.values())
    adjusted = replace(
        plan,
        allocations=current,
        kpis_forecast=_forecast_kpis(replace(plan, allocations=current), ds, cfg),
        annotations=plan.annotations + tuple(
            f"rule:{r.id}" for r, e in zip(rules, effects) if e.rows_touched
        ),
    )
    return adjusted, RuleReport(effects=tuple(effects))


def largest_remainder(allocations: Mapping[str, int], target: int) -> dict:
    """Proportional rescale to an exact integer total.

    Floors the exact shares, then hands the leftover copies to the largest
    fractional remainders; remainder ties go to the lexicographically
    smallest PosId.  Exact arithmetic (Fraction) keeps ties deterministic.
    """
    total = sum(allocations.values())
    if total <= 0:
        raise ValueError("cannot rescale a plan with zero total supply")
    if target < 0:
        raise ValueError("target total must be >= 0")
    exact = {p: Fraction(v * target, total) for p, v in allocations.items()}
    base = {p: int(x) for p, x in exact.items()}  # Fraction floors toward 0
    leftover = target - sum(base.values())
    order = sorted(exact, key=lambda p: (-(exact[p] - base[p]), p))
    out = dict(base)
    for p in order[:leftover]:
        out[p] += 1
    return out


def reconcile_constraint(plan: SupplyPlan, n_total: int, delta: int,
                         mode: str, ds: Optional[Dataset] = None,
                         cfg: CostConfig = DEFAULT_COST_CONFIG) -> SupplyPlan:
    """Bring a plan into the n_total band, or annotate that we won't.

    ``scale`` rescales proportionally so the total equals n_total exactly;
    ``relax`` returns the plan untouched with a widened-constraint
    annotation.  A plan already inside the band is returned unchanged with
    a note (the precondition was not really met).
    """
    if mode not in ("scale", "relax"):
        raise ValueError(f"unknown reconcile mode {mode!r}")
    total = plan.total_supply
    if n_total - delta <= total <= n_total + delta:
        return replace(plan, annotations=plan.annotations + ("already_within_constraint",))
    if mode == "relax":
        return replace(plan, annotations=plan.annotations + (
            f"constraint_relaxed:total={total},band={n_total}±{delta}",))
    scaled = largest_remainder(plan.allocations, n_total)
    adjusted = replace(plan, allocations=scaled,
                       annotations=plan.annotations + ("scaled_to_constraint",))
    if ds is not None:
        adjusted = replace(adjusted, kpis_forecast=_forecast_kpis(adjusted, ds, cfg))
    return adjusted
