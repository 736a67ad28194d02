"""Declarative business rules over a generated plan.

Planners cap allocations against history, floor flagship stores, override
specific POSes, and reconcile totals to the constraint with deterministic
largest-remainder rounding.
"""

from datetime import timedelta

from plateopt import ingest
from plateopt.features import rank_extra_products
from plateopt.harness import HarnessConfig, plan_issue, prepare_title_planner, train_gcqr_bundles
from plateopt.qreg import GbtHyper
from plateopt.rules import Rule, RuleScope, apply_rules, reconcile_constraint
from plateopt.synth import GeneratorSpec, generate, holidays_for

spec = GeneratorSpec(n_pos=120, n_titles=2, issues_per_title=12)
ds, gt = generate(spec)
lo, hi = ds.date_range()
holidays = holidays_for(lo - timedelta(days=730), hi)
cutoff = sorted({m.period_start for m in ds.issue_meta.values()})[-1]
ts = ingest.slice(ds, cutoff)

config = HarnessConfig(
    hyper=GbtHyper(n_trees=30, max_depth=4, min_leaf=10, learning_rate=0.2),
    alpha_grid=(0.65, 0.8, 0.95), scenario_budget=20)
ranking = rank_extra_products(ds, ts, config.cost)
title = sorted({r.title for r in ts.train})[0]
bundles = train_gcqr_bundles(ds, ts, config, ranking, holidays, titles=[title])
planner = prepare_title_planner(ds, ts, title, bundles[title], config,
                                ranking, holidays)
issue_key = max((k for k in ds.issue_meta if k[0] == title),
                key=lambda k: ds.issue_meta[k].period_start)
meta = ds.issue_meta[issue_key]
plan = plan_issue(planner, ds, meta, config, ranking, holidays,
                  plate=sorted(ds.pos_meta)).optimal_supply_plan
print(f"starting plan {issue_key}: total={plan.total_supply}")

rules = [
    Rule(id="sanity-cap", kind="cap_vs_trend", params={"k": 2}),
    Rule(id="presence-floor", kind="floor", params={"f": 1},
         scope=RuleScope(pos_ids=tuple(sorted(plan.allocations)[:10]))),
]
adjusted, rule_report = apply_rules(plan, ds, rules, cfg=config.cost)
print("\nrule effects:")
for effect in rule_report.effects:
    print(f"  {effect.rule_id}: touched {effect.rows_touched} POSes, "
          f"supply delta {effect.supply_delta:+d}")
print(f"adjusted total: {adjusted.total_supply}")

squeezed = reconcile_constraint(adjusted, n_total=meta.n_total,
                                delta=meta.delta, mode="scale", ds=ds,
                                cfg=config.cost)
print(f"\nafter constraint reconciliation to {meta.n_total}±{meta.delta}: "
      f"total={squeezed.total_supply} annotations={squeezed.annotations}")
