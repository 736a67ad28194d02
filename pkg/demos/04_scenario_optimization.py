"""Scenario search over service levels, and the two named plans.

Every scenario assigns one quantile level per sales-scale group.  Replaying
scenarios on the calibration set (where actual sales are known) prices each
one; scenarios beating the historical plan form the optimal set, and the
two deliverables drop out: the profit-maximizing supply plan and the
distribution plan whose total hugs the planner's constraint.
"""

from datetime import timedelta

from plateopt import ingest
from plateopt.features import rank_extra_products
from plateopt.harness import HarnessConfig, plan_issue, prepare_title_planner, train_gcqr_bundles
from plateopt.qreg import GbtHyper
from plateopt.synth import GeneratorSpec, generate, holidays_for

spec = GeneratorSpec(n_pos=400, n_titles=2, issues_per_title=14)
ds, gt = generate(spec)
lo, hi = ds.date_range()
holidays = holidays_for(lo - timedelta(days=730), hi)
cutoff = sorted({m.period_start for m in ds.issue_meta.values()})[-1]
ts = ingest.slice(ds, cutoff)

config = HarnessConfig(
    hyper=GbtHyper(n_trees=60, max_depth=5, min_leaf=20, learning_rate=0.15),
    scenario_budget=60)
ranking = rank_extra_products(ds, ts, config.cost)
title = sorted({r.title for r in ts.train})[0]
bundles = train_gcqr_bundles(ds, ts, config, ranking, holidays, titles=[title])
planner = prepare_title_planner(ds, ts, title, bundles[title], config,
                                ranking, holidays)

print(f"replayed {len(planner.scores)} scenarios on the calibration set of {title}")
ref = planner.scores[0].reference_kpis
print(f"reference (actual history): supply={ref.total_supply} "
      f"profit={ref.profit} oos={ref.oos_count}")
print("\nscenario frontier (first 10 by scenario order):")
for s in planner.scores[:10]:
    print(f"  alphas={s.scenario.alphas[:3]}...: supply={s.kpis.total_supply} "
          f"profit={s.kpis.profit} oos={s.kpis.oos_count}")

issue_key = max((k for k in ds.issue_meta if k[0] == title),
                key=lambda k: ds.issue_meta[k].period_start)
meta = ds.issue_meta[issue_key]
plans = plan_issue(planner, ds, meta, config, ranking, holidays,
                   plate=sorted(ds.pos_meta))
print(f"\nplanning {issue_key} with constraint {meta.n_total}±{meta.delta}:")
for plan in (plans.optimal_supply_plan, plans.optimal_distribution_plan):
    print(f"  {plan.label}: total={plan.total_supply} "
          f"forecast profit={plan.kpis_forecast.profit} "
          f"scenario={plan.scenario.alphas}")
print(f"  constraint status: {plans.constraint_status}")
