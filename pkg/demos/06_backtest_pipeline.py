"""The full evaluation protocol on a desk-sized world.

Time-slice the history at a cutoff, train every model variant (naive
baselines, GBT ablations, the calibrated model), score mean pinball loss on
the unseen period, then carry the winners through the optimizer and compare
plan KPIs against the actual historical plan, all normalized to 100%.

This is the narrative version of `plate-opt backtest` and
`plate-opt plan-eval`; expect a couple of minutes of training.
"""

from datetime import timedelta

from plateopt.harness import HarnessConfig, backtest, plan_eval
from plateopt.qreg import GbtHyper
from plateopt.synth import GeneratorSpec, generate, holidays_for

spec = GeneratorSpec(n_pos=400, n_titles=3, issues_per_title=14)
ds, gt = generate(spec)
lo, hi = ds.date_range()
holidays = holidays_for(lo - timedelta(days=730), hi)
cutoff = sorted({m.period_start for m in ds.issue_meta.values()})[-2]

# The synthetic constraints anchor at expected demand, so the scenario grid
# sweeps down to the demand-matching service level (0.50); the classic grid
# starts at 0.65, whose totals sit structurally above expected demand.
config = HarnessConfig(
    hyper=GbtHyper(n_trees=80, max_depth=5, min_leaf=20, learning_rate=0.12),
    alpha_grid=(0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95, 0.99),
    scenario_budget=120)

print(f"backtesting as of {cutoff}...")
rep = backtest(ds, cutoff, config, holidays)
print("\nmean pinball loss per quantile level (lower is better):")
print(rep.to_csv())

print("plan comparison against the realized demand of the test period:")
pe = plan_eval(ds, cutoff, config, holidays, gt=gt)
print(pe.to_csv())
print(f"distribution plans inside the constraint band: {pe.conformance:.0%}")
