"""Train the quantile demand model and inspect what it learned.

Walks the demand-sensing stage by hand: reconstruct censored demand,
engineer the feature matrix, fit gradient-boosted quantile regressors at a
few levels, and sanity-check the quantile ordering on a held-out issue.
"""

from datetime import timedelta

from plateopt import ingest
from plateopt.core import DEFAULT_COST_CONFIG
from plateopt.features import build_features, build_training_matrix, rank_extra_products
from plateopt.qreg import GbtHyper, fit_gbt
from plateopt.synth import GeneratorSpec, generate, holidays_for

spec = GeneratorSpec(n_pos=500, n_titles=3, issues_per_title=14)
ds, gt = generate(spec)
lo, hi = ds.date_range()
holidays = holidays_for(lo - timedelta(days=730), hi)

# hold out the final two issues of every title
cutoff = sorted({m.period_start for m in ds.issue_meta.values()})[-2]
ts = ingest.slice(ds, cutoff)
print(f"cutoff {cutoff}: {len(ts.train)} train records, {len(ts.test)} test")

ranking = rank_extra_products(ds, ts, DEFAULT_COST_CONFIG)
print(f"extra products ranked: { {k: v for k, v in sorted(ranking.mapping.items())} }")

examples = build_training_matrix(ds, ts, ranking, holidays, r_pct=30)
print(f"training matrix: {len(examples)} rows; "
      f"targets are censoring-corrected demand")

hyper = GbtHyper(n_trees=60, max_depth=5, min_leaf=20, learning_rate=0.15)
models = {alpha: fit_gbt(examples, alpha, hyper) for alpha in (0.65, 0.85, 0.95)}

# predict one POS of the first held-out issue at each level
test_issue = min((r.title, r.issue) for r in ts.test)
meta = ds.issue_meta[test_issue]
busiest = max(ts.test, key=lambda r: r.sales if (r.title, r.issue) == test_issue else -1)
row = build_features(ds, busiest.key(), meta.period_start, ranking, holidays)
print(f"\npredictions for {busiest.key()} "
      f"(realized demand {gt.demand(busiest.key()):.0f}):")
for alpha, model in models.items():
    print(f"  q{alpha}: {model.predict(row):.2f}")
