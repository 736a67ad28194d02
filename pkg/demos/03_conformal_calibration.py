"""Group-conformal calibration and its coverage guarantee, measured.

Splits off each title's latest issues as a calibration set, derives
per-scale-group corrections from the calibration errors, and then measures
empirical coverage of the corrected quantiles on the test period against
the generator's ground truth.
"""

from datetime import timedelta

from plateopt import ingest
from plateopt.core import reconstruct_demand
from plateopt.features import build_features, rank_extra_products
from plateopt.harness import HarnessConfig, train_gcqr_bundles
from plateopt.qreg import GbtHyper
from plateopt.synth import GeneratorSpec, generate, holidays_for

spec = GeneratorSpec(n_pos=1000, n_titles=3, issues_per_title=16)
ds, gt = generate(spec)
lo, hi = ds.date_range()
holidays = holidays_for(lo - timedelta(days=730), hi)
cutoff = sorted({m.period_start for m in ds.issue_meta.values()})[-2]
ts = ingest.slice(ds, cutoff)

config = HarnessConfig(
    hyper=GbtHyper(n_trees=80, max_depth=5, min_leaf=20, learning_rate=0.12),
    alpha_grid=(0.65, 0.85, 0.95), eval_alphas=(0.65, 0.85, 0.95))
ranking = rank_extra_products(ds, ts, config.cost)
bundles = train_gcqr_bundles(ds, ts, config, ranking, holidays)

one = bundles[sorted(bundles)[0]]
print("per-group corrections (group -> additive copies):")
for alpha in one.alpha_grid:
    row = {g: round(one.corrections.correction(g, alpha), 2)
           for g in range(one.scheme.n_groups)}
    print(f"  alpha={alpha}: {row}")

hits = {a: 0 for a in config.alpha_grid}
n = 0
for r in ts.test:
    bundle = bundles.get(r.title)
    if bundle is None:
        continue
    meta = ds.issue_meta[(r.title, r.issue)]
    row = build_features(ds, r.key(), meta.period_start, ranking, holidays)
    target = reconstruct_demand(r, config.r_pct)
    from plateopt.gcqr import predict_calibrated
    for alpha in config.alpha_grid:
        if target <= predict_calibrated(bundle, row, alpha):
            hits[alpha] += 1
    n += 1

print(f"\nempirical coverage on {n} test rows (target: the alpha itself):")
for alpha in config.alpha_grid:
    print(f"  alpha={alpha}: {hits[alpha] / n:.3f}")
