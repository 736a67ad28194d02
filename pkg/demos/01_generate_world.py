"""Generate a synthetic retail network and look around it.

The generator draws per-(title, issue, POS) demand from a negative binomial
whose mean composes a long-tailed POS base rate, title popularity, yearly
seasonality, holidays and extra-product uplift, then runs a deliberately
imperfect historical supply policy over it.  Ground truth (latent means and
realized demand) is kept alongside, so later demos can score plans against
what demand really was.
"""

from collections import Counter

from plateopt.synth import GeneratorSpec, generate

spec = GeneratorSpec(n_pos=800, n_titles=3, issues_per_title=12)
print(f"generating: {spec.n_titles} titles x {spec.issues_per_title} issues "
      f"x {spec.n_pos} POSes (seed {spec.seed})")
ds, gt = generate(spec)

print(f"\n{len(ds.records)} sales records, "
      f"{sum(1 for r in ds.records if r.is_oos)} sold out")

sales_hist = Counter(min(r.sales, 10) for r in ds.records)
print("\nsales histogram (copies -> share of records):")
for copies in range(11):
    share = sales_hist.get(copies, 0) / len(ds.records)
    label = f"{copies}" if copies < 10 else "10+"
    print(f"  {label:>3}: {'#' * int(120 * share)} {share:.1%}")

small = sum(v for k, v in sales_hist.items() if k <= 2) / len(ds.records)
print(f"\nlong tail: {small:.0%} of records sold 0-2 copies")

one = ds.records[len(ds.records) // 2]
key = one.key()
print(f"\nexample row {key}: supply={one.supply} sales={one.sales}")
print(f"  latent mean demand = {gt.mean(key):.2f}, "
      f"realized demand = {gt.demand(key):.0f}")
