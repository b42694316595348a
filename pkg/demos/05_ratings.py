"""
Side-by-side rating arithmetic
==============================

Three raters see two systems' captions in random left/right order, pick a
side (or Same), and rate each caption on a 4-point scale. An item counts
for a side only when at least two raters agree.
"""
from plugs.metrics import aggregate_sxs, craft_ratings, median_ratings, spearman

# a file with 228 B-majorities, 194 A-majorities and OK counts 665 (A) / 687 (B)
records = craft_ratings(1000, wins=228, losses=194, a_ok=665, b_ok=687, seed=0)
print(records[0])
rep = aggregate_sxs(records)
print(f"wins {rep.wins:.1f}  losses {rep.losses:.1f}  gain_sxs {rep.gain_sxs:.1f}")
print(f"ok A {rep.a_ok:.1f}  ok B {rep.b_ok:.1f}  gain_ok {rep.gain_ok:.1f}")
print(f"agreement: sxs {rep.sxs_agreement:.1f}%, abs vs sxs {rep.abs_sxs_consistency:.1f}%, "
      f"abs {rep.abs_agreement:.1f}%")

# rank correlation between the median ratings of the two systems
a, b = median_ratings(records, "A"), median_ratings(records, "B")
print("spearman of medians:", round(spearman([a[i] for i in a], [b[i] for i in a]), 4))
print("tie example:", spearman([1, 2, 2, 4], [2, 2, 3, 4]))
