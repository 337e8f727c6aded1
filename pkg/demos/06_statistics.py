# The statistical companions to a selected feature set: correlation to
# the label, pairwise correlation heatmap, VIF multicollinearity check,
# and Cohen's d effect sizes at a group-splitting threshold.

import numpy as np

from omicsreg import (
    FoldPlan,
    Scenario,
    SyntheticSpec,
    cohens_d,
    combine_blocks,
    correlation_prune,
    effect_size_table,
    feature_label_correlations,
    format_mean_sd,
    generate_feature_cohort,
    pairwise_correlation_heatmap,
    select_features,
    variance_filter,
    vif,
)

spec = SyntheticSpec(n_samples=69, n_features_per_block=25, n_informative=4, noise_sd=0.15, seed=5)
cohort = generate_feature_cohort(spec)
y = cohort.labels

X = combine_blocks(cohort.blocks, Scenario.ALL)
X = X.select_columns(variance_filter(X.values))
X = X.select_columns(correlation_prune(X.values))
result = select_features(X, y, "X_cnt", FoldPlan(X.n_samples, seed=6))
labels = [n.label for n in X.names]
sel = [labels.index(name.label) for name, _ in result.ranked]
X_sel = X.values[:, sel]
names = [name.label for name, _ in result.ranked]
print(f"selected {len(sel)} features")

r, mean_abs, sd = feature_label_correlations(X_sel, y)
print("\ncorrelation to the label, mean |r|:", format_mean_sd(mean_abs, sd))
for name, value in sorted(zip(names, r), key=lambda t: -abs(t[1]))[:5]:
    print(f"  {value:+.3f}  {name}")

heat, mean_abs, sd = pairwise_correlation_heatmap(X_sel)
print("\npairwise feature correlation, mean |r|:", format_mean_sd(mean_abs, sd))

vifs = vif(X_sel)
print(f"VIF range: {vifs.min():.2f} .. {vifs.max():.2f} "
      f"({'weak' if vifs.max() < 5 else 'strong'} multicollinearity)")

# effect sizes between lesions below/above a relative-GTV threshold
rows, mean_abs_d = effect_size_table(X_sel, y, threshold=0.6, names=names)
print(f"\nCohen's d at threshold 0.6 (mean |d| = {mean_abs_d:.2f}):")
for row in sorted(rows, key=lambda r: -abs(r.cohens_d))[:5]:
    print(f"  d={row.cohens_d:+.2f}  [{row.bucket:>7}]  {row.name}")

# the antisymmetry sanity check
a, b = np.array([1.0, 2.0, 3.0]), np.array([0.0, 1.0, 2.0])
print("\ncohens_d(a, b) =", cohens_d(a, b), " cohens_d(b, a) =", cohens_d(b, a))
