"""
Which channels cause the outputs?
=================================

Ten input channels, five of which cause output events.  Each channel gets a
likelihood-ratio test of ``w = 0``; the null is a mixture of a point mass at
zero and a chi-square with one degree of freedom.
"""

# %%
from ctnor import DelayFamily, FitConfig, discover, scenario_51
from ctnor.stat_tests import Method, qq_points, roc_auc

trace, truth = scenario_51(hours=2, seed=3)
print(f"{trace.n} outputs; causal channels:", [ch for ch, c in truth.causal.items() if c])

cfg = FitConfig(max_iters=5000, rel_tol=1e-10, horizon=3.0,
                default_family=DelayFamily.uniform_exponential(0.0))

# %%
# The exact test refits the model with the channel switched off.  The fast
# statistic skips the refit and reuses the full fit's responsibilities; it is
# never smaller than the exact one.

exact, full = discover(trace, cfg)
fast, _ = discover(trace, cfg, full=full, method=Method.FAST_BOUND)
print(f"estimated zero mass omega0 = {exact[0].omega0:.2f}")
print("channel  causal   w_hat    exact    bound   p-value")
for e, f in zip(exact, fast):
    print(f"{e.channel:>7} {truth.causal[e.channel]!s:>7} {e.w_hat:7.4f} "
          f"{e.statistic:8.3f} {f.statistic:8.3f} {e.p_value:9.2e}")

# %%
# Over many replicates, nonzero null statistics give uniform p-values.  Eight
# seeds are enough to see the shape.

null_p, scores, labels = [], [], []
for seed in range(8):
    tr, tt = scenario_51(hours=2, seed=100 + seed)
    res, _ = discover(tr, cfg)
    for r in res:
        scores.append(r.statistic)
        labels.append(tt.causal[r.channel])
        if not tt.causal[r.channel] and r.statistic > 0:
            null_p.append(r.p_value / (1 - r.omega0))
u, p = qq_points(null_p)
print("null QQ (uniform quantile, observed p):")
for a, b in list(zip(u, p))[:: max(1, len(u) // 8)]:
    print(f"  {a:.2f}  {b:.2f}")
print("ROC AUC over all tests:", round(roc_auc(scores, labels), 3))
