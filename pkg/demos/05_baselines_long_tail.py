"""
Co-occurrence baselines when delays are long
============================================

Counting outputs within a fixed window ``W`` after an input works when delays
are shorter than ``W``.  Here the mean delay is 2 s and ``W`` is 0.5 s, so
most caused outputs fall outside the window.  The model-based test still
ranks causal channels ahead.
"""

# %%
# At this tolerance a few fits stop slightly short of the optimum; the
# tiny negative statistics that result are clamped to zero.

import warnings

from ctnor import DelayFamily, FitConfig, discover, scenario_51
from ctnor.stat_tests import Method, roc_auc
from ctnor.synth import baseline_binomial, unique_vicinity_counts

warnings.simplefilter("ignore", RuntimeWarning)
W = 0.5
cfg = FitConfig(max_iters=5000, rel_tol=1e-9, horizon=30.0,
                default_family=DelayFamily.uniform_exponential(0.0))
labels, model_s, binom_s, uv_s = [], [], [], []
for seed in range(6):
    trace, truth = scenario_51(hours=2, seed=500 + seed, delay_rate=2.0, causal_weight=0.02)
    res, _ = discover(trace, cfg, method=Method.FAST_BOUND)
    uv = unique_vicinity_counts(trace, W)
    for r in res:
        labels.append(truth.causal[r.channel])
        model_s.append(r.statistic)
        binom_s.append(-baseline_binomial(trace, W, r.channel))
        uv_s.append(uv[r.channel])

print(f"share of delays beyond W: {truth.delays['default'].sf(W):.0%}")
for name, s in [("likelihood ratio", model_s), ("binomial", binom_s), ("unique vicinity", uv_s)]:
    print(f"{name:>17}: AUC {roc_auc(s, labels):.3f}")
