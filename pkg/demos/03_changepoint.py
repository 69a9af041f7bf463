"""
Did a channel's weight change?
==============================

Channel ``c0`` causes outputs at weight 0.01 for the first hour and 0.05 for
the second.  The changepoint test splits the channel at the boundary and
compares one shared weight against two.
"""

# %%
from ctnor import ChangepointSpec, DelayFamily, FitConfig, changepoint_test, fit, scenario_changepoint

cfg = FitConfig(max_iters=5000, rel_tol=1e-10, horizon=3.0,
                default_family=DelayFamily.uniform_exponential(0.0))
trace, truth, spec = scenario_changepoint(0.01, 0.05, hours=2, seed=4)
print("true weights of c0 (before, after):", truth.weights["c0"], "interval", spec.interval)

# %%
# The default alternative takes a single M-step from the null fit, which is
# cheap but conservative.  ``refit=True`` runs EM to convergence.

full = fit(trace, cfg)
for refit in (False, True):
    r = changepoint_test(trace, cfg, spec, full=full, refit=refit)
    print(f"refit={refit!s:5}  statistic {r.statistic:7.3f}  p {r.p_value:.2e}  "
          f"w inside {r.extra['w_inside']:.4f}  outside {r.extra['w_outside']:.4f}")

# %%
# A channel that never changed, for comparison.

r = changepoint_test(trace, cfg, ChangepointSpec("c1", spec.interval), full=full, refit=True)
print(f"c1: statistic {r.statistic:.3f}, p {r.p_value:.3f}")
