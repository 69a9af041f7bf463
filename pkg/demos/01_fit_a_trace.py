"""
Fitting a model to a small trace
================================

Builds a trace by hand, evaluates the likelihood of a guessed model, then lets
EM find the weights and the delay rate.
"""

# %%
# A trace is a set of input channels and one output channel, all timestamps
# in seconds.  Here channel ``dns`` tends to be followed by an output about
# 0.2 s later, while ``ntp`` is unrelated.

import numpy as np

from ctnor import CtnorModel, DelayFamily, EventTrace, FitConfig, e_step, fit, log_likelihood

rng = np.random.default_rng(1)
T = 600.0
dns = np.sort(rng.uniform(0, T, 120))
ntp = np.sort(rng.uniform(0, T, 80))
hit = dns[rng.random(dns.size) < 0.6]
caused = hit + rng.exponential(0.2, hit.size)
noise = rng.uniform(0, T, 15)
outputs = np.sort(np.concatenate([caused[caused <= T], noise]))
trace = EventTrace({"dns": dns, "ntp": ntp}, outputs, (0.0, T))
print(f"{trace.n} outputs, inputs per channel:", {ch: trace.count(ch) for ch in trace.channel_ids})

# %%
# The log-likelihood of a guess.  The leak is a single pseudo-event at the
# window start with a flat delay over the window; it explains the noise.

guess = CtnorModel({"dns": 0.5, "ntp": 0.5}, 10.0, {"default": DelayFamily.exponential(1.0)})
print("log-likelihood of the guess:", round(log_likelihood(guess, trace), 3))

# %%
# EM from the default initialization.  The delay family is a pure
# exponential whose rate starts from the mean candidate delay.

cfg = FitConfig(max_iters=1000, rel_tol=1e-10, horizon=5.0,
                default_family=DelayFamily.uniform_exponential(0.0))
report = fit(trace, cfg)
m = report.model
print(f"converged={report.converged} after {report.iterations} iterations")
print("log-likelihood:", round(report.log_likelihood, 3))
print({ch: round(w, 3) for ch, w in m.weights.items()}, "leak", round(m.leak, 2))
print("mean delay", round(1 / m.delays["default"].exp_rate, 3), "s")

# %%
# Responsibilities say how each output is attributed.  The first output:

z = e_step(m, trace, horizon=5.0)
for (channel, k), share in z.as_lists()[0]:
    print(f"  {channel:>8} event {k}: {share:.3f}")
