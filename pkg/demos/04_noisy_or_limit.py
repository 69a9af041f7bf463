"""
The binned noisy-or limit
=========================

Cut time into bins of width ``delta`` and treat each bin as a binary
noisy-or variable.  As ``delta`` shrinks, the probability of the observed
pattern approaches the continuous-time density times ``delta`` per output.
"""

# %%
import math

import numpy as np

from ctnor import CtnorModel, DelayFamily, EventTrace, log_likelihood
from ctnor.synth import nor_binned_log_likelihood

trace = EventTrace({"a": [0.7, 3.1, 6.4], "b": [1.9, 4.6, 8.2]}, [1.2, 2.5, 3.9, 5.3], (0.0, 20.0))
model = CtnorModel({"a": 0.6, "b": 0.3}, 1.5, {"default": DelayFamily.exponential(1.5)})
ll = log_likelihood(model, trace, horizon=np.inf)

print("   delta      gap   gap/delta")
for i in range(7):
    delta = 0.01 / 2**i
    gap = nor_binned_log_likelihood(model, trace, delta) - (ll + trace.n * math.log(delta))
    print(f"{delta:.6f} {gap:9.2e} {gap / delta:8.3f}")
