"""Shared builders and independent oracles for the test suite."""

import math

import numpy as np

from ctnor import CtnorModel, DelayFamily, EventTrace, FitConfig


def oracle_density(fam, d):
    """Delay density written out from the mixture formula, scalar at a time."""
    if d < 0:
        return 0.0
    a, b = fam.uniform_window
    uni = 1.0 / (b - a) if a <= d <= b else 0.0
    pi = fam.mixture_weight
    if fam.variant.value == "uniform":
        return uni
    if fam.variant.value == "uniform_exponential":
        dec = fam.exp_rate * math.exp(-fam.exp_rate * d)
    else:
        mu, s = fam.gauss_mean, fam.gauss_std
        z = 0.5 * math.erfc(-mu / (s * math.sqrt(2.0)))  # P(X >= 0)
        dec = math.exp(-0.5 * ((d - mu) / s) ** 2) / (s * math.sqrt(2 * math.pi)) / z
    return pi * uni + (1 - pi) * dec


def oracle_log_likelihood(model, trace):
    """Direct double sum over every (input, output) pair, no horizon."""
    t0 = trace.window[0]
    lam = sum(model.weights.get(ch, 0.0) * len(ts) for ch, ts in trace.input_channels.items())
    lam += model.leak
    total = -lam
    for o in trace.output_events:
        s = model.leak / trace.T if o - t0 <= trace.T else 0.0
        for ch, ts in trace.input_channels.items():
            fam = model.delays[trace.group_of(ch)]
            w = model.weights.get(ch, 0.0)
            for i in ts:
                if ch == trace.autocorr_channel and not i < o:
                    continue
                s += w * oracle_density(fam, o - i)
        total += math.log(s)
    return total


def random_family(rng):
    kind = rng.integers(3)
    win = (0.0, float(rng.uniform(0.2, 2.0)))
    pi = float(rng.uniform(0.05, 0.95))
    if kind == 0:
        return DelayFamily.uniform_exponential(pi, win, rate=float(rng.uniform(0.2, 3.0)))
    if kind == 1:
        return DelayFamily.uniform_gaussian(pi, win, mean=float(rng.uniform(-1, 3)),
                                            std=float(rng.uniform(0.2, 2)))
    return DelayFamily.exponential(float(rng.uniform(0.2, 3.0)))


def micro_trace(seed, n_channels=3, max_events=10, T=10.0):
    """Random trace with at most ``max_events`` events and at least one output."""
    rng = np.random.default_rng(seed)
    total = int(rng.integers(3, max_events + 1))
    n_out = int(rng.integers(1, total - n_channels + 1)) if total > n_channels else 1
    n_in = total - n_out
    owners = rng.integers(n_channels, size=n_in)
    inputs = {f"ch{j}": np.sort(rng.uniform(0, T, int((owners == j).sum())))
              for j in range(n_channels)}
    outputs = np.sort(rng.uniform(0, T, n_out))
    return EventTrace(inputs, outputs, (0.0, T))


def micro_model(seed, trace):
    rng = np.random.default_rng(seed + 10_000)
    weights = {ch: float(rng.uniform(0, 1.5)) for ch in trace.channel_ids}
    return CtnorModel(weights, float(rng.uniform(0.1, 2.0)), {"default": random_family(rng)})


# settings used for the 2-hour dependency scenarios: a pure exponential delay
# whose rate is initialized from the data, horizon 30 mean delays
SCENARIO_CONFIG = FitConfig(
    max_iters=5000,
    rel_tol=1e-10,
    horizon=3.0,
    default_family=DelayFamily.uniform_exponential(0.0),
)
