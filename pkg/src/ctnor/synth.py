"""Trace sampling, synthetic scenarios, co-occurrence baselines and the
binned noisy-or likelihood.

Every generator takes an integer seed and is deterministic given it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import BinTooCoarse
from .trace_model import (
    AUTOCORR_CHANNEL,
    AUTOCORR_GROUP,
    DEFAULT_GROUP,
    LEAK,
    CtnorModel,
    DelayFamily,
    EventTrace,
)


@dataclass
class ScenarioTruth:
    """Ground truth of a sampled trace.

    ``cause_channel[l]`` and ``cause_index[l]`` name the input event that
    produced output ``l`` (``"__leak__"`` and -1 for leak outputs).
    ``weights`` holds the true weight per channel, or ``(before, after)`` for
    a channel whose weight changes.
    """

    causal: dict
    weights: dict
    leak: float
    delays: dict
    cause_channel: list
    cause_index: np.ndarray
    params: dict = field(default_factory=dict)

    def caused_counts(self):
        out = {ch: 0 for ch in self.causal}
        for ch in self.cause_channel:
            if ch in out:
                out[ch] += 1
        return out


@dataclass(frozen=True)
class ChangepointSpec:
    """Channel ``channel`` may carry a different weight inside ``interval``."""

    channel: str
    interval: tuple[float, float]

    def __post_init__(self):
        a, b = self.interval
        if not b > a:
            raise ValueError(f"changepoint interval must be nonempty, got {self.interval}")
        object.__setattr__(self, "interval", (float(a), float(b)))


def sample_trace(model: CtnorModel, input_channels, window, seed,
                 channel_groups=None, event_weights=None):
    """Draw outputs from the CT-NOR generative process.

    Each input event of channel j produces Poisson(w_j) outputs at the input
    time plus an independent delay.  Outputs landing after the window end are
    dropped, which slightly undercounts caused events near the end.  The leak
    produces Poisson(w_leak) outputs uniform over the window.  If the model
    has a weight for the autocorrelation channel, every output (including
    those it spawns) produces further Poisson(w) outputs.

    ``event_weights`` optionally gives a per-event weight array for some
    channels, overriding the model weight.
    """
    rng = np.random.default_rng(seed)
    t0, t1 = float(window[0]), float(window[1])
    groups = dict(channel_groups or {})
    event_weights = event_weights or {}
    inputs = {ch: np.sort(np.asarray(v, dtype=float)) for ch, v in input_channels.items()}
    times, chans, idxs = [], [], []
    for ch, ts in inputs.items():
        w = event_weights.get(ch)
        w = np.full(ts.size, model.weights.get(ch, 0.0)) if w is None else np.asarray(w, float)
        if ts.size == 0:
            continue
        counts = rng.poisson(w)
        total = int(counts.sum())
        if total == 0:
            continue
        fam = model.delays[groups.get(ch, DEFAULT_GROUP)]
        src = np.repeat(np.arange(ts.size), counts)
        t = ts[src] + fam.sample(rng, total)
        keep = t <= t1
        times.append(t[keep])
        chans += [ch] * int(keep.sum())
        idxs.append(src[keep])
    n_leak = rng.poisson(model.leak)
    times.append(rng.uniform(t0, t1, n_leak))
    chans += [LEAK] * n_leak
    idxs.append(np.full(n_leak, -1))
    t = np.concatenate(times) if times else np.empty(0)
    idx = np.concatenate(idxs).astype(np.int64) if idxs else np.empty(0, dtype=np.int64)
    parent = np.full(t.size, -1, dtype=np.int64)

    w_auto = model.weights.get(AUTOCORR_CHANNEL, 0.0)
    if w_auto > 0:
        fam = model.delays[groups.get(AUTOCORR_CHANNEL, AUTOCORR_GROUP)]
        generation = np.arange(t.size)
        all_t, all_parent = list(t), list(parent)
        chans = list(chans)
        idx = list(idx)
        while generation.size:
            counts = rng.poisson(w_auto, generation.size)
            src = np.repeat(generation, counts)
            child_t = np.asarray(all_t)[src] + fam.sample(rng, src.size)
            keep = child_t <= t1
            start = len(all_t)
            all_t += list(child_t[keep])
            all_parent += list(src[keep])
            chans += [AUTOCORR_CHANNEL] * int(keep.sum())
            idx += [-1] * int(keep.sum())
            generation = np.arange(start, len(all_t))
        t = np.asarray(all_t)
        parent = np.asarray(all_parent, dtype=np.int64)
        idx = np.asarray(idx, dtype=np.int64)

    order = np.argsort(t, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    cause_channel = [chans[i] for i in order]
    cause_index = idx[order].copy()
    auto = np.array([c == AUTOCORR_CHANNEL for c in cause_channel], dtype=bool)
    if auto.any():
        cause_index[auto] = rank[parent[order][auto]]
    outputs = t[order]
    if w_auto > 0:
        inputs[AUTOCORR_CHANNEL] = outputs
        groups.setdefault(AUTOCORR_CHANNEL, AUTOCORR_GROUP)
    trace = EventTrace(inputs, outputs, (t0, t1), groups,
                       AUTOCORR_CHANNEL if w_auto > 0 else None)
    truth = ScenarioTruth(
        causal={ch: bool(model.weights.get(ch, 0.0) > 0 or np.any(np.asarray(
            event_weights.get(ch, [0.0])) > 0)) for ch in inputs},
        weights={ch: model.weights.get(ch, 0.0) for ch in inputs},
        leak=model.leak,
        delays=dict(model.delays),
        cause_channel=cause_channel,
        cause_index=cause_index,
    )
    return trace, truth


def _uniform_inputs(rng, n_channels, per_channel, t0, t1):
    return {f"c{j}": np.sort(rng.uniform(t0, t1, per_channel)) for j in range(n_channels)}


def _scenario_model(n_channels, n_causal, causal_weight, delay_rate, noise, rate_convention):
    rate = delay_rate if rate_convention == "rate" else 1.0 / delay_rate
    weights = {f"c{j}": (causal_weight if j < n_causal else 0.0) for j in range(n_channels)}
    return CtnorModel(weights, noise, {DEFAULT_GROUP: DelayFamily.exponential(rate)})


def scenario_51(hours=2, seed=0, *, n_channels=10, n_causal=5, inputs_per_hour=500,
                noise_per_hour=100, causal_weight=0.01, delay_rate=0.1,
                rate_convention="mean"):
    """Dependency-discovery scenario: half the channels cause outputs.

    Defaults: 10 channels with 500 uniform input events per hour each; the
    first five cause Poisson(0.01) outputs per input with an exponential delay
    parameter of 0.1; 100 uniform noise outputs per hour in expectation.
    With the default ``rate_convention="mean"`` the delay parameter is the
    mean delay in seconds; ``"rate"`` reads it as the rate in 1/s.
    """
    if hours < 1:
        raise ValueError("hours must be >= 1")
    if causal_weight < 0 or noise_per_hour < 0:
        raise ValueError("weights must be non-negative")
    if rate_convention not in ("rate", "mean"):
        raise ValueError(f"unknown rate convention {rate_convention!r}")
    rng = np.random.default_rng(seed)
    t1 = 3600.0 * hours
    inputs = _uniform_inputs(rng, n_channels, inputs_per_hour * hours, 0.0, t1)
    model = _scenario_model(n_channels, n_causal, causal_weight, delay_rate,
                            noise_per_hour * hours, rate_convention)
    trace, truth = sample_trace(model, inputs, (0.0, t1), rng.integers(2**63))
    truth.params = {
        "scenario": "scenario_51", "hours": hours, "seed": seed, "n_channels": n_channels,
        "n_causal": n_causal, "inputs_per_hour": inputs_per_hour,
        "noise_per_hour": noise_per_hour, "causal_weight": causal_weight,
        "delay_rate": delay_rate, "rate_convention": rate_convention,
    }
    return trace, truth


def scenario_changepoint(w_before, w_after, hours=2, seed=0, *, channel="c0",
                         n_channels=10, n_causal=5, inputs_per_hour=500,
                         noise_per_hour=100, causal_weight=0.01, delay_rate=0.1,
                         rate_convention="mean"):
    """Scenario where ``channel`` switches weight halfway through the window.

    Returns ``(trace, truth, spec)``; ``spec.interval`` is the first half.
    """
    if w_before < 0 or w_after < 0 or causal_weight < 0:
        raise ValueError("weights must be non-negative")
    if hours < 1:
        raise ValueError("hours must be >= 1")
    if rate_convention not in ("rate", "mean"):
        raise ValueError(f"unknown rate convention {rate_convention!r}")
    rng = np.random.default_rng(seed)
    t1 = 3600.0 * hours
    inputs = _uniform_inputs(rng, n_channels, inputs_per_hour * hours, 0.0, t1)
    if channel not in inputs:
        raise ValueError(f"unknown channel {channel!r}")
    model = _scenario_model(n_channels, n_causal, causal_weight, delay_rate,
                            noise_per_hour * hours, rate_convention)
    half = t1 / 2
    ts = inputs[channel]
    ew = {channel: np.where(ts < half, w_before, w_after)}
    trace, truth = sample_trace(model, inputs, (0.0, t1), rng.integers(2**63), event_weights=ew)
    truth.weights[channel] = (w_before, w_after)
    truth.causal[channel] = w_before > 0 or w_after > 0
    spec = ChangepointSpec(channel, (0.0, half))
    truth.params = {
        "scenario": "scenario_changepoint", "w_before": w_before, "w_after": w_after,
        "hours": hours, "seed": seed, "channel": channel, "interval": list(spec.interval),
        "n_channels": n_channels, "n_causal": n_causal, "inputs_per_hour": inputs_per_hour,
        "noise_per_hour": noise_per_hour, "causal_weight": causal_weight,
        "delay_rate": delay_rate, "rate_convention": rate_convention,
    }
    return trace, truth, spec


# -- baselines -------------------------------------------------------------

def _covered_length(starts, width, t0, t1):
    if starts.size == 0:
        return 0.0
    a = np.clip(starts, t0, t1)
    b = np.clip(starts + width, t0, t1)
    # merge overlapping [a, b) intervals; starts are sorted
    run_end = np.maximum.accumulate(b)
    new_run = np.ones(a.size, dtype=bool)
    new_run[1:] = a[1:] > run_end[:-1]
    run_id = np.cumsum(new_run) - 1
    run_start = a[new_run]
    run_stop = np.zeros(run_start.size)
    np.maximum.at(run_stop, run_id, b)
    return float((run_stop - run_start).sum())


def _within_after(inputs, outputs, width):
    """Mask of outputs lying within ``width`` after some input."""
    if inputs.size == 0:
        return np.zeros(outputs.size, dtype=bool)
    k = np.searchsorted(inputs, outputs, side="right") - 1
    ok = k >= 0
    d = np.where(ok, outputs - inputs[np.maximum(k, 0)], np.inf)
    return ok & (d <= width)


def baseline_binomial(trace: EventTrace, W: float, channel: str) -> float:
    """One-sided binomial co-occurrence p-value for ``channel``.

    Counts outputs within ``W`` after any input of the channel and compares
    against outputs spread uniformly over the window, where the success
    probability is the fraction of the window covered by the merged
    ``[input, input + W]`` intervals.
    """
    if not W > 0:
        raise ValueError("W must be positive")
    ts = trace.input_channels[channel]
    t0, t1 = trace.window
    q = _covered_length(ts, W, t0, t1) / trace.T
    hits = int(_within_after(ts, trace.output_events, W).sum())
    if trace.n == 0:
        return 1.0
    return float(stats.binom.sf(hits - 1, trace.n, q))


def unique_vicinity_counts(trace: EventTrace, W: float) -> dict:
    """Per channel, the number of outputs whose only input within ``W`` before
    them (over all channels) belongs to that channel."""
    if not W > 0:
        raise ValueError("W must be positive")
    outs = trace.output_events
    total = np.zeros(outs.size, dtype=np.int64)
    per = {}
    for ch in trace.channel_ids:
        if ch == trace.autocorr_channel:
            continue
        ts = trace.input_channels[ch]
        c = np.searchsorted(ts, outs, side="right") - np.searchsorted(ts, outs - W, side="left")
        per[ch] = c
        total += c
    return {ch: int(((c == 1) & (total == 1)).sum()) for ch, c in per.items()}


def baseline_unique_vicinity(trace: EventTrace, W: float, channel: str) -> bool:
    """True iff some output has exactly one input within ``W`` before it and
    that input is on ``channel``."""
    return unique_vicinity_counts(trace, W).get(channel, 0) > 0


# -- binned noisy-or ---------------------------------------------------------

def nor_binned_log_likelihood(model: CtnorModel, trace: EventTrace, delta: float,
                              horizon: float | None = None) -> float:
    """Noisy-or log-probability of the binned output occupancy pattern.

    The window is cut into bins of width ``delta``.  An input in bin ``s``
    fails to switch on bin ``t > s`` with probability
    ``1 - w f(delta (t - s)) delta``; the leak is an input in bin 0.  The
    result is a probability, not a density: compare it against the CT-NOR
    log-likelihood plus ``n log(delta)``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    t0 = trace.window[0]
    nbins = int(math.ceil(trace.T / delta))
    if horizon is None:
        horizon = model.horizon(trace)
    reach = min(nbins, int(math.ceil(horizon / delta)) + 1)

    def bins(ts):
        return np.minimum(((np.asarray(ts) - t0) / delta).astype(np.int64), nbins - 1)

    out_bins = bins(trace.output_events)
    if np.any(np.bincount(out_bins, minlength=nbins) > 1):
        raise BinTooCoarse(f"delta={delta} puts more than one output in a bin")
    log_p0 = np.zeros(nbins)
    steps = np.arange(1, reach + 1)
    sources = []
    for ch in trace.channel_ids:
        ib = bins(trace.input_channels[ch])
        if np.any(np.bincount(ib, minlength=nbins) > 1):
            raise BinTooCoarse(f"delta={delta} puts more than one event of {ch!r} in a bin")
        w = model.weights.get(ch, 0.0)
        if w == 0 or ib.size == 0:
            continue
        p = w * np.asarray(model.family_for(trace, ch).pdf(delta * steps)) * delta
        sources.append((ib, p))
    if model.leak > 0:
        lsteps = np.arange(1, nbins)
        pl = np.where(delta * lsteps <= trace.T, model.leak / trace.T * delta, 0.0)
        sources.append((np.array([0]), pl))
    for ib, p in sources:
        if np.any(p >= 1):
            raise BinTooCoarse(f"delta={delta} gives a bin probability >= 1")
        lq = np.log1p(-p)
        for s in ib:
            m = min(lq.size, nbins - s - 1)
            if m > 0:
                log_p0[s + 1:s + 1 + m] += lq[:m]
    occupied = np.zeros(nbins, dtype=bool)
    occupied[out_bins] = True
    with np.errstate(divide="ignore"):
        hit = np.log(-np.expm1(log_p0[occupied]))
    return float(log_p0[~occupied].sum() + hit.sum())
