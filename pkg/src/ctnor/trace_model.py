"""Traces, delay families, CT-NOR models and exact likelihood evaluation.

An :class:`EventTrace` holds one output channel and any number of input
channels of sorted timestamps (seconds) over a window.  A :class:`CtnorModel`
assigns every input channel a weight (expected number of outputs caused per
input event) and every channel group a delay density.  The leak is a
pseudo-channel with one event at the window start and a uniform delay over the
whole window; it is always part of the model, and its weight may be zero.

The log-likelihood of the outputs given the inputs is

    -lambda + sum_l log sum_{j,k} w_j f_j(o_l - i_jk)

with ``lambda = sum_j n_j w_j`` (the leak counts as one event).  The inner sum
is restricted to candidate causes with delay in ``[0, horizon]``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy import stats

from .errors import NoExplanation

DEFAULT_GROUP = "default"
AUTOCORR_CHANNEL = "__autocorr__"
AUTOCORR_GROUP = "__autocorr__"
LEAK = "__leak__"

# tail mass allowed beyond the candidate horizon
TAIL_EPS = 1e-6


class Variant(str, enum.Enum):
    UNIFORM_EXPONENTIAL = "uniform_exponential"
    UNIFORM_GAUSSIAN = "uniform_gaussian"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class DelayFamily:
    """Delay density: a mixture of a uniform window and a decaying component.

    ``mixture_weight`` is the probability of the uniform component on
    ``uniform_window``.  The other component is an exponential with rate
    ``exp_rate`` or a Gaussian (``gauss_mean``, ``gauss_std``) truncated to
    non-negative delays and renormalized.  Parameters left as ``None`` are
    initialized from data by the EM fit.
    """

    variant: Variant = Variant.UNIFORM_EXPONENTIAL
    mixture_weight: float = 0.5
    uniform_window: tuple[float, float] = (0.0, 1.0)
    exp_rate: float | None = None
    gauss_mean: float | None = None
    gauss_std: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        a, b = (float(x) for x in self.uniform_window)
        object.__setattr__(self, "uniform_window", (a, b))
        if not 0.0 <= self.mixture_weight <= 1.0:
            raise ValueError(f"mixture_weight must lie in [0, 1], got {self.mixture_weight}")
        if a < 0 or not b > a:
            raise ValueError(f"uniform window must satisfy 0 <= a < b, got {self.uniform_window}")
        if self.variant is Variant.UNIFORM and self.mixture_weight != 1.0:
            object.__setattr__(self, "mixture_weight", 1.0)
        if self.exp_rate is not None and not self.exp_rate > 0:
            raise ValueError(f"exp_rate must be positive, got {self.exp_rate}")
        if self.gauss_std is not None and not self.gauss_std > 0:
            raise ValueError(f"gauss_std must be positive, got {self.gauss_std}")

    # constructors

    @classmethod
    def exponential(cls, rate, uniform_window=(0.0, 1.0)):
        """Pure exponential delay (uniform component switched off)."""
        return cls(Variant.UNIFORM_EXPONENTIAL, 0.0, uniform_window, exp_rate=rate)

    @classmethod
    def uniform_exponential(cls, mixture_weight=0.5, uniform_window=(0.0, 1.0), rate=None):
        return cls(Variant.UNIFORM_EXPONENTIAL, mixture_weight, uniform_window, exp_rate=rate)

    @classmethod
    def uniform_gaussian(cls, mixture_weight=0.5, uniform_window=(0.0, 1.0), mean=None, std=None):
        return cls(Variant.UNIFORM_GAUSSIAN, mixture_weight, uniform_window,
                   gauss_mean=mean, gauss_std=std)

    @classmethod
    def uniform(cls, a, b):
        return cls(Variant.UNIFORM, 1.0, (a, b))

    @property
    def is_specified(self):
        """True when every parameter needed to evaluate the density is set."""
        if self.variant is Variant.UNIFORM or self.mixture_weight == 1.0:
            return True
        if self.variant is Variant.UNIFORM_EXPONENTIAL:
            return self.exp_rate is not None
        return self.gauss_mean is not None and self.gauss_std is not None

    def _require_specified(self):
        if not self.is_specified:
            raise ValueError(f"delay family has unset parameters: {self}")

    # densities

    def component_pdfs(self, delta):
        """Return (uniform part, decaying part) of the density, each already
        multiplied by its mixture probability."""
        self._require_specified()
        d = np.asarray(delta, dtype=float)
        a, b = self.uniform_window
        pi = self.mixture_weight
        uni = np.where((d >= a) & (d <= b), pi / (b - a), 0.0)
        if pi == 1.0:
            return uni, np.zeros_like(uni)
        if self.variant is Variant.UNIFORM_EXPONENTIAL:
            r = self.exp_rate
            with np.errstate(over="ignore"):
                dec = np.where(d >= 0, (1.0 - pi) * r * np.exp(-r * np.maximum(d, 0.0)), 0.0)
        else:
            mu, sd = self.gauss_mean, self.gauss_std
            logz = stats.norm.logsf(0.0, mu, sd)
            dec = np.where(d >= 0, (1.0 - pi) * np.exp(stats.norm.logpdf(d, mu, sd) - logz), 0.0)
        return uni, dec

    def pdf(self, delta):
        uni, dec = self.component_pdfs(delta)
        out = uni + dec
        return out if out.ndim else float(out)

    def logpdf(self, delta):
        """Log density; used when linear-space intensities underflow."""
        self._require_specified()
        d = np.asarray(delta, dtype=float)
        a, b = self.uniform_window
        pi = self.mixture_weight
        with np.errstate(divide="ignore"):
            log_uni = np.where((d >= a) & (d <= b), math.log(pi) - math.log(b - a) if pi > 0 else -np.inf, -np.inf)
            if pi == 1.0:
                out = log_uni
            else:
                if self.variant is Variant.UNIFORM_EXPONENTIAL:
                    r = self.exp_rate
                    log_dec = math.log1p(-pi) + math.log(r) - r * d
                else:
                    mu, sd = self.gauss_mean, self.gauss_std
                    log_dec = (math.log1p(-pi) + stats.norm.logpdf(d, mu, sd)
                               - stats.norm.logsf(0.0, mu, sd))
                log_dec = np.where(d >= 0, log_dec, -np.inf)
                out = np.logaddexp(log_uni, log_dec)
        return out if out.ndim else float(out)

    def sf(self, delta):
        """Survival function P(delay > delta)."""
        self._require_specified()
        d = np.asarray(delta, dtype=float)
        a, b = self.uniform_window
        pi = self.mixture_weight
        uni = pi * np.clip((b - d) / (b - a), 0.0, 1.0)
        if pi == 1.0:
            dec = 0.0
        elif self.variant is Variant.UNIFORM_EXPONENTIAL:
            dec = (1.0 - pi) * np.exp(-self.exp_rate * np.maximum(d, 0.0))
        else:
            mu, sd = self.gauss_mean, self.gauss_std
            dec = (1.0 - pi) * np.exp(stats.norm.logsf(np.maximum(d, 0.0), mu, sd)
                                      - stats.norm.logsf(0.0, mu, sd))
        out = uni + dec
        return out if np.ndim(out) else float(out)

    def cdf(self, delta):
        return 1.0 - self.sf(delta)

    def tail_horizon(self, eps=TAIL_EPS):
        """Smallest delay H (up to rounding) with P(delay > H) < eps."""
        self._require_specified()
        b = self.uniform_window[1]
        pi = self.mixture_weight
        if pi == 1.0 or (1.0 - pi) <= eps:
            return b
        if self.variant is Variant.UNIFORM_EXPONENTIAL:
            h = math.log((1.0 - pi) / eps) / self.exp_rate
        else:
            mu, sd = self.gauss_mean, self.gauss_std
            log_target = math.log(eps / (1.0 - pi)) + stats.norm.logsf(0.0, mu, sd)
            h = float(stats.norm.isf(math.exp(log_target), mu, sd)) if log_target > -700 else mu + 40 * sd
        return max(b, h)

    def sample(self, rng, size):
        self._require_specified()
        a, b = self.uniform_window
        use_uniform = rng.random(size) < self.mixture_weight
        out = np.empty(size)
        out[use_uniform] = rng.uniform(a, b, int(use_uniform.sum()))
        m = int((~use_uniform).sum())
        if m:
            if self.variant is Variant.UNIFORM_EXPONENTIAL:
                out[~use_uniform] = rng.exponential(1.0 / self.exp_rate, m)
            else:
                mu, sd = self.gauss_mean, self.gauss_std
                out[~use_uniform] = stats.truncnorm.rvs(
                    (0.0 - mu) / sd, np.inf, loc=mu, scale=sd, size=m, random_state=rng)
        return out

    def to_dict(self):
        return {
            "variant": self.variant.value,
            "mixture_weight": self.mixture_weight,
            "uniform_window": list(self.uniform_window),
            "exp_rate": self.exp_rate,
            "gauss_mean": self.gauss_mean,
            "gauss_std": self.gauss_std,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            variant=Variant(d.get("variant", Variant.UNIFORM_EXPONENTIAL.value)),
            mixture_weight=float(d.get("mixture_weight", 0.5)),
            uniform_window=tuple(d.get("uniform_window", (0.0, 1.0))),
            exp_rate=d.get("exp_rate"),
            gauss_mean=d.get("gauss_mean"),
            gauss_std=d.get("gauss_std"),
        )


def delay_density(family: DelayFamily, delta):
    """Evaluate the delay density; zero for negative delays."""
    return family.pdf(delta)


def _frozen_array(x):
    a = np.array(x, dtype=float).reshape(-1)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class EventTrace:
    """Output events plus input channels over ``window = (t_start, t_end)``.

    ``channel_groups`` maps channel ids to delay-parameter groups; channels
    not listed belong to ``"default"``.  ``autocorr_channel`` names the input
    channel (if any) that mirrors the output events, see
    :func:`enable_autocorrelation`.
    """

    input_channels: Mapping[str, np.ndarray]
    output_events: np.ndarray
    window: tuple[float, float] | None = None
    channel_groups: Mapping[str, str] = field(default_factory=dict)
    autocorr_channel: str | None = None

    def __post_init__(self):
        inputs = {str(k): _frozen_array(v) for k, v in self.input_channels.items()}
        outputs = _frozen_array(self.output_events)
        if self.window is None:
            allt = np.concatenate([outputs, *inputs.values()]) if inputs else outputs
            if allt.size == 0:
                raise ValueError("cannot infer a window from an empty trace")
            window = (float(allt.min()), float(allt.max()))
        else:
            window = (float(self.window[0]), float(self.window[1]))
        t0, t1 = window
        if not t1 > t0:
            raise ValueError(f"window must have positive length, got {window}")
        for name, arr in [("output", outputs), *inputs.items()]:
            if arr.size and (np.any(np.diff(arr) < 0)):
                raise ValueError(f"timestamps of channel {name!r} are not sorted")
            if arr.size and (arr[0] < t0 or arr[-1] > t1):
                raise ValueError(f"channel {name!r} has events outside the window {window}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"channel {name!r} has non-finite timestamps")
        if self.autocorr_channel is not None and self.autocorr_channel not in inputs:
            raise ValueError(f"autocorrelation channel {self.autocorr_channel!r} missing")
        object.__setattr__(self, "input_channels", inputs)
        object.__setattr__(self, "output_events", outputs)
        object.__setattr__(self, "window", window)
        object.__setattr__(self, "channel_groups", dict(self.channel_groups))

    @property
    def T(self):
        return self.window[1] - self.window[0]

    @property
    def n(self):
        return int(self.output_events.size)

    @property
    def channel_ids(self):
        return list(self.input_channels)

    def count(self, channel):
        return int(self.input_channels[channel].size)

    def group_of(self, channel):
        if channel == self.autocorr_channel and channel not in self.channel_groups:
            return AUTOCORR_GROUP
        return self.channel_groups.get(channel, DEFAULT_GROUP)

    @property
    def groups(self):
        seen = []
        for ch in self.input_channels:
            g = self.group_of(ch)
            if g not in seen:
                seen.append(g)
        return seen

    def translate(self, dt):
        return EventTrace(
            {k: v + dt for k, v in self.input_channels.items()},
            self.output_events + dt,
            (self.window[0] + dt, self.window[1] + dt),
            self.channel_groups,
            self.autocorr_channel,
        )

    def relabel(self, mapping):
        """Rename channels via ``mapping`` (unlisted ids keep their name)."""
        m = lambda c: mapping.get(c, c)
        return EventTrace(
            {m(k): v for k, v in self.input_channels.items()},
            self.output_events,
            self.window,
            {m(k): g for k, g in self.channel_groups.items()},
            None if self.autocorr_channel is None else m(self.autocorr_channel),
        )

    def without(self, channel):
        inputs = {k: v for k, v in self.input_channels.items() if k != channel}
        groups = {k: g for k, g in self.channel_groups.items() if k != channel}
        auto = None if self.autocorr_channel == channel else self.autocorr_channel
        return EventTrace(inputs, self.output_events, self.window, groups, auto)


def enable_autocorrelation(trace: EventTrace, group: str = AUTOCORR_GROUP) -> EventTrace:
    """Add an input channel whose events are the outputs themselves.

    Candidate generation lets an output be explained only by strictly earlier
    outputs on this channel.
    """
    if trace.autocorr_channel is not None:
        return trace
    inputs = dict(trace.input_channels)
    inputs[AUTOCORR_CHANNEL] = trace.output_events
    groups = dict(trace.channel_groups)
    groups[AUTOCORR_CHANNEL] = group
    return EventTrace(inputs, trace.output_events, trace.window, groups, AUTOCORR_CHANNEL)


@dataclass(frozen=True)
class CtnorModel:
    """Channel weights, leak weight and per-group delay families."""

    weights: Mapping[str, float]
    leak: float
    delays: Mapping[str, DelayFamily]

    def __post_init__(self):
        w = {str(k): float(v) for k, v in self.weights.items()}
        for k, v in w.items():
            if not v >= 0:
                raise ValueError(f"weight of channel {k!r} must be >= 0, got {v}")
        if not self.leak >= 0:
            raise ValueError(f"leak weight must be >= 0, got {self.leak}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "leak", float(self.leak))
        object.__setattr__(self, "delays", dict(self.delays))

    def total_mass(self, trace: EventTrace):
        """lambda = sum_j n_j w_j, including the leak's single event."""
        terms = [trace.count(ch) * self.weights.get(ch, 0.0) for ch in trace.channel_ids]
        return math.fsum(terms + [self.leak])

    def family_for(self, trace, channel):
        g = trace.group_of(channel)
        try:
            return self.delays[g]
        except KeyError:
            raise KeyError(f"model has no delay family for group {g!r} (channel {channel!r})") from None

    def horizon(self, trace, eps=TAIL_EPS):
        """Candidate horizon for the trace's groups.

        Per-output truncation errors add up over outputs, so the tail mass
        beyond the horizon is held below ``eps / n`` for every group in use.
        """
        eps = eps / max(trace.n, 1)
        hs = [self.delays[g].tail_horizon(eps) for g in trace.groups]
        return max(hs) if hs else 0.0

    def with_weights(self, weights=None, leak=None, delays=None):
        return replace(
            self,
            weights=dict(self.weights if weights is None else weights),
            leak=self.leak if leak is None else leak,
            delays=dict(self.delays if delays is None else delays),
        )

    def to_dict(self):
        return {
            "weights": dict(self.weights),
            "leak": self.leak,
            "delays": {g: f.to_dict() for g, f in self.delays.items()},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            weights={k: float(v) for k, v in d["weights"].items()},
            leak=float(d["leak"]),
            delays={g: DelayFamily.from_dict(f) for g, f in d["delays"].items()},
        )


@dataclass(frozen=True)
class CandidateSet:
    """Flat arrays of (output, source, input index, delay) candidate causes.

    Sources ``0..J-1`` are the trace's input channels in order; source ``J``
    is the leak pseudo-event.
    """

    channel_ids: tuple
    groups: tuple  # group id per channel
    out_idx: np.ndarray
    src: np.ndarray
    inp_idx: np.ndarray
    delay: np.ndarray
    n_outputs: int
    horizon: float
    T: float

    @property
    def leak_index(self):
        return len(self.channel_ids)

    @property
    def size(self):
        return int(self.out_idx.size)

    def group_members(self):
        """Map group id -> integer index array of candidates in that group."""
        out = {}
        for g in dict.fromkeys(self.groups):
            srcs = [i for i, gg in enumerate(self.groups) if gg == g]
            out[g] = np.flatnonzero(np.isin(self.src, srcs))
        return out

    def for_output(self, l):
        sel = np.flatnonzero(self.out_idx == l)
        return [
            (LEAK if s == self.leak_index else self.channel_ids[s], int(k), float(d))
            for s, k, d in zip(self.src[sel], self.inp_idx[sel], self.delay[sel])
        ]


def _ranges(lo, hi):
    counts = np.maximum(hi - lo, 0)
    total = int(counts.sum())
    owner = np.repeat(np.arange(lo.size), counts)
    first = np.repeat(lo, counts)
    offset = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    return owner, first + offset


def build_candidates(trace: EventTrace, horizon: float) -> CandidateSet:
    """All (channel, input) pairs with delay in ``[0, horizon]`` per output, plus the leak."""
    outs = trace.output_events
    n = outs.size
    parts_o, parts_s, parts_k = [], [], []
    for s, ch in enumerate(trace.channel_ids):
        times = trace.input_channels[ch]
        lo = np.searchsorted(times, outs - horizon, side="left")
        strict = ch == trace.autocorr_channel
        hi = np.searchsorted(times, outs, side="left" if strict else "right")
        o, k = _ranges(lo, hi)
        parts_o.append(o)
        parts_s.append(np.full(o.size, s, dtype=np.int64))
        parts_k.append(k)
    leak_idx = len(trace.channel_ids)
    parts_o.append(np.arange(n))
    parts_s.append(np.full(n, leak_idx, dtype=np.int64))
    parts_k.append(np.zeros(n, dtype=np.int64))
    out_idx = np.concatenate(parts_o).astype(np.int64)
    src = np.concatenate(parts_s)
    inp_idx = np.concatenate(parts_k).astype(np.int64)
    order = np.lexsort((src, out_idx))
    out_idx, src, inp_idx = out_idx[order], src[order], inp_idx[order]
    input_times = np.empty(out_idx.size)
    for s, ch in enumerate(trace.channel_ids):
        m = src == s
        input_times[m] = trace.input_channels[ch][inp_idx[m]]
    input_times[src == leak_idx] = trace.window[0]
    delay = outs[out_idx] - input_times
    return CandidateSet(
        channel_ids=tuple(trace.channel_ids),
        groups=tuple(trace.group_of(ch) for ch in trace.channel_ids),
        out_idx=out_idx,
        src=src,
        inp_idx=inp_idx,
        delay=delay,
        n_outputs=n,
        horizon=float(horizon),
        T=trace.T,
    )


def candidate_causes(trace: EventTrace, model: CtnorModel, l: int, horizon: float | None = None):
    """Candidate causes of output ``l`` as ``(channel, input index, delay)`` triples.

    The leak pseudo-event (channel ``"__leak__"``) is always included.
    """
    if horizon is None:
        horizon = model.horizon(trace)
    return build_candidates(trace, horizon).for_output(l)


def _source_weights(model: CtnorModel, cands: CandidateSet):
    w = np.array([model.weights.get(ch, 0.0) for ch in cands.channel_ids] + [model.leak])
    return w


def candidate_densities(model: CtnorModel, cands: CandidateSet, members=None):
    """Delay density of every candidate under the model's families."""
    f = np.empty(cands.size)
    if members is None:
        members = cands.group_members()
    for g, idx in members.items():
        f[idx] = model.delays[g].pdf(cands.delay[idx])
    leak = cands.src == cands.leak_index
    f[leak] = 1.0 / cands.T
    return f


def _log_row_sums(model, cands, terms, rows):
    """Per-output log intensity with a log-space fallback for underflowed rows."""
    bad = rows <= 0.0
    with np.errstate(divide="ignore"):
        logrows = np.log(rows)
    if np.any(bad):
        sel = np.flatnonzero(np.isin(cands.out_idx, np.flatnonzero(bad)))
        w = _source_weights(model, cands)
        logt = np.full(sel.size, -np.inf)
        with np.errstate(divide="ignore"):
            logw = np.log(w[cands.src[sel]])
        for g, idx in cands.group_members().items():
            m = np.isin(sel, idx)
            logt[m] = model.delays[g].logpdf(cands.delay[sel[m]])
        leak = cands.src[sel] == cands.leak_index
        logt[leak] = -math.log(cands.T)
        logt = logt + logw
        o = cands.out_idx[sel]
        mx = np.full(cands.n_outputs, -np.inf)
        np.maximum.at(mx, o, logt)
        with np.errstate(invalid="ignore"):
            safe = np.where(np.isfinite(mx[o]), logt - mx[o], -np.inf)
        acc = np.zeros(cands.n_outputs)
        np.add.at(acc, o, np.exp(safe))
        with np.errstate(divide="ignore"):
            fallback = mx + np.log(acc)
        logrows = np.where(bad, fallback, logrows)
        still = np.flatnonzero(~np.isfinite(logrows))
        if still.size:
            raise NoExplanation(still)
    return logrows


def log_likelihood(model: CtnorModel, trace: EventTrace, horizon: float | None = None,
                   candidates: CandidateSet | None = None) -> float:
    """Log-likelihood of the trace's outputs given its inputs.

    ``horizon`` defaults to the model's tail horizon; pass ``np.inf`` for the
    untruncated double sum.
    """
    if candidates is None:
        if horizon is None:
            horizon = model.horizon(trace)
        candidates = build_candidates(trace, horizon)
    lam = model.total_mass(trace)
    if candidates.n_outputs == 0:
        return -lam
    terms = _source_weights(model, candidates)[candidates.src] * candidate_densities(model, candidates)
    rows = np.bincount(candidates.out_idx, weights=terms, minlength=candidates.n_outputs)
    logrows = _log_row_sums(model, candidates, terms, rows)
    return float(-lam + logrows.sum())
