"""EM fitting of CT-NOR weights and delay parameters.

The E-step attributes each output event to its candidate causes in
proportion to ``w_j f(delay)``.  The M-step sets each weight to the
responsibility mass on the channel divided by its event count and refits each
group's delay family from the responsibility-weighted delays.  Mixture
families are handled by further splitting every responsibility between the
uniform and the decaying component, which keeps all updates closed form.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateDelayWarning
from .trace_model import (
    LEAK,
    TAIL_EPS,
    CandidateSet,
    CtnorModel,
    DelayFamily,
    EventTrace,
    Variant,
    _log_row_sums,
    build_candidates,
    candidate_densities,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitConfig:
    """EM settings.

    ``delay_families`` maps group id to the initial family for that group;
    groups not listed use ``default_family``.  With ``horizon=None`` the
    horizon is twice the tail horizon of the initial families when they are
    fully specified, and the whole window otherwise.
    """

    max_iters: int = 200
    rel_tol: float = 1e-6
    init_strategy: str = "uniform_weights"
    seed: int | None = None
    horizon: float | None = None
    default_family: DelayFamily = field(default_factory=DelayFamily)
    delay_families: dict = field(default_factory=dict)
    std_floor: float = 1e-4

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if self.init_strategy not in ("uniform_weights", "random_seeded"):
            raise ValueError(f"unknown init_strategy {self.init_strategy!r}")
        if self.init_strategy == "random_seeded" and self.seed is None:
            raise ValueError("random_seeded initialization needs a seed")

    def family_for_group(self, group):
        return self.delay_families.get(group, self.default_family)

    def resolve_horizon(self, trace: EventTrace):
        if self.horizon is not None:
            return float(self.horizon)
        fams = [self.family_for_group(g) for g in trace.groups]
        if fams and all(f.is_specified for f in fams):
            eps = TAIL_EPS / max(trace.n, 1)
            return min(trace.T, 2.0 * max(f.tail_horizon(eps) for f in fams))
        return trace.T

    def replace(self, **kw):
        return replace(self, **kw)


@dataclass
class Responsibilities:
    """Normalized attribution ``z`` of every output over its candidate causes."""

    candidates: CandidateSet
    z: np.ndarray

    def row_sums(self):
        return np.bincount(self.candidates.out_idx, weights=self.z,
                           minlength=self.candidates.n_outputs)

    def source_mass(self):
        """Total responsibility per source (input channels, then the leak)."""
        return np.bincount(self.candidates.src, weights=self.z,
                           minlength=len(self.candidates.channel_ids) + 1)

    def channel_mass(self, channel):
        c = self.candidates
        s = c.leak_index if channel == LEAK else c.channel_ids.index(channel)
        return float(self.z[c.src == s].sum())

    def per_output_mass(self, channel):
        """sum_k z_kl for one channel, as an array over outputs."""
        c = self.candidates
        s = c.leak_index if channel == LEAK else c.channel_ids.index(channel)
        m = c.src == s
        return np.bincount(c.out_idx[m], weights=self.z[m], minlength=c.n_outputs)

    def other_mass(self, channel):
        """Responsibility per output on every source except ``channel``.

        Summed directly rather than as ``1 - per_output_mass`` so that tiny
        remainders keep their precision.
        """
        c = self.candidates
        s = c.leak_index if channel == LEAK else c.channel_ids.index(channel)
        m = c.src != s
        return np.bincount(c.out_idx[m], weights=self.z[m], minlength=c.n_outputs)

    def as_lists(self):
        """Sparse per-output lists of ``((channel, input index), z)``."""
        c = self.candidates
        rows = [[] for _ in range(c.n_outputs)]
        names = list(c.channel_ids) + [LEAK]
        for l, s, k, zz in zip(c.out_idx, c.src, c.inp_idx, self.z):
            rows[l].append(((names[s], int(k)), float(zz)))
        return rows


@dataclass
class FitReport:
    model: CtnorModel
    trajectory: np.ndarray
    iterations: int
    converged: bool
    excluded_channels: list
    pinned_channels: list
    responsibilities: Responsibilities
    horizon: float

    @property
    def log_likelihood(self):
        return float(self.trajectory[-1])

    def trajectory_table(self, sep=","):
        lines = [f"iteration{sep}log_likelihood"]
        lines += [f"{i}{sep}{v:.12g}" for i, v in enumerate(self.trajectory)]
        return "\n".join(lines) + "\n"


# -- single steps ----------------------------------------------------------

def _intensity(model, cands, members):
    w = np.array([model.weights.get(ch, 0.0) for ch in cands.channel_ids] + [model.leak])
    return w[cands.src] * candidate_densities(model, cands, members)


def _estep(model, cands, members):
    terms = _intensity(model, cands, members)
    rows = np.bincount(cands.out_idx, weights=terms, minlength=cands.n_outputs)
    logrows = _log_row_sums(model, cands, terms, rows)
    if np.any(rows <= 0):
        # underflowed rows: renormalize from log-space terms
        z = np.where(rows[cands.out_idx] > 0, terms / np.where(rows > 0, rows, 1.0)[cands.out_idx], 0.0)
        bad = np.flatnonzero(rows <= 0)
        for l in bad:
            sel = np.flatnonzero(cands.out_idx == l)
            z[sel] = _log_space_row(model, cands, sel, logrows[l])
    else:
        z = terms / rows[cands.out_idx]
    return z, logrows


def _log_space_row(model, cands, sel, logrow):
    out = np.empty(sel.size)
    for i, c in enumerate(sel):
        s = cands.src[c]
        if s == cands.leak_index:
            lw, lf = math.log(model.leak) if model.leak > 0 else -np.inf, -math.log(cands.T)
        else:
            w = model.weights.get(cands.channel_ids[s], 0.0)
            lw = math.log(w) if w > 0 else -np.inf
            lf = model.delays[cands.groups[s]].logpdf(cands.delay[c])
        out[i] = math.exp(lw + lf - logrow) if np.isfinite(lw + lf) else 0.0
    return out


def e_step(model: CtnorModel, trace: EventTrace, horizon: float | None = None,
           candidates: CandidateSet | None = None) -> Responsibilities:
    """Posterior attribution of every output over its candidate causes."""
    if candidates is None:
        candidates = build_candidates(trace, model.horizon(trace) if horizon is None else horizon)
    z, _ = _estep(model, candidates, candidates.group_members())
    return Responsibilities(candidates, z)


def m_step_weights(z: Responsibilities, trace: EventTrace, pinned=()):
    """Weight update: responsibility mass on each channel over its event count.

    Returns ``(weights, leak, empty_channels)``.  Channels without events and
    pinned channels get weight 0.
    """
    mass = z.source_mass()
    weights, empty = {}, []
    for s, ch in enumerate(z.candidates.channel_ids):
        n_j = trace.count(ch)
        if n_j == 0:
            weights[ch] = 0.0
            empty.append(ch)
        elif ch in pinned:
            weights[ch] = 0.0
        else:
            weights[ch] = float(mass[s] / n_j)
    return weights, float(mass[-1]), empty


def _split_components(family, delays, zg):
    uni, dec = family.component_pdfs(delays)
    tot = uni + dec
    safe = np.where(tot > 0, tot, 1.0)
    zu = np.where(tot > 0, zg * uni / safe, 0.0)
    return zu, zg - zu


def m_step_theta(z: Responsibilities, trace: EventTrace, group: str,
                 family: DelayFamily, std_floor: float = 1e-4) -> DelayFamily:
    """Refit one group's delay family from responsibility-weighted delays.

    The uniform window is held fixed.  Exponential rate is matched to the
    weighted mean delay of the exponential component.  Gaussian mean and
    standard deviation are the weighted moments of the Gaussian component,
    ignoring the truncation at zero (biased when the mean is within a few
    standard deviations of zero).
    """
    c = z.candidates
    idx = c.group_members().get(group)
    if idx is None or idx.size == 0:
        return family
    d, zg = c.delay[idx], z.z[idx]
    total = zg.sum()
    if not total > 0:
        return family
    if family.variant is Variant.UNIFORM or family.mixture_weight == 1.0:
        return family
    zu, zd = _split_components(family, d, zg)
    pi = float(np.clip(zu.sum() / total, 0.0, 1.0))
    mass = zd.sum()
    if not mass > 0:
        return replace(family, mixture_weight=pi)
    if family.variant is Variant.UNIFORM_EXPONENTIAL:
        mean_delay = float((zd * d).sum() / mass)
        if not mean_delay > 0:
            warnings.warn("exponential delay collapsed to zero; keeping previous rate",
                          DegenerateDelayWarning, stacklevel=2)
            return replace(family, mixture_weight=pi)
        return replace(family, mixture_weight=pi, exp_rate=1.0 / mean_delay)
    mean = float((zd * d).sum() / mass)
    var = float((zd * (d - mean) ** 2).sum() / mass)
    std = math.sqrt(max(var, 0.0))
    if std < std_floor:
        warnings.warn(f"delay spread {std:.3g}s below floor; clamped to {std_floor}s",
                      DegenerateDelayWarning, stacklevel=2)
        std = std_floor
    proposal = replace(family, mixture_weight=pi, gauss_mean=mean, gauss_std=std)
    # moments ignore truncation, so guard the bound: fall back to the exact
    # mixture-weight step if the proposal does not improve it
    fallback = replace(family, mixture_weight=pi)
    if _weighted_logpdf(proposal, d, zg) < _weighted_logpdf(fallback, d, zg):
        return fallback
    return proposal


def _weighted_logpdf(family, d, zg):
    m = zg > 0
    return float((zg[m] * family.logpdf(d[m])).sum())


# -- initialization --------------------------------------------------------

def initial_model(trace: EventTrace, config: FitConfig, cands: CandidateSet) -> CtnorModel:
    """Uniform-responsibility weights and data-driven delay parameters."""
    active = [ch for ch in trace.channel_ids if trace.count(ch) > 0]
    J = len(active) + 1
    rng = np.random.default_rng(config.seed) if config.init_strategy == "random_seeded" else None
    weights = {}
    for ch in trace.channel_ids:
        if trace.count(ch) == 0:
            weights[ch] = 0.0
            continue
        w = trace.n / (J * trace.count(ch))
        if rng is not None:
            w *= rng.uniform(0.5, 1.5)
        weights[ch] = w
    leak = trace.n / J
    if rng is not None:
        leak *= rng.uniform(0.5, 1.5)
    delays = {}
    members = cands.group_members()
    for g in trace.groups:
        fam = config.family_for_group(g)
        idx = members.get(g, np.array([], dtype=int))
        d = cands.delay[idx]
        mean = float(d.mean()) if d.size and d.mean() > 0 else max(cands.horizon, 1.0) / 2
        if fam.variant is Variant.UNIFORM_EXPONENTIAL and fam.exp_rate is None:
            fam = replace(fam, exp_rate=1.0 / mean)
        elif fam.variant is Variant.UNIFORM_GAUSSIAN:
            if fam.gauss_mean is None:
                fam = replace(fam, gauss_mean=mean)
            if fam.gauss_std is None:
                sd = float(d.std()) if d.size > 1 else mean
                fam = replace(fam, gauss_std=max(sd, config.std_floor))
        delays[g] = fam
    return CtnorModel(weights, leak, delays)


# -- EM driver -------------------------------------------------------------

def _em(trace, config, cands, model, pinned, max_iters, callback=None):
    members = cands.group_members()
    pinned = set(pinned)
    if pinned:
        removed = math.fsum(model.weights.get(ch, 0.0) * trace.count(ch) for ch in pinned)
        # a leak that has decayed to zero cannot pick up outputs the pinned
        # channels explained alone, so hand it their mass
        leak = model.leak if model.leak > 0 else removed
        model = model.with_weights({ch: (0.0 if ch in pinned else w)
                                    for ch, w in model.weights.items()}, leak=leak)
    z, logrows = _estep(model, cands, members)
    ll = -model.total_mass(trace) + float(logrows.sum())
    traj = [ll]
    converged = False
    empty = [ch for ch in trace.channel_ids if trace.count(ch) == 0]
    it = 0
    for it in range(1, max_iters + 1):
        resp = Responsibilities(cands, z)
        weights, leak, empty = m_step_weights(resp, trace, pinned)
        delays = {
            g: m_step_theta(resp, trace, g, fam, config.std_floor)
            for g, fam in model.delays.items()
        }
        model = CtnorModel(weights, leak, delays)
        if callback is not None:
            callback(it, model, resp)
        z, logrows = _estep(model, cands, members)
        new_ll = -model.total_mass(trace) + float(logrows.sum())
        traj.append(new_ll)
        gain = new_ll - ll
        ll = new_ll
        if abs(gain) <= config.rel_tol * max(abs(ll), 1e-300):
            converged = True
            break
    if not converged:
        log.info("EM stopped after %d iterations without reaching rel_tol", it)
    return FitReport(
        model=model,
        trajectory=np.array(traj),
        iterations=it,
        converged=converged,
        excluded_channels=empty,
        pinned_channels=sorted(pinned),
        responsibilities=Responsibilities(cands, z),
        horizon=cands.horizon,
    )


def fit(trace: EventTrace, config: FitConfig | None = None, candidates=None,
        init: CtnorModel | None = None, callback=None) -> FitReport:
    """Maximum-likelihood fit of weights and delay parameters by EM.

    ``callback(iteration, model, responsibilities)`` is called after every
    M-step with the new model and the responsibilities it was computed from.
    """
    return fit_restricted(trace, config, (), candidates=candidates, init=init, callback=callback)


def fit_restricted(trace: EventTrace, config: FitConfig | None = None, zero_channels=(),
                   candidates=None, init: CtnorModel | None = None,
                   max_iters: int | None = None, callback=None) -> FitReport:
    """EM with the weights of ``zero_channels`` pinned at zero.

    ``init`` warm-starts from an existing model instead of the default
    initialization; ``max_iters`` overrides the config's iteration cap.
    """
    config = FitConfig() if config is None else config
    unknown = set(zero_channels) - set(trace.channel_ids)
    if unknown:
        raise KeyError(f"unknown channels {sorted(unknown)}")
    if candidates is None:
        candidates = build_candidates(trace, config.resolve_horizon(trace))
    if init is None:
        init = initial_model(trace, config, candidates)
    return _em(trace, config, candidates, init, zero_channels,
               config.max_iters if max_iters is None else max_iters, callback)


def fit_config_from_dict(d: dict) -> FitConfig:
    """Build a FitConfig from the ``fit`` and ``delay_families`` parts of a run config."""
    from .trace_model import DEFAULT_GROUP

    fams = {g: DelayFamily.from_dict(f) for g, f in (d.get("delay_families") or {}).items()}
    kw = {k: d[k] for k in ("max_iters", "rel_tol", "init_strategy", "seed", "horizon", "std_floor")
          if d.get(k) is not None}
    default = fams.pop(DEFAULT_GROUP, DelayFamily())
    return FitConfig(default_family=default, delay_families=fams, **kw)
