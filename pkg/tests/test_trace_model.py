import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from ctnor import (
    CtnorModel,
    DelayFamily,
    EventTrace,
    FitConfig,
    NoExplanation,
    delay_density,
    enable_autocorrelation,
    fit,
    log_likelihood,
    sample_trace,
    scenario_51,
)
from ctnor.trace_model import AUTOCORR_CHANNEL, LEAK, build_candidates, candidate_causes

from helpers import micro_model, micro_trace, oracle_density, oracle_log_likelihood, random_family


# -- delay densities ---------------------------------------------------------

def test_uniform_density():
    assert delay_density(DelayFamily.uniform(0, 100), 50) == pytest.approx(0.01)


@pytest.mark.parametrize("fam", [
    DelayFamily.uniform(0, 100),
    DelayFamily.exponential(0.5),
    DelayFamily.uniform_exponential(0.3, (0, 1), rate=0.1),
    DelayFamily.uniform_gaussian(0.2, (0, 2), mean=0.5, std=1.0),
])
def test_negative_delay_has_zero_density(fam):
    assert delay_density(fam, -1.0) == 0.0
    assert fam.logpdf(np.array([-1e-9]))[0] == -np.inf


def test_mixture_density_hand_value():
    fam = DelayFamily.uniform_exponential(0.3, (0, 1), rate=0.1)
    # uniform part is zero at 2 s, leaving 0.7 * 0.1 * exp(-0.2)
    assert delay_density(fam, 2.0) == pytest.approx(0.7 * 0.1 * math.exp(-0.2), rel=1e-14)
    assert delay_density(fam, 2.0) == pytest.approx(0.05731, abs=1e-5)


@pytest.mark.parametrize("seed", range(12))
def test_density_integrates_to_one(seed):
    fam = random_family(np.random.default_rng(seed))
    breaks = [fam.uniform_window[0], fam.uniform_window[1]]
    total = 0.0
    lo = 0.0
    for b in sorted(breaks) + [np.inf]:
        if b > lo:
            val, _ = integrate.quad(lambda t: delay_density(fam, t), lo, b, epsabs=1e-12, limit=200)
            total += val
            lo = b
    assert total == pytest.approx(1.0, abs=1e-6)


def test_truncated_gaussian_is_renormalized():
    fam = DelayFamily.uniform_gaussian(0.0, (0, 1), mean=-1.0, std=1.0)
    val, _ = integrate.quad(lambda t: delay_density(fam, t), 0, np.inf)
    assert val == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("seed", range(8))
def test_density_matches_formula(seed):
    fam = random_family(np.random.default_rng(seed))
    for d in np.linspace(0, 6, 25):
        assert delay_density(fam, d) == pytest.approx(oracle_density(fam, d), rel=1e-12, abs=1e-300)


def test_tail_horizon_bounds_mass():
    for fam in [DelayFamily.exponential(0.1), DelayFamily.uniform_gaussian(0.5, (0, 1), 3.0, 2.0)]:
        h = fam.tail_horizon(1e-6)
        assert fam.sf(h) <= 1e-6 * 1.0001


def test_family_roundtrip_dict():
    fam = DelayFamily.uniform_gaussian(0.25, (0.0, 0.5), mean=1.0 / 3, std=0.1)
    assert DelayFamily.from_dict(fam.to_dict()) == fam


# -- trace and model types -----------------------------------------------------

def test_trace_validation():
    with pytest.raises(ValueError, match="sorted"):
        EventTrace({"a": [2.0, 1.0]}, [], (0, 5))
    with pytest.raises(ValueError, match="outside"):
        EventTrace({"a": [1.0]}, [6.0], (0, 5))
    with pytest.raises(ValueError):
        CtnorModel({"a": -0.1}, 1.0, {"default": DelayFamily.exponential(1)})


def test_window_inferred_from_data():
    tr = EventTrace({"a": [1.5, 4.0]}, [2.0, 7.5])
    assert tr.window == (1.5, 7.5)
    assert tr.T == 6.0


def test_trace_arrays_are_read_only():
    tr = EventTrace({"a": [1.0]}, [2.0], (0, 5))
    with pytest.raises(ValueError):
        tr.output_events[0] = 3.0


def test_total_mass_counts_leak_once():
    tr = EventTrace({"a": [1, 2, 3], "b": [4.0]}, [], (0, 5))
    m = CtnorModel({"a": 0.5, "b": 2.0}, 0.25, {"default": DelayFamily.exponential(1)})
    assert m.total_mass(tr) == 3 * 0.5 + 2.0 + 0.25


# -- log-likelihood ----------------------------------------------------------------

def test_loglik_no_outputs_is_minus_lambda():
    tr = EventTrace({"a": [1.0, 2.0]}, [], (0, 10))
    m = CtnorModel({"a": 0.75}, 0.5, {"default": DelayFamily.exponential(1)})
    assert log_likelihood(m, tr) == -2.0


def test_loglik_single_pair_hand_value():
    tr = EventTrace({"a": [0.0]}, [1.0], (0, 1000))
    m = CtnorModel({"a": 1.0}, 0.0, {"default": DelayFamily.exponential(1.0)})
    assert log_likelihood(m, tr) == pytest.approx(-2.0, rel=1e-14)


def test_no_explanation_without_leak():
    tr = EventTrace({"a": [5.0]}, [1.0], (0, 10))
    m = CtnorModel({"a": 1.0}, 0.0, {"default": DelayFamily.exponential(1.0)})
    with pytest.raises(NoExplanation, match="leak"):
        log_likelihood(m, tr)


@pytest.mark.parametrize("seed", range(30))
def test_loglik_matches_direct_sum(seed):
    tr = micro_trace(seed)
    m = micro_model(seed, tr)
    ref = oracle_log_likelihood(m, tr)
    assert log_likelihood(m, tr, horizon=np.inf) == pytest.approx(ref, rel=1e-10)


def test_loglik_underflow_guard():
    # a far-away input whose density underflows; the leak keeps the row finite
    tr = EventTrace({"a": [0.0]}, [900.0], (0, 1000))
    m = CtnorModel({"a": 1.0}, 1e-300, {"default": DelayFamily.exponential(1.0)})
    expected = -(1.0 + 1e-300) + math.log(math.exp(-900) + 1e-300 / 1000)
    assert log_likelihood(m, tr, horizon=np.inf) == pytest.approx(expected, rel=1e-12)


def test_horizon_truncation_error_is_small():
    trace, _ = scenario_51(hours=1, seed=3)
    m = CtnorModel({ch: 0.01 for ch in trace.channel_ids}, 100.0,
                   {"default": DelayFamily.exponential(10.0)})
    h = m.horizon(trace)
    trunc = log_likelihood(m, trace, horizon=h)
    full = log_likelihood(m, trace, horizon=trace.T)
    assert abs(trunc - full) < 1e-6


# -- candidates --------------------------------------------------------------

def test_candidate_causes_within_horizon():
    tr = EventTrace({"a": [3.0, 9.5]}, [10.0], (0, 20))
    m = CtnorModel({"a": 1.0}, 1.0, {"default": DelayFamily.exponential(1.0)})
    got = candidate_causes(tr, m, 0, horizon=5.0)
    assert sorted((c, k) for c, k, _ in got) == [(LEAK, 0), ("a", 1)]
    got = candidate_causes(tr, m, 0, horizon=7.0)
    assert sorted((c, k) for c, k, _ in got) == [(LEAK, 0), ("a", 0), ("a", 1)]


def test_candidate_causes_respects_causality():
    tr = EventTrace({"a": [11.0]}, [10.0], (0, 20))
    m = CtnorModel({"a": 1.0}, 1.0, {"default": DelayFamily.exponential(1.0)})
    assert candidate_causes(tr, m, 0, horizon=5.0) == [(LEAK, 0, 10.0)]


def test_simultaneous_input_is_a_candidate():
    tr = EventTrace({"a": [10.0]}, [10.0], (0, 20))
    cs = build_candidates(tr, 1.0).for_output(0)
    assert ("a", 0, 0.0) in cs


def test_autocorrelation_strict_precedence():
    tr = enable_autocorrelation(EventTrace({}, [1.0, 2.0, 3.0], (0, 10)))
    cands = build_candidates(tr, 5.0)
    auto = lambda l: sorted(k for c, k, _ in cands.for_output(l) if c == AUTOCORR_CHANNEL)
    assert auto(0) == []
    assert auto(1) == [0]
    assert auto(2) == [0, 1]


def test_autocorrelation_single_output():
    tr = enable_autocorrelation(EventTrace({"a": [0.5]}, [1.0], (0, 10)))
    got = build_candidates(tr, 5.0).for_output(0)
    assert all(c != AUTOCORR_CHANNEL for c, _, _ in got)


def test_autocorrelation_loglik_matches_direct_sum():
    base = micro_trace(4)
    tr = enable_autocorrelation(base)
    m = micro_model(4, base)
    m = CtnorModel({**m.weights, AUTOCORR_CHANNEL: 0.3}, m.leak,
                   {**m.delays, "__autocorr__": DelayFamily.exponential(2.0)})
    assert log_likelihood(m, tr, horizon=np.inf) == pytest.approx(
        oracle_log_likelihood(m, tr), rel=1e-10)


def test_cascade_fit_recovers_autocorrelation_weight():
    rng = np.random.default_rng(11)
    T = 20000.0
    truth = CtnorModel({AUTOCORR_CHANNEL: 0.5, "a": 0.0}, 400.0,
                       {"default": DelayFamily.exponential(1.0),
                        "__autocorr__": DelayFamily.exponential(1.0)})
    inputs = {"a": np.sort(rng.uniform(0, T, 200))}
    trace, _ = sample_trace(truth, inputs, (0, T), seed=5)
    trace = enable_autocorrelation(trace)
    cfg = FitConfig(max_iters=500, rel_tol=1e-9, horizon=20.0,
                    default_family=DelayFamily.uniform_exponential(0.0))
    rep = fit(trace, cfg)
    assert rep.model.weights[AUTOCORR_CHANNEL] == pytest.approx(0.5, abs=0.1)


# -- invariances --------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), dt=st.floats(-1e4, 1e4, allow_nan=False))
def test_loglik_translation_invariant(seed, dt):
    tr = micro_trace(seed)
    m = micro_model(seed, tr)
    a = log_likelihood(m, tr, horizon=np.inf)
    b = log_likelihood(m, tr.translate(dt), horizon=np.inf)
    assert b == pytest.approx(a, rel=1e-9, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), perm=st.permutations(["ch0", "ch1", "ch2"]))
def test_loglik_relabel_invariant(seed, perm):
    tr = micro_trace(seed)
    m = micro_model(seed, tr)
    mapping = {old: f"x_{new}" for old, new in zip(["ch0", "ch1", "ch2"], perm)}
    m2 = m.with_weights({mapping[k]: v for k, v in m.weights.items()})
    a = log_likelihood(m, tr, horizon=np.inf)
    b = log_likelihood(m2, tr.relabel(mapping), horizon=np.inf)
    assert b == pytest.approx(a, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_zero_weight_channel_removal_exact(seed):
    tr = micro_trace(seed)
    m = micro_model(seed, tr)
    w = dict(m.weights)
    w["ch1"] = 0.0
    m0 = m.with_weights(w)
    reduced = tr.without("ch1")
    m1 = m.with_weights({k: v for k, v in w.items() if k != "ch1"})
    assert log_likelihood(m0, tr, horizon=np.inf) == log_likelihood(m1, reduced, horizon=np.inf)
