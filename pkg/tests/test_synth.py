import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from ctnor import (
    BinTooCoarse,
    CtnorModel,
    DelayFamily,
    EventTrace,
    log_likelihood,
    sample_trace,
    scenario_51,
    scenario_changepoint,
)
from ctnor.synth import (
    _covered_length,
    baseline_binomial,
    baseline_unique_vicinity,
    nor_binned_log_likelihood,
    unique_vicinity_counts,
)
from ctnor.trace_model import LEAK

EXP10 = {"default": DelayFamily.exponential(0.1)}


def nor_micro():
    tr = EventTrace({"a": [0.7, 3.1, 6.4], "b": [1.9, 4.6, 8.2]}, [1.2, 2.5, 3.9, 5.3], (0.0, 20.0))
    m = CtnorModel({"a": 0.6, "b": 0.3}, 1.5, {"default": DelayFamily.exponential(1.5)})
    return tr, m


# -- sampling ---------------------------------------------------------------------

def test_all_zero_weights_give_no_outputs():
    m = CtnorModel({"a": 0.0}, 0.0, EXP10)
    tr, truth = sample_trace(m, {"a": np.linspace(0, 90, 50)}, (0, 100), seed=1)
    assert tr.n == 0 and truth.cause_channel == []


def test_expected_output_count():
    inputs = {"a": np.linspace(0, 500, 40), "b": np.linspace(10, 400, 25)}
    m = CtnorModel({"a": 0.2, "b": 0.5}, 3.0, {"default": DelayFamily.exponential(2.0)})
    lam = 40 * 0.2 + 25 * 0.5 + 3.0
    counts = np.array([sample_trace(m, inputs, (0, 1000), seed=s)[0].n for s in range(1000)])
    se = math.sqrt(lam / 1000)
    assert abs(counts.mean() - lam) < 3 * se


def test_caused_counts_per_channel():
    inputs = {"a": np.linspace(0, 500, 40), "b": np.linspace(10, 400, 25)}
    m = CtnorModel({"a": 0.2, "b": 0.5}, 3.0, {"default": DelayFamily.exponential(2.0)})
    tot = {"a": 0, "b": 0}
    for s in range(300):
        tr, truth = sample_trace(m, inputs, (0, 1000), seed=s)
        assert len(truth.cause_channel) == tr.n == truth.cause_index.size
        for ch, c in truth.caused_counts().items():
            tot[ch] += c
    for ch, n_j, w in [("a", 40, 0.2), ("b", 25, 0.5)]:
        mean = n_j * w
        assert abs(tot[ch] / 300 - mean) < 3 * math.sqrt(mean / 300)


def test_delays_follow_the_family():
    rng = np.random.default_rng(0)
    inputs = {"a": np.sort(rng.uniform(0, 1e6, 10_000))}
    m = CtnorModel({"a": 1.0}, 0.0, EXP10)
    tr, truth = sample_trace(m, inputs, (0, 2e6), seed=3)
    assert tr.n > 9000
    causes = inputs["a"][truth.cause_index]
    delays = tr.output_events - causes
    assert np.all(delays >= 0)
    assert stats.kstest(delays, "expon", args=(0, 10.0)).pvalue > 0.01


def test_truth_points_at_real_causes():
    inputs = {"a": np.linspace(0, 50, 20)}
    m = CtnorModel({"a": 0.5}, 2.0, EXP10)
    tr, truth = sample_trace(m, inputs, (0, 100), seed=4)
    for o, ch, k in zip(tr.output_events, truth.cause_channel, truth.cause_index):
        if ch == LEAK:
            assert k == -1
        else:
            assert inputs[ch][k] <= o


def test_censoring_at_window_end():
    m = CtnorModel({"a": 5.0}, 0.0, EXP10)
    tr, _ = sample_trace(m, {"a": [99.0]}, (0, 100), seed=2)
    assert np.all(tr.output_events <= 100)


def test_sampling_is_deterministic():
    inputs = {"a": np.linspace(0, 50, 20)}
    m = CtnorModel({"a": 0.5}, 2.0, EXP10)
    a, _ = sample_trace(m, inputs, (0, 100), seed=9)
    b, _ = sample_trace(m, inputs, (0, 100), seed=9)
    np.testing.assert_array_equal(a.output_events, b.output_events)


# -- scenarios ----------------------------------------------------------------------

def test_scenario_51_layout():
    trace, truth = scenario_51(hours=2, seed=0)
    assert trace.window == (0.0, 7200.0)
    assert trace.channel_ids == [f"c{j}" for j in range(10)]
    assert all(trace.count(ch) == 1000 for ch in trace.channel_ids)
    assert [truth.causal[f"c{j}"] for j in range(10)] == [True] * 5 + [False] * 5
    assert truth.weights["c0"] == 0.01 and truth.weights["c9"] == 0.0
    assert truth.leak == 200


def test_scenario_51_expected_counts():
    caused, noise = [], []
    for seed in range(200):
        _, truth = scenario_51(hours=2, seed=seed)
        c = truth.caused_counts()
        caused.append(sum(c.values()))
        noise.append(sum(ch == LEAK for ch in truth.cause_channel))
    # caused outputs: 5 causal channels x 1000 inputs x 0.01
    assert abs(np.mean(caused) - 50) < 3 * math.sqrt(50 / 200)
    assert abs(np.mean(noise) - 200) < 3 * math.sqrt(200 / 200)


def test_scenario_51_deterministic():
    a, ta = scenario_51(hours=1, seed=5)
    b, tb = scenario_51(hours=1, seed=5)
    for ch in a.channel_ids:
        assert a.input_channels[ch].tobytes() == b.input_channels[ch].tobytes()
    assert a.output_events.tobytes() == b.output_events.tobytes()
    assert ta.cause_channel == tb.cause_channel
    c, _ = scenario_51(hours=1, seed=6)
    assert c.output_events.tobytes() != a.output_events.tobytes()


def test_scenario_rate_convention():
    _, mean_truth = scenario_51(hours=1, seed=0)
    _, rate_truth = scenario_51(hours=1, seed=0, rate_convention="rate")
    assert mean_truth.delays["default"].exp_rate == 10.0
    assert rate_truth.delays["default"].exp_rate == 0.1


def test_scenario_51_rejects_bad_parameters():
    with pytest.raises(ValueError):
        scenario_51(hours=0)
    with pytest.raises(ValueError):
        scenario_51(causal_weight=-0.01)


def test_scenario_changepoint():
    trace, truth, spec = scenario_changepoint(0.0, 0.2, hours=2, seed=1)
    assert spec.channel == "c0" and spec.interval == (0.0, 3600.0)
    assert truth.weights["c0"] == (0.0, 0.2)
    assert truth.params["interval"] == [0.0, 3600.0]
    causes = trace.input_channels["c0"][[k for ch, k in zip(truth.cause_channel, truth.cause_index)
                                         if ch == "c0"]]
    assert np.all(causes >= 3600.0)
    assert causes.size > 50
    with pytest.raises(ValueError):
        scenario_changepoint(-0.01, 0.01)


# -- baselines ------------------------------------------------------------------------

@given(st.lists(st.floats(0, 100, allow_nan=False), max_size=20), st.floats(0.1, 30))
def test_covered_length_matches_grid(starts, width):
    s = np.sort(np.array(starts, dtype=float))
    grid = np.linspace(0, 100, 200_001)[:-1] + 100 / 400_000
    covered = np.zeros(grid.size, dtype=bool)
    for a in s:
        covered |= (grid >= a) & (grid < a + width)
    assert _covered_length(s, width, 0.0, 100.0) == pytest.approx(covered.mean() * 100, abs=2e-3)


def test_binomial_baseline_far_outputs():
    tr = EventTrace({"a": [10.0, 20.0, 30.0]}, np.linspace(500, 900, 60), (0, 1000))
    assert baseline_binomial(tr, 1.0, "a") == 1.0


def test_binomial_baseline_tail_oracle():
    # inputs every 10 s, window 1 s: 10 % coverage; all 60 outputs inside
    inputs = np.arange(0, 1000, 10.0)
    outs = np.sort(inputs[::2][:60] + 0.5)
    tr = EventTrace({"a": inputs}, outs, (0, 1000))
    p = baseline_binomial(tr, 1.0, "a")
    assert p == pytest.approx(0.1 ** 60, rel=1e-9)
    assert p < 1e-3


def test_binomial_baseline_partial_hits():
    inputs = np.arange(0, 1000, 10.0)
    outs = np.sort(np.concatenate([inputs[:7] + 0.5, np.arange(5, 1000, 25.0)[:33] + 0.3]))
    tr = EventTrace({"a": inputs}, outs, (0, 1000))
    hits = 7 + sum(1 for t in np.arange(5, 1000, 25.0)[:33] + 0.3 if (t % 10) <= 1.0)
    n, q = tr.n, 0.1
    ref = sum(math.comb(n, k) * q**k * (1 - q) ** (n - k) for k in range(hits, n + 1))
    assert baseline_binomial(tr, 1.0, "a") == pytest.approx(ref, rel=1e-9)


def test_unique_vicinity_examples():
    tr = EventTrace({"a": [9.5], "b": [9.8]}, [10.0], (0, 20))
    assert not baseline_unique_vicinity(tr, 1.0, "a")
    assert not baseline_unique_vicinity(tr, 1.0, "b")
    tr = EventTrace({"a": [9.5], "b": [3.0]}, [10.0], (0, 20))
    assert baseline_unique_vicinity(tr, 1.0, "a")
    assert not baseline_unique_vicinity(tr, 1.0, "b")
    assert unique_vicinity_counts(tr, 1.0) == {"a": 1, "b": 0}


# -- binned noisy-or ------------------------------------------------------------------

def test_nor_without_outputs_is_minus_lambda():
    tr = EventTrace({"a": [0.7, 3.1], "b": [4.6]}, [], (0.0, 20.0))
    m = CtnorModel({"a": 0.6, "b": 0.3}, 1.5, {"default": DelayFamily.exponential(1.5)})
    lam = m.total_mass(tr)
    errs = [abs(nor_binned_log_likelihood(m, tr, d) + lam) for d in (0.01, 0.005, 0.0025)]
    assert errs[0] < 0.05
    assert errs[2] < errs[1] < errs[0]


def test_nor_converges_to_ctnor():
    tr, m = nor_micro()
    ll = log_likelihood(m, tr, horizon=np.inf)
    gaps = []
    for i in range(6):
        d = 0.01 / 2**i
        gaps.append(abs(nor_binned_log_likelihood(m, tr, d) - (ll + tr.n * math.log(d))))
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    # error shrinks in proportion to delta
    ratios = np.array(gaps[:-1]) / np.array(gaps[1:])
    np.testing.assert_allclose(ratios, 2.0, rtol=0.1)


def test_nor_bin_too_coarse():
    tr, m = nor_micro()
    with pytest.raises(BinTooCoarse):
        nor_binned_log_likelihood(m, tr, 2.0)
    big = CtnorModel({"a": 50.0, "b": 0.3}, 1.5, {"default": DelayFamily.exponential(1.5)})
    with pytest.raises(BinTooCoarse):
        nor_binned_log_likelihood(big, tr, 0.05)
