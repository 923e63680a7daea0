import math

import numpy as np
import pytest
from scipy import stats

from hmpp.core import serialize_event_stream
from hmpp.simulator import (SimConfig, sample_base_rate, sample_frailty, sequence_rng, simulate_dataset,
                            simulate_sequence)

LN10 = math.log(10)
# E[10^u] and E[10^-u] for u ~ Uniform(-2, 0)
FRAILTY_MEAN = (1 - 10**-2) / (2 * LN10)
FRAILTY_INV_MEAN = (10**2 - 1) / (2 * LN10)


def test_frailty_closed_forms():
    assert FRAILTY_MEAN == pytest.approx(0.21498, abs=1e-5)
    assert FRAILTY_INV_MEAN == pytest.approx(21.498, abs=1e-3)


def test_degenerate_rate_range():
    cfg = SimConfig(log10_rate_range=(0, 0))
    rng = np.random.default_rng(0)
    assert all(sample_base_rate(rng, cfg) == 1.0 for _ in range(50))


@pytest.mark.parametrize("law", ["log_uniform", "log_truncated_exponential"])
def test_base_rate_within_truncation(law):
    cfg = SimConfig(base_rate_law=law)
    rng = np.random.default_rng(1)
    r = np.array([sample_base_rate(rng, cfg) for _ in range(20000)])
    assert r.min() >= 0.01 and r.max() <= 100


def test_log_uniform_mean():
    cfg = SimConfig()
    rng = np.random.default_rng(2)
    v = np.log10([sample_base_rate(rng, cfg) for _ in range(100_000)])
    assert abs(v.mean()) < 0.02


def test_log_truncated_exponential_matches_cdf():
    # density on V proportional to 10^-V over [-2, 2]
    cfg = SimConfig(base_rate_law="log_truncated_exponential")
    rng = np.random.default_rng(3)
    v = np.log10([sample_base_rate(rng, cfg) for _ in range(20000)])
    a, b = 10.0**2, 10.0**-2

    def cdf(x):
        return (a - 10.0 ** -np.asarray(x)) / (a - b)

    assert stats.kstest(v, cdf).pvalue > 0.01


def test_frailty_range_and_moments():
    cfg = SimConfig(mode="doubly")
    rng = np.random.default_rng(4)
    u = np.array([sample_frailty(rng, cfg) for _ in range(100_000)])
    assert u.min() >= -2 and u.max() <= 0
    assert np.mean(10**u) == pytest.approx(FRAILTY_MEAN, abs=0.003)
    assert np.mean(10**-u) == pytest.approx(FRAILTY_INV_MEAN, abs=0.3)


def test_frailty_requires_doubly():
    with pytest.raises(RuntimeError):
        sample_frailty(np.random.default_rng(0), SimConfig(mode="singly"))


def test_simulate_sequence_zero_rate():
    assert simulate_sequence(np.random.default_rng(0), 0.0, 10.0).size == 0
    with pytest.raises(ValueError):
        simulate_sequence(np.random.default_rng(0), -1.0, 10.0)


def test_simulate_sequence_poisson_moments():
    counts = np.array([simulate_sequence(sequence_rng(5, i), 2.0, 10.0).size for i in range(10_000)])
    assert counts.mean() == pytest.approx(20, abs=0.5)
    assert counts.var() == pytest.approx(20, abs=1.5)


def test_simulate_sequence_sorted_in_window():
    t = simulate_sequence(np.random.default_rng(1), 50.0, 10.0)
    assert np.all(np.diff(t) > 0) and t[0] > 0 and t[-1] <= 10


def test_count_distribution_chi_square():
    # counts at rate 1, horizon 10 follow Poisson(10)
    n = 10_000
    counts = np.array([simulate_sequence(sequence_rng(6, i), 1.0, 10.0).size for i in range(n)])
    edges = list(range(3, 19))
    obs = [np.sum(counts <= edges[0])]
    exp = [stats.poisson.cdf(edges[0], 10)]
    for k in edges[1:]:
        obs.append(np.sum(counts == k))
        exp.append(stats.poisson.pmf(k, 10))
    obs.append(np.sum(counts > edges[-1]))
    exp.append(stats.poisson.sf(edges[-1], 10))
    assert stats.chisquare(obs, np.array(exp) * n).pvalue > 0.01


def test_dataset_determinism_and_thread_independence():
    cfg = SimConfig(mode="doubly", samples=3, seed=42)
    a = serialize_event_stream(simulate_dataset(cfg))
    assert a == serialize_event_stream(simulate_dataset(cfg))
    big = SimConfig(samples=64, seed=9)
    assert serialize_event_stream(simulate_dataset(big, threads=4)) == serialize_event_stream(simulate_dataset(big))


def test_dataset_structure():
    d = simulate_dataset(SimConfig(mode="doubly", samples=50, seed=1))
    for s in d:
        assert set(s.covariates) == {"rate"}
        assert -2 <= s.frailty_log10 <= 0
        assert s.true_rate == pytest.approx(s.covariates["rate"] * 10**s.frailty_log10)
    singly = simulate_dataset(SimConfig(samples=5, seed=1))
    assert all(s.frailty_log10 is None for s in singly)


def _pooled_rate(d, lo, hi):
    sel = [s for s in d if lo <= s.covariates["rate"] <= hi]
    return sum(s.T for s in sel) / sum(s.horizon for s in sel)


def test_singly_pooled_rate_near_ten():
    d = simulate_dataset(SimConfig(samples=2000, seed=7))
    assert _pooled_rate(d, 9, 11) == pytest.approx(10, rel=0.10)


def test_doubly_pooled_rate_scaled_by_frailty_mean():
    d = simulate_dataset(SimConfig(mode="doubly", samples=2000, seed=7))
    assert _pooled_rate(d, 9, 11) == pytest.approx(10 * FRAILTY_MEAN, rel=0.15)


def test_noisy_covariate_is_separate():
    d = simulate_dataset(SimConfig(samples=200, seed=3, covariate_noise=0.5))
    ratio = np.log10([s.covariates["rate_noisy"] / s.covariates["rate"] for s in d])
    assert ratio.std() == pytest.approx(0.5, rel=0.15)
    # noise draws come last, so events match the noiseless dataset
    plain = simulate_dataset(SimConfig(samples=200, seed=3))
    assert all(np.array_equal(a.event_times, b.event_times) for a, b in zip(d, plain))


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(mode="triply")
    with pytest.raises(ValueError):
        SimConfig(log10_rate_range=(1, 0))
    with pytest.raises(ValueError):
        SimConfig(samples=0)
