import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from hmpp.core import Dataset, EventSequence
from hmpp.evaluation import (CSV_COLUMNS, calibration_report, calibration_svg, concordance,
                             concordance_lowest_quartile, emit_calibration_artifacts, ks_uniform_statistic,
                             mean_predicted_rates, permutation_importance, read_calibration_csv, rescale_intervals)
from hmpp.models import ModelParams, OracleModel
from hmpp.simulator import SimConfig, simulate_dataset
from hmpp.trainer import TrainConfig, train


def counts_dataset(counts, horizon=10.0, rates=None):
    seqs = []
    for i, c in enumerate(counts):
        times = np.linspace(0, horizon, c + 1)[1:] if c else []
        cov = {"rate": rates[i]} if rates is not None else {}
        seqs.append(EventSequence(f"s{i}", horizon, times, cov))
    return Dataset(tuple(seqs))


@pytest.fixture(scope="module")
def singly_2000():
    return simulate_dataset(SimConfig(samples=2000, seed=13))


# calibration

def test_calibration_arithmetic_example():
    d = counts_dataset([10, 20, 30, 40])
    rep = calibration_report([1, 2, 3, 4], d, Q=2)
    assert [g.empirical_rate for g in rep.groups] == [1.5, 3.5]
    assert [g.n for g in rep.groups] == [2, 2]
    assert rep.groups[0].pred_geomean == pytest.approx(math.sqrt(2))
    assert (rep.groups[1].pred_min, rep.groups[1].pred_max) == (3, 4)


def test_calibration_ties_stable_order():
    d = counts_dataset([0, 1, 2, 3])
    rep = calibration_report([5.0] * 4, d, Q=2)
    g1, g2 = rep.groups
    assert (g1.pred_geomean, g1.pred_min, g1.pred_max) == (g2.pred_geomean, g2.pred_min, g2.pred_max)
    assert (g1.events, g2.events) == (1, 5)


def test_calibration_errors():
    d = counts_dataset([1, 2, 3])
    with pytest.raises(ValueError):
        calibration_report([1, 2, 3], d, Q=4)
    with pytest.raises(ValueError):
        calibration_report([1, 2], d, Q=2)


@settings(max_examples=50, deadline=None)
@given(counts=st.lists(st.integers(0, 30), min_size=5, max_size=60), q=st.integers(2, 5), seed=st.integers(0, 99))
def test_calibration_partition_property(counts, q, seed):
    d = counts_dataset(counts)
    preds = np.random.default_rng(seed).lognormal(0, 1, len(counts))
    rep = calibration_report(preds, d, Q=q)
    sizes = [g.n for g in rep.groups]
    assert sum(sizes) == len(d) and max(sizes) - min(sizes) <= 1
    assert sum(g.events for g in rep.groups) == d.total_events
    assert sum(g.exposure for g in rep.groups) == pytest.approx(d.total_exposure)
    geo = [g.pred_geomean for g in rep.groups]
    assert geo == sorted(geo)


def test_perfect_model_deciles_within_20_percent(singly_2000):
    preds = mean_predicted_rates(OracleModel(), singly_2000)
    rep = calibration_report(preds, singly_2000, Q=10)
    for g in rep.groups:
        assert g.pred_geomean == pytest.approx(g.empirical_rate, rel=0.20)


# concordance

def test_concordance_perfect_example():
    d = counts_dataset([0, 5, 9, 9, 9, 9, 9, 9], horizon=1.0)
    res = concordance_lowest_quartile([1, 2, 10, 11, 12, 13, 14, 15], d, bootstrap_B=200, seed=0)
    assert res.n == 2 and res.c == 1.0 and res.n_pairs == 1
    # every usable resample of a perfectly ordered pair is concordant
    assert (res.ci_lo, res.ci_hi) == (1.0, 1.0)


def test_concordance_all_ties():
    d = counts_dataset([3] * 12)
    res = concordance_lowest_quartile(np.arange(1, 13), d, bootstrap_B=100, seed=1)
    assert res.c == 0.5 and res.ci_lo <= 0.5 <= res.ci_hi


def test_concordance_quartile_too_small():
    with pytest.raises(ValueError):
        concordance_lowest_quartile([1, 2, 3, 4], counts_dataset([1, 2, 3, 4]), 10)


def test_concordance_direct_pairs():
    c, n = concordance([1, 2, 3], [0, 2, 1])
    assert n == 3 and c == pytest.approx(2 / 3)
    assert concordance([1, 1], [0, 1]) == (0.5, 1)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_concordance_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    p, y = rng.lognormal(0, 1, 30), rng.poisson(3, 30)
    c = concordance(p, y)[0]
    assert concordance(np.log(p), y)[0] == c
    assert concordance(p ** 3 + 7, y)[0] == c


def test_concordance_deterministic_and_thread_independent(singly_2000):
    d = singly_2000.subset(range(200))
    preds = mean_predicted_rates(OracleModel(), d)
    a = concordance_lowest_quartile(preds, d, 300, seed=5)
    assert a == concordance_lowest_quartile(preds, d, 300, seed=5, threads=4)
    assert a.ci_lo <= a.c <= a.ci_hi
    t = concordance_lowest_quartile(preds, d, 50, seed=5, by="true_rate")
    assert t.c == a.c  # oracle predictions order the same way as the truth


def test_concordance_bootstrap_tightens_with_separation():
    widths = []
    for sep in (1, 5, 50):
        counts = [k * sep for k in range(40)]
        d = counts_dataset(counts, horizon=1.0)
        rng = np.random.default_rng(0)
        preds = np.arange(40) + rng.normal(0, 3, 40)
        res = concordance_lowest_quartile(np.concatenate([preds[:10], preds[10:] + 1000]), d, 400, seed=2)
        widths.append(res.ci_hi - res.ci_lo)
    assert widths[0] >= widths[-1]


# time rescaling

def test_rescale_constant_example():
    gaps = rescale_intervals(OracleModel(2.0), Dataset((EventSequence("a", 10.0, [0.5, 1.0], {"rate": 1.0}),)))
    np.testing.assert_allclose(gaps, [1.0, 1.0], rtol=1e-15)
    assert rescale_intervals(OracleModel(), counts_dataset([0, 0], rates=[1.0, 1.0])).size == 0


def test_rescale_concatenates_censored_tails():
    d = Dataset((EventSequence("a", 2.0, [0.5], {"rate": 1.0}), EventSequence("b", 2.0, [], {"rate": 1.0}),
                 EventSequence("c", 2.0, [1.0, 1.5], {"rate": 1.0})))
    # tail of a is 1.5, all of b is 2.0, then 1.0 into c
    np.testing.assert_allclose(rescale_intervals(OracleModel(), d), [0.5, 4.5, 0.5])
    np.testing.assert_allclose(rescale_intervals(OracleModel(), d, censored="drop"), [0.5, 1.0, 0.5])
    with pytest.raises(ValueError):
        rescale_intervals(OracleModel(), d, censored="keep")


def test_rescaled_gaps_mean_one():
    d = simulate_dataset(SimConfig(samples=1000, seed=4, log10_rate_range=(-1, 1)))
    for mode in ("concatenate", "drop"):
        gaps = rescale_intervals(OracleModel(), d, censored=mode)
        assert gaps.size >= 10_000
        assert gaps.mean() == pytest.approx(1.0, abs=0.05)


def test_ks_quantile_construction():
    for n in (5, 17, 200):
        z = (np.arange(1, n + 1) - 0.5) / n
        gaps = -np.log1p(-z)
        res = ks_uniform_statistic(gaps)
        assert res.D == pytest.approx(0.5 / n, abs=1e-12)
        assert res.D == pytest.approx(stats.kstest(z, "uniform").statistic, abs=1e-12)
        assert res.threshold_95 == pytest.approx(1.36 / math.sqrt(n)) and res.passed


def test_ks_matches_scipy_on_random_gaps():
    g = np.random.default_rng(0).exponential(1.3, 500)
    assert ks_uniform_statistic(g).D == pytest.approx(stats.kstest(-np.expm1(-g), "uniform").statistic, abs=1e-12)


def test_ks_zero_gaps_fail():
    res = ks_uniform_statistic(np.zeros(50))
    assert res.D == pytest.approx(1.0) and not res.passed
    with pytest.raises(ValueError):
        ks_uniform_statistic([1, 2, 3, 4])


# permutation importance

def test_importance_ignored_feature_is_zero(singly_2000):
    theta = ModelParams("loglinear", [0.0, math.log(10)])
    r = permutation_importance(theta, singly_2000.subset(range(200)), "cell_position", repeats=5, seed=0)
    assert r["mean"] == 0 and r["sd"] == 0
    with pytest.raises(ValueError):
        permutation_importance(theta, singly_2000, "age")


def test_importance_log_rate_dominates(singly_2000):
    tc = TrainConfig(selection="last", learning_rate=1e-2, epochs=10)
    theta, _ = train(singly_2000, tc, "mlp")
    d = singly_2000.subset(range(500))
    imp = {f: permutation_importance(theta, d, f, repeats=5, seed=1)["mean"]
           for f in ("log10_rate", "cell_position", "history_count")}
    assert imp["log10_rate"] > 0
    assert imp["log10_rate"] > 10 * max(abs(imp["cell_position"]), 1e-12)


def test_importance_deterministic(singly_2000):
    theta = ModelParams("loglinear", [0.1, 2.0])
    d = singly_2000.subset(range(100))
    a = permutation_importance(theta, d, "log10_rate", repeats=1, seed=9)
    assert a == permutation_importance(theta, d, "log10_rate", repeats=1, seed=9)
    assert a["sd"] == 0.0


# artifacts

def test_csv_and_svg(tmp_path, singly_2000):
    rep = calibration_report(mean_predicted_rates(OracleModel(), singly_2000), singly_2000, 10)
    files = emit_calibration_artifacts(rep, str(tmp_path / "out") + "/")
    csv_text = (tmp_path / "out" / "calibration.csv").read_text()
    lines = csv_text.splitlines()
    assert len(lines) == 11 and lines[0] == ",".join(CSV_COLUMNS)
    assert read_calibration_csv(files[0]) == rep
    svg = (tmp_path / "out" / "calibration.svg").read_text()
    assert svg.count('class="group"') == 10 and svg.count('class="identity"') == 1
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")


def test_svg_marks_zero_event_groups():
    d = counts_dataset([0, 0, 5, 9])
    svg = calibration_svg(calibration_report([0.1, 0.2, 3, 4], d, Q=2))
    assert svg.count('class="group"') == 2


def test_emit_without_svg(tmp_path):
    rep = calibration_report([1, 2, 3, 4], counts_dataset([1, 2, 3, 4]), Q=2)
    assert emit_calibration_artifacts(rep, tmp_path / "r_", svg=False) == [str(tmp_path / "r_") + "calibration.csv"]


def test_emit_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    rep = calibration_report([1, 2, 3, 4], counts_dataset([1, 2, 3, 4]), Q=2)
    with pytest.raises(OSError):
        emit_calibration_artifacts(rep, str(blocker) + "/sub/")
