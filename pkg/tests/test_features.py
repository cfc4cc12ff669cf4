import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from beamsense.channel import PowerTrace
from beamsense.features import (FEATURE_NAMES, ConstantColumnError, FeatureVector, WindowSpec,
                                ensemble_stats, ewma, extract_features, fall_time_summary,
                                hann, lag1_autocorr, lsf_slope, pca2, read_feature_csv,
                                stft_sum, survival_quantile, time_to_fall, write_feature_csv)
from oracles import ewma_loop, hann_loop, lag1_loop, slope_sums, stft_sum_naive


def pt(x, dt=1.0):
    return PowerTrace(np.asarray(x, dtype=float), dt)


def random_trace(seed, n=301):
    rng = np.random.default_rng(seed)
    return pt(-14.8 + np.cumsum(rng.normal(0, 0.3, n)))


# ewma

def test_ewma_hand_example():
    assert_allclose(ewma(pt([0, 1]), 0.5).samples, [0, 0.5])


def test_ewma_constant_and_identity():
    assert_allclose(ewma(pt([3.0] * 50), 0.01).samples, 3.0, rtol=1e-14)
    x = random_trace(1).samples
    assert_array_equal(ewma(pt(x), 1.0).samples, x)


@pytest.mark.parametrize("g", [0.0, -0.1, 1.5])
def test_ewma_rejects_gamma(g):
    with pytest.raises(ValueError):
        ewma(pt([1, 2]), g)


@pytest.mark.parametrize("gamma", [0.001, 0.2, 0.9])
def test_ewma_matches_loop(gamma):
    x = random_trace(2).samples
    assert_allclose(ewma(pt(x), gamma).samples, ewma_loop(x, gamma), rtol=1e-12)


# slope

def test_slope_of_line():
    t = np.arange(0, 301.0)
    assert lsf_slope(pt(-0.002 * t), WindowSpec(0, 100)) == pytest.approx(-0.002, rel=1e-12)
    assert lsf_slope(pt(np.full(301, -5.0)), WindowSpec(0, 100)) == 0.0


def test_slope_uses_window_samples_only():
    x = random_trace(3).samples
    t = np.arange(x.size, dtype=float)
    m = (t >= 50) & (t <= 150)
    assert lsf_slope(pt(x), WindowSpec(50, 150)) == pytest.approx(slope_sums(t[m], x[m]), rel=1e-9)


def test_slope_rejects_short_window():
    with pytest.raises(ValueError):
        lsf_slope(pt([1.0, 2.0, 3.0]), WindowSpec(1.5, 1.8))


def test_window_validation():
    with pytest.raises(ValueError):
        WindowSpec(10, 10)
    with pytest.raises(ValueError):
        WindowSpec(-1, 10)
    assert WindowSpec(50, 150).label() == "50-150ms"


# stft

def test_hann_matches_loop():
    assert_allclose(hann(33), hann_loop(33), atol=1e-15)


def test_stft_zero_signal():
    assert stft_sum(pt(np.zeros(200)), WindowSpec(0, 199)) == 0.0


def test_stft_constant_single_frame_rect():
    c, W = -3.5, 32
    tr = pt(np.full(W + 1, c))
    assert stft_sum(tr, WindowSpec(0, W), W, 1, taper="rect") == pytest.approx(abs(c) * (W + 1),
                                                                              rel=1e-12)


@pytest.mark.parametrize("taper", ["hann", "rect"])
def test_stft_matches_naive_dft(taper):
    x = random_trace(4, 120).samples
    w = hann_loop(9) if taper == "hann" else [1.0] * 9
    got = stft_sum(pt(x), WindowSpec(0, 119), 8, 3, taper=taper)
    assert got == pytest.approx(stft_sum_naive(list(x), 8, 3, w), rel=1e-9)


def test_stft_rejects_short_window_and_bad_taper():
    with pytest.raises(ValueError):
        stft_sum(pt(np.zeros(20)), WindowSpec(0, 19), 32, 16)
    with pytest.raises(ValueError):
        stft_sum(pt(np.zeros(40)), WindowSpec(0, 39), 8, 0)
    with pytest.raises(ValueError):
        stft_sum(pt(np.zeros(40)), WindowSpec(0, 39), 8, 4, taper="kaiser")


# lag1 and feature vectors

def test_lag1_matches_loop():
    x = random_trace(5).samples
    assert lag1_autocorr(x) == pytest.approx(lag1_loop(list(x)), rel=1e-9)


def test_lag1_alternating():
    n = 200
    x = np.tile([1.0, -1.0], n // 2)
    assert abs(lag1_autocorr(x) - (-1.0)) <= 1.0 / n + 1e-12


def test_constant_trace_features():
    tr = pt(np.full(301, -14.8))
    with pytest.warns(RuntimeWarning):
        fv = extract_features(tr, WindowSpec(0, 300))
    assert fv.slope == pytest.approx(0, abs=1e-15)
    assert fv.variance == 0 and fv.lag1 == 0
    assert not fv.lag1_defined
    assert fv.v100 == -14.8


def test_v100_is_nearest_raw_sample():
    x = random_trace(6).samples
    fv = extract_features(pt(x), WindowSpec(0, 300))
    assert fv.v100 == x[100]
    assert fv.mean == pytest.approx(x.mean())
    assert fv.variance == pytest.approx(x.var())
    assert list(FEATURE_NAMES) == ["slope", "mean", "variance", "v100", "stft_sum", "lag1"]


def test_extract_rejects_window_missing_100ms():
    with pytest.raises(ValueError):
        extract_features(random_trace(7), WindowSpec(150, 300))


def test_feature_vector_validation():
    with pytest.raises(ValueError):
        FeatureVector(0, 0, -1, 0, 0, 0)
    with pytest.raises(ValueError):
        FeatureVector(0, 0, 0, 0, 0, 1.5)
    with pytest.raises(ValueError):
        FeatureVector(np.nan, 0, 0, 0, 0, 0)


def test_feature_csv_roundtrip(tmp_path):
    X = np.random.default_rng(0).normal(size=(4, 6))
    write_feature_csv(tmp_path / "f.csv", ["a", "b", "c", "d"], X)
    apps, Y = read_feature_csv(tmp_path / "f.csv")
    assert apps == ["a", "b", "c", "d"]
    assert_allclose(Y, X, rtol=1e-9)


# ensemble

def test_ensemble_single_and_pair():
    a = random_trace(8)
    m, s = ensemble_stats([a], [0, 10, 300])
    assert_allclose(m, a.samples[[0, 10, 300]])
    assert_array_equal(s, 0)
    m, s = ensemble_stats([pt([2.0] * 5), pt([-2.0] * 5)], [0, 4])
    assert_allclose(m, 0)
    assert_allclose(s, 2.0)


def test_ensemble_rejects_mixed_dt_and_range():
    with pytest.raises(ValueError):
        ensemble_stats([pt([1, 2]), pt([1, 2], dt=2.0)], [0])
    with pytest.raises(ValueError):
        ensemble_stats([pt([1, 2])], [5])


# fall times

def test_time_to_fall_constant_and_step():
    assert time_to_fall(pt(np.zeros(100)), 3) is None
    step = np.where(np.arange(100) < 40, 0.0, -5.0)
    assert time_to_fall(pt(step), 3, gamma=1.0) == 40.0


def test_time_to_fall_rejects_threshold():
    with pytest.raises(ValueError):
        time_to_fall(pt([0, 1]), 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 10), st.floats(0.5, 10))
def test_time_to_fall_monotone_in_threshold(seed, a, b):
    lo, hi = sorted((a, b))
    tr = random_trace(seed, 400)
    t_lo, t_hi = time_to_fall(tr, lo), time_to_fall(tr, hi)
    if t_hi is not None:
        assert t_lo is not None and t_lo <= t_hi


def test_survival_quantile_examples():
    assert survival_quantile([10, 20, 30, 40], 0.75) == 10
    assert survival_quantile([100, 200, 300, 400], 0.95) == 100
    assert survival_quantile([np.nan, np.nan], 0.95) is None
    # non-crossers survive forever
    assert survival_quantile([10, 20, np.nan, np.nan], 0.5) == 20


@settings(max_examples=100, deadline=None)
@given(st.lists(st.one_of(st.floats(0, 1e4), st.just(np.nan)), min_size=1, max_size=30),
       st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_survival_quantile_monotone(times, x1, x2):
    lo, hi = sorted((x1, x2))
    a, b = survival_quantile(times, lo), survival_quantile(times, hi)
    if a is not None:
        assert b <= a


def test_summary_identical_traces_and_na():
    step = np.where(np.arange(200) < 40, 0.0, -5.0)
    s = fall_time_summary([pt(step)] * 3, [3.0], labels=["a"] * 3)
    r = s.row("a", 3)
    assert r.min == r.mean == r.max
    s = fall_time_summary([pt(step), pt(np.zeros(200))], [3.0, 10.0], labels=["b", "b"])
    r = s.row("b", 3)
    assert r.crossing_fraction == 0.5 and r.mean is None and r.max is None and r.min is not None
    assert s.row("b", 10).crossing_fraction == 0
    doc = json.loads(s.to_json())
    assert [d["threshold_db"] for d in doc] == [3.0, 10.0]
    with pytest.raises(KeyError):
        s.row("c", 3)


def test_summary_csv_na(tmp_path):
    s = fall_time_summary([pt(np.zeros(50))], [3.0], labels=["video"])
    s.to_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "threshold_db,label,stat,value_ms"
    assert "3,video,mean,N/A" in lines


# pca

def test_pca_line_is_rank_one():
    x = np.arange(10.0)
    res = pca2(np.column_stack([x, 2 * x]))
    assert res.explained_ratio[0] == pytest.approx(1.0)
    assert res.explained_variance[1] == pytest.approx(0.0, abs=1e-12)


def test_pca_known_covariance():
    rng = np.random.default_rng(0)
    X = rng.multivariate_normal([0, 0], [[2, 1], [1, 2]], size=20000)
    res = pca2(X)
    # standardising leaves correlation 0.5: eigenvalues 1.5 and 0.5, ratio 3:1 as for the raw covariance
    assert res.explained_variance[0] / res.explained_variance[1] == pytest.approx(3.0, rel=0.05)
    assert_allclose(np.abs(res.components[0]), [2 ** -0.5] * 2, atol=1e-3)


def test_pca_isotropic():
    X = np.random.default_rng(1).normal(size=(20000, 2))
    res = pca2(X)
    assert res.explained_variance[0] == pytest.approx(res.explained_variance[1], rel=0.05)


def test_pca_rejects_constant_column():
    X = np.column_stack([np.arange(5.0), np.ones(5)])
    with pytest.raises(ConstantColumnError):
        pca2(X)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 30), st.integers(2, 6))
def test_pca_orthonormal_and_sorted(seed, n, d):
    X = np.random.default_rng(seed).normal(size=(n, d))
    res = pca2(X)
    assert_allclose(res.components @ res.components.T, np.eye(2), atol=1e-9)
    assert np.all(res.explained_variance >= 0)
    assert res.explained_variance[0] >= res.explained_variance[1]
    assert res.explained_variance.sum() <= d + 1e-9
    for c in res.components:
        assert c[np.flatnonzero(np.abs(c) > 1e-12)[0]] > 0
