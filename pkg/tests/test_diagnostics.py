import numpy as np
import pytest

from hamst.diagnostics import (
    CorrConfig,
    chain_summary,
    corr_experiment,
    ks_floor,
    lagged_correlation_curve,
    stationarity_detect,
    temporal_decay,
)
from hamst.geometry import LocationSet
from hamst.inference import Chain
from hamst.model import ParamVector, StDataset
from hamst.simulate import uniform_locations


def _field(y, seed=0):
    return StDataset(uniform_locations(y.shape[1], seed), y)


def test_corr_surface_invariants():
    s = corr_experiment("hamiltonian", reps=50, cfg=CorrConfig(n=5, T=3), seed=1)
    c = s.corr
    assert np.allclose(np.diag(c), 1) and np.allclose(c, c.T)
    assert np.all(np.abs(c) <= 1)


def test_corr_two_reps_degenerate():
    s = corr_experiment("se_gp", reps=2, cfg=CorrConfig(n=4, T=1), seed=0)
    # two centred replicates are mirror images, so every entry is +-1
    np.testing.assert_allclose(np.abs(s.off_diagonal()), 1.0, atol=1e-9)


def test_corr_rejects_one_rep():
    with pytest.raises(ValueError):
        corr_experiment("se_gp", reps=1)


def test_white_noise_lag_curve_is_null():
    g = np.random.default_rng(0)
    d = _field(g.standard_normal((40, 12)))
    rows = lagged_correlation_curve(d, [0, 0.3, 0.7, 1.5], [0, 1, 2, 5])
    for lo, hi, k, est, cnt in rows:
        if np.isfinite(est):
            assert abs(est) < 3 / np.sqrt(cnt)


def test_duplicated_field_lag0_is_one():
    g = np.random.default_rng(1)
    col = g.standard_normal((30, 1))
    pts = np.array([[0.2, 0.2], [0.2 + 1e-9, 0.2], [0.8, 0.8]])
    y = np.hstack([col, col, g.standard_normal((30, 1))])
    d = StDataset(LocationSet(pts), y)
    rows = lagged_correlation_curve(d, [0, 1e-6, 2], [0])
    assert rows[0][3] == pytest.approx(1.0, abs=1e-12)


def test_lag_curve_relabelling_symmetric():
    g = np.random.default_rng(2)
    d = _field(g.standard_normal((20, 6)))
    perm = g.permutation(6)
    dp = StDataset(d.locs.subset(perm), d.y[:, perm])
    a = lagged_correlation_curve(d, [0, 0.5, 1.5], [0, 1, 3])
    b = lagged_correlation_curve(dp, [0, 0.5, 1.5], [0, 1, 3])
    np.testing.assert_allclose(np.array(a, dtype=float), np.array(b, dtype=float), atol=1e-12)


def test_lag_curve_all_undefined_is_error():
    d = _field(np.random.default_rng(3).standard_normal((3, 3)))
    with pytest.raises(ValueError, match="undefined"):
        lagged_correlation_curve(d, [0, 2], [0], min_pairs=1000)


def test_temporal_decay_small_run():
    c = temporal_decay(ParamVector(0.5, 0.5, 1, 1, 1, 1, 1, 1), lags=[1, 2, 4], reps=300, n=4)
    assert c.rao_blackwell.shape == (3,) and np.all(c.rao_blackwell >= 0)
    assert c.rao_blackwell[0] > c.rao_blackwell[-1]


def test_identical_series_are_stationary():
    col = np.random.default_rng(4).standard_normal((50, 1))
    r = stationarity_detect(_field(np.tile(col, (1, 20))))
    assert np.all(r.distances == 0) and r.verdict == "stationary"
    assert r.posterior_means[-1] == pytest.approx(21 / 22)
    assert np.all(np.diff(r.posterior_means) > 0)


def test_two_populations_are_nonstationary():
    g = np.random.default_rng(5)
    y = np.hstack([g.normal(0, 1, (40, 10)), g.normal(100, 1, (40, 10))])
    r = stationarity_detect(_field(y))
    assert np.all(r.distances >= 0.5) and r.verdict == "nonstationary"


def test_constant_data_is_flagged():
    r = stationarity_detect(_field(np.ones((5, 4))))
    assert r.verdict == "inconclusive" and r.flags


def test_stationarity_scale_invariant():
    g = np.random.default_rng(6)
    d = _field(g.standard_normal((30, 7)) + np.linspace(0, 1, 7))
    a = stationarity_detect(d)
    b = stationarity_detect(StDataset(d.locs, 37.5 * d.y))
    np.testing.assert_array_equal(a.distances, b.distances)
    np.testing.assert_array_equal(a.indicators, b.indicators)
    assert a.verdict == b.verdict


def test_ks_floor_shrinks_with_sample_size():
    assert ks_floor(100, 1000) < ks_floor(10, 1000)


def test_stationarity_needs_two_regions():
    with pytest.raises(ValueError):
        stationarity_detect(_field(np.zeros((5, 1))))


def _chain(draws, rates=None):
    return Chain(np.asarray(draws, dtype=float), None, rates or {}, {})


def test_chain_summary_constant():
    s = chain_summary(_chain(np.ones((20, 8))))
    assert np.all(s.sd == 0) and np.all(s.mean == 1)


def test_chain_summary_iid_moments():
    x = np.random.default_rng(7).standard_normal((500, 8))
    s = chain_summary(_chain(x, {"alpha_star": 0.3}))
    np.testing.assert_array_equal(s.mean, x.mean(axis=0))
    np.testing.assert_array_equal(s.sd, x.std(axis=0, ddof=1))
    assert s.acceptance[0] == 0.3
    assert "parameter" in s.table()


def test_chain_summary_ar1_mcse_inflated():
    g = np.random.default_rng(8)
    N = 20000
    x = np.empty((N, 8))
    x[0] = g.standard_normal(8)
    for i in range(1, N):
        x[i] = 0.9 * x[i - 1] + g.standard_normal(8)
    s = chain_summary(_chain(x))
    assert np.all(s.mcse > 2 * s.sd / np.sqrt(N))


def test_chain_summary_too_short():
    with pytest.raises(ValueError):
        chain_summary(_chain(np.zeros((9, 8))))
