import numpy as np
import pytest
from scipy.stats import invgamma, multivariate_normal

from hamst.inference import McmcSettings, PriorConfig, run_mcmc
from hamst.inference.priors import (
    ig_logpdf,
    ig_sample,
    log_prior,
    sample_prior,
    to_constrained,
    to_unconstrained,
    unconstrained_of,
)
from hamst.inference.sampler import (
    Workspace,
    draw_from_precision,
    latent_precision,
    log_target_alpha,
    log_target_beta,
    log_target_eta,
    partition_conditional,
    sigma2_conditional,
    update_alpha_star,
    update_beta_star,
    update_latent_0,
)
from hamst.model import ParamVector, StDataset, log_joint

from conftest import random_params, small_dataset


def _const(a):
    a = np.asarray(a)
    return float(np.ptp(a))


def test_transform_round_trip(rng):
    for _ in range(50):
        a, b = rng.uniform(-0.99, 0.99, 2)
        e = rng.uniform(0.01, 10, 3)
        back = to_constrained(to_unconstrained(a, b, *e))
        np.testing.assert_allclose(back, [a, b, *e], rtol=1e-12, atol=1e-14)


def test_ig_logpdf_matches_scipy():
    for shape, rate, x in ((2.0, 1.0, 0.7), (5.0, 3.0, 2.2), (0.5, 0.1, 0.05)):
        assert ig_logpdf(x, shape, rate) == pytest.approx(invgamma(shape, scale=rate).logpdf(x), abs=1e-12)


def test_ig_sampler_moments():
    g = np.random.default_rng(11)
    shape, rate = 6.0, 3.0
    s = np.array([ig_sample(g, shape, rate) for _ in range(200000)])
    mean = rate / (shape - 1)
    var = rate**2 / ((shape - 1) ** 2 * (shape - 2))
    assert s.mean() == pytest.approx(mean, rel=0.01)
    assert s.var() == pytest.approx(var, rel=0.03)


def test_sigma2_conditional_matches_log_joint(rng):
    d, p = small_dataset(3, 3, seed=2)
    priors = PriorConfig()
    ws = Workspace.from_data(d, p, x=d.x)
    shape, rate = sigma2_conditional(ws, priors)
    diffs = []
    for s2 in rng.uniform(0.2, 3.0, 6):
        q = p.with_(sigma2=s2)
        lj = log_joint(d, q) + ig_logpdf(s2, priors.ig_v[0], priors.ig_v[1] / 2)
        diffs.append(lj - ig_logpdf(s2, shape, rate))
    assert _const(diffs) < 1e-8


@pytest.mark.parametrize("name, field", [("theta", "sigma2_theta"), ("p", "sigma2_p")])
def test_init_variance_conditionals(rng, name, field):
    d, p = small_dataset(3, 2, seed=3)
    priors = PriorConfig(ig_theta=(3.0, 2.0), ig_p=(4.0, 1.5))
    ws = Workspace.from_data(d, p, x=d.x)
    from hamst.inference.sampler import _quad

    a, gam = getattr(priors, f"ig_{name}")
    Li, v = (ws.Li_D0, d.y[0]) if name == "theta" else (ws.Li_O0, d.x[0])
    shape, rate = a + d.n / 2, (gam + _quad(Li, v)) / 2
    diffs = []
    for val in rng.uniform(0.2, 3.0, 6):
        q = p.with_(**{field: val})
        diffs.append(log_joint(d, q) + ig_logpdf(val, a, gam / 2) - ig_logpdf(val, shape, rate))
    assert _const(diffs) < 1e-8


@pytest.mark.parametrize("t", [0, 1, 2, 3])
def test_latent_conditional_matches_log_joint(rng, t):
    d, p = small_dataset(3, 3, seed=1)
    ws = Workspace.from_data(d, p, x=d.x)
    P, b = latent_precision(ws, t)
    diffs = []
    for _ in range(6):
        x = d.x.copy()
        x[t] = rng.normal(size=3)
        diffs.append(log_joint(d.with_latent(x), p) - (-0.5 * x[t] @ P @ x[t] + b @ x[t]))
    assert _const(diffs) < 1e-8


def test_latent0_scalar_case():
    # n = 1, T = 1: closed-form posterior of x_0 by completing the square
    from hamst.geometry import LocationSet, mass_field

    locs = LocationSet(np.array([[0.4, 0.6]]))
    p = ParamVector(0.7, 0.2, 0.8, 1.0, 1.3, 1.0, 1.0, 0.9)
    y = np.array([[0.3], [0.5]])
    x = np.array([[0.0], [0.4]])
    d = StDataset(locs, y, x)
    M = mass_field(locs)[0]
    s = p.sigma2 / 4
    sig = 2 * p.eta3 / M**2
    k_cross = 2 * p.eta3 * np.exp(-p.eta3 * 0.04) * (1 - 2 * p.eta3 * 0.04)
    om = p.alpha**2 * 2 * p.eta3 + 2 * p.alpha * k_cross + 2 * p.eta3
    a = p.alpha
    prec = 1 / p.sigma2_p + (a / M) ** 2 / (s * sig) + a**4 / (s * om)
    lin = (a / M) * (0.5 - p.beta * 0.3) / (s * sig) + a**2 * 0.4 / (s * om)
    ws = Workspace.from_data(d, p, x=x)
    P, b = latent_precision(ws, 0)
    assert P[0, 0] == pytest.approx(prec, rel=1e-12)
    assert b[0] / P[0, 0] == pytest.approx(lin / prec, rel=1e-12)


def test_draw_from_precision_moments():
    g = np.random.default_rng(5)
    P = np.array([[2.0, 0.5], [0.5, 1.0]])
    b = np.array([1.0, -1.0])
    xs = np.array([draw_from_precision(P, b, g) for _ in range(40000)])
    cov = np.linalg.inv(P)
    np.testing.assert_allclose(xs.mean(axis=0), cov @ b, atol=0.02)
    np.testing.assert_allclose(np.cov(xs.T), cov, atol=0.02)


def test_partition_conditional_against_schur(rng):
    A = rng.normal(size=(5, 5))
    cov = A @ A.T + np.eye(5)
    mean = rng.normal(size=5)
    obs = [0, 3]
    yo = rng.normal(size=2)
    cm, cc = partition_conditional(mean, cov, obs, yo)
    mis = [1, 2, 4]
    prec = np.linalg.inv(cov)
    ref_cov = np.linalg.inv(prec[np.ix_(mis, mis)])
    ref_mean = mean[mis] - ref_cov @ prec[np.ix_(mis, obs)] @ (yo - mean[obs])
    np.testing.assert_allclose(cc, ref_cov, atol=1e-12)
    np.testing.assert_allclose(cm, ref_mean, atol=1e-12)


def test_mh_targets_track_log_joint(rng):
    d, p = small_dataset(3, 3, seed=7)
    priors = PriorConfig(eta3_mode="sample")
    ws = Workspace.from_data(d, p, x=d.x)

    def full(q):
        return log_joint(d, q) + log_prior(q, priors)

    def check(target, setter, stars):
        diffs = []
        for u in stars:
            q = setter(u)
            diffs.append(full(q) - target(u))
        assert _const(diffs) < 1e-8

    stars = rng.normal(scale=1.0, size=5)
    check(lambda u: log_target_beta(ws, priors, u), lambda u: p.with_(beta=np.tanh(u / 2)), stars)
    check(lambda u: log_target_alpha(ws, priors, u), lambda u: p.with_(alpha=np.tanh(u / 2)), stars)
    for which, f in ((1, "eta1"), (2, "eta2"), (3, "eta3")):
        check(lambda u, w=which: log_target_eta(ws, priors, w, u), lambda u, f=f: p.with_(**{f: np.exp(u)}), stars)


def test_zero_scale_is_a_no_op():
    d, p = small_dataset(3, 2, seed=8)
    ws = Workspace.from_data(d, p, x=d.x)
    g = np.random.default_rng(0)
    assert update_beta_star(ws, PriorConfig(), 0.0, g)
    assert update_alpha_star(ws, PriorConfig(), 0.0, g)
    assert ws.p == p


def _quick(iterations=30, burn_in=10, **kw):
    return McmcSettings(iterations=iterations, burn_in=burn_in, init_search=False, **kw)


def test_single_retained_draw():
    d, _ = small_dataset(3, 3, seed=9)
    ch = run_mcmc(StDataset(d.locs, d.y), PriorConfig(eta3_value=1.0), _quick(iterations=5, burn_in=4))
    assert ch.draws.shape == (1, 8)
    assert ch.latent.shape == (1, 4, 3)


@pytest.mark.parametrize("scheme", ["collapsed", "gibbs"])
def test_reproducible_under_seed(scheme):
    d, _ = small_dataset(3, 3, seed=10)
    d = StDataset(d.locs, d.y)
    pri = PriorConfig(eta3_value=1.0)
    a = run_mcmc(d, pri, _quick(scheme=scheme, seed=4))
    b = run_mcmc(d, pri, _quick(scheme=scheme, seed=4))
    c = run_mcmc(d, pri, _quick(scheme=scheme, seed=5))
    assert np.array_equal(a.draws, b.draws) and np.array_equal(a.latent, b.latent)
    assert not np.array_equal(a.draws, c.draws)


def test_fixed_eta3_is_held():
    d, _ = small_dataset(3, 3, seed=12)
    ch = run_mcmc(StDataset(d.locs, d.y), PriorConfig(eta3_value=2.5), _quick())
    assert np.all(ch.column("eta3") == 2.5)


def test_missing_entries_are_imputed():
    d, _ = small_dataset(3, 3, seed=13)
    y = d.y.copy()
    mask = np.zeros_like(y, dtype=bool)
    mask[2, 1] = True
    y[2, 1] = np.nan
    ch = run_mcmc(StDataset(d.locs, y), PriorConfig(eta3_value=1.0), _quick(), missing=mask)
    assert ch.y.shape == (20, 4, 3)
    assert np.ptp(ch.y[:, 2, 1]) > 0
    np.testing.assert_array_equal(ch.y[:, 0], np.broadcast_to(d.y[0], (20, 3)))


def test_settings_validation():
    with pytest.raises(ValueError):
        McmcSettings(iterations=10, burn_in=10)
    with pytest.raises(ValueError):
        McmcSettings(rw_scales={"nope": 1.0})
    with pytest.raises(ValueError):
        McmcSettings(latent_update="other")
    with pytest.raises(ValueError):
        PriorConfig(ig_v=(0.0, 1.0))


def test_sample_prior_respects_fixed_eta3():
    g = np.random.default_rng(0)
    assert sample_prior(PriorConfig(), g, eta3=3.0).eta3 == 3.0
