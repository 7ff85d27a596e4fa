import numpy as np
import pytest
from scipy.stats import kstest

from hamst.geometry import mass_field
from hamst.model import ParamVector
from hamst.simulate import (
    Gp3Config,
    GqnConfig,
    SimConfig,
    SimulationError,
    gen_gp_mixture3,
    gen_gqn_mixture,
    simulate_hamiltonian,
    simulate_paths,
    uniform_locations,
)


def test_deterministic_under_seed():
    p = ParamVector(0.5, 0.5, 1, 1, 1, 1, 1, 1)
    a = simulate_hamiltonian(SimConfig(5, 4, p, seed=3))
    b = simulate_hamiltonian(SimConfig(5, 4, p, seed=3))
    assert np.array_equal(a.y, b.y) and np.array_equal(a.x, b.x)
    c = simulate_hamiltonian(SimConfig(5, 4, p, seed=4))
    assert not np.array_equal(a.y, c.y)


def test_zero_noise_limit_is_leapfrog_recursion():
    p = ParamVector(0.6, 0.7, 1e-30, 1, 1, 1, 1, 1)
    locs = uniform_locations(3, 0)
    m = mass_field(locs)
    y0, x0 = np.array([0.1, -0.2, 0.3]), np.array([1.0, 0.5, -0.5])
    d = simulate_paths(locs, p, 3, 0, masses=m, y0=y0, x0=x0)
    y, x = y0, x0
    for t in range(1, 4):
        y, x = p.beta * y + p.alpha * x / m, p.alpha**2 * x
        np.testing.assert_allclose(d.y[t], y, atol=1e-12)
        np.testing.assert_allclose(d.x[t], x, atol=1e-12)


def test_initial_rows_are_gp_draws():
    p = ParamVector(1e-9, 1e-9, 1, 1, 1, 1, 1, 1)
    locs = uniform_locations(3, 0)
    vals = np.array([simulate_paths(locs, p, 1, s).y[0, 0] for s in range(1000)])
    assert kstest(vals, "norm").pvalue > 0.01


def test_gp3_single_component_no_noise():
    cfg = Gp3Config(b0=(3.0,), sigma2_eps=(0.0,), a=(0.0,), kappa=(1.0,), sigma2=(1.0,), mix_p=(1.0,))
    d = gen_gp_mixture3(6, 5, cfg, seed=2)
    np.testing.assert_allclose(d.y, 3.0 + d.x, atol=1e-14)
    assert np.all(d.x[0] == 0)


def test_gp3_ar1_lag1_autocorrelation():
    cfg = Gp3Config(b0=(0.0,), sigma2_eps=(0.0,), a=(0.75,), kappa=(1.0,), sigma2=(1.0,), mix_p=(1.0,))
    d = gen_gp_mixture3(2, 5000, cfg, seed=1)
    w = d.x[1:, 0]
    assert np.corrcoef(w[:-1], w[1:])[0, 1] == pytest.approx(0.75, abs=0.05)


def test_gp3_default_cluster_means():
    d = gen_gp_mixture3(60, 20, Gp3Config(), seed=0)
    means = [d.y[:, d.component == j].mean() for j in range(3)]
    assert means == pytest.approx([0, 10, 20], abs=1.5)
    assert set(np.unique(d.component)) == {0, 1, 2}


def test_gp3_degenerate_mixture():
    d = gen_gp_mixture3(10, 3, Gp3Config(mix_p=(1.0, 0.0, 0.0)), seed=0)
    assert np.all(d.component == 0)


def test_gqn_zero_coefficients_is_pure_noise():
    d = gen_gqn_mixture(4, 6, GqnConfig(coef_sd=0.0), seed=3)
    d2 = gen_gqn_mixture(4, 6, GqnConfig(coef_sd=0.0), seed=3)
    assert np.array_equal(d.x, d2.x)
    # with zero coefficients x_t is just the innovation: no dependence on x_{t-1}
    d3 = gen_gqn_mixture(4, 6, GqnConfig(coef_sd=0.0, kernel_decay=1.0), seed=3)
    np.testing.assert_allclose(d.x[1:], d3.x[1:])


def test_gqn_blowup_raises():
    with pytest.raises(SimulationError):
        gen_gqn_mixture(5, 30, GqnConfig(coef_sd=5.0), seed=0)


def test_gqn_shift_fraction():
    u = np.array([gen_gqn_mixture(2, 1, GqnConfig(), seed=s).u[0] for s in range(2000)])
    assert np.mean(u >= 0.6) == pytest.approx(0.4, abs=0.04)
