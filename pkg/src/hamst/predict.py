"""Posterior predictive sampling in time and reconstruction at new sites.

One predictive draw is made per retained chain draw, each from its own
seeded stream, so the result does not depend on how draws are scheduled
across workers.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import rng as rngs
from .geometry import DomainError, LocationSet, mass_field, sq_distance_matrix
from .kernels import cholesky_jittered
from .model import ParamVector, StDataset, dse_gram, masses_for
from .inference.priors import McmcSettings, PriorConfig
from .inference.sampler import Chain, conditional_draw, run_mcmc


@dataclass
class PredictiveSamples:
    """Draws of shape (draw, step, location) for y and x.

    ``labels`` names the step axis: forecast horizons 1..h, or time indices
    0..T for reconstructed series.
    """

    y: np.ndarray
    x: Optional[np.ndarray]
    labels: tuple
    kind: str = "horizon"
    locs: Optional[LocationSet] = None
    chain: Optional[Chain] = field(default=None, repr=False)

    @property
    def n_draws(self) -> int:
        return self.y.shape[0]

    def at(self, label, target: str = "y") -> np.ndarray:
        a = self.y if target == "y" else self.x
        return a[:, self.labels.index(label), :]

    def long_table(self, target: str = "y"):
        """Rows (location, step label, draw, value), ready for plotting tools."""
        a = self.y if target == "y" else self.x
        n_draws, n_steps, n = a.shape
        ids = self.locs.ids if self.locs is not None else tuple(str(i) for i in range(n))
        d, s, l = np.meshgrid(np.arange(n_draws), np.arange(n_steps), np.arange(n), indexing="ij")
        return [(ids[li], self.labels[si], int(di), float(a[di, si, li])) for di, si, li in zip(d.ravel(), s.ravel(), l.ravel())]


@dataclass
class IntervalSummary:
    """Per-(step, location) interval at ``level``; arrays have shape (step, location)."""

    level: float
    lower: np.ndarray
    upper: np.ndarray
    median: np.ndarray
    mean: np.ndarray
    labels: tuple = ()

    @property
    def length(self) -> np.ndarray:
        return self.upper - self.lower


def _need_latent(chain: Chain):
    if chain.latent is None:
        raise ValueError("chain has no latent snapshots; refit with keep_latent=True")


def leapfrog_draw(p: ParamVector, y_prev, x_prev, dinv, g: np.random.Generator):
    """One step of the model: (y_t, x_t) given (y_{t-1}, x_{t-1}) and the parameters."""
    s = p.sigma2 / 4.0
    k_prev = dse_gram(y_prev, y_prev, p.eta3)
    L, _ = cholesky_jittered(k_prev * np.outer(dinv, dinv), "predictive Sigma")
    y_new = p.beta * y_prev + p.alpha * dinv * x_prev + np.sqrt(s) * (L @ g.standard_normal(y_prev.shape[0]))
    cross = dse_gram(y_prev, y_new, p.eta3)
    omega = p.alpha**2 * k_prev + p.alpha * (cross + cross.T) + dse_gram(y_new, y_new, p.eta3)
    L, _ = cholesky_jittered(omega, "predictive Omega")
    x_new = p.alpha**2 * x_prev + np.sqrt(s) * (L @ g.standard_normal(y_prev.shape[0]))
    return y_new, x_new


def predict_multi_step(chain: Chain, data: StDataset, horizon: int = 1, seed: int = 0, masses=None, workers: int = 1) -> PredictiveSamples:
    """Propagate every retained draw ``horizon`` steps past the last observed row."""
    _need_latent(chain)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    dinv = 1.0 / masses_for(data, masses)
    n_draws, n = len(chain), data.n
    ys = np.empty((n_draws, horizon, n))
    xs = np.empty((n_draws, horizon, n))

    def one(i):
        p = chain.params(i)
        # rows that were imputed during the fit come from that draw
        y_prev = chain.y[i, -1] if chain.y is not None else data.y[-1]
        x_prev = chain.latent[i, -1]
        g = rngs.stream(seed, rngs.PREDICT, i)
        for h in range(horizon):
            y_prev, x_prev = leapfrog_draw(p, y_prev, x_prev, dinv, g)
            ys[i, h], xs[i, h] = y_prev, x_prev

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            list(ex.map(one, range(n_draws)))
    else:
        for i in range(n_draws):
            one(i)
    return PredictiveSamples(ys, xs, tuple(range(1, horizon + 1)), "horizon", data.locs)


def predict_one_step(chain: Chain, data: StDataset, seed: int = 0, masses=None, workers: int = 1) -> PredictiveSamples:
    return predict_multi_step(chain, data, 1, seed, masses, workers)


def _new_site_series(p: ParamVector, y_obs, x_obs, d2_all, dinv_all, n_obs: int, g: np.random.Generator):
    """Forward pass over t = 0..T drawing new-site (y, x) given the observed-site path."""
    T1 = y_obs.shape[0]
    n = d2_all.shape[0]
    obs = np.arange(n_obs)
    s = p.sigma2 / 4.0
    dd = np.outer(dinv_all, dinv_all)
    y = np.empty((T1, n))
    x = np.empty((T1, n))
    y[:, :n_obs] = y_obs
    x[:, :n_obs] = x_obs
    zero = np.zeros(n)
    y[0, n_obs:] = conditional_draw(zero, p.sigma2_theta * np.exp(-p.eta2 * d2_all), obs, y_obs[0], g, "Delta0")
    x[0, n_obs:] = conditional_draw(zero, p.sigma2_p * np.exp(-p.eta1 * d2_all), obs, x_obs[0], g, "Omega0")
    for t in range(1, T1):
        yp = y[t - 1]
        k_prev = dse_gram(yp, yp, p.eta3)
        mean = p.beta * yp + p.alpha * dinv_all * x[t - 1]
        y[t, n_obs:] = conditional_draw(mean, s * k_prev * dd, obs, y_obs[t], g, f"Sigma{t - 1}")
        cross = dse_gram(yp, y[t], p.eta3)
        omega = p.alpha**2 * k_prev + p.alpha * (cross + cross.T) + dse_gram(y[t], y[t], p.eta3)
        x[t, n_obs:] = conditional_draw(p.alpha**2 * x[t - 1], s * omega, obs, x_obs[t], g, f"Omega{t}")
    return y[:, n_obs:], x[:, n_obs:]


def reconstruct_locations(
    data: StDataset,
    new_locs: Optional[LocationSet],
    priors: PriorConfig,
    settings: McmcSettings,
    workers: int = 1,
) -> PredictiveSamples:
    """Sample whole series at ``new_locs`` by augmenting the state with their values.

    Masses are computed once over the union of old and new sites. Observed
    sites never depend on new-site values (means act site by site and the
    observed blocks of Sigma_t and Omega_t involve observed values only), so
    the chain for the parameters and the observed-site momentum runs on the
    observed sites, and every retained draw is extended to the new sites by a
    forward pass of within-time Gaussian conditionals for y*_t and then x*_t.
    """
    n_obs = data.n
    if new_locs is None or len(new_locs) == 0:
        chain = run_mcmc(data, priors, settings, keep_y=True)
        empty = np.empty((len(chain), data.T + 1, 0))
        return PredictiveSamples(empty, empty.copy(), tuple(range(data.T + 1)), "time", None, chain)
    d2 = ((data.locs.points[:, None, :] - new_locs.points[None, :, :]) ** 2).sum(axis=2)
    if d2.min() <= 0.0:
        raise DomainError("new locations must be disjoint from the observed ones")
    ids = new_locs.ids
    if set(ids) & set(data.locs.ids):
        ids = tuple(f"new{i}" for i in range(len(new_locs)))
    union = data.locs.union(LocationSet(new_locs.points, data.locs.scale_c, ids))
    m = mass_field(union)
    if not settings.keep_latent:
        settings = replace(settings, keep_latent=True)
    chain = run_mcmc(data, priors, settings, masses=m[:n_obs])
    d2_all = sq_distance_matrix(union)
    dinv = 1.0 / m
    n_draws = len(chain)
    ys = np.empty((n_draws, data.T + 1, len(new_locs)))
    xs = np.empty_like(ys)
    y_obs = np.asarray(data.y, dtype=float)

    def one(i):
        g = rngs.stream(settings.seed, rngs.RECONSTRUCT, i)
        ys[i], xs[i] = _new_site_series(chain.params(i), y_obs, chain.latent[i], d2_all, dinv, n_obs, g)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            list(ex.map(one, range(n_draws)))
    else:
        for i in range(n_draws):
            one(i)
    chain.manifest["reconstruction"] = {
        "n_observed": n_obs,
        "n_new": len(new_locs),
        "update": "per-draw forward pass of within-time conditionals for new-site y then x",
    }
    return PredictiveSamples(ys, xs, tuple(range(data.T + 1)), "time", union.subset(range(n_obs, len(union))), chain)


def interval_summary(samples: PredictiveSamples, level: float = 0.95, target: str = "y") -> IntervalSummary:
    """Empirical quantiles at (1-level)/2 and (1+level)/2 (numpy's linear interpolation)."""
    a = samples.y if target == "y" else samples.x
    if a is None or a.shape[0] < 2:
        raise ValueError("need at least 2 draws for an interval")
    if not 0 <= level < 1:
        raise ValueError("level must lie in [0, 1)")
    q = (1.0 - level) / 2.0
    lo, med, hi = np.quantile(a, [q, 0.5, 1.0 - q], axis=0)
    return IntervalSummary(level, lo, hi, med, a.mean(axis=0), samples.labels)
