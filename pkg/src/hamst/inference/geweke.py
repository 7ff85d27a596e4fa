"""Joint-distribution (Geweke) test of the sampler.

Marginal-conditional draws: theta from the prior, then (y, x) forward-simulated.
Successive-conditional draws: alternate one sampler sweep given y with a fresh
forward simulation of (y, x) given the current theta. Both target the prior of
theta, so their moments must agree.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import rng as rngs
from ..geometry import LocationSet, mass_field, sq_distance_matrix
from ..kernels import NumericalError
from ..model import PARAM_NAMES, ParamVector
from ..simulate import simulate_paths
from .priors import McmcSettings, PriorConfig, sample_prior
from .sampler import Workspace, sweep


@dataclass
class GewekeReport:
    mean_forward: np.ndarray
    mean_successive: np.ndarray
    z: np.ndarray
    n_forward: int
    n_successive: int
    names: tuple = PARAM_NAMES
    skipped: int = 0
    acceptance_rates: dict = None
    scales: dict = None
    successive: np.ndarray = None

    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))

    def lines(self):
        return [
            f"{k:>13s}  forward {f: .5g}  successive {s: .5g}  z {z: .2f}"
            for k, f, s, z in zip(self.names, self.mean_forward, self.mean_successive, self.z)
        ]


def batch_means_se(x: np.ndarray, n_batches: int = 50) -> np.ndarray:
    """Batch-means Monte Carlo standard error of the column means of ``x``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    b = max(2, min(n_batches, x.shape[0] // 2))
    size = x.shape[0] // b
    means = x[: b * size].reshape(b, size, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(b)


def _forward(locs, masses, priors, T, seed, eta3):
    p = sample_prior(priors, rngs.stream(seed, rngs.INIT, 0), eta3)
    return p, simulate_paths(locs, p, T, seed, masses=masses)


def geweke_test(
    locs: LocationSet,
    T: int,
    priors: PriorConfig,
    n_forward: int = 5000,
    n_successive: int = 20000,
    seed: int = 0,
    settings: McmcSettings | None = None,
    n_adapt: int = 2000,
    sweeps_per_sim: int = 1,
) -> GewekeReport:
    """``n_adapt`` initial successive-conditional sweeps tune the random-walk scales and are discarded.

    With ``sweeps_per_sim > 1`` the latent draws of one sweep feed the parameter
    updates of the next before y is resimulated, which exposes the latent update.
    """
    settings = settings or McmcSettings(iterations=2, burn_in=1, adapt=False)
    m = mass_field(locs)
    d2 = sq_distance_matrix(locs)
    fixed_eta3 = priors.eta3_value if priors.eta3_mode == "fixed" else None
    # theta moments of the marginal-conditional simulator only need the prior draw
    gp = rngs.stream(seed, rngs.REPLICATE, 0)
    fwd = np.array([sample_prior(priors, gp, fixed_eta3).as_array() for _ in range(n_forward)])
    skipped = 0

    p, ds = _forward(locs, m, priors, T, rngs.child_seed(seed, rngs.REPLICATE, 1, 0), fixed_eta3)
    succ = np.empty((n_successive, len(PARAM_NAMES)))
    scales = dict(settings.rw_scales)
    log_scales = {k: np.log(v) for k, v in scales.items() if v > 0}
    acc_sum = {}
    for i in range(n_adapt + n_successive):
        g = rngs.stream(seed, rngs.MCMC, i)
        ws = Workspace(ds.y, ds.x, p, m, d2)
        for _ in range(sweeps_per_sim):
            acc = sweep(ws, priors, scales, g, settings.latent_update, settings.scheme)
        p = ws.p
        if i < n_adapt:
            for k, a in acc.items():
                if k in log_scales:
                    log_scales[k] += (i + 1) ** -0.6 * (float(a) - settings.target_accept)
                    scales[k] = float(np.exp(log_scales[k]))
        else:
            succ[i - n_adapt] = p.as_array()
            for k, a in acc.items():
                acc_sum[k] = acc_sum.get(k, 0) + a
        attempt = 0
        while True:
            try:
                ds = simulate_paths(locs, p, T, rngs.child_seed(seed, rngs.REPLICATE, 2, i, attempt), masses=m)
                break
            except NumericalError:
                skipped += 1
                attempt += 1
    mf, ms = fwd.mean(axis=0), succ.mean(axis=0)
    se_f = fwd.std(axis=0, ddof=1) / np.sqrt(fwd.shape[0])
    se_s = batch_means_se(succ)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se_f**2 + se_s**2 > 0, (mf - ms) / np.sqrt(se_f**2 + se_s**2), 0.0)
    rates = {k: v / n_successive for k, v in acc_sum.items()}
    return GewekeReport(mf, ms, z, fwd.shape[0], n_successive, PARAM_NAMES, skipped, rates, scales, succ)
