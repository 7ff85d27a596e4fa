"""Simulated-annealing point estimate of the potential decay eta3.

The objective is the log marginal likelihood of y (latent momentum integrated
out exactly) at the dominant (alpha, beta) mode, maximised over sigma2 for
each candidate eta3. The remaining parameters sit at their moment-based
starting values.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .. import rng as rngs
from ..geometry import sq_distance_matrix
from ..kernels import NumericalError, cholesky_stack
from ..model import StDataset, masses_for
from .modes import ModeResult, mode_search, profile_sigma2
from .priors import PriorConfig
from .sampler import INIT_ALPHA, Workspace, moment_init

log = logging.getLogger(__name__)


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class AnnealSchedule:
    steps: int = 500
    t0: float = 1.0
    ratio: float = 0.95
    step_size: float = 1.0
    init_eta3: float | None = None
    seed: int = 0
    log_bounds: tuple = (-7.0, 7.0)
    # candidates are compared on a grid of this spacing in log(eta3)
    resolution: float = 1e-3

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if not (self.t0 > 0 and 0 < self.ratio <= 1 and self.step_size > 0 and self.resolution > 0):
            raise ValueError("need t0 > 0, 0 < ratio <= 1, step_size > 0, resolution > 0")
        if self.init_eta3 is not None and not self.init_eta3 > 0:
            raise ValueError("init_eta3 must be positive")


class Eta3Objective:
    """Profile log marginal likelihood as a function of eta3 (memoised)."""

    def __init__(self, d: StDataset, priors: PriorConfig, eta3_ref: float, masses=None, resolution: float = 1e-3):
        m = masses_for(d, masses)
        p0 = moment_init(d, priors, eta3_ref, m, alpha=INIT_ALPHA)
        self.ws = Workspace(d.y, np.zeros_like(d.y), p0, m, sq_distance_matrix(d.locs))
        self.mode: ModeResult = mode_search(self.ws)
        self.resolution = resolution
        self.sigma2_at = {}
        self._cache = {}

    def key(self, eta3: float) -> float:
        return round(float(np.log(eta3)) / self.resolution) * self.resolution

    def __call__(self, eta3: float) -> float:
        k = self.key(eta3)
        if k not in self._cache:
            self._cache[k] = self._eval(float(np.exp(k)))
        return self._cache[k]

    def _eval(self, eta3: float) -> float:
        ws, a, b = self.ws, self.mode.alpha, self.mode.beta
        try:
            G, Xc = ws.grams(eta3)
            L_S = cholesky_stack(G[:-1] * ws.dd, "Sigma")
            L_O = cholesky_stack(ws.omega_stack(a, G, Xc), "Omega")
        except NumericalError:
            return -np.inf
        val, s2 = profile_sigma2(ws, a, b, L_S, L_O)
        self.sigma2_at[eta3] = s2
        return val if np.isfinite(val) else -np.inf


def eta3_objective(d: StDataset, priors: PriorConfig, eta3: float, masses=None) -> float:
    return Eta3Objective(d, priors, float(np.exp(priors.mu_eta3)), masses)(eta3)


def sa_eta3_mle(d: StDataset, priors: PriorConfig, schedule: AnnealSchedule = AnnealSchedule(), masses=None, objective: Eta3Objective | None = None) -> float:
    """Anneal over log(eta3) with geometric cooling; return the best value visited."""
    init = schedule.init_eta3 if schedule.init_eta3 is not None else float(np.exp(priors.mu_eta3))
    f_obj = objective or Eta3Objective(d, priors, init, masses, schedule.resolution)
    g = rngs.stream(schedule.seed, rngs.ANNEAL)
    lo, hi = schedule.log_bounds
    u = f_obj.key(init)
    f = f_obj(np.exp(u))
    best_u, best_f = u, f
    temp = schedule.t0
    for _ in range(schedule.steps):
        cand = f_obj.key(np.exp(u + schedule.step_size * np.sqrt(temp / schedule.t0) * g.standard_normal()))
        accept_draw = g.uniform()
        if lo <= cand <= hi:
            fc = f_obj(np.exp(cand))
            if np.isfinite(fc) and (not np.isfinite(f) or fc >= f or accept_draw < np.exp((fc - f) / temp)):
                u, f = cand, fc
                if fc > best_f or not np.isfinite(best_f):
                    best_u, best_f = cand, fc
        temp *= schedule.ratio
    if not np.isfinite(best_f):
        raise OptimizationError("eta3 objective was non-finite at every candidate")
    log.info("annealed eta3 = %.6g (objective %.6g)", np.exp(best_u), best_f)
    return float(np.exp(best_u))
