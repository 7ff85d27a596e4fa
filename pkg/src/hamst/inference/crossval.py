"""Leave-one-time-out search over prior hyperparameters."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .. import rng as rngs
from ..kernels import NumericalError
from ..model import StDataset
from .priors import McmcSettings, PriorConfig
from .sampler import SamplerError, resolve_eta3, run_mcmc

log = logging.getLogger(__name__)


@dataclass
class CvResult:
    best: PriorConfig
    best_index: int
    scores: list
    fold_scores: list
    failures: dict


def fold_score(d: StDataset, priors: PriorConfig, settings: McmcSettings, t: int, level: float = 0.95) -> float:
    """Mean 95% predictive interval length of the held-out row ``t``."""
    mask = np.zeros(d.y.shape, dtype=bool)
    mask[t] = True
    chain = run_mcmc(d, priors, settings, missing=mask)
    draws = chain.y[:, t, :]
    q = (1.0 - level) / 2.0
    lo, hi = np.quantile(draws, [q, 1.0 - q], axis=0)
    return float(np.mean(hi - lo))


def cv_hyperparam_search(d: StDataset, grid, settings: McmcSettings, level: float = 0.95) -> CvResult:
    """Score each candidate by the average held-out interval length over rows 1..T; lowest wins.

    Ties go to the earlier candidate. A candidate whose fits fail is skipped and
    listed in ``failures``.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("candidate grid is empty")
    if len(grid) == 1:
        return CvResult(grid[0], 0, [float("nan")], [[]], {})
    scores, folds, failures = [], [], {}
    for i, cand in enumerate(grid):
        if cand.eta3_mode == "fixed" and cand.eta3_value is None:
            cand = replace(cand, eta3_value=resolve_eta3(d, cand))
        per = []
        try:
            for t in range(1, d.T + 1):
                s = replace(settings, seed=rngs.child_seed(settings.seed, rngs.CV, i, t))
                per.append(fold_score(d, cand, s, t, level))
        except (SamplerError, NumericalError, ValueError) as e:
            failures[i] = str(e)
            log.warning("candidate %d failed: %s", i, e)
            scores.append(float("inf"))
            folds.append(per)
            continue
        folds.append(per)
        scores.append(float(np.mean(per)))
    if len(failures) == len(grid):
        raise RuntimeError(f"every candidate failed: {failures}")
    best = int(np.argmin(scores))
    return CvResult(grid[best], best, scores, folds, failures)
