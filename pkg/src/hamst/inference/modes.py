"""Locating the dominant posterior mode before sampling.

With the latent momentum integrated out, y follows a second-order recursion
whose coefficients beta + alpha^2 and -beta alpha^2 the data pin down very
sharply, so (beta, alpha^2) and the swapped pair are both sharp local
maxima. A coarse grid over (alpha, beta) ranks candidate basins, and
Nelder-Mead refines the best few in (alpha*, beta*, log sigma2).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from ..kernels import NumericalError
from .sampler import Workspace, _inv_factors

GRID_STEP = 0.05
TOP_K = 4
MAX_FEV = 800
# |alpha*|, |beta*| cap: tanh(STAR_CAP / 2) stays strictly below 1 in double precision
STAR_CAP = 30.0


@dataclass
class ModeResult:
    alpha: float
    beta: float
    sigma2: float
    loglik: float
    n_evals: int


def _mll(ws: Workspace, alpha, beta, sigma2, L_O=None) -> float:
    try:
        if L_O is None:
            L_O = ws._omega_factors(alpha)[0]
        v = ws.marginal_loglik(alpha=alpha, beta=beta, sigma2=sigma2, L_O=L_O).loglik
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError):
        return -np.inf
    return v if np.isfinite(v) else -np.inf


def grid_candidates(ws: Workspace, sigma2: float, step: float = GRID_STEP, top_k: int = TOP_K):
    mags = np.arange(step, 1.0 - 1e-9, step)
    betas = np.arange(-1.0 + step, 1.0 - 1e-9, step)
    scored = []
    for a in np.concatenate([mags, -mags]):
        try:
            L_O = ws._omega_factors(float(a))[0]
        except NumericalError:
            continue
        for b in betas:
            scored.append((_mll(ws, float(a), float(b), sigma2, L_O), float(a), float(b)))
    # stable sort keeps grid order among ties
    scored.sort(key=lambda r: -r[0])
    return [(a, b) for v, a, b in scored[:top_k] if np.isfinite(v)], len(scored)


def refine(ws: Workspace, alpha: float, beta: float, sigma2: float, max_fev: int = MAX_FEV) -> ModeResult:
    def nf(u):
        if abs(u[0]) > STAR_CAP or abs(u[1]) > STAR_CAP:
            return 1e300
        v = _mll(ws, float(np.tanh(u[0] / 2)), float(np.tanh(u[1] / 2)), float(np.exp(u[2])))
        return -v if np.isfinite(v) else 1e300

    u0 = np.array([2 * np.arctanh(alpha), 2 * np.arctanh(beta), np.log(sigma2)])
    r = minimize(nf, u0, method="Nelder-Mead", options={"maxfev": max_fev, "xatol": 1e-6, "fatol": 1e-6})
    u = np.clip(r.x[:2], -STAR_CAP, STAR_CAP)
    return ModeResult(float(np.tanh(u[0] / 2)), float(np.tanh(u[1] / 2)), float(np.exp(r.x[2])), -float(r.fun), int(r.nfev))


def mode_search(ws: Workspace, step: float = GRID_STEP, top_k: int = TOP_K, max_fev: int = MAX_FEV) -> ModeResult:
    """Best (alpha, beta, sigma2) of the marginal likelihood; the workspace is left untouched."""
    starts, n_grid = grid_candidates(ws, ws.p.sigma2, step, top_k)
    if not starts:
        raise NumericalError("marginal likelihood non-finite on the whole (alpha, beta) grid")
    fits = [refine(ws, a, b, ws.p.sigma2, max_fev) for a, b in starts]
    best = max(fits, key=lambda f: f.loglik)
    best.n_evals = n_grid + sum(f.n_evals for f in fits)
    return best


def apply_mode(ws: Workspace, m: ModeResult) -> None:
    ws.p = ws.p.with_(alpha=m.alpha, beta=m.beta, sigma2=m.sigma2)
    L = ws._omega_factors(m.alpha)[0]
    ws.set_omega(L, _inv_factors(L))
    ws._mll = None


def profile_sigma2(ws: Workspace, alpha: float, beta: float, L_S, L_O, log_bounds=(-25.0, 25.0)):
    """max over sigma2 of the marginal log-likelihood at fixed (alpha, beta) and factors."""

    def nf(u):
        try:
            v = ws.marginal_loglik(alpha=alpha, beta=beta, sigma2=float(np.exp(u)), L_S=L_S, L_O=L_O).loglik
        except (NumericalError, np.linalg.LinAlgError):
            return 1e300
        return -v if np.isfinite(v) else 1e300

    r = minimize_scalar(nf, bounds=log_bounds, method="bounded", options={"xatol": 1e-4})
    return -float(r.fun), float(np.exp(r.x))
