"""Metropolis-within-Gibbs sampler for the Hamiltonian spatio-temporal model.

All covariance factors that depend on the state are held in a
:class:`Workspace` and refreshed only when the quantity they depend on moves:
beta touches nothing, alpha touches the Omega stack, eta1/eta2 touch one
initial Gram each, eta3 and any redrawn observation touch everything.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .. import rng as rngs
from ..geometry import sq_distance_matrix
from ..kernels import NumericalError, cholesky_jittered, cholesky_stack
from ..model import LOG2PI, PARAM_NAMES, ParamVector, StDataset, masses_for
from .kalman import backward_sample, kalman_filter
from .priors import McmcSettings, PriorConfig, ig_sample, unconstrained_of

log = logging.getLogger(__name__)

# starting value for alpha; at alpha = 0 the latent momentum is disconnected from y
INIT_ALPHA = 0.5
UPDATE_NAMES = ("beta_star", "alpha_star", "sigma2_theta", "sigma2_p", "sigma2", "eta1_star", "eta2_star", "eta3_star")


class SamplerError(RuntimeError):
    """An update failed; carries the sweep index and a snapshot of the state."""

    def __init__(self, msg: str, sweep: int, snapshot: dict):
        super().__init__(f"sweep {sweep}: {msg}")
        self.sweep = sweep
        self.snapshot = snapshot


@dataclass
class ChainState:
    params: ParamVector
    unconstrained: np.ndarray
    latent: np.ndarray
    log_joint_cache: float
    y: Optional[np.ndarray] = None


@dataclass
class Chain:
    """Retained draws. ``draws`` has one row per retained sweep in PARAM_NAMES order."""

    draws: np.ndarray
    latent: Optional[np.ndarray]
    acceptance_rates: dict
    manifest: dict
    y: Optional[np.ndarray] = None
    final_state: Optional[ChainState] = None
    columns: tuple = PARAM_NAMES

    def __len__(self) -> int:
        return self.draws.shape[0]

    def params(self, i: int) -> ParamVector:
        return ParamVector.from_array(self.draws[i])

    def draw(self, i: int):
        return self.params(i), None if self.latent is None else self.latent[i]

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, PARAM_NAMES.index(name)]


# ---------------------------------------------------------------- linear algebra helpers

def _dse(h2: np.ndarray, eta3: float) -> np.ndarray:
    return 2.0 * eta3 * np.exp(-eta3 * h2) * (1.0 - 2.0 * eta3 * h2)


def _inv_factors(L: np.ndarray) -> np.ndarray:
    eye = np.eye(L.shape[-1])
    if L.ndim == 2:
        return solve_triangular(L, eye, lower=True, check_finite=False)
    return np.stack([solve_triangular(l, eye, lower=True, check_finite=False) for l in L])


def _logdet(L: np.ndarray) -> np.ndarray:
    return 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)


def _quad_rows(Li: np.ndarray, R: np.ndarray) -> np.ndarray:
    z = np.einsum("tij,tj->ti", Li, R)
    return np.sum(z * z, axis=-1)


def _quad(Li: np.ndarray, r: np.ndarray) -> float:
    z = Li @ r
    return float(z @ z)


def draw_from_precision(P: np.ndarray, b: np.ndarray, g: np.random.Generator, what: str = "precision"):
    """One draw from N(P^-1 b, P^-1)."""
    L, _ = cholesky_jittered(0.5 * (P + P.T), what)
    mean = cho_solve((L, True), b, check_finite=False)
    return mean + solve_triangular(L.T, g.standard_normal(L.shape[0]), lower=False, check_finite=False)


def partition_conditional(mean, cov, obs_idx, y_obs):
    """Mean and covariance of the unobserved block of N(mean, cov) given ``y[obs_idx] = y_obs``."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    n = mean.shape[0]
    obs = np.zeros(n, dtype=bool)
    obs[np.asarray(obs_idx, dtype=int)] = True
    mis = ~obs
    if not obs.any():
        return mean.copy(), cov.copy()
    c_oo = cov[np.ix_(obs, obs)]
    c_mo = cov[np.ix_(mis, obs)]
    L, _ = cholesky_jittered(c_oo, "observed block")
    gain = cho_solve((L, True), c_mo.T, check_finite=False).T
    cm = mean[mis] + gain @ (np.asarray(y_obs, dtype=float) - mean[obs])
    cc = cov[np.ix_(mis, mis)] - gain @ c_mo.T
    return cm, 0.5 * (cc + cc.T)


def conditional_draw(mean, cov, obs_idx, y_obs, g: Optional[np.random.Generator], what: str = "conditional"):
    """Draw the unobserved block of N(mean, cov) given ``y[obs_idx] = y_obs``.

    The joint covariance is factored with the observed entries first, so the
    conditional factor is the trailing Cholesky block. This stays valid when
    the Schur complement is tiny and would lose definiteness to cancellation.
    With ``g=None`` the conditional mean is returned.
    """
    mean = np.asarray(mean, dtype=float)
    n = mean.shape[0]
    obs = np.zeros(n, dtype=bool)
    obs[np.asarray(obs_idx, dtype=int)] = True
    order = np.concatenate([np.flatnonzero(obs), np.flatnonzero(~obs)])
    k = int(obs.sum())
    L, _ = cholesky_jittered(np.asarray(cov, dtype=float)[np.ix_(order, order)], what)
    z = solve_triangular(L[:k, :k], np.asarray(y_obs, dtype=float) - mean[obs], lower=True, check_finite=False) if k else np.zeros(0)
    cm = mean[~obs] + L[k:, :k] @ z
    return cm if g is None else cm + L[k:, k:] @ g.standard_normal(n - k)


# ---------------------------------------------------------------- workspace

class Workspace:
    """Current state plus every covariance factor derived from it."""

    def __init__(self, y, x, p: ParamVector, masses, d2, missing=None):
        self.y = np.array(y, dtype=float)
        self.x = np.array(x, dtype=float)
        self.p = p
        self.masses = np.asarray(masses, dtype=float)
        self.dinv = 1.0 / self.masses
        self.dd = np.outer(self.dinv, self.dinv)
        self.d2 = d2
        self.missing = None if missing is None or not np.any(missing) else np.asarray(missing, dtype=bool)
        self.T = self.y.shape[0] - 1
        self.n = self.y.shape[1]
        self.refresh_init()
        self.refresh_dynamic()

    @classmethod
    def from_data(cls, d: StDataset, p: ParamVector, x=None, masses=None, missing=None):
        x = np.zeros_like(d.y) if x is None else x
        return cls(d.y, x, p, masses_for(d, masses), sq_distance_matrix(d.locs), missing)

    # -- factor maintenance
    @staticmethod
    def _init_factor(gram, what):
        L, _ = cholesky_jittered(gram, what)
        return L, _inv_factors(L)

    def refresh_init(self, which=(1, 2)):
        if 1 in which:
            self.L_O0, self.Li_O0 = self._init_factor(np.exp(-self.p.eta1 * self.d2), "Omega0")
        self._mll = None
        if 2 in which:
            self.L_D0, self.Li_D0 = self._init_factor(np.exp(-self.p.eta2 * self.d2), "Delta0")

    def grams(self, eta3: float):
        y = self.y
        G = _dse((y[:, :, None] - y[:, None, :]) ** 2, eta3)
        Xc = _dse((y[:-1, :, None] - y[1:, None, :]) ** 2, eta3)
        return G, Xc

    def omega_stack(self, alpha: float, G=None, Xc=None):
        G = self.G if G is None else G
        Xc = self.Xc if Xc is None else Xc
        return alpha * alpha * G[:-1] + alpha * (Xc + np.swapaxes(Xc, 1, 2)) + G[1:]

    def refresh_dynamic(self):
        self.G, self.Xc = self.grams(self.p.eta3)
        self._mll = None
        self.L_S = cholesky_stack(self.G[:-1] * self.dd, "Sigma")
        self.Li_S = _inv_factors(self.L_S)
        self.set_omega(*self._omega_factors(self.p.alpha))

    def _omega_factors(self, alpha, G=None, Xc=None):
        L = cholesky_stack(self.omega_stack(alpha, G, Xc), "Omega")
        return L, _inv_factors(L)

    def set_omega(self, L, Li):
        self.L_O, self.Li_O = L, Li

    # -- latent marginalised out
    # The filter works with L L^T of the cached factors, i.e. with exactly the
    # (possibly jittered) matrices the complete-data density uses.
    def marginal_loglik(self, alpha=None, beta=None, sigma2=None, L_S=None, L_O=None, keep=False):
        """log p(y_1..y_T | y_0, theta) with x integrated out; arguments override the current state."""
        p = self.p
        a = p.alpha if alpha is None else alpha
        b = p.beta if beta is None else beta
        s2 = p.sigma2 if sigma2 is None else sigma2
        L_S = self.L_S if L_S is None else L_S
        L_O = self.L_O if L_O is None else L_O
        sig = L_S @ np.swapaxes(L_S, 1, 2)
        om = L_O @ np.swapaxes(L_O, 1, 2)
        P0 = p.sigma2_p * (self.L_O0 @ self.L_O0.T)
        return kalman_filter(self.y, self.dinv, a, b, s2 / 4.0, sig, om, P0, keep)

    def current_mll(self) -> float:
        key = (self.p.alpha, self.p.beta, self.p.sigma2, self.p.sigma2_p, self.p.eta1, self.p.eta3)
        if self._mll is None or self._mll[0] != key:
            self._mll = (key, self.marginal_loglik().loglik)
        return self._mll[1]

    # -- quadratic forms
    def resid_y(self, alpha=None, beta=None):
        a = self.p.alpha if alpha is None else alpha
        b = self.p.beta if beta is None else beta
        return self.y[1:] - b * self.y[:-1] - a * self.dinv * self.x[:-1]

    def resid_x(self, alpha=None):
        a = self.p.alpha if alpha is None else alpha
        return self.x[1:] - a * a * self.x[:-1]

    def quad_y(self, alpha=None, beta=None, Li_S=None) -> float:
        return float(np.sum(_quad_rows(self.Li_S if Li_S is None else Li_S, self.resid_y(alpha, beta))))

    def quad_x(self, alpha=None, Li_O=None) -> float:
        return float(np.sum(_quad_rows(self.Li_O if Li_O is None else Li_O, self.resid_x(alpha))))

    # -- densities
    def log_joint(self) -> float:
        """Complete-data log density of the current (y, x) at the current parameters."""
        p, n, T = self.p, self.n, self.T
        s = p.sigma2 / 4.0
        ly = -0.5 * T * n * (LOG2PI + np.log(s)) - 0.5 * np.sum(_logdet(self.L_S)) - 0.5 * self.quad_y() / s
        lx = -0.5 * T * n * (LOG2PI + np.log(s)) - 0.5 * np.sum(_logdet(self.L_O)) - 0.5 * self.quad_x() / s
        l0 = (
            -0.5 * n * (LOG2PI + np.log(p.sigma2_theta))
            - 0.5 * _logdet(self.L_D0)
            - 0.5 * _quad(self.Li_D0, self.y[0]) / p.sigma2_theta
        )
        l0 += (
            -0.5 * n * (LOG2PI + np.log(p.sigma2_p))
            - 0.5 * _logdet(self.L_O0)
            - 0.5 * _quad(self.Li_O0, self.x[0]) / p.sigma2_p
        )
        return float(ly + lx + l0)

    def state(self) -> ChainState:
        return ChainState(self.p, unconstrained_of(self.p), self.x.copy(), self.log_joint(), self.y.copy())

    def snapshot(self) -> dict:
        return {"params": self.p.to_dict(), "x": self.x.tolist(), "y": self.y.tolist()}


# ---------------------------------------------------------------- Metropolis targets

def _gauss_prior(u, mu, sd):
    return -0.5 * ((u - mu) / sd) ** 2


def log_target_beta(ws: Workspace, priors: PriorConfig, beta_star: float) -> float:
    beta = float(np.tanh(beta_star / 2.0))
    s = ws.p.sigma2 / 4.0
    return _gauss_prior(beta_star, 0.0, priors.sd_beta_star) - 0.5 * ws.quad_y(beta=beta) / s


def _alpha_terms(ws: Workspace, alpha: float, factors=None):
    L, Li = factors if factors is not None else ws._omega_factors(alpha)
    s = ws.p.sigma2 / 4.0
    val = -0.5 * np.sum(_logdet(L)) - 0.5 * (ws.quad_y(alpha=alpha) + ws.quad_x(alpha, Li)) / s
    return float(val), (L, Li)


def log_target_alpha(ws: Workspace, priors: PriorConfig, alpha_star: float) -> float:
    val, _ = _alpha_terms(ws, float(np.tanh(alpha_star / 2.0)))
    return _gauss_prior(alpha_star, 0.0, priors.sd_alpha_star) + val


def _init_terms(L, Li, v, scale):
    return float(-0.5 * _logdet(L) - 0.5 * _quad(Li, v) / scale)


def log_target_eta(ws: Workspace, priors: PriorConfig, which: int, eta_star: float) -> float:
    eta = float(np.exp(eta_star))
    mu = (priors.mu_eta1, priors.mu_eta2, priors.mu_eta3)[which - 1]
    lp = _gauss_prior(eta_star, mu, 1.0)
    if which == 1:
        L, Li = Workspace._init_factor(np.exp(-eta * ws.d2), "Omega0")
        return lp + _init_terms(L, Li, ws.x[0], ws.p.sigma2_p)
    if which == 2:
        L, Li = Workspace._init_factor(np.exp(-eta * ws.d2), "Delta0")
        return lp + _init_terms(L, Li, ws.y[0], ws.p.sigma2_theta)
    return lp + _eta3_terms(ws, eta)[0]


def _eta3_terms(ws: Workspace, eta3: float):
    G, Xc = ws.grams(eta3)
    L_S = cholesky_stack(G[:-1] * ws.dd, "Sigma")
    Li_S = _inv_factors(L_S)
    L_O, Li_O = ws._omega_factors(ws.p.alpha, G, Xc)
    s = ws.p.sigma2 / 4.0
    val = (
        -0.5 * np.sum(_logdet(L_S))
        - 0.5 * np.sum(_logdet(L_O))
        - 0.5 * (ws.quad_y(Li_S=Li_S) + ws.quad_x(Li_O=Li_O)) / s
    )
    return float(val), (G, Xc, L_S, Li_S, L_O, Li_O)


# ---------------------------------------------------------------- updates

def _mh(cur_val: float, prop_val: float, g: np.random.Generator) -> bool:
    if not np.isfinite(prop_val):
        return False
    return bool(np.log(g.uniform()) < prop_val - cur_val)


def update_beta_star(ws: Workspace, priors: PriorConfig, scale: float, g: np.random.Generator) -> bool:
    cur = float(unconstrained_of(ws.p)[1])
    prop = cur + scale * g.standard_normal()
    if scale == 0.0:
        return True
    if _mh(log_target_beta(ws, priors, cur), log_target_beta(ws, priors, prop), g):
        ws.p = ws.p.with_(beta=float(np.tanh(prop / 2.0)))
        return True
    return False


def update_alpha_star(ws: Workspace, priors: PriorConfig, scale: float, g: np.random.Generator) -> bool:
    cur = float(unconstrained_of(ws.p)[0])
    prop = cur + scale * g.standard_normal()
    if scale == 0.0:
        return True
    a_new = float(np.tanh(prop / 2.0))
    try:
        new_val, factors = _alpha_terms(ws, a_new)
    except NumericalError as e:
        log.debug("alpha proposal rejected: %s", e)
        g.uniform()
        return False
    cur_val, _ = _alpha_terms(ws, ws.p.alpha, (ws.L_O, ws.Li_O))
    lp_cur = _gauss_prior(cur, 0.0, priors.sd_alpha_star) + cur_val
    lp_new = _gauss_prior(prop, 0.0, priors.sd_alpha_star) + new_val
    if _mh(lp_cur, lp_new, g):
        ws.p = ws.p.with_(alpha=a_new)
        ws.set_omega(*factors)
        return True
    return False


def update_sigma_theta(ws: Workspace, priors: PriorConfig, g: np.random.Generator) -> None:
    a, gam = priors.ig_theta
    q = _quad(ws.Li_D0, ws.y[0])
    ws.p = ws.p.with_(sigma2_theta=ig_sample(g, a + ws.n / 2.0, (gam + q) / 2.0))


def update_sigma_p(ws: Workspace, priors: PriorConfig, g: np.random.Generator) -> None:
    a, gam = priors.ig_p
    q = _quad(ws.Li_O0, ws.x[0])
    ws.p = ws.p.with_(sigma2_p=ig_sample(g, a + ws.n / 2.0, (gam + q) / 2.0))


def sigma2_conditional(ws: Workspace, priors: PriorConfig):
    """(shape, rate) of the inverse-gamma full conditional of sigma2."""
    a, gam = priors.ig_v
    zeta = ws.quad_y() + ws.quad_x()
    return a + ws.T * ws.n, gam / 2.0 + 2.0 * zeta


def update_sigma2(ws: Workspace, priors: PriorConfig, g: np.random.Generator) -> None:
    shape, rate = sigma2_conditional(ws, priors)
    ws.p = ws.p.with_(sigma2=ig_sample(g, shape, rate))


def update_eta(which: int, ws: Workspace, priors: PriorConfig, scale: float, g: np.random.Generator) -> bool:
    if which == 3 and priors.eta3_mode != "sample":
        return True
    cur = float(unconstrained_of(ws.p)[1 + which])
    prop = cur + scale * g.standard_normal()
    if scale == 0.0:
        return True
    mu = (priors.mu_eta1, priors.mu_eta2, priors.mu_eta3)[which - 1]
    eta = float(np.exp(prop))
    try:
        if which == 3:
            new_val, cache = _eta3_terms(ws, eta)
            cur_val = _current_eta3_terms(ws)
        else:
            L, Li = Workspace._init_factor(np.exp(-eta * ws.d2), "Omega0" if which == 1 else "Delta0")
            v, sc = (ws.x[0], ws.p.sigma2_p) if which == 1 else (ws.y[0], ws.p.sigma2_theta)
            new_val = _init_terms(L, Li, v, sc)
            cur_val = _init_terms(*((ws.L_O0, ws.Li_O0) if which == 1 else (ws.L_D0, ws.Li_D0)), v, sc)
    except NumericalError as e:
        log.debug("eta%d proposal rejected: %s", which, e)
        g.uniform()
        return False
    if not _mh(_gauss_prior(cur, mu, 1.0) + cur_val, _gauss_prior(prop, mu, 1.0) + new_val, g):
        return False
    if which == 1:
        ws.p = ws.p.with_(eta1=eta)
        ws.L_O0, ws.Li_O0 = L, Li
    elif which == 2:
        ws.p = ws.p.with_(eta2=eta)
        ws.L_D0, ws.Li_D0 = L, Li
    else:
        ws.p = ws.p.with_(eta3=eta)
        ws.G, ws.Xc, ws.L_S, ws.Li_S, ws.L_O, ws.Li_O = cache
    return True


def _current_eta3_terms(ws: Workspace) -> float:
    s = ws.p.sigma2 / 4.0
    return float(
        -0.5 * np.sum(_logdet(ws.L_S))
        - 0.5 * np.sum(_logdet(ws.L_O))
        - 0.5 * (ws.quad_y() + ws.quad_x()) / s
    )


# ---------------------------------------------------------------- collapsed updates

def _marginal_mh(ws, g, lp_cur, lp_prop_fn):
    try:
        lp_new, extra = lp_prop_fn()
    except NumericalError as e:
        log.debug("collapsed proposal rejected: %s", e)
        g.uniform()
        return False, None
    return _mh(lp_cur, lp_new, g), extra


def update_beta_star_marginal(ws: Workspace, priors: PriorConfig, scale: float, g: np.random.Generator) -> bool:
    """Random-walk Metropolis on beta* with the latent momentum integrated out."""
    cur = float(unconstrained_of(ws.p)[1])
    prop = cur + scale * g.standard_normal()
    if scale == 0.0:
        return True
    b_new = float(np.tanh(prop / 2.0))
    lp_cur = _gauss_prior(cur, 0.0, priors.sd_beta_star) + ws.current_mll()

    def new():
        return _gauss_prior(prop, 0.0, priors.sd_beta_star) + ws.marginal_loglik(beta=b_new).loglik, None

    ok, _ = _marginal_mh(ws, g, lp_cur, new)
    if ok:
        ws.p = ws.p.with_(beta=b_new)
    return ok


def update_alpha_star_marginal(ws: Workspace, priors: PriorConfig, scale: float, g: np.random.Generator) -> bool:
    cur = float(unconstrained_of(ws.p)[0])
    prop = cur + scale * g.standard_normal()
    if scale == 0.0:
        return True
    a_new = float(np.tanh(prop / 2.0))
    lp_cur = _gauss_prior(cur, 0.0, priors.sd_alpha_star) + ws.current_mll()

    def new():
        factors = ws._omega_factors(a_new)
        return _gauss_prior(prop, 0.0, priors.sd_alpha_star) + ws.marginal_loglik(alpha=a_new, L_O=factors[0]).loglik, factors

    ok, factors = _marginal_mh(ws, g, lp_cur, new)
    if ok:
        ws.p = ws.p.with_(alpha=a_new)
        ws.set_omega(*factors)
    return ok


def _log_ig_logscale(v, shape, gamma):
    # inverse-gamma log density of v plus the log-Jacobian of v = exp(u)
    return -(shape + 1.0) * np.log(v) - gamma / (2.0 * v) + np.log(v)


def update_log_sigma2_marginal(ws: Workspace, priors: PriorConfig, scale: float, g: np.random.Generator) -> bool:
    """Random-walk Metropolis on log(sigma2) with the latent momentum integrated out."""
    cur = float(np.log(ws.p.sigma2))
    prop = cur + scale * g.standard_normal()
    if scale == 0.0:
        return True
    s_new = float(np.exp(prop))
    shape, gamma = priors.ig_v
    lp_cur = _log_ig_logscale(ws.p.sigma2, shape, gamma) + ws.current_mll()

    def new():
        return _log_ig_logscale(s_new, shape, gamma) + ws.marginal_loglik(sigma2=s_new).loglik, None

    ok, _ = _marginal_mh(ws, g, lp_cur, new)
    if ok:
        ws.p = ws.p.with_(sigma2=s_new)
    return ok


def update_eta3_marginal(ws: Workspace, priors: PriorConfig, scale: float, g: np.random.Generator) -> bool:
    if priors.eta3_mode != "sample":
        return True
    cur = float(np.log(ws.p.eta3))
    prop = cur + scale * g.standard_normal()
    if scale == 0.0:
        return True
    e_new = float(np.exp(prop))
    lp_cur = _gauss_prior(cur, priors.mu_eta3, 1.0) + ws.current_mll()

    def new():
        G, Xc = ws.grams(e_new)
        L_S = cholesky_stack(G[:-1] * ws.dd, "Sigma")
        L_O = cholesky_stack(ws.omega_stack(ws.p.alpha, G, Xc), "Omega")
        val = ws.marginal_loglik(L_S=L_S, L_O=L_O).loglik
        return _gauss_prior(prop, priors.mu_eta3, 1.0) + val, (G, Xc, L_S, L_O)

    ok, cache = _marginal_mh(ws, g, lp_cur, new)
    if ok:
        G, Xc, L_S, L_O = cache
        ws.p = ws.p.with_(eta3=e_new)
        ws.G, ws.Xc, ws.L_S, ws.Li_S = G, Xc, L_S, _inv_factors(L_S)
        ws.set_omega(L_O, _inv_factors(L_O))
        ws._mll = None
    return ok


def update_latent_block(ws: Workspace, g: np.random.Generator) -> None:
    """Joint draw of x_0..x_T from p(x | y, theta) by forward filtering, backward sampling."""
    fr = ws.marginal_loglik(keep=True)
    ws.x = backward_sample(fr, ws.p.alpha, g)


def latent_precision(ws: Workspace, t: int):
    """Precision P and linear term b of the exact full conditional of x_t.

    x_t enters the density of x_t itself (or the x_0 prior), of x_{t+1}
    through its mean alpha^2 x_t and of y_{t+1} through alpha D x_t.
    """
    p = ws.p
    s = p.sigma2 / 4.0
    a = p.alpha
    if t == 0:
        Oi0 = ws.Li_O0.T @ ws.Li_O0
        P = Oi0 / p.sigma2_p
        b = np.zeros(ws.n)
    else:
        Oi = ws.Li_O[t - 1].T @ ws.Li_O[t - 1]
        P = Oi / s
        b = Oi @ (a * a * ws.x[t - 1]) / s
    if t < ws.T:
        On = ws.Li_O[t].T @ ws.Li_O[t]
        Si = ws.Li_S[t].T @ ws.Li_S[t]
        DSi = ws.dinv[:, None] * Si
        P = P + (a**4 * On + a * a * DSi * ws.dinv[None, :]) / s
        b = b + (a * a * (On @ ws.x[t + 1]) + a * (DSi @ (ws.y[t + 1] - p.beta * ws.y[t]))) / s
    return P, b


def update_latent_0(ws: Workspace, g: np.random.Generator) -> None:
    P, b = latent_precision(ws, 0)
    ws.x[0] = draw_from_precision(P, b, g, "x0 precision")


def update_latent_t(ws: Workspace, t: int, g: np.random.Generator, mode: str = "exact") -> None:
    """Gibbs draw of x_t, t = 1..T.

    ``mode="exact"`` draws from the full conditional of the joint model;
    ``mode="transition"`` draws from N(alpha^2 x_{t-1}, (sigma2/4) Omega_t), ignoring
    the terms that involve x_{t+1} and y_{t+1}.
    """
    if not 1 <= t <= ws.T:
        raise ValueError(f"t must lie in 1..{ws.T}")
    if mode == "transition":
        s = ws.p.sigma2 / 4.0
        ws.x[t] = ws.p.alpha**2 * ws.x[t - 1] + np.sqrt(s) * (ws.L_O[t - 1] @ g.standard_normal(ws.n))
        return
    P, b = latent_precision(ws, t)
    ws.x[t] = draw_from_precision(P, b, g, f"x{t} precision")


def redraw_missing(ws: Workspace, g: Optional[np.random.Generator]) -> None:
    """Redraw missing y entries from their within-time Gaussian conditionals, then refresh factors.

    With ``g=None`` each entry is set to its conditional mean instead, in time
    order, which gives a starting state consistent with the dynamics.
    """
    if ws.missing is None:
        return
    p = ws.p
    s = p.sigma2 / 4.0
    for t in range(ws.T + 1):
        mis = ws.missing[t]
        if not mis.any():
            continue
        if t == 0:
            mean = np.zeros(ws.n)
            cov = p.sigma2_theta * (ws.L_D0 @ ws.L_D0.T)
        else:
            yp = ws.y[t - 1]
            mean = p.beta * yp + p.alpha * ws.dinv * ws.x[t - 1]
            cov = s * _dse((yp[:, None] - yp[None, :]) ** 2, p.eta3) * ws.dd
        obs = np.flatnonzero(~mis)
        ws.y[t, mis] = conditional_draw(mean, cov, obs, ws.y[t, obs], g, f"missing y{t}")
    ws.refresh_dynamic()


# ---------------------------------------------------------------- driver

def moment_init(d: StDataset, priors: PriorConfig, eta3: float, masses=None, alpha: float = 0.0) -> ParamVector:
    """Cheap data-based starting values used by the sampler and by the eta3 annealer."""
    y = d.y
    m = masses_for(d, masses)
    den = float(np.sum(y[:-1] ** 2))
    beta = float(np.clip(np.sum(y[1:] * y[:-1]) / den, -0.95, 0.95)) if den > 0 else 0.0
    r = y[1:] - beta * y[:-1]
    sigma2 = 4.0 * float(np.mean(r * r * m[None, :] ** 2)) / (2.0 * eta3)
    s2t = float(np.mean(y[0] ** 2))
    a_p, g_p = priors.ig_p
    s2p = (g_p / 2.0) / (a_p - 1.0) if a_p > 1 else (g_p / 2.0) / (a_p + 1.0)
    tiny = 1e-12
    return ParamVector(
        alpha,
        beta,
        max(sigma2, tiny),
        max(s2t, tiny),
        s2p,
        float(np.exp(priors.mu_eta1)),
        float(np.exp(priors.mu_eta2)),
        eta3,
    )


def _fill_missing(y: np.ndarray, missing: np.ndarray) -> np.ndarray:
    y = np.array(y, dtype=float)
    for t in range(y.shape[0]):
        mis = missing[t]
        if not mis.any():
            continue
        if (~mis).any():
            y[t, mis] = np.mean(y[t, ~mis])
        else:
            # borrow the nearest row that has observations
            order = sorted(range(y.shape[0]), key=lambda k: (abs(k - t), k))
            src = next((k for k in order if not missing[k].all()), None)
            y[t] = 0.0 if src is None else np.where(missing[src], np.mean(y[src, ~missing[src]]), y[src])
    return y


def sweep(ws: Workspace, priors: PriorConfig, scales: dict, g: np.random.Generator, latent_update: str = "exact", scheme: str = "collapsed") -> dict:
    """One full scan; returns per-update acceptance flags.

    ``scheme="gibbs"`` runs beta*, alpha*, sigma2_theta, sigma2_p, sigma2,
    eta1*, eta2*, [eta3*], x_0, x_1..x_T with every update conditional on x.
    ``scheme="collapsed"`` moves beta*, alpha*, log sigma2 and [eta3*] with x
    integrated out, then draws x_0..x_T jointly, then runs the updates that
    condition on x or y_0 (sigma2_theta, sigma2_p, eta1*, eta2*).
    """
    acc = {}
    if scheme == "collapsed":
        acc["beta_star"] = update_beta_star_marginal(ws, priors, scales["beta_star"], g)
        acc["alpha_star"] = update_alpha_star_marginal(ws, priors, scales["alpha_star"], g)
        acc["log_sigma2"] = update_log_sigma2_marginal(ws, priors, scales["log_sigma2"], g)
        if priors.eta3_mode == "sample":
            acc["eta3_star"] = update_eta3_marginal(ws, priors, scales["eta3_star"], g)
        update_latent_block(ws, g)
        update_sigma_theta(ws, priors, g)
        update_sigma_p(ws, priors, g)
        acc["eta1_star"] = update_eta(1, ws, priors, scales["eta1_star"], g)
        acc["eta2_star"] = update_eta(2, ws, priors, scales["eta2_star"], g)
    else:
        acc["beta_star"] = update_beta_star(ws, priors, scales["beta_star"], g)
        acc["alpha_star"] = update_alpha_star(ws, priors, scales["alpha_star"], g)
        update_sigma_theta(ws, priors, g)
        update_sigma_p(ws, priors, g)
        update_sigma2(ws, priors, g)
        acc["eta1_star"] = update_eta(1, ws, priors, scales["eta1_star"], g)
        acc["eta2_star"] = update_eta(2, ws, priors, scales["eta2_star"], g)
        if priors.eta3_mode == "sample":
            acc["eta3_star"] = update_eta(3, ws, priors, scales["eta3_star"], g)
        update_latent_0(ws, g)
        for t in range(1, ws.T + 1):
            update_latent_t(ws, t, g, latent_update)
    redraw_missing(ws, g)
    return acc


def resolve_eta3(d: StDataset, priors: PriorConfig, masses=None, missing=None) -> float:
    if priors.eta3_mode == "fixed" and priors.eta3_value is not None:
        return float(priors.eta3_value)
    if priors.eta3_mode == "sample":
        return float(np.exp(priors.mu_eta3))
    from .annealing import sa_eta3_mle

    if missing is not None and np.any(missing):
        missing = np.asarray(missing, dtype=bool)
        # wholly unobserved columns carry no information on eta3 and a filled
        # constant column would make the Grams degenerate, so drop them
        keep = np.flatnonzero(~missing.all(axis=0))
        if keep.size == 0:
            raise ValueError("every location is entirely missing")
        m = masses_for(d, masses)[keep]
        y = _fill_missing(d.y[:, keep], missing[:, keep])
        return sa_eta3_mle(StDataset(d.locs.subset(keep), y, None, d.dt), priors, masses=m)
    return sa_eta3_mle(d, priors, masses=masses)


def run_mcmc(
    d: StDataset,
    priors: PriorConfig,
    settings: McmcSettings,
    init: Optional[ParamVector] = None,
    masses=None,
    missing=None,
    keep_y: Optional[bool] = None,
) -> Chain:
    """Run one chain on observed rows ``d.y``.

    ``missing`` is an optional boolean mask of y entries to treat as unknown;
    they are filled in and redrawn every sweep, and their draws are returned
    in ``Chain.y`` (kept by default whenever a mask is given).
    """
    t0 = time.perf_counter()
    m = masses_for(d, masses)
    mask = None
    y = d.y
    if missing is not None:
        mask = np.asarray(missing, dtype=bool)
        if mask.shape != d.y.shape:
            raise ValueError(f"missing mask shape {mask.shape} differs from y shape {d.y.shape}")
        if not mask.any():
            mask = None
        else:
            y = _fill_missing(d.y, mask)
    if not np.all(np.isfinite(y)):
        raise ValueError("observations must be finite (mark gaps in the missing mask)")
    keep_y = mask is not None if keep_y is None else keep_y
    if init is None:
        eta3 = resolve_eta3(d, priors, m, mask)
        init = moment_init(StDataset(d.locs, y, None, d.dt), priors, eta3, m, alpha=INIT_ALPHA)
    elif priors.eta3_mode == "fixed" and priors.eta3_value is not None:
        init = init.with_(eta3=float(priors.eta3_value))
    x0 = np.zeros_like(y)
    try:
        ws = Workspace(y, x0, init, m, sq_distance_matrix(d.locs), mask)
        if settings.init_search:
            from .modes import apply_mode, mode_search

            search_ws = ws
            if mask is not None and mask.all(axis=0).any():
                # search on the observed columns; filled-in columns are not data
                keep = np.flatnonzero(~mask.all(axis=0))
                search_ws = Workspace(y[:, keep], x0[:, keep], init, m[keep], sq_distance_matrix(d.locs.subset(keep)))
            apply_mode(ws, mode_search(search_ws))
            init = ws.p
        if mask is not None:
            redraw_missing(ws, None)
    except NumericalError as e:
        raise SamplerError(str(e), -1, {"params": init.to_dict()}) from e

    scales = dict(settings.rw_scales)
    log_scales = {k: np.log(v) if v > 0 else None for k, v in scales.items()}
    active = ["beta_star", "alpha_star", "eta1_star", "eta2_star"]
    if priors.eta3_mode == "sample":
        active.append("eta3_star")
    if settings.scheme == "collapsed":
        active.append("log_sigma2")
    nd = settings.n_draws
    draws = np.empty((nd, len(PARAM_NAMES)))
    lat = np.empty((nd,) + y.shape) if settings.keep_latent else None
    ys = np.empty((nd,) + y.shape) if keep_y else None
    n_acc = {k: 0 for k in active}
    n_post = 0
    j = 0
    for it in range(settings.iterations):
        g = rngs.stream(settings.seed, rngs.MCMC, it)
        try:
            acc = sweep(ws, priors, scales, g, settings.latent_update, settings.scheme)
        except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as e:
            raise SamplerError(str(e), it, ws.snapshot()) from e
        if it < settings.burn_in:
            if settings.adapt:
                step = (it + 1) ** -0.6
                for k in active:
                    if log_scales[k] is not None:
                        log_scales[k] += step * (float(acc[k]) - settings.target_accept)
                        scales[k] = float(np.exp(log_scales[k]))
            continue
        n_post += 1
        for k in active:
            n_acc[k] += acc[k]
        if (it - settings.burn_in) % settings.thin == 0:
            draws[j] = ws.p.as_array()
            if lat is not None:
                lat[j] = ws.x
            if ys is not None:
                ys[j] = ws.y
            j += 1
    rates = {k: n_acc[k] / n_post for k in active}
    manifest = {
        "settings": settings.to_dict(),
        "priors": priors.to_dict(),
        "seed": settings.seed,
        "init": init.to_dict(),
        "final_rw_scales": scales,
        "n_draws": nd,
        "wall_time_s": time.perf_counter() - t0,
        "missing_entries": int(mask.sum()) if mask is not None else 0,
    }
    return Chain(draws, lat, rates, manifest, ys, ws.state())
