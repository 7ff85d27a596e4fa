"""Covariance assembly and log-densities of the Hamiltonian spatio-temporal model.

Observation and latent recursions (unit leap-frog step):

    y_t = beta y_{t-1} + alpha D x_{t-1} - (1/2) D W_{t-1}
    x_t = alpha^2 x_{t-1} - (1/2) (alpha W_{t-1} + W_t)

where ``D = diag(1/M_s)`` and ``W_t`` holds the derivative of the random
potential evaluated at the observations ``y_t``. The Sigma and Omega matrices
below are built *without* the potential variance sigma2; densities apply the
``sigma2 / 4`` factor.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .geometry import LocationSet, mass_field, sq_distance_matrix
from .kernels import cholesky_jittered

LOG2PI = float(np.log(2.0 * np.pi))
PARAM_NAMES = ("alpha", "beta", "sigma2", "sigma2_theta", "sigma2_p", "eta1", "eta2", "eta3")


@dataclass(frozen=True)
class ParamVector:
    alpha: float
    beta: float
    sigma2: float
    sigma2_theta: float
    sigma2_p: float
    eta1: float
    eta2: float
    eta3: float

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (np.isfinite(v) and abs(v) < 1):
                raise ValueError(f"|{name}| must be < 1, got {v}")
        for name in PARAM_NAMES[2:]:
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in PARAM_NAMES], dtype=float)

    @classmethod
    def from_array(cls, a) -> "ParamVector":
        return cls(*(float(v) for v in a))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def with_(self, **kw) -> "ParamVector":
        return replace(self, **kw)


@dataclass
class StDataset:
    """Observed rows y_0..y_T (and optionally latent rows) at ``len(locs)`` sites."""

    locs: LocationSet
    y: np.ndarray
    x: Optional[np.ndarray] = None
    dt: float = 1.0

    def __post_init__(self):
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if self.y.shape[1] != len(self.locs):
            raise ValueError(f"y has {self.y.shape[1]} columns but there are {len(self.locs)} sites")
        if self.y.shape[0] < 2:
            raise ValueError("need at least two time rows (T >= 1)")
        if self.x is not None:
            self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
            if self.x.shape != self.y.shape:
                raise ValueError(f"x shape {self.x.shape} differs from y shape {self.y.shape}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def n(self) -> int:
        return self.y.shape[1]

    @property
    def T(self) -> int:
        return self.y.shape[0] - 1

    def with_latent(self, x) -> "StDataset":
        return StDataset(self.locs, self.y, x, self.dt)


def masses_for(d: StDataset, masses=None) -> np.ndarray:
    if masses is None:
        return mass_field(d.locs)
    return np.asarray(masses, dtype=float)


# ---------------------------------------------------------------- builders

def dse_gram(u: np.ndarray, v: np.ndarray, eta3: float) -> np.ndarray:
    """Unit-variance derivative-SE kernel between scalar values ``u`` and ``v``."""
    h2 = (np.asarray(u, dtype=float)[:, None] - np.asarray(v, dtype=float)[None, :]) ** 2
    return 2.0 * eta3 * np.exp(-eta3 * h2) * (1.0 - 2.0 * eta3 * h2)


def mu_t(y_t, x_t, p: ParamVector, masses) -> np.ndarray:
    return p.beta * np.asarray(y_t) + p.alpha * np.asarray(x_t) / np.asarray(masses)


def build_sigma(y_t, p: ParamVector, masses) -> np.ndarray:
    dinv = 1.0 / np.asarray(masses, dtype=float)
    return dse_gram(y_t, y_t, p.eta3) * np.outer(dinv, dinv)


def omega_blocks(y_prev, y_curr, eta3: float):
    """(S_prev, S_cross, S_curr) with ``Omega = a^2 S_prev + a (S_cross + S_cross^T) + S_curr``."""
    return dse_gram(y_prev, y_prev, eta3), dse_gram(y_prev, y_curr, eta3), dse_gram(y_curr, y_curr, eta3)


def combine_omega(blocks, alpha: float) -> np.ndarray:
    s_prev, s_cross, s_curr = blocks
    return alpha * alpha * s_prev + alpha * (s_cross + s_cross.T) + s_curr


def build_omega(y_prev, y_curr, p: ParamVector) -> np.ndarray:
    return combine_omega(omega_blocks(y_prev, y_curr, p.eta3), p.alpha)


def build_init_covs(locs: LocationSet, p: ParamVector):
    """Unit-variance SE Grams for y_0 (decay eta2) and x_0 (decay eta1)."""
    d2 = sq_distance_matrix(locs)
    return np.exp(-p.eta2 * d2), np.exp(-p.eta1 * d2)


@dataclass
class CovBundle:
    Sigma: list
    Omega: list
    Delta0: np.ndarray
    Omega0: np.ndarray
    chol_Sigma: list = field(default_factory=list)
    chol_Omega: list = field(default_factory=list)
    chol_Delta0: np.ndarray = None
    chol_Omega0: np.ndarray = None


def build_bundle(d: StDataset, p: ParamVector, masses=None) -> CovBundle:
    m = masses_for(d, masses)
    y = d.y
    sig = [build_sigma(y[t], p, m) for t in range(d.T)]
    om = [build_omega(y[t - 1], y[t], p) for t in range(1, d.T + 1)]
    delta0, omega0 = build_init_covs(d.locs, p)
    return CovBundle(
        sig,
        om,
        delta0,
        omega0,
        [cholesky_jittered(s, f"Sigma_{t}")[0] for t, s in enumerate(sig)],
        [cholesky_jittered(o, f"Omega_{t + 1}")[0] for t, o in enumerate(om)],
        cholesky_jittered(delta0, "Delta0")[0],
        cholesky_jittered(omega0, "Omega0")[0],
    )


# ---------------------------------------------------------------- densities

def mvn_logpdf_chol(r: np.ndarray, L: np.ndarray, scale: float = 1.0) -> float:
    """log N(r; 0, scale * L L^T)."""
    z = solve_triangular(L, r, lower=True, check_finite=False)
    n = r.shape[0]
    return float(
        -0.5 * n * (LOG2PI + np.log(scale)) - np.sum(np.log(np.diag(L))) - 0.5 * (z @ z) / scale
    )


def quad_chol(r: np.ndarray, L: np.ndarray) -> float:
    z = solve_triangular(L, r, lower=True, check_finite=False)
    return float(z @ z)


def _need_latent(d: StDataset):
    if d.x is None:
        raise ValueError("dataset carries no latent rows")


def loglik_data(d: StDataset, p: ParamVector, masses=None, bundle: CovBundle | None = None) -> float:
    """sum_t log N(y_t; mu_{t-1}, (sigma2/4) Sigma_{t-1}), t = 1..T."""
    _need_latent(d)
    m = masses_for(d, masses)
    b = bundle or build_bundle(d, p, m)
    s = p.sigma2 / 4.0
    return sum(
        mvn_logpdf_chol(d.y[t] - mu_t(d.y[t - 1], d.x[t - 1], p, m), b.chol_Sigma[t - 1], s)
        for t in range(1, d.T + 1)
    )


def loglik_latent(d: StDataset, p: ParamVector, masses=None, bundle: CovBundle | None = None) -> float:
    """sum_t log N(x_t; alpha^2 x_{t-1}, (sigma2/4) Omega_t), t = 1..T."""
    _need_latent(d)
    b = bundle or build_bundle(d, p, masses)
    s = p.sigma2 / 4.0
    a2 = p.alpha**2
    return sum(
        mvn_logpdf_chol(d.x[t] - a2 * d.x[t - 1], b.chol_Omega[t - 1], s) for t in range(1, d.T + 1)
    )


def logprior_init(d: StDataset, p: ParamVector, bundle: CovBundle | None = None) -> float:
    """log N(y_0; 0, sigma2_theta Delta0) + log N(x_0; 0, sigma2_p Omega0)."""
    _need_latent(d)
    b = bundle or build_bundle(d, p)
    return mvn_logpdf_chol(d.y[0], b.chol_Delta0, p.sigma2_theta) + mvn_logpdf_chol(
        d.x[0], b.chol_Omega0, p.sigma2_p
    )


def log_joint(d: StDataset, p: ParamVector, masses=None) -> float:
    """Complete-data log density of all (y, x) rows given the parameters."""
    _need_latent(d)
    m = masses_for(d, masses)
    b = build_bundle(d, p, m)
    return loglik_data(d, p, m, b) + loglik_latent(d, p, m, b) + logprior_init(d, p, b)
