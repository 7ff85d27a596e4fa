"""Exact marginalisation of the latent momentum given the observed rows.

Given y the model is linear-Gaussian in x: x_0 ~ N(0, sigma2_p Omega0),
y_t = beta y_{t-1} + alpha D x_{t-1} + noise((sigma2/4) Sigma_{t-1}) and
x_t = alpha^2 x_{t-1} + noise((sigma2/4) Omega_t), with Sigma and Omega known
once y is. A Kalman filter therefore gives log p(y_1..y_T | y_0, theta) exactly
and backward sampling gives a joint draw of x_0..x_T.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from ..kernels import NumericalError, cholesky_jittered
from ..model import LOG2PI

# eigenvalues below -NEG_TOL * largest eigenvalue mean the matrix is not a covariance
NEG_TOL = 1e-6


def psd_sqrt(cov: np.ndarray, what: str = "covariance") -> np.ndarray:
    """Symmetric square root of a positive semi-definite matrix, clipping roundoff negatives."""
    w, V = np.linalg.eigh(cov)
    top = max(float(w[-1]), 0.0)
    if not np.all(np.isfinite(w)) or w[0] < -NEG_TOL * top:
        raise NumericalError(f"{what}: not positive semi-definite (min eig {w[0]:.3g}, max {top:.3g})")
    return V * np.sqrt(np.clip(w, 0.0, None))[None, :]


@dataclass
class FilterResult:
    loglik: float
    m: list  # x_{t-1} | y_0..y_t, t = 1..T, then x_T | y_0..y_T
    C: list
    Q: list  # predictive covariance of x_t given y_0..y_t, t = 1..T
    W: list  # transition noise covariance (sigma2/4) Omega_t, t = 1..T


def kalman_filter(y, dinv, alpha, beta, s, sigma, omega, P0, keep: bool = False) -> FilterResult:
    """Filter over t = 1..T.

    ``sigma`` stacks Sigma_0..Sigma_{T-1}, ``omega`` stacks Omega_1..Omega_T
    (both without the s = sigma2/4 factor); ``P0`` is the x_0 prior covariance.
    """
    T, n = y.shape[0] - 1, y.shape[1]
    ad = alpha * dinv
    a2 = alpha * alpha
    eye = np.eye(n)
    m = np.zeros(n)
    P = P0
    ll = 0.0
    ms, Cs, Qs, Ws = [], [], [], []
    for t in range(1, T + 1):
        e = y[t] - beta * y[t - 1] - ad * m
        PA = P * ad[None, :]
        R = s * sigma[t - 1]
        S = ad[:, None] * PA + R
        L, _ = cholesky_jittered(S, f"innovation covariance {t}")
        z = solve_triangular(L, e, lower=True, check_finite=False)
        ll += -0.5 * n * LOG2PI - float(np.sum(np.log(np.diag(L)))) - 0.5 * float(z @ z)
        K = cho_solve((L, True), PA.T, check_finite=False).T
        m = m + K @ e
        IKA = eye - K * ad[None, :]
        C = IKA @ P @ IKA.T + K @ R @ K.T
        C = 0.5 * (C + C.T)
        if keep:
            ms.append(m)
            Cs.append(C)
        m = a2 * m
        W = s * omega[t - 1]
        P = a2 * a2 * C + W
        P = 0.5 * (P + P.T)
        if keep:
            Qs.append(P)
            Ws.append(W)
    if keep:
        ms.append(m)
        Cs.append(P)
    return FilterResult(ll, ms, Cs, Qs, Ws)


def backward_sample(fr: FilterResult, alpha: float, g: np.random.Generator) -> np.ndarray:
    """Joint draw of x_0..x_T from the stored filter output."""
    T = len(fr.Q)
    n = fr.m[0].shape[0]
    a2 = alpha * alpha
    x = np.empty((T + 1, n))
    x[T] = fr.m[T] + psd_sqrt(fr.C[T], "x_T smoothing covariance") @ g.standard_normal(n)
    for t in range(T - 1, -1, -1):
        C, Q = fr.C[t], fr.Q[t]
        LQ, _ = cholesky_jittered(Q, f"predictive covariance {t + 1}")
        J = a2 * cho_solve((LQ, True), C, check_finite=False).T
        mean = fr.m[t] + J @ (x[t + 1] - a2 * fr.m[t])
        # Joseph form: stays positive semi-definite where C - a2 J C cancels badly
        IJ = np.eye(n) - a2 * J
        cov = IJ @ C @ IJ.T + J @ fr.W[t] @ J.T
        cov = 0.5 * (cov + cov.T)
        x[t] = mean + psd_sqrt(cov, f"x_{t} smoothing covariance") @ g.standard_normal(n)
    return x
