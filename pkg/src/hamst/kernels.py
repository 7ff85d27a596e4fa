"""Covariance kernels and jittered Cholesky factorisation."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import special

log = logging.getLogger(__name__)

JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)
# a factor whose smallest squared pivot is below this fraction of the mean
# diagonal is treated as a failed factorisation
PIVOT_FLOOR = 1e-12
SUPPORTED_SMOOTHNESS = (0.5, 1.5, 2.0, 2.5)


class NumericalError(ArithmeticError):
    """A covariance matrix could not be factorised."""

    def __init__(self, msg: str, ladder=()):
        super().__init__(msg)
        self.ladder = tuple(ladder)


@dataclass(frozen=True)
class SeKernel:
    variance: float = 1.0
    decay: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise ValueError(f"variance must be positive, got {self.variance}")
        if not (np.isfinite(self.decay) and self.decay > 0):
            raise ValueError(f"decay must be positive, got {self.decay}")


@dataclass(frozen=True)
class MaternKernel:
    variance: float = 1.0
    range: float = 1.0
    smoothness: float = 1.5

    def __post_init__(self):
        if not self.variance > 0 or not self.range > 0:
            raise ValueError("variance and range must be positive")
        if float(self.smoothness) not in SUPPORTED_SMOOTHNESS:
            raise ValueError(f"smoothness must be one of {SUPPORTED_SMOOTHNESS}")


def se_cov(k: SeKernel, sq_dist):
    """variance * exp(-decay * sq_dist)."""
    return k.variance * np.exp(-k.decay * np.asarray(sq_dist, dtype=float))


def dse_cov(k: SeKernel, sq_dist):
    """Covariance of the derivative process of an SE-kernel GP.

    ``2 decay variance exp(-decay h^2) (1 - 2 decay h^2)`` with ``h^2 = sq_dist``;
    this is ``-d^2/dh^2`` of :func:`se_cov` viewed as a function of the lag h.
    """
    h2 = np.asarray(sq_dist, dtype=float)
    e = k.decay
    return 2.0 * e * k.variance * np.exp(-e * h2) * (1.0 - 2.0 * e * h2)


def _bessel_k2(x):
    # K_2 from the upward recurrence K_{n+1} = K_{n-1} + (2n/x) K_n
    return special.k0(x) + 2.0 * special.k1(x) / x


def matern_cov(k: MaternKernel, dist):
    """Matern covariance with the sqrt(2 nu) d / range scaling.

    cov(d) = var * 2^(1-nu)/Gamma(nu) * (sqrt(2nu) d/range)^nu * K_nu(sqrt(2nu) d/range)
    """
    d = np.asarray(dist, dtype=float)
    nu = float(k.smoothness)
    r = np.sqrt(2.0 * nu) * d / k.range
    if nu == 0.5:
        out = np.exp(-r)
    elif nu == 1.5:
        out = (1.0 + r) * np.exp(-r)
    elif nu == 2.5:
        out = (1.0 + r + r * r / 3.0) * np.exp(-r)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (2.0 ** (1.0 - nu) / special.gamma(nu)) * r**nu * _bessel_k2(r)
        out = np.where(r == 0.0, 1.0, out)
        # K_2 underflows to 0 long before r^2 overflows; guard the product
        out = np.where(np.isfinite(out), out, 0.0)
    return k.variance * out


def _pivots_ok(L: np.ndarray, scale: float) -> bool:
    d = np.diagonal(L, axis1=-2, axis2=-1)
    return bool(np.all(d * d >= PIVOT_FLOOR * scale))


def cholesky_jittered(a: np.ndarray, what: str = "covariance") -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``a``, escalating diagonal jitter on failure.

    Jitter rungs are multiples of the mean diagonal. Returns ``(L, jitter)``.
    """
    a = np.asarray(a, dtype=float)
    scale = float(np.mean(np.diag(a))) if a.size else 1.0
    if not np.isfinite(scale) or scale <= 0:
        raise NumericalError(f"{what}: non-positive or non-finite diagonal", [])
    tried = []
    for rung in JITTER_LADDER:
        jit = rung * scale
        tried.append(jit)
        try:
            if jit:
                L = np.linalg.cholesky(a + jit * np.eye(a.shape[0]))
            else:
                L = np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            continue
        if not _pivots_ok(L, scale):
            continue
        if rung:
            log.debug("%s: Cholesky needed jitter %.3g", what, jit)
        return L, jit
    raise NumericalError(f"{what}: Cholesky failed after jitter ladder {tried}", tried)


def cholesky_stack(a: np.ndarray, what: str = "covariance") -> np.ndarray:
    """Factor a stack of matrices; same result as :func:`cholesky_jittered` per slice."""
    a = np.asarray(a, dtype=float)
    if a.shape[0] == 0:
        return a.copy()
    scales = np.mean(np.diagonal(a, axis1=-2, axis2=-1), axis=-1)
    try:
        L = np.linalg.cholesky(a)
        d = np.diagonal(L, axis1=-2, axis2=-1)
        if np.all(d * d >= PIVOT_FLOOR * scales[:, None]):
            return L
    except np.linalg.LinAlgError:
        pass
    return np.stack([cholesky_jittered(m, f"{what}[{i}]")[0] for i, m in enumerate(a)])


def gram(kernel, dist_matrix, jitter: float = 0.0) -> np.ndarray:
    """Kernel matrix plus ``jitter * I``.

    SE kernels take a squared-distance matrix, Matern kernels a distance matrix.
    """
    m = np.asarray(dist_matrix, dtype=float)
    if isinstance(kernel, SeKernel):
        g = se_cov(kernel, m)
    elif isinstance(kernel, MaternKernel):
        g = matern_cov(kernel, m)
    else:
        raise TypeError(f"unsupported kernel {kernel!r}")
    g = 0.5 * (g + g.T)
    if jitter:
        g = g + jitter * np.eye(g.shape[0])
    return g
