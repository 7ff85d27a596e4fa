"""Prior configuration, MCMC settings and parameter transforms."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..model import ParamVector

STAR_NAMES = ("alpha_star", "beta_star", "eta1_star", "eta2_star", "eta3_star")
# random-walk blocks: the five starred parameters, plus log(sigma2) in the collapsed scheme
RW_NAMES = STAR_NAMES + ("log_sigma2",)


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters.

    Inverse-gamma pairs are ``(shape, gamma)`` for the density
    ``x^-(shape+1) exp(-gamma / (2x))``. ``eta3_mode`` is ``"sample"`` or
    ``"fixed"``; in fixed mode ``eta3_value=None`` means "estimate by annealing".
    """

    sd_alpha_star: float = 10.0
    sd_beta_star: float = 10.0
    ig_v: tuple = (2.0, 2.0)
    ig_theta: tuple = (2.0, 2.0)
    ig_p: tuple = (2.0, 2.0)
    mu_eta1: float = 0.0
    mu_eta2: float = 0.0
    mu_eta3: float = 0.0
    eta3_mode: str = "fixed"
    eta3_value: Optional[float] = None

    def __post_init__(self):
        if not (self.sd_alpha_star > 0 and self.sd_beta_star > 0):
            raise ValueError("prior sds must be positive")
        for name in ("ig_v", "ig_theta", "ig_p"):
            shape, gamma = getattr(self, name)
            if not (shape > 0 and gamma > 0):
                raise ValueError(f"{name} needs positive shape and gamma")
            object.__setattr__(self, name, (float(shape), float(gamma)))
        if self.eta3_mode not in ("sample", "fixed"):
            raise ValueError("eta3_mode must be 'sample' or 'fixed'")
        if self.eta3_value is not None and not self.eta3_value > 0:
            raise ValueError("eta3_value must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class McmcSettings:
    iterations: int = 2000
    burn_in: int = 1000
    thin: int = 1
    rw_scales: dict = field(default_factory=lambda: {k: 0.1 for k in RW_NAMES})
    adapt: bool = True
    seed: int = 0
    keep_latent: bool = True
    latent_update: str = "exact"
    target_accept: float = 0.44
    scheme: str = "collapsed"
    # start from the dominant (alpha, beta, sigma2) mode of the marginal likelihood
    init_search: bool = True

    def __post_init__(self):
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.latent_update not in ("exact", "transition"):
            raise ValueError("latent_update must be 'exact' or 'transition'")
        if self.scheme not in ("collapsed", "gibbs"):
            raise ValueError("scheme must be 'collapsed' or 'gibbs'")
        scales = {k: 0.1 for k in RW_NAMES}
        unknown = set(self.rw_scales or {}) - set(RW_NAMES)
        if unknown:
            raise ValueError(f"unknown random-walk blocks {sorted(unknown)}")
        scales.update(self.rw_scales or {})
        if any(v < 0 for v in scales.values()):
            raise ValueError("random-walk scales must be non-negative")
        object.__setattr__(self, "rw_scales", scales)

    @property
    def n_draws(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thin))

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    # hyperparameters reported for the benchmark and real-data fits
    "gp3": PriorConfig(np.sqrt(500), np.sqrt(300), (170000, 2), (5500, 780), (800, 20), -3.0, -5.0, 0.0, "fixed", 2.6889),
    "gqn": PriorConfig(np.sqrt(500), np.sqrt(300), (750000, 2), (50000, 780), (900, 100), -3.0, -5.0, 0.0, "fixed", 10.5853),
    "alaska": PriorConfig(np.sqrt(500), np.sqrt(300), (450000, 2), (700, 780), (250, 100), -3.0, -5.0, 0.0, "fixed", None),
    "sea": PriorConfig(np.sqrt(500), np.sqrt(300), (35000, 2), (1000, 780), (90, 100), -3.0, -5.0, 0.0, "fixed", 14.2981),
}
# iteration counts used for the long benchmark and real-data runs
LONG_RUN_SETTINGS = McmcSettings(iterations=175000, burn_in=150000)


def to_unconstrained(alpha, beta, eta1, eta2, eta3) -> np.ndarray:
    """(alpha, beta, eta1..3) -> (alpha*, beta*, eta1*..3*), alpha* = log((1+alpha)/(1-alpha))."""
    return np.array(
        [
            np.log1p(alpha) - np.log1p(-alpha),
            np.log1p(beta) - np.log1p(-beta),
            np.log(eta1),
            np.log(eta2),
            np.log(eta3),
        ]
    )


def to_constrained(u) -> tuple:
    """Exact inverse of :func:`to_unconstrained`: alpha = tanh(alpha*/2), eta = exp(eta*)."""
    a, b, e1, e2, e3 = (float(v) for v in u)
    return np.tanh(a / 2.0), np.tanh(b / 2.0), np.exp(e1), np.exp(e2), np.exp(e3)


def unconstrained_of(p: ParamVector) -> np.ndarray:
    return to_unconstrained(p.alpha, p.beta, p.eta1, p.eta2, p.eta3)


def ig_sample(rng: np.random.Generator, shape: float, rate: float) -> float:
    """Draw from the inverse gamma with density ~ x^-(shape+1) exp(-rate/x)."""
    return rate / rng.gamma(shape)


def ig_logpdf(x: float, shape: float, rate: float) -> float:
    from scipy.special import gammaln

    return float(shape * np.log(rate) - gammaln(shape) - (shape + 1) * np.log(x) - rate / x)


def log_prior(p: ParamVector, priors: PriorConfig, include_eta3: bool = True) -> float:
    """Log prior density on the starred scale for alpha, beta, eta and natural scale for variances."""
    u = unconstrained_of(p)
    lp = -0.5 * (u[0] / priors.sd_alpha_star) ** 2 - 0.5 * (u[1] / priors.sd_beta_star) ** 2
    lp += -0.5 * (u[2] - priors.mu_eta1) ** 2 - 0.5 * (u[3] - priors.mu_eta2) ** 2
    if include_eta3:
        lp += -0.5 * (u[4] - priors.mu_eta3) ** 2
    for val, (shape, gamma) in ((p.sigma2, priors.ig_v), (p.sigma2_theta, priors.ig_theta), (p.sigma2_p, priors.ig_p)):
        lp += ig_logpdf(val, shape, gamma / 2.0)
    return float(lp)


def sample_prior(priors: PriorConfig, rng: np.random.Generator, eta3: float | None = None) -> ParamVector:
    a_s = rng.normal(0.0, priors.sd_alpha_star)
    b_s = rng.normal(0.0, priors.sd_beta_star)
    e1, e2, e3 = rng.normal([priors.mu_eta1, priors.mu_eta2, priors.mu_eta3], 1.0)
    s2 = ig_sample(rng, priors.ig_v[0], priors.ig_v[1] / 2.0)
    s2t = ig_sample(rng, priors.ig_theta[0], priors.ig_theta[1] / 2.0)
    s2p = ig_sample(rng, priors.ig_p[0], priors.ig_p[1] / 2.0)
    alpha, beta, eta1, eta2, eta3_draw = to_constrained([a_s, b_s, e1, e2, e3])
    return ParamVector(alpha, beta, s2, s2t, s2p, eta1, eta2, eta3 if eta3 is not None else eta3_draw)
