"""Forward simulation of the Hamiltonian process and the two benchmark generators."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as rngs
from .geometry import LocationSet, mass_field, sq_distance_matrix
from .kernels import MaternKernel, cholesky_jittered, matern_cov
from .model import ParamVector, StDataset, build_init_covs, dse_gram


class SimulationError(RuntimeError):
    pass


UNIT_SQUARE = (0.0, 1.0, 0.0, 1.0)


@dataclass
class SimConfig:
    n: int
    T: int
    params: ParamVector
    seed: int = 0
    dt: float = 1.0
    domain: tuple = UNIT_SQUARE
    scale_c: float = 1.0

    def __post_init__(self):
        if self.n < 1 or self.T < 1:
            raise ValueError("need n >= 1 and T >= 1")
        lo1, hi1, lo2, hi2 = self.domain
        if not (lo1 < hi1 and lo2 < hi2):
            raise ValueError("degenerate domain")


@dataclass
class Gp3Config:
    b0: tuple = (0.0, 10.0, 20.0)
    sigma2_eps: tuple = (1.0, 0.01, 2.0)
    a: tuple = (-0.75, 0.75, 0.25)
    kappa: tuple = (1.0, 1.5, 2.0)
    sigma2: tuple = (1.0, 2.0, 0.2)
    mix_p: tuple = (1 / 3, 1 / 3, 1 / 3)
    matern_smoothness: float = 2.0

    def __post_init__(self):
        k = len(self.b0)
        for name in ("sigma2_eps", "a", "kappa", "sigma2", "mix_p"):
            if len(getattr(self, name)) != k:
                raise ValueError(f"{name} must have {k} entries")
        if any(v < 0 for v in self.sigma2_eps):
            raise ValueError("sigma2_eps must be non-negative")
        if any(abs(v) >= 1 for v in self.a):
            raise ValueError("AR coefficients must lie in (-1, 1)")
        if any(v <= 0 for v in self.kappa) or any(v <= 0 for v in self.sigma2):
            raise ValueError("kappa and sigma2 must be positive")
        if any(v < 0 for v in self.mix_p) or not np.isclose(sum(self.mix_p), 1.0):
            raise ValueError("mix_p must be non-negative and sum to 1")


@dataclass
class GqnConfig:
    coef_sd: float = 0.001
    mix_threshold: float = 0.6
    mix_offset: float = 5.0
    kernel_decay: float = 1.0
    per_location_u: bool = False

    def __post_init__(self):
        if self.coef_sd < 0:
            raise ValueError("coef_sd must be non-negative")
        if not 0 < self.mix_threshold < 1:
            raise ValueError("mix_threshold must lie in (0, 1)")
        if not self.kernel_decay > 0:
            raise ValueError("kernel_decay must be positive")


def uniform_locations(n: int, seed: int, domain=UNIT_SQUARE, scale_c: float = 1.0) -> LocationSet:
    lo1, hi1, lo2, hi2 = domain
    g = rngs.stream(seed, rngs.LOCATIONS)
    pts = np.column_stack([g.uniform(lo1, hi1, n), g.uniform(lo2, hi2, n)])
    return LocationSet(pts, scale_c)


def _mvn(g: np.random.Generator, mean, cov, scale: float = 1.0, what: str = "covariance"):
    L, _ = cholesky_jittered(cov, what)
    return mean + np.sqrt(scale) * (L @ g.standard_normal(L.shape[0]))


def simulate_paths(
    locs: LocationSet,
    p: ParamVector,
    T: int,
    seed: int,
    dt: float = 1.0,
    masses=None,
    y0=None,
    x0=None,
) -> StDataset:
    """Draw one trajectory (y_0..y_T, x_0..x_T).

    y_t ~ N(beta y_{t-1} + dt alpha D x_{t-1}, sigma2 dt^4/4 D K(y_{t-1}) D)
    x_t ~ N(alpha^2 x_{t-1}, sigma2 dt^2/4 Omega_t(y_{t-1}, y_t))
    which at dt = 1 are exactly the conditionals used for inference.
    """
    m = mass_field(locs) if masses is None else np.asarray(masses, dtype=float)
    dinv = 1.0 / m
    n = len(locs)
    g0 = rngs.stream(seed, rngs.INIT)
    delta0, omega0 = build_init_covs(locs, p)
    y = np.empty((T + 1, n))
    x = np.empty((T + 1, n))
    y[0] = _mvn(g0, np.zeros(n), delta0, p.sigma2_theta, "Delta0") if y0 is None else y0
    x[0] = _mvn(g0, np.zeros(n), omega0, p.sigma2_p, "Omega0") if x0 is None else x0
    sy = p.sigma2 * dt**4 / 4.0
    sx = p.sigma2 * dt**2 / 4.0
    a2 = p.alpha**2
    for t in range(1, T + 1):
        g = rngs.stream(seed, rngs.STEP, t)
        k_prev = dse_gram(y[t - 1], y[t - 1], p.eta3)
        sigma = k_prev * np.outer(dinv, dinv)
        mean_y = p.beta * y[t - 1] + dt * p.alpha * dinv * x[t - 1]
        y[t] = _mvn(g, mean_y, sigma, sy, f"Sigma_{t - 1}")
        cross = dse_gram(y[t - 1], y[t], p.eta3)
        omega = a2 * k_prev + p.alpha * (cross + cross.T) + dse_gram(y[t], y[t], p.eta3)
        x[t] = _mvn(g, a2 * x[t - 1], omega, sx, f"Omega_{t}")
    return StDataset(locs, y, x, dt)


def simulate_hamiltonian(cfg: SimConfig) -> StDataset:
    locs = uniform_locations(cfg.n, cfg.seed, cfg.domain, cfg.scale_c)
    return simulate_paths(locs, cfg.params, cfg.T, cfg.seed, cfg.dt)


def simulate_replicates(locs: LocationSet, p: ParamVector, T: int, reps: int, seed: int) -> np.ndarray:
    """``reps`` independent y trajectories on fixed sites, shape (reps, T+1, n)."""
    m = mass_field(locs)
    out = np.empty((reps, T + 1, len(locs)))
    for r in range(reps):
        out[r] = simulate_paths(locs, p, T, rngs.child_seed(seed, rngs.REPLICATE, r), masses=m).y
    return out


def gen_gp_mixture3(n: int, T: int, cfg: Gp3Config, seed: int) -> StDataset:
    """Mixture of AR(1)-in-time Matern fields; one component per site.

    Row 0 holds omega = 0 and y = b0 + noise, rows 1..T follow the recursion.
    The returned latent rows are the omega field of each site's component.
    """
    locs = uniform_locations(n, seed)
    dist = np.sqrt(sq_distance_matrix(locs))
    k = len(cfg.b0)
    omega = np.zeros((k, T + 1, n))
    for j in range(k):
        cov = matern_cov(MaternKernel(cfg.sigma2[j], cfg.kappa[j], cfg.matern_smoothness), dist)
        L, _ = cholesky_jittered(cov, f"Matern_{j}")
        g = rngs.stream(seed, rngs.INNOVATION, j)
        xi = g.standard_normal((T, n)) @ L.T
        for t in range(1, T + 1):
            omega[j, t] = cfg.a[j] * omega[j, t - 1] + xi[t - 1]
    u = rngs.stream(seed, rngs.MIXTURE).uniform(size=n)
    edges = np.cumsum(cfg.mix_p)[:-1]
    comp = np.searchsorted(edges, u, side="right")
    cols = np.arange(n)
    x = omega[comp, :, cols].T
    b0 = np.asarray(cfg.b0, dtype=float)[comp]
    sd = np.sqrt(np.asarray(cfg.sigma2_eps, dtype=float))[comp]
    eps = rngs.stream(seed, rngs.NOISE).standard_normal((T + 1, n))
    y = b0[None, :] + x + sd[None, :] * eps
    ds = StDataset(locs, y, x)
    ds.component = comp
    return ds


def gen_gqn_mixture(n: int, T: int, cfg: GqnConfig, seed: int) -> StDataset:
    """General quadratic nonlinear latent dynamics observed through tan()."""
    locs = uniform_locations(n, seed)
    dist = np.sqrt(sq_distance_matrix(locs))
    L, _ = cholesky_jittered(np.exp(-cfg.kernel_decay * dist), "GQN kernel")

    def gp(g, rows):
        return g.standard_normal((rows, n)) @ L.T

    gc = rngs.stream(seed, rngs.COEF)
    a = gc.normal(0.0, cfg.coef_sd, (n, n))
    b = gc.normal(0.0, cfg.coef_sd, (n, n, n))
    gl = rngs.stream(seed, rngs.INIT)
    x = np.empty((T + 1, n))
    x[0] = gp(gl, 1)[0]
    eta = gp(rngs.stream(seed, rngs.INNOVATION), T)
    for t in range(1, T + 1):
        prev = x[t - 1]
        x[t] = a @ prev + np.einsum("ijl,j,l->i", b, prev, prev * prev) + eta[t - 1]
        if not np.all(np.abs(x[t]) <= 1e6):
            raise SimulationError(f"latent field blew up at t={t}; use a smaller coef_sd")
    go = rngs.stream(seed, rngs.NOISE)
    phi1, phi2, eps = gp(go, T + 1), gp(go, T + 1), gp(go, T + 1)
    gm = rngs.stream(seed, rngs.MIXTURE)
    u = gm.uniform(size=n) if cfg.per_location_u else np.full(n, gm.uniform())
    shift = np.where(u < cfg.mix_threshold, 0.0, cfg.mix_offset)
    y = shift[None, :] + phi1 + phi2 * np.tan(x) + eps
    ds = StDataset(locs, y, x)
    ds.u = u
    return ds
