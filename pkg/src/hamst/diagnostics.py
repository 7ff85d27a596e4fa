"""Empirical checks: spatial correlation surfaces, lagged-correlation decay,
a recursive stationarity detector and chain summaries."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import ks_2samp

from . import rng as rngs
from .geometry import LocationSet, mass_field, sq_distance_matrix
from .kernels import MaternKernel, SeKernel, cholesky_jittered, matern_cov, se_cov
from .model import ParamVector, StDataset
from .simulate import simulate_paths, uniform_locations
from .inference.geweke import batch_means_se
from .inference.sampler import Chain

GENERATORS = ("hamiltonian", "se_gp", "matern32_gp", "matern52_gp")


# ---------------------------------------------------------------- correlation surfaces

@dataclass
class CorrConfig:
    n: int = 10
    T: int = 4
    params: ParamVector = field(default_factory=lambda: ParamVector(0.9, 0.9, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0))
    # unit variance and unit decay/range for the three GP comparators
    gp_variance: float = 1.0
    gp_scale: float = 1.0


@dataclass
class CorrSurface:
    corr: np.ndarray
    reps: int
    generator: str

    def off_diagonal(self) -> np.ndarray:
        return self.corr[~np.eye(self.corr.shape[0], dtype=bool)]

    def n_negative(self) -> int:
        return int(np.sum(self.off_diagonal() < 0)) // 2


def _gp_cov(generator: str, locs: LocationSet, cfg: CorrConfig) -> np.ndarray:
    if generator == "se_gp":
        return se_cov(SeKernel(cfg.gp_variance, cfg.gp_scale), sq_distance_matrix(locs))
    nu = {"matern32_gp": 1.5, "matern52_gp": 2.5}[generator]
    return matern_cov(MaternKernel(cfg.gp_variance, cfg.gp_scale, nu), np.sqrt(sq_distance_matrix(locs)))


def sample_field(generator: str, reps: int, cfg: CorrConfig = CorrConfig(), seed: int = 0) -> np.ndarray:
    """Replicated fields of shape (reps, T, n) for rows t = 1..T.

    The Hamiltonian replicates share one draw of (y_0, x_0) and differ in the
    dynamics; the GP comparators draw T independent spatial fields per replicate.
    """
    if generator not in GENERATORS:
        raise ValueError(f"generator must be one of {GENERATORS}")
    locs = uniform_locations(cfg.n, seed)
    if generator == "hamiltonian":
        m = mass_field(locs)
        start = simulate_paths(locs, cfg.params, 1, seed, masses=m)
        out = np.empty((reps, cfg.T, cfg.n))
        for r in range(reps):
            d = simulate_paths(
                locs, cfg.params, cfg.T, rngs.child_seed(seed, rngs.REPLICATE, r), masses=m, y0=start.y[0], x0=start.x[0]
            )
            out[r] = d.y[1:]
        return out
    L, _ = cholesky_jittered(_gp_cov(generator, locs, cfg), generator)
    z = rngs.stream(seed, rngs.REPLICATE).standard_normal((reps, cfg.T, cfg.n))
    return z @ L.T


def corr_experiment(generator: str, reps: int = 1000, cfg: CorrConfig = CorrConfig(), seed: int = 0) -> CorrSurface:
    """Sample spatial correlation across replicates.

    Each time row is centred by its across-replicate mean, then rows from all
    replicates and times are pooled and correlated column-wise.
    """
    if reps < 2:
        raise ValueError("need reps >= 2")
    y = sample_field(generator, reps, cfg, seed)
    z = (y - y.mean(axis=0, keepdims=True)).reshape(-1, cfg.n)
    c = np.corrcoef(z, rowvar=False)
    c = np.clip(0.5 * (c + c.T), -1.0, 1.0)
    np.fill_diagonal(c, 1.0)
    return CorrSurface(c, reps, generator)


# ---------------------------------------------------------------- temporal decay

@dataclass
class DecayCurve:
    lags: np.ndarray
    rao_blackwell: np.ndarray
    empirical: np.ndarray
    reps: int


def temporal_decay(p: ParamVector, lags=range(1, 9), reps: int = 5000, n: int = 10, seed: int = 0, start: int = 0) -> DecayCurve:
    """|corr(Y(s,t0), Y(s,t0+k))| over replicate trajectories, pooled over sites.

    The Rao-Blackwellised estimate replaces Y(s,t0+k) in the cross moment by its
    conditional mean given (y_t0, x_t0), which follows the noise-free
    recursion; the denominator uses the empirical spread of Y(s,t0+k).
    """
    lags = np.asarray(list(lags), dtype=int)
    K = int(lags.max())
    locs = uniform_locations(n, seed)
    m = mass_field(locs)
    paths = [simulate_paths(locs, p, start + K, rngs.child_seed(seed, rngs.REPLICATE, r), masses=m) for r in range(reps)]
    Y = np.array([d.y for d in paths])
    X = np.array([d.x for d in paths])
    y0, x0 = Y[:, start], X[:, start]
    a = y0 - y0.mean(axis=0)
    sd0 = np.sqrt(np.mean(a * a))
    y, x = y0.copy(), x0.copy()
    rb, emp = [], []
    for k in range(1, K + 1):
        y, x = p.beta * y + p.alpha * x / m, p.alpha**2 * x
        yk = Y[:, start + k] - Y[:, start + k].mean(axis=0)
        sdk = np.sqrt(np.mean(yk * yk))
        if k in lags:
            b = y - y.mean(axis=0)
            rb.append(abs(np.mean(a * b)) / (sd0 * sdk))
            emp.append(abs(np.mean(a * yk)) / (sd0 * sdk))
    return DecayCurve(lags, np.array(rb), np.array(emp), reps)


def lagged_correlation_curve(d: StDataset, space_bins, time_lags, min_pairs: int = 30):
    """Pearson correlation of observation pairs grouped by (distance bin, time lag).

    Returns rows ``(bin_lo, bin_hi, lag, estimate, count)``; ``estimate`` is nan
    when the bin holds fewer than ``min_pairs`` pairs. A pair of a site with
    itself at the same time is never formed.
    """
    edges = np.asarray(space_bins, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("space_bins must be increasing bin edges")
    y = d.y
    T1, n = y.shape
    dist = np.sqrt(sq_distance_matrix(d.locs))
    rows = []
    for k in time_lags:
        k = int(k)
        if not 0 <= k < T1:
            raise ValueError(f"time lag {k} outside 0..{T1 - 1}")
        a = y[: T1 - k]
        b = y[k:]
        for lo, hi in zip(edges[:-1], edges[1:]):
            sel = (dist >= lo) & (dist < hi)
            if k == 0:
                sel &= ~np.eye(n, dtype=bool)
            i, j = np.nonzero(sel)
            u = a[:, i].ravel()
            v = b[:, j].ravel()
            cnt = u.size
            est = float("nan")
            if cnt >= min_pairs and u.std() > 0 and v.std() > 0:
                est = float(np.corrcoef(u, v)[0, 1])
            rows.append((float(lo), float(hi), k, est, int(cnt)))
    if all(np.isnan(r[3]) for r in rows):
        raise ValueError("every (distance, lag) bin is undefined; widen bins or lower min_pairs")
    return rows


# ---------------------------------------------------------------- stationarity

@dataclass
class StationarityReport:
    posterior_means: np.ndarray
    thresholds: np.ndarray
    distances: np.ndarray
    indicators: np.ndarray
    verdict: str
    flags: tuple = ()

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "final_posterior_mean": float(self.posterior_means[-1]) if self.posterior_means.size else None,
            "posterior_means": self.posterior_means.tolist(),
            "thresholds": self.thresholds.tolist(),
            "ks_distances": self.distances.tolist(),
            "indicators": self.indicators.astype(int).tolist(),
            "flags": list(self.flags),
        }


def ks_floor(n_region: int, n_rest: int, coef: float = 1.95) -> float:
    """Two-sample KS critical distance ``coef * sqrt((n + m) / (n m))`` (coef 1.95 is about the 0.1% level)."""
    return coef * np.sqrt((n_region + n_rest) / (n_region * n_rest))


def stationarity_detect(d: StDataset, c0: float = 0.5, prior=(1.0, 1.0), floor_coef: float = 1.95) -> StationarityReport:
    """Recursive Bayesian stationarity check over regions (one region = one site's series).

    Region j is compared by two-sample KS distance with the pooled data of all
    other regions. ``I_j = 1{D_j < c_j}`` with the decreasing threshold
    ``c_j = c0 / (1 + log(1 + j))`` held above the KS sampling noise floor,
    and ``(a, b)`` of a Beta posterior gain ``(I_j, 1 - I_j)``.
    """
    y = np.asarray(d.y, dtype=float)
    T1, n = y.shape
    if n < 2:
        raise ValueError("need at least two regions")
    if not 0 < c0:
        raise ValueError("c0 must be positive")
    a, b = map(float, prior)
    if np.ptp(y) == 0:
        z = np.zeros(0)
        return StationarityReport(z, z, z, z.astype(bool), "inconclusive", ("constant data",))
    D = np.empty(n)
    c = np.empty(n)
    ind = np.empty(n, dtype=bool)
    pm = np.empty(n)
    for j in range(n):
        rest = np.delete(y, j, axis=1).ravel()
        D[j] = ks_2samp(y[:, j], rest).statistic
        c[j] = max(c0 / (1.0 + np.log(2.0 + j)), ks_floor(T1, rest.size, floor_coef))
        ind[j] = D[j] < c[j]
        a += ind[j]
        b += 1.0 - ind[j]
        pm[j] = a / (a + b)
    final = pm[-1]
    verdict = "stationary" if final > 0.9 else "nonstationary" if final < 0.1 else "inconclusive"
    return StationarityReport(pm, c, D, ind, verdict)


# ---------------------------------------------------------------- chains

# which sampler update moves each parameter; conjugate draws always move
_UPDATE_OF = {
    "alpha": "alpha_star",
    "beta": "beta_star",
    "sigma2": "log_sigma2",
    "eta1": "eta1_star",
    "eta2": "eta2_star",
    "eta3": "eta3_star",
}


@dataclass
class ChainSummary:
    names: tuple
    mean: np.ndarray
    sd: np.ndarray
    mcse: np.ndarray
    acceptance: np.ndarray

    def rows(self):
        return list(zip(self.names, self.mean, self.sd, self.mcse, self.acceptance))

    def table(self) -> str:
        head = f"{'parameter':>13s} {'mean':>12s} {'sd':>12s} {'mcse':>12s} {'accept':>7s}"
        lines = [head]
        for k, m, s, e, a in self.rows():
            lines.append(f"{k:>13s} {m:12.5g} {s:12.5g} {e:12.5g} {a:7.3f}")
        return "\n".join(lines)


def chain_summary(chain: Chain, n_batches: int = 50) -> ChainSummary:
    draws = np.asarray(chain.draws, dtype=float)
    if draws.shape[0] < 10:
        raise ValueError("need at least 10 retained draws")
    rates = chain.acceptance_rates or {}
    acc = []
    for k in chain.columns:
        u = _UPDATE_OF.get(k)
        if u is None:
            acc.append(1.0)
        elif u in rates:
            acc.append(float(rates[u]))
        elif k == "sigma2":
            # Gibbs scheme: sigma2 is a conjugate draw
            acc.append(1.0)
        else:
            # held fixed
            acc.append(float("nan"))
    return ChainSummary(
        tuple(chain.columns),
        draws.mean(axis=0),
        draws.std(axis=0, ddof=1),
        batch_means_se(draws, n_batches),
        np.array(acc),
    )
