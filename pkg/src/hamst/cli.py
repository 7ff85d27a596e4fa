"""Command-line front end.

    hamst generate {hamiltonian,gp3,gqn} CONFIG
    hamst fit CONFIG
    hamst predict CONFIG
    hamst diagnose {corr-experiment,lag-curve,stationarity} CONFIG

Exit codes: 0 success, 2 invalid config or data, 3 I/O failure, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import io as hio
from .config import (
    PRESET_SCALE_C,
    ConfigError,
    DiagnoseConfig,
    FitConfig,
    GenerateConfig,
    PredictConfig,
    load_config,
)
from .diagnostics import CorrConfig, chain_summary, corr_experiment, lagged_correlation_curve, stationarity_detect
from .geometry import DomainError
from .inference.annealing import OptimizationError, sa_eta3_mle
from .inference.sampler import SamplerError, run_mcmc
from .kernels import NumericalError
from .model import StDataset
from .predict import interval_summary, predict_multi_step, reconstruct_locations
from .simulate import SimConfig, SimulationError, gen_gp_mixture3, gen_gqn_mixture, simulate_hamiltonian

OUTPUT_ENV = "HAMST_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("hamst")


class CliError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


# ---------------------------------------------------------------- helpers

def _out_dir(cfg, base: Path, command: str, override: str | None) -> Path:
    if override:
        out = Path(override)
    elif cfg.output:
        out = Path(cfg.output)
        out = out if out.is_absolute() else base / out
    else:
        out = Path(os.environ.get(OUTPUT_ENV, ".")) / command
    if out.exists() and any(out.iterdir()):
        if not cfg.overwrite:
            raise CliError(f"output directory {out} is not empty and overwrite = false", EXIT_CONFIG)
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _path(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def _load_data(sec, base: Path, scale_c: float | None = None) -> StDataset:
    c = sec.scale_c if sec.scale_c is not None else (scale_c or 1.0)
    locs = hio.read_locations(_path(base, sec.locations), c)
    y = hio.read_matrix(_path(base, sec.y), locs.ids)
    x = hio.read_matrix(_path(base, sec.x), locs.ids) if sec.x else None
    if not np.all(np.isfinite(y)):
        raise hio.DataError(f"{sec.y}: observations must be finite")
    try:
        return StDataset(locs, y, x)
    except ValueError as e:
        raise hio.DataError(str(e)) from None


def _manifest(out: Path, command: str, cfg, digest: str, t0: float, **extra) -> None:
    man = {
        "tool": "hamst",
        "version": __version__,
        "command": command,
        "config_sha256": digest,
        "seed": cfg.seed,
        "config": cfg.model_dump(mode="json"),
        "wall_time_s": time.perf_counter() - t0,
    }
    man.update(extra)
    hio.write_json(out / "manifest.json", man)


def _write_dataset(out: Path, d: StDataset) -> None:
    hio.write_locations(out / "locations.csv", d.locs)
    hio.write_matrix(out / "y.csv", d.y, d.locs.ids)
    if d.x is not None:
        hio.write_matrix(out / "x.csv", d.x, d.locs.ids)


# ---------------------------------------------------------------- commands

def cmd_generate(kind: str, config: str, out_override=None, threads: int = 1) -> Path:
    t0 = time.perf_counter()
    cfg, digest, base = load_config(config, GenerateConfig)
    sim = cfg.simulation
    out = _out_dir(cfg, base, f"generate-{kind}", out_override)
    if kind == "hamiltonian":
        d = simulate_hamiltonian(SimConfig(sim.n, sim.T, cfg.params.to_params(), cfg.seed, sim.dt, tuple(sim.domain), sim.scale_c))
        extra = {}
    elif kind == "gp3":
        d = gen_gp_mixture3(sim.n, sim.T, cfg.gp3.to_config(), cfg.seed)
        extra = {"component": d.component.tolist()}
    elif kind == "gqn":
        d = gen_gqn_mixture(sim.n, sim.T, cfg.gqn.to_config(), cfg.seed)
        extra = {"u": d.u.tolist()}
    else:
        raise CliError(f"unknown generator {kind}", EXIT_CONFIG)
    _write_dataset(out, d)
    _manifest(out, f"generate {kind}", cfg, digest, t0, generator=kind, **extra)
    return out


def cmd_fit(config: str, out_override=None, threads: int = 1) -> Path:
    t0 = time.perf_counter()
    cfg, digest, base = load_config(config, FitConfig)
    priors = cfg.priors.to_priors()
    settings = cfg.mcmc.to_settings(cfg.seed)
    d = _load_data(cfg.data, base, PRESET_SCALE_C.get(cfg.priors.preset))
    out = _out_dir(cfg, base, "fit", out_override)
    eta3_source = priors.eta3_mode
    if priors.eta3_mode == "fixed" and priors.eta3_value is None:
        eta3 = sa_eta3_mle(d, priors, cfg.anneal.to_schedule(cfg.seed))
        priors = replace(priors, eta3_value=eta3)
        eta3_source = "fixed (annealed estimate)"
    try:
        chain = run_mcmc(d, priors, settings)
    except SamplerError as e:
        snap = out / "snapshot.json"
        hio.write_json(snap, {"sweep": e.sweep, "error": str(e), "state": e.snapshot})
        raise CliError(f"{e} (state snapshot: {snap})", EXIT_NUMERIC) from e
    hio.write_chain(out, chain)
    summ = chain_summary(chain) if len(chain) >= 10 else None
    if summ is not None:
        hio.write_table(out / "summary.csv", ["parameter", "mean", "sd", "mcse", "acceptance"], summ.rows())
    data_ref = {
        "locations": str(_path(base, cfg.data.locations).resolve()),
        "y": str(_path(base, cfg.data.y).resolve()),
        "scale_c": d.locs.scale_c,
    }
    _manifest(
        out,
        "fit",
        cfg,
        digest,
        t0,
        data=data_ref,
        eta3=priors.eta3_value,
        eta3_source=eta3_source,
        priors_used=priors.to_dict(),
        sampler=chain.manifest,
        acceptance_rates=chain.acceptance_rates,
    )
    if summ is not None:
        print(summ.table())
    return out


def _intervals_rows(s, summary, target):
    ids = s.locs.ids
    rows = []
    for k, lab in enumerate(s.labels):
        for j, i in enumerate(ids):
            rows.append(
                (target, lab, i, summary.lower[k, j], summary.median[k, j], summary.upper[k, j], summary.mean[k, j], summary.length[k, j])
            )
    return rows


def _write_predictive(out: Path, stem: str, s, level: float) -> None:
    long_rows, int_rows = [], []
    for target in ("y", "x"):
        if (s.y if target == "y" else s.x) is None:
            continue
        long_rows += [(target,) + r for r in s.long_table(target)]
        int_rows += _intervals_rows(s, interval_summary(s, level, target), target)
    step = "horizon" if s.kind == "horizon" else "time"
    hio.write_table(out / f"{stem}_draws.csv", ["target", "location", step, "draw", "value"], long_rows)
    hio.write_table(out / f"{stem}_intervals.csv", ["target", step, "location", "lower", "median", "upper", "mean", "length"], int_rows)


def cmd_predict(config: str, out_override=None, threads: int = 1) -> Path:
    t0 = time.perf_counter()
    cfg, digest, base = load_config(config, PredictConfig)
    pc = cfg.predict
    chain_dir = _path(base, pc.chain)
    fit_man = hio.read_json(chain_dir / "manifest.json")
    chain = hio.read_chain(chain_dir, fit_man)
    if chain.latent is None:
        raise CliError(f"{chain_dir} holds no latent snapshots; refit with mcmc.keep_latent = true", EXIT_CONFIG)
    if cfg.data is not None:
        d = _load_data(cfg.data, base)
    else:
        ref = fit_man["data"]
        locs = hio.read_locations(ref["locations"], ref["scale_c"])
        d = StDataset(locs, hio.read_matrix(ref["y"], locs.ids))
    if chain.latent.shape[1:] != d.y.shape:
        raise CliError("data shape does not match the chain's latent snapshots", EXIT_CONFIG)
    out = _out_dir(cfg, base, "predict", out_override)
    s = predict_multi_step(chain, d, pc.horizon, cfg.seed, workers=threads)
    _write_predictive(out, "forecast", s, pc.level)
    extra = {"chain": str(chain_dir.resolve()), "horizon": pc.horizon, "level": pc.level}
    if pc.reconstruct:
        from .inference.priors import McmcSettings, PriorConfig

        new = hio.read_locations(_path(base, pc.reconstruct), d.locs.scale_c)
        priors = PriorConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in fit_man["priors_used"].items()})
        st = dict(fit_man["sampler"]["settings"])
        st["seed"] = cfg.seed
        r = reconstruct_locations(d, new, priors, McmcSettings(**st), workers=threads)
        _write_predictive(out, "reconstruction", r, pc.level)
        extra["reconstruction"] = r.chain.manifest.get("reconstruction")
    _manifest(out, "predict", cfg, digest, t0, **extra)
    return out


def cmd_diagnose(kind: str, config: str, out_override=None, threads: int = 1) -> Path:
    t0 = time.perf_counter()
    cfg, digest, base = load_config(config, DiagnoseConfig)
    if kind in ("lag-curve", "stationarity") and cfg.data is None:
        raise CliError(f"diagnose {kind} needs a [data] section", EXIT_CONFIG)
    if kind == "lag-curve" and cfg.lag is None:
        raise CliError("diagnose lag-curve needs a [lag] section", EXIT_CONFIG)
    d = _load_data(cfg.data, base) if cfg.data is not None else None
    out = _out_dir(cfg, base, f"diagnose-{kind}", out_override)
    extra = {}
    if kind == "corr-experiment":
        c = cfg.corr
        cc = CorrConfig(c.n, c.T, c.params.to_params())
        rows = []
        for gen in c.generators:
            s = corr_experiment(gen, c.reps, cc, cfg.seed)
            ids = [str(i) for i in range(c.n)]
            hio.write_matrix(out / f"corr_{gen}.csv", s.corr, ids)
            rows.append((gen, s.reps, float(s.off_diagonal().min()), s.n_negative()))
        hio.write_table(out / "corr_summary.csv", ["generator", "reps", "min_off_diagonal", "negative_pairs"], rows)
    elif kind == "lag-curve":
        rows = lagged_correlation_curve(d, cfg.lag.space_bins, cfg.lag.time_lags, cfg.lag.min_pairs)
        hio.write_table(out / "lag_curve.csv", ["bin_lo", "bin_hi", "lag", "estimate", "count"], rows)
    elif kind == "stationarity":
        st = cfg.stationarity
        rep = stationarity_detect(d, st.c0, st.prior)
        rows = list(zip(d.locs.ids, rep.distances, rep.thresholds, rep.indicators.astype(int), rep.posterior_means))
        hio.write_table(out / "stationarity.csv", ["region", "ks_distance", "threshold", "indicator", "posterior_mean"], rows)
        extra["stationarity"] = rep.to_dict()
        print(rep.verdict)
    else:
        raise CliError(f"unknown diagnostic {kind}", EXIT_CONFIG)
    _manifest(out, f"diagnose {kind}", cfg, digest, t0, **extra)
    return out


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hamst", description="Hamiltonian spatio-temporal model toolkit")
    ap.add_argument("--version", action="version", version=f"hamst {__version__}")
    ap.add_argument("--out", help=f"output directory (default: config 'output', else ${OUTPUT_ENV}/<command>)")
    ap.add_argument("--threads", type=int, default=1, help="worker cap for parallel sections; results do not depend on it")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    g = sub.add_parser("generate", help="simulate a dataset")
    g.add_argument("kind", choices=["hamiltonian", "gp3", "gqn"])
    g.add_argument("config")
    f = sub.add_parser("fit", help="run the sampler on a dataset")
    f.add_argument("config")
    p = sub.add_parser("predict", help="forecast and reconstruct from a fitted chain")
    p.add_argument("config")
    d = sub.add_parser("diagnose", help="correlation, lag-curve and stationarity diagnostics")
    d.add_argument("kind", choices=["corr-experiment", "lag-curve", "stationarity"])
    d.add_argument("config")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "generate":
            out = cmd_generate(args.kind, args.config, args.out, args.threads)
        elif args.command == "fit":
            out = cmd_fit(args.config, args.out, args.threads)
        elif args.command == "predict":
            out = cmd_predict(args.config, args.out, args.threads)
        else:
            out = cmd_diagnose(args.kind, args.config, args.out, args.threads)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (SamplerError, NumericalError, OptimizationError, SimulationError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, hio.DataError, DomainError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
