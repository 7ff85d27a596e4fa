"""CSV/JSON/NPY persistence for locations, observation matrices, chains and manifests.

Floats are written with 17 significant digits so that every value survives a
round trip exactly.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .geometry import LocationSet, lambert_project
from .model import PARAM_NAMES
from .inference.sampler import Chain

FLOAT_FMT = ".17g"


class DataError(ValueError):
    """Malformed input file; the message names the file and row."""


def fmt(v) -> str:
    return format(float(v), FLOAT_FMT)


def _read_rows(path):
    path = Path(path)
    with path.open(newline="") as f:
        rows = [r for r in csv.reader(f) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    return path, [c.strip() for c in rows[0]], rows[1:]


def _float(path, lineno, cell):
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"{path}: row {lineno}: not a number: {cell!r}") from None
    return v


# ---------------------------------------------------------------- locations

def read_locations(path, scale_c: float = 1.0) -> LocationSet:
    """``id,s1,s2`` (projected) or ``id,lon,lat`` (degrees, Lambert-projected on load)."""
    path, head, rows = _read_rows(path)
    kinds = {("id", "s1", "s2"): "xy", ("id", "lon", "lat"): "lonlat"}
    kind = kinds.get(tuple(h.lower() for h in head))
    if kind is None:
        raise DataError(f"{path}: header must be id,s1,s2 or id,lon,lat, got {','.join(head)}")
    ids, pts = [], []
    for k, r in enumerate(rows, start=2):
        if len(r) != 3:
            raise DataError(f"{path}: row {k}: expected 3 fields, got {len(r)}")
        a, b = _float(path, k, r[1]), _float(path, k, r[2])
        if kind == "lonlat":
            loc = lambert_project(a, b)
            a, b = loc.s1, loc.s2
        ids.append(r[0].strip())
        pts.append((a, b))
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate location ids")
    return LocationSet(np.array(pts), scale_c, tuple(ids))


def write_locations(path, locs: LocationSet) -> None:
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "s1", "s2"])
        for i, (a, b) in zip(locs.ids, locs.points):
            w.writerow([i, fmt(a), fmt(b)])


# ---------------------------------------------------------------- matrices

def read_matrix(path, ids=None) -> np.ndarray:
    """Rows are times (first row t=0); the header lists location ids.

    With ``ids`` given, columns are reordered to match and must cover them all.
    Empty cells and ``nan`` read as missing (nan).
    """
    path, head, rows = _read_rows(path)
    out = np.empty((len(rows), len(head)))
    for k, r in enumerate(rows, start=2):
        if len(r) != len(head):
            raise DataError(f"{path}: row {k}: expected {len(head)} fields, got {len(r)}")
        out[k - 2] = [np.nan if c.strip() == "" else _float(path, k, c) for c in r]
    if ids is not None:
        ids = list(ids)
        missing = [i for i in ids if i not in head]
        if missing or len(head) != len(ids):
            raise DataError(f"{path}: columns {head} do not match location ids {ids}")
        out = out[:, [head.index(i) for i in ids]]
    return out


def write_matrix(path, a: np.ndarray, ids) -> None:
    a = np.atleast_2d(a)
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(list(ids))
        for row in a:
            w.writerow([fmt(v) for v in row])


def write_table(path, header, rows) -> None:
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


# ---------------------------------------------------------------- json

def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        v = float(o)
        return v if np.isfinite(v) else str(v)
    return o


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------- chains

def write_chain(directory, chain: Chain) -> None:
    """chain.csv (one row per retained draw), plus latent.npy / y.npy when kept."""
    d = Path(directory)
    write_table(d / "chain.csv", list(chain.columns), chain.draws.tolist())
    if chain.latent is not None:
        np.save(d / "latent.npy", chain.latent)
    if chain.y is not None:
        np.save(d / "y.npy", chain.y)


def read_chain(directory, manifest: dict | None = None) -> Chain:
    d = Path(directory)
    path, head, rows = _read_rows(d / "chain.csv")
    if tuple(head) != PARAM_NAMES:
        raise DataError(f"{path}: header must be {','.join(PARAM_NAMES)}")
    draws = np.array([[_float(path, k, c) for c in r] for k, r in enumerate(rows, start=2)])
    latent = np.load(d / "latent.npy") if (d / "latent.npy").exists() else None
    y = np.load(d / "y.npy") if (d / "y.npy").exists() else None
    man = manifest or {}
    return Chain(draws.reshape(-1, len(PARAM_NAMES)), latent, man.get("acceptance_rates", {}), man, y)
