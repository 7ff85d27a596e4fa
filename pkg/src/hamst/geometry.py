"""Location handling: Lambert projection, squared distances and the mass field.

The mass attached to a site ``s`` is

    M_s = exp(c * max_u ||s**2 - u**2||**2)

where squaring is componentwise and the max runs over a compact set of
sites. Here that set is the finite collection of every location in play
(see :func:`mass_field`); :func:`mass_rectangle` covers a declared bounding
box instead.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class DomainError(ValueError):
    """Input outside the domain of a geometric operation."""


@dataclass(frozen=True)
class Location:
    s1: float
    s2: float

    def __post_init__(self):
        if not (np.isfinite(self.s1) and np.isfinite(self.s2)):
            raise DomainError(f"non-finite coordinates ({self.s1}, {self.s2})")

    def as_array(self) -> np.ndarray:
        return np.array([self.s1, self.s2], dtype=float)


@dataclass(frozen=True)
class LocationSet:
    """Ordered, duplicate-free set of projected sites plus the mass scale ``c``."""

    points: np.ndarray
    scale_c: float = 1.0
    ids: tuple = field(default=())

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
            raise DomainError("points must be an (n, 2) array with n >= 1")
        if not np.all(np.isfinite(pts)):
            raise DomainError("non-finite coordinates in location set")
        if not self.scale_c > 0:
            raise DomainError(f"scale_c must be positive, got {self.scale_c}")
        d2 = sq_distance_matrix(pts)
        off = d2[~np.eye(len(pts), dtype=bool)]
        if off.size and off.min() <= 0.0:
            raise DomainError("duplicate points in location set")
        ids = tuple(self.ids) if self.ids else tuple(str(i) for i in range(len(pts)))
        if len(ids) != len(pts):
            raise DomainError("ids and points differ in length")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __iter__(self):
        return (Location(*p) for p in self.points)

    @classmethod
    def from_locations(cls, locs: Iterable[Location], scale_c: float = 1.0) -> "LocationSet":
        return cls(np.array([[l.s1, l.s2] for l in locs], dtype=float), scale_c)

    def union(self, other: "LocationSet") -> "LocationSet":
        return LocationSet(
            np.vstack([self.points, other.points]),
            self.scale_c,
            self.ids + other.ids,
        )

    def subset(self, idx: Sequence[int]) -> "LocationSet":
        idx = list(idx)
        return LocationSet(self.points[idx], self.scale_c, tuple(self.ids[i] for i in idx))


def lambert_project(lon_deg: float, lat_deg: float) -> Location:
    """Project (longitude, latitude) in degrees onto the plane.

    s1 = 2 sin(pi/4 - psi/2) sin(phi),  s2 = -2 sin(pi/4 - psi/2) cos(phi)
    with phi the longitude and psi the latitude, both in radians.
    """
    if not -90.0 <= lat_deg <= 90.0:
        raise DomainError(f"latitude {lat_deg} outside [-90, 90]")
    if not -180.0 <= lon_deg < 360.0:
        raise DomainError(f"longitude {lon_deg} outside [-180, 360)")
    phi = np.deg2rad(lon_deg)
    psi = np.deg2rad(lat_deg)
    r = 2.0 * np.sin(np.pi / 4.0 - psi / 2.0)
    return Location(float(r * np.sin(phi)), float(-r * np.cos(phi)))


def sq_distance_matrix(points) -> np.ndarray:
    """Symmetric matrix of squared Euclidean distances, exact zero diagonal."""
    if isinstance(points, LocationSet):
        points = points.points
    p = np.atleast_2d(np.asarray(points, dtype=float))
    diff = p[:, None, :] - p[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _as_xy(s) -> np.ndarray:
    if isinstance(s, Location):
        return s.as_array()
    return np.asarray(s, dtype=float)


def mass(s, locs, scale_c: float | None = None) -> float:
    """Mass at ``s`` with the max taken over the finite set ``locs``."""
    if isinstance(locs, LocationSet):
        c = locs.scale_c if scale_c is None else scale_c
        pts = locs.points
    else:
        c = 1.0 if scale_c is None else scale_c
        pts = np.atleast_2d(np.asarray(locs, dtype=float))
    if pts.size == 0:
        raise DomainError("empty location set")
    s2 = _as_xy(s) ** 2
    far = np.max(np.sum((pts**2 - s2) ** 2, axis=1))
    return float(np.exp(c * far))


def mass_field(locs: LocationSet, over: LocationSet | None = None) -> np.ndarray:
    """Masses of every site in ``locs``, maximising over ``over`` (default: ``locs``).

    Pass the union of training and prediction sites as ``over`` so that one
    consistent mass field is used for a whole run.
    """
    over = locs if over is None else over
    sq = locs.points**2
    osq = over.points**2
    far = np.max(np.sum((sq[:, None, :] - osq[None, :, :]) ** 2, axis=2), axis=1)
    return np.exp(locs.scale_c * far)


def _interval_far(s: float, lo: float, hi: float) -> float:
    # max over u in [lo, hi] of (s^2 - u^2)^2; u^2 sweeps [v_min, v_max]
    v_max = max(lo * lo, hi * hi)
    v_min = 0.0 if lo <= 0.0 <= hi else min(lo * lo, hi * hi)
    s2 = s * s
    return max((s2 - v_min) ** 2, (s2 - v_max) ** 2)


def mass_rectangle(s, a1: float, b1: float, a2: float, b2: float, c: float = 1.0) -> float:
    """Mass at ``s`` with the max taken over the rectangle [a1, b1] x [a2, b2].

    The max separates across coordinates; along each axis the squared
    coordinate u**2 sweeps an interval, so the maximum of (s**2 - u**2)**2 is
    attained at one of its two ends.
    """
    if not (a1 < b1 and a2 < b2):
        raise DomainError("degenerate rectangle")
    if c < 0:
        raise DomainError("scale must be non-negative")
    x, y = _as_xy(s)
    if not (a1 <= x <= b1 and a2 <= y <= b2):
        raise DomainError("point outside the rectangle")
    return float(np.exp(c * (_interval_far(x, a1, b1) + _interval_far(y, a2, b2))))


def corner_closed_form(s, a1: float, b1: float, a2: float, b2: float) -> float:
    """Alternative per-axis closed form ``sum_i s_i^4 + max(a_i^4, b_i^4) - 2 s_i^2 min(a_i^2, b_i^2)``.

    Kept for comparison only. It agrees with the true maximum at the origin
    of a symmetric box but not in general; :func:`mass_rectangle` uses the
    exact maximum.
    """
    x, y = _as_xy(s)
    out = 0.0
    for si, lo, hi in ((x, a1, b1), (y, a2, b2)):
        out += si**4 + max(lo**4, hi**4) - 2 * si**2 * min(lo**2, hi**2)
    return float(out)
