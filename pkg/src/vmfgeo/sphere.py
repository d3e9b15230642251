"""Coordinates on a spherical Earth.

Latitude/longitude in degrees are the user-facing unit; points on the unit
sphere (``(..., 3)`` arrays) are what the distributions operate on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

#: IUGG mean Earth radius in kilometres.
EARTH_RADIUS_KM = 6371.0088

DEG2RAD = math.pi / 180.0
RAD2DEG = 180.0 / math.pi


def normalize_lon(lon):
    """Wrap longitude(s) in degrees into [-180, 180)."""
    lon = np.asarray(lon, dtype=float)
    out = np.mod(lon + 180.0, 360.0) - 180.0
    # np.mod can return 360.0 - tiny for tiny negative inputs
    out = np.where(out >= 180.0, out - 360.0, out)
    return out if out.ndim else float(out)


def _check_lat(lat):
    lat = np.asarray(lat, dtype=float)
    if not np.all(np.isfinite(lat)):
        raise ValueError("latitude must be finite")
    bad = np.abs(lat) > 90.0
    if np.any(bad):
        raise ValueError(f"latitude out of range [-90, 90]: {float(np.atleast_1d(lat)[np.atleast_1d(bad)][0])}")
    return lat


def _check_lon(lon):
    lon = np.asarray(lon, dtype=float)
    if not np.all(np.isfinite(lon)):
        raise ValueError("longitude must be finite")
    return lon


@dataclass(frozen=True)
class GeoPoint:
    """A latitude/longitude pair in degrees.

    Longitude is wrapped into [-180, 180) on construction.
    """

    lat_deg: float
    lon_deg: float

    def __post_init__(self):
        lat = float(_check_lat(self.lat_deg))
        lon = float(_check_lon(self.lon_deg))
        object.__setattr__(self, "lat_deg", lat)
        object.__setattr__(self, "lon_deg", normalize_lon(lon))

    def to_cart(self) -> np.ndarray:
        return geo_to_cart(self.lat_deg, self.lon_deg)

    @classmethod
    def from_cart(cls, v) -> "GeoPoint":
        lat, lon = cart_to_geo(v)
        return cls(float(lat), float(lon))

    def __iter__(self):
        yield self.lat_deg
        yield self.lon_deg


def geo_to_cart(lat_deg, lon_deg) -> np.ndarray:
    """Map latitude/longitude in degrees onto the unit sphere.

    Broadcasts over array inputs; the result has a trailing axis of size 3
    holding ``(cos lat cos lon, cos lat sin lon, sin lat)``.
    """
    lat = _check_lat(lat_deg) * DEG2RAD
    lon = _check_lon(lon_deg) * DEG2RAD
    lat, lon = np.broadcast_arrays(lat, lon)
    cos_lat = np.cos(lat)
    return np.stack([cos_lat * np.cos(lon), cos_lat * np.sin(lon), np.sin(lat)], axis=-1)


def cart_to_geo(v):
    """Inverse of :func:`geo_to_cart`.

    Input vectors are renormalized, so anything nonzero is accepted. At the
    poles longitude is reported as 0.

    Returns
    -------
    lat, lon : float or ndarray
        Degrees, longitude in [-180, 180).
    """
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != 3:
        raise ValueError(f"expected trailing dimension 3, got shape {v.shape}")
    norm = np.linalg.norm(v, axis=-1)
    if np.any(norm == 0.0) or not np.all(np.isfinite(norm)):
        raise ValueError("cannot convert the zero (or non-finite) vector to a coordinate")
    u = v / norm[..., None]
    lat = np.arcsin(np.clip(u[..., 2], -1.0, 1.0)) * RAD2DEG
    lon = np.arctan2(u[..., 1], u[..., 0]) * RAD2DEG
    # |z| == 1 leaves x, y at rounding noise; pin the pole convention
    lon = np.where(np.hypot(u[..., 0], u[..., 1]) == 0.0, 0.0, lon)
    lon = normalize_lon(lon)
    if np.ndim(lat) == 0:
        return float(lat), float(lon)
    return lat, lon


def angular_distance(u, v):
    """Angle in radians between unit vectors, ``acos(clamp(u . v))``."""
    dot = np.sum(np.asarray(u, dtype=float) * np.asarray(v, dtype=float), axis=-1)
    out = np.arccos(np.clip(dot, -1.0, 1.0))
    return out if np.ndim(out) else float(out)


def haversine_km(lat1, lon1, lat2, lon2, radius=EARTH_RADIUS_KM):
    """Great-circle distance in kilometres between points given in degrees."""
    p1 = _check_lat(lat1) * DEG2RAD
    p2 = _check_lat(lat2) * DEG2RAD
    dl = (_check_lon(lon2) - _check_lon(lon1)) * DEG2RAD
    a = np.sin((p2 - p1) / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2.0) ** 2
    out = 2.0 * radius * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    return out if np.ndim(out) else float(out)


def point_distance_km(a: GeoPoint, b: GeoPoint) -> float:
    return haversine_km(a.lat_deg, a.lon_deg, b.lat_deg, b.lon_deg)
