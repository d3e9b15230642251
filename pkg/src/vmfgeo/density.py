"""Mixture density on a latitude/longitude grid and highest-density contours.

Cells are indexed by their centres. A cell's probability mass is its density
times its solid angle ``dlat * dlon * (pi/180)**2 * cos(lat)``. A grid may
cover only a bounding box; in that case ``outside_density``/``outside_mass``
hold coarser cells covering the rest of the sphere so that highest-density
thresholds still see the whole distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from shapely.affinity import translate
from shapely.geometry import MultiPolygon, Polygon, box, mapping
from shapely.geometry.polygon import orient
from shapely.ops import unary_union
from skimage.measure import find_contours

from .mixture import VmfMixture, mixture_log_density
from .sphere import DEG2RAD, cart_to_geo, geo_to_cart, normalize_lon

DECILES = tuple(round(0.1 * i, 1) for i in range(1, 10))
WHOLE_SPHERE = (-90.0, 90.0, -180.0, 180.0)


@dataclass
class DensityGrid:
    lat: np.ndarray
    lon: np.ndarray
    dlat: float
    dlon: float
    density: np.ndarray
    mass: np.ndarray
    outside_density: np.ndarray = field(default_factory=lambda: np.empty(0))
    outside_mass: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum() + self.outside_mass.sum())

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        return (self.lat[0] - self.dlat / 2, self.lat[-1] + self.dlat / 2,
                self.lon[0] - self.dlon / 2, self.lon[-1] + self.dlon / 2)


def _axis(lo, hi, res):
    n = max(1, int(round((hi - lo) / res)))
    step = (hi - lo) / n
    return lo + (np.arange(n) + 0.5) * step, step


def _densities(m: VmfMixture, lat, lon, rows_per_chunk=64) -> np.ndarray:
    out = np.empty((lat.size, lon.size))
    for start in range(0, lat.size, rows_per_chunk):
        la = lat[start:start + rows_per_chunk]
        x = geo_to_cart(la[:, None], lon[None, :])
        out[start:start + la.size] = np.exp(mixture_log_density(x, m))
    return out


def density_grid(m: VmfMixture, res_deg: float = 1.0, bbox=None) -> DensityGrid:
    """Evaluate the mixture density at cell centres.

    ``bbox`` is ``(lat_min, lat_max, lon_min, lon_max)``; when ``lon_min >
    lon_max`` the box crosses the antimeridian. Defaults to the whole sphere.
    """
    if not 0 < res_deg <= 5:
        raise ValueError(f"res_deg must be in (0, 5], got {res_deg}")
    lat_min, lat_max, lon_min, lon_max = bbox if bbox is not None else WHOLE_SPHERE
    if not -90.0 <= lat_min < lat_max <= 90.0:
        raise ValueError(f"invalid latitude range ({lat_min}, {lat_max})")
    if lon_max <= lon_min:
        lon_max += 360.0
    lat, dlat = _axis(lat_min, lat_max, res_deg)
    lon, dlon = _axis(lon_min, lon_max, res_deg)
    dens = _densities(m, lat, lon)
    area = dlat * dlon * DEG2RAD**2 * np.cos(lat * DEG2RAD)
    return DensityGrid(lat, lon, dlat, dlon, dens, dens * area[:, None])


def _circular_span(occupied: np.ndarray) -> tuple[int, int]:
    """Start index and length of the shortest circular run covering all occupied columns."""
    n = occupied.size
    if occupied.all():
        return 0, n
    free = ~occupied
    # longest circular run of free columns
    best_len, best_end, run = 0, 0, 0
    for i in range(2 * n):
        if free[i % n]:
            run += 1
            if run > best_len:
                best_len, best_end = run, i
        else:
            run = 0
    best_len = min(best_len, n)
    start = (best_end + 1) % n
    return start, n - best_len


def adaptive_density_grid(m: VmfMixture, coarse_res: float = 1.0, fine_res: float = 0.05,
                          region_mass: float = 0.99, max_cells: int = 2_000_000) -> DensityGrid:
    """Whole-sphere grid at ``coarse_res``, refined inside the ``region_mass`` HPD region.

    The refined resolution is ``fine_res`` or coarser if the refined box would
    exceed ``max_cells``; it always divides ``coarse_res`` evenly.
    """
    coarse = density_grid(m, coarse_res)
    (t,) = hpd_thresholds(coarse, [region_mass])
    mask = ndimage.binary_dilation(coarse.density >= t, iterations=1)
    rows = np.flatnonzero(mask.any(axis=1))
    r0, r1 = rows[0], rows[-1] + 1
    lat_lo = coarse.lat[r0] - coarse.dlat / 2
    lat_hi = coarse.lat[r1 - 1] + coarse.dlat / 2
    c0, ncols = _circular_span(mask.any(axis=0))
    lon_lo = coarse.lon[c0] - coarse.dlon / 2
    span = ncols * coarse.dlon
    area = (lat_hi - lat_lo) * span
    res = max(fine_res, math.sqrt(area / max_cells))
    factor = math.ceil(coarse_res / res - 1e-9)
    res = coarse_res / factor
    fine = density_grid(m, res, (lat_lo, lat_hi, lon_lo, lon_lo + span))
    inside = np.zeros_like(mask)
    cols = (c0 + np.arange(ncols)) % coarse.lon.size
    inside[np.ix_(np.arange(r0, r1), cols)] = True
    fine.outside_density = coarse.density[~inside]
    fine.outside_mass = coarse.mass[~inside]
    return fine


def hpd_thresholds(g: DensityGrid, levels=DECILES) -> list[float]:
    """Density thresholds whose super-level sets hold each requested mass fraction.

    Cells are ranked by density; the threshold for level ``q`` is the density
    of the cell at which the cumulative mass first reaches ``q``.
    """
    levels = [float(q) for q in levels]
    if not levels:
        return []
    if any(not 0.0 < q < 1.0 for q in levels) or levels != sorted(levels):
        raise ValueError("levels must be sorted ascending within (0, 1)")
    dens = np.concatenate([g.density.ravel(), g.outside_density])
    mass = np.concatenate([g.mass.ravel(), g.outside_mass])
    if mass.sum() < levels[-1]:
        raise ValueError(f"grid holds only {mass.sum():.4f} of the probability mass, less than "
                         f"the requested level {levels[-1]}; use a larger bounding box")
    order = np.argsort(-dens, kind="stable")
    cum = np.cumsum(mass[order])
    idx = np.minimum(np.searchsorted(cum, levels, side="left"), cum.size - 1)
    return [float(dens[order[i]]) for i in idx]


def hpd_mask(g: DensityGrid, threshold: float) -> np.ndarray:
    return g.density >= threshold


def region_contains(m: VmfMixture, x, threshold: float) -> np.ndarray:
    """Whether points ``x (n, 3)`` fall in the region where density >= threshold."""
    return np.exp(mixture_log_density(np.asarray(x, dtype=float), m)) >= threshold


# --- GeoJSON -----------------------------------------------------------------

def _rings_to_geometry(g: DensityGrid, threshold: float):
    padded = np.pad(g.density, 1, constant_values=0.0)
    geom = Polygon()
    for ring in find_contours(padded, threshold):
        if len(ring) < 4:
            continue
        lat = g.lat[0] + (ring[:, 0] - 1) * g.dlat
        lon = g.lon[0] + (ring[:, 1] - 1) * g.dlon
        poly = Polygon(np.column_stack([lon, lat])).buffer(0)
        if not poly.is_empty:
            geom = geom.symmetric_difference(poly)
    return geom


def _wrap_to_world(geom):
    parts = []
    for shift in (-360.0, 0.0, 360.0):
        clip = box(-180.0 - shift, -90.0, 180.0 - shift, 90.0)
        piece = geom.intersection(clip)
        if not piece.is_empty:
            parts.append(translate(piece, xoff=shift))
    merged = unary_union(parts) if parts else Polygon()
    polys = [p for p in getattr(merged, "geoms", [merged]) if isinstance(p, Polygon) and not p.is_empty]
    return MultiPolygon([orient(p, 1.0) for p in polys])


def contour_polygons(g: DensityGrid, threshold: float) -> MultiPolygon:
    """Region with density >= threshold as a MultiPolygon in (lon, lat), split at the antimeridian."""
    return _wrap_to_world(_rings_to_geometry(g, threshold))


def contours_geojson(g: DensityGrid, thresholds, levels=None, predicted=None, actual=None) -> dict:
    """FeatureCollection of HPD region polygons plus optional point markers.

    ``predicted`` is a mixture whose component means become ``diamond``
    points; ``actual`` is a (lat, lon) pair marked as a ``star``.
    """
    thresholds = list(thresholds)
    levels = list(levels) if levels is not None else [None] * len(thresholds)
    features = []
    for level, t in zip(levels, thresholds):
        geom = contour_polygons(g, t)
        features.append({"type": "Feature", "geometry": mapping(geom),
                         "properties": {"level": level, "threshold": t}})
    if predicted is not None:
        lat, lon = cart_to_geo(predicted.mu)
        for k, (a, o) in enumerate(zip(np.atleast_1d(lat), np.atleast_1d(lon))):
            features.append({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [float(o), float(a)]},
                "properties": {"role": "predicted", "marker": "diamond", "component": k,
                               "kappa": float(predicted.kappa[k]), "rho": float(predicted.rho[k])}})
    if actual is not None:
        a, o = actual
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [float(normalize_lon(o)), float(a)]},
            "properties": {"role": "actual", "marker": "star"}})
    return {"type": "FeatureCollection", "features": _plain(features)}


def _plain(obj):
    """Convert shapely's tuple-based mappings into JSON-style lists."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.floating):
        return float(obj)
    return obj
