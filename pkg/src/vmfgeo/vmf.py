"""von Mises-Fisher distribution on the 2-sphere.

Everything here is specialised to directions in 3-space, where the Bessel
normalizer collapses to ``kappa / (4 pi sinh kappa)``. All densities are
handled in the log domain so large concentrations do not overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KAPPA_MAX = 1e4
#: below this the normalizer is evaluated by its Taylor series
SERIES_KAPPA = 1e-4
#: below this the mean resultant length is evaluated by its Taylor series
SERIES_RESULTANT = 1e-3

LOG_4PI = math.log(4.0 * math.pi)
LOG_2PI = math.log(2.0 * math.pi)


def _check_kappa(kappa):
    kappa = np.asarray(kappa, dtype=float)
    if not np.all(np.isfinite(kappa)):
        raise ValueError("kappa must be finite")
    if np.any(kappa < 0.0):
        raise ValueError("kappa must be nonnegative")
    if np.any(kappa > KAPPA_MAX):
        raise ValueError(f"kappa exceeds KAPPA_MAX={KAPPA_MAX:g}")
    return kappa


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


@dataclass(frozen=True)
class VmfComponent:
    """Mean direction ``mu`` (unit 3-vector) and concentration ``kappa``."""

    mu: np.ndarray
    kappa: float

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(3)
        norm = np.linalg.norm(mu)
        if not np.isfinite(norm) or abs(norm - 1.0) > 1e-9:
            raise ValueError(f"mu must have unit norm, got |mu|={norm!r}")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "kappa", float(_check_kappa(self.kappa)))


def log_norm_const(kappa):
    """``log(kappa / (4 pi sinh kappa))``, the log normalizer on the sphere."""
    kappa = _check_kappa(kappa)
    small = kappa < SERIES_KAPPA
    k = np.where(small, 1.0, kappa)  # keep the unused branch finite
    big = np.log(k) - LOG_2PI - k - np.log(-np.expm1(-2.0 * k))
    series = -LOG_4PI - kappa**2 / 6.0
    return _scalar(np.where(small, series, big))


def d_log_norm_const(kappa):
    """Derivative of :func:`log_norm_const` in kappa, equal to ``-A3(kappa)``."""
    return _scalar(-np.asarray(mean_resultant_length(kappa)))


def mean_resultant_length(kappa):
    """``A3(kappa) = coth(kappa) - 1/kappa``, the expected cosine to the mean."""
    kappa = np.asarray(kappa, dtype=float)
    if np.any(kappa < 0.0) or not np.all(np.isfinite(kappa)):
        raise ValueError("kappa must be finite and nonnegative")
    small = kappa < SERIES_RESULTANT
    k = np.where(small, 1.0, kappa)
    # coth(k) = 1 + 2 e^{-2k} / (1 - e^{-2k})
    e = np.exp(-2.0 * k)
    big = 1.0 + 2.0 * e / (-np.expm1(-2.0 * k)) - 1.0 / k
    series = kappa / 3.0 - kappa**3 / 45.0
    return _scalar(np.where(small, series, big))


def log_density(x, mu, kappa):
    """Log density at ``x`` of vMF(mu, kappa). Broadcasts over leading axes."""
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    return _scalar(log_norm_const(kappa) + kappa * np.sum(mu * x, axis=-1))


def component_log_density(x, c: VmfComponent) -> float:
    return log_density(x, c.mu, c.kappa)


def grad_log_density(x, mu_raw, kappa):
    """Gradient of the log density with respect to ``mu_raw`` and ``kappa``.

    ``mu_raw`` is any nonzero 3-vector; the mean direction is its L2
    normalisation, and the returned gradient flows back through that map.

    Returns
    -------
    d_mu_raw : ndarray, shape (..., 3)
    d_kappa : float or ndarray
    """
    x = np.asarray(x, dtype=float)
    mu_raw = np.asarray(mu_raw, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    norm = np.linalg.norm(mu_raw, axis=-1, keepdims=True)
    mu = mu_raw / norm
    cos = np.sum(mu * x, axis=-1)
    d_kappa = -np.asarray(mean_resultant_length(kappa)) + cos
    # d mu / d mu_raw = (I - mu mu^T) / |mu_raw|
    d_mu_raw = kappa[..., None] * (x - cos[..., None] * mu) / norm
    return d_mu_raw, _scalar(d_kappa)


def tangent_basis(mu):
    """Two unit vectors completing ``mu`` to a right-handed orthonormal frame."""
    mu = np.asarray(mu, dtype=float)
    # the axis least aligned with mu is never (anti)parallel to it
    helper = np.zeros(3)
    helper[np.argmin(np.abs(mu))] = 1.0
    e1 = helper - np.dot(helper, mu) * mu
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(mu, e1)
    return e1, e2


def _uniform_sphere(n, rng):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sample_cosines(kappa: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``w = mu . x`` by inverting its CDF on [-1, 1]."""
    u = 1.0 - rng.random(n)  # (0, 1]
    # w = 1 + log(u + (1 - u) e^{-2 kappa}) / kappa, evaluated without underflow
    with np.errstate(divide="ignore"):
        log_tail = np.log1p(-u) - 2.0 * kappa
    w = 1.0 + np.logaddexp(np.log(u), log_tail) / kappa
    return np.clip(w, -1.0, 1.0)


def sample(mu, kappa: float, n: int, seed=None) -> np.ndarray:
    """Draw ``n`` i.i.d. directions from vMF(mu, kappa).

    Uses the exact inverse-CDF construction available on the 2-sphere;
    ``kappa == 0`` falls back to uniform sampling.

    Returns
    -------
    ndarray, shape (n, 3)
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    mu = np.asarray(mu, dtype=float).reshape(3)
    mu = mu / np.linalg.norm(mu)
    kappa = float(_check_kappa(kappa))
    if kappa == 0.0:
        return _uniform_sphere(n, rng)
    w = sample_cosines(kappa, n, rng)
    phi = rng.uniform(0.0, 2.0 * math.pi, n)
    e1, e2 = tangent_basis(mu)
    s = np.sqrt(np.clip(1.0 - w**2, 0.0, None))
    return (w[:, None] * mu + (s * np.cos(phi))[:, None] * e1
            + (s * np.sin(phi))[:, None] * e2)


def sample_component(c: VmfComponent, n: int, seed=None) -> np.ndarray:
    return sample(c.mu, c.kappa, n, seed)
