"""Finite mixtures of vMF components and the two training losses.

Two objectives are provided:

* :func:`mixture_nll` -- the proper negative log-likelihood of the mixture,
  ``-sum_i log sum_k rho_ik f(y_i; mu_ik, kappa_ik)``.
* :func:`weighted_nll` -- the weighted sum of component log-likelihoods,
  ``-sum_i sum_k rho_ik log f(y_i; mu_ik, kappa_ik)``. By Jensen's inequality
  it upper-bounds :func:`mixture_nll`, with equality when the components of
  each mixture coincide.

Batched helpers take arrays ``mu (n, K, 3)``, ``kappa (n, K)``, ``rho (n, K)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import vmf
from .sphere import GeoPoint

RULES = ("highProb", "random")


@dataclass(frozen=True)
class VmfMixture:
    """K vMF components with mixing probabilities ``rho``."""

    mu: np.ndarray
    kappa: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1, 3)
        kappa = np.array(self.kappa, dtype=float).reshape(-1)
        rho = np.array(self.rho, dtype=float).reshape(-1)
        k = mu.shape[0]
        if k < 1 or kappa.shape[0] != k or rho.shape[0] != k:
            raise ValueError(f"inconsistent component counts: mu {mu.shape}, "
                             f"kappa {kappa.shape}, rho {rho.shape}")
        norms = np.linalg.norm(mu, axis=1)
        if not np.all(np.abs(norms - 1.0) <= 1e-9):
            raise ValueError("every mu must have unit norm")
        vmf._check_kappa(kappa)
        if not np.all(np.isfinite(rho)) or np.any(rho < 0.0):
            raise ValueError("rho must be finite and nonnegative")
        if not np.any(rho > 0.0):
            raise ValueError("rho must have at least one positive weight")
        if abs(rho.sum() - 1.0) > 1e-9:
            raise ValueError(f"rho must sum to 1, got {rho.sum()!r}")
        for a in (mu, kappa, rho):
            a.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "rho", rho)

    @property
    def n_components(self) -> int:
        return self.mu.shape[0]

    @property
    def components(self) -> list[vmf.VmfComponent]:
        return [vmf.VmfComponent(m, k) for m, k in zip(self.mu, self.kappa)]

    @classmethod
    def from_components(cls, components: Sequence[vmf.VmfComponent], rho) -> "VmfMixture":
        return cls(np.array([c.mu for c in components]),
                   np.array([c.kappa for c in components]), rho)

    @classmethod
    def single(cls, mu, kappa) -> "VmfMixture":
        return cls(np.asarray(mu, dtype=float).reshape(1, 3), [kappa], [1.0])


def stack(mixtures: Sequence[VmfMixture]):
    """Stack equally-sized mixtures into ``(mu, kappa, rho)`` batch arrays."""
    if not mixtures:
        raise ValueError("no mixtures given")
    sizes = {m.n_components for m in mixtures}
    if len(sizes) != 1:
        raise ValueError(f"mixtures have differing component counts {sorted(sizes)}")
    return (np.stack([m.mu for m in mixtures]),
            np.stack([m.kappa for m in mixtures]),
            np.stack([m.rho for m in mixtures]))


def component_log_densities(y, mu, kappa):
    """``log f(y_i; mu_ik, kappa_ik)`` with shape (n, K) for targets ``y (n, 3)``."""
    y = np.asarray(y, dtype=float)
    return vmf.log_density(y[:, None, :], mu, kappa)


def mixture_log_density(x, m: VmfMixture):
    """Log density of the mixture at ``x`` (shape (3,) or (..., 3))."""
    x = np.asarray(x, dtype=float)
    log_f = vmf.log_density(x[..., None, :], m.mu, m.kappa)
    with np.errstate(divide="ignore"):
        log_rho = np.log(m.rho)
    out = logsumexp(log_f + log_rho, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def mixture_nll_batch(y, mu, kappa, rho) -> np.ndarray:
    """Per-observation mixture negative log-likelihood, shape (n,)."""
    log_f = component_log_densities(y, mu, kappa)
    with np.errstate(divide="ignore"):
        log_rho = np.log(rho)
    return -logsumexp(log_f + log_rho, axis=1)


def weighted_nll_batch(y, mu, kappa, rho) -> np.ndarray:
    """Per-observation weighted component log-likelihood loss, shape (n,)."""
    log_f = component_log_densities(y, mu, kappa)
    return -np.sum(rho * log_f, axis=1)


def _check_pairs(targets, mixtures):
    targets = np.asarray(targets, dtype=float).reshape(-1, 3)
    if len(targets) != len(mixtures):
        raise ValueError(f"length mismatch: {len(targets)} targets vs {len(mixtures)} mixtures")
    return targets


def weighted_nll(targets, mixtures: Sequence[VmfMixture]) -> float:
    """``-sum_i sum_k rho_ik log f(y_i; mu_ik, kappa_ik)`` over a batch."""
    y = _check_pairs(targets, mixtures)
    return float(np.sum(weighted_nll_batch(y, *stack(mixtures))))


def mixture_nll(targets, mixtures: Sequence[VmfMixture]) -> float:
    """``-sum_i log sum_k rho_ik f(y_i; mu_ik, kappa_ik)`` over a batch."""
    y = _check_pairs(targets, mixtures)
    return float(np.sum(mixture_nll_batch(y, *stack(mixtures))))


def select_component(rho, rule: str, rng: np.random.Generator | None = None,
                     weighted: bool = False) -> int:
    """Index chosen by ``highProb`` (argmax, lowest index on ties) or ``random``."""
    rho = np.asarray(rho, dtype=float)
    if rule == "highProb":
        return int(np.argmax(rho))
    if rule == "random":
        rng = rng if rng is not None else np.random.default_rng()
        if weighted:
            return int(rng.choice(len(rho), p=rho / rho.sum()))
        return int(rng.integers(len(rho)))
    raise ValueError(f"unknown rule {rule!r}; expected one of {RULES}")


def point_estimate(m: VmfMixture, rule: str = "highProb", seed=None,
                   weighted: bool = False) -> GeoPoint:
    """Collapse a mixture to a single coordinate.

    ``random`` picks a component uniformly unless ``weighted`` is set, in
    which case it draws proportionally to ``rho``.
    """
    k = select_component(m.rho, rule, np.random.default_rng(seed), weighted)
    return GeoPoint.from_cart(m.mu[k])


def sample_mixture(m: VmfMixture, n: int, seed=None) -> np.ndarray:
    """Ancestral sampling: pick components by ``rho``, then draw from each."""
    return sample_mixture_labeled(m, n, seed)[0]


def sample_mixture_labeled(m: VmfMixture, n: int, seed=None):
    """Like :func:`sample_mixture` but also returns the component labels."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    labels = rng.choice(m.n_components, size=n, p=m.rho / m.rho.sum())
    out = np.empty((n, 3))
    for k in range(m.n_components):
        idx = np.flatnonzero(labels == k)
        if idx.size:
            out[idx] = vmf.sample(m.mu[k], m.kappa[k], idx.size, seed=int(rng.integers(2**63 - 1)))
    return out, labels
