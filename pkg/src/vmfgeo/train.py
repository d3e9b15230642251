"""Minibatch Adam training of the regression head, plus a gradient checker."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import head
from .sphere import cart_to_geo, haversine_km

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-5
    epochs: int = 5
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss: str = "mixture_nll"
    seed: int = 42
    shuffle: bool = True

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.eps > 0):
            raise ValueError("learning_rate and eps must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if self.loss not in head.LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; expected one of {head.LOSSES}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    val_mean_km: float
    val_median_km: float

    def log_line(self) -> str:
        return f"{self.epoch}\t{self.mean_loss:.6f}\t{self.val_mean_km:.3f}\t{self.val_median_km:.3f}"


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    skipped_steps: list[int] = field(default_factory=list)
    jensen_violations: int = 0
    steps: int = 0

    def log_lines(self) -> list[str]:
        return [e.log_line() for e in self.epochs]


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, cfg: TrainConfig) -> bool:
    """One bias-corrected Adam update, applied to ``params`` in place.

    Returns False (and leaves params and state untouched) when any gradient
    entry is non-finite.
    """
    if not all(np.all(np.isfinite(g)) for g in grads):
        return False
    state.t += 1
    t = state.t
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return True


def highprob_errors_km(X, w: head.HeadParams, lat, lon) -> np.ndarray:
    """Haversine errors of the highest-weight component's mean direction."""
    c = head.forward_batch(X, w)
    k = np.argmax(c.log_rho, axis=1)
    pred_lat, pred_lon = cart_to_geo(c.mu[np.arange(len(k)), k])
    return haversine_km(pred_lat, pred_lon, lat, lon)


def train_head(X, y, cfg: TrainConfig = TrainConfig(), hidden_units: int = 256,
               n_components: int = 5, X_val=None, val_latlon=None,
               kappa_init: float = head.KAPPA_INIT):
    """Fit a fresh head to features ``X (n, D)`` and unit-vector targets ``y (n, 3)``.

    Returns
    -------
    params : HeadParams
    history : TrainHistory
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("training set is empty")
    if y.shape != (len(X), 3):
        raise ValueError(f"targets must have shape ({len(X)}, 3), got {y.shape}")
    init_seq, shuffle_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    w = head.init(init_seq, (X.shape[1], hidden_units, n_components), kappa_init)
    state = AdamState.zeros_like(w.arrays())
    rng = np.random.default_rng(shuffle_seq)
    history = TrainHistory()
    n = len(X)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        total, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            cache = head.forward_batch(X[idx], w)
            grads, values = head.backward_batch(cache, w, y[idx], cfg.loss)
            both = head.losses_from_cache(cache, y[idx])
            if np.sum(both["weighted_nll"]) < np.sum(both["mixture_nll"]) - 1e-9 * len(idx):
                history.jensen_violations += 1
                logger.error("batch loss ordering violated at step %d", history.steps)
            scale = 1.0 / len(idx)
            grads = [g * scale for g in grads]
            history.steps += 1
            if not adam_step(w.arrays(), grads, state, cfg):
                history.skipped_steps.append(history.steps)
                logger.warning("non-finite gradient at step %d; step skipped", history.steps)
                continue
            if not w.is_finite():
                raise FloatingPointError(f"parameters became non-finite at step {history.steps}")
            total += float(np.sum(values))
            seen += len(idx)
        mean_loss = total / seen if seen else math.nan
        if X_val is not None and len(X_val):
            lat, lon = np.asarray(val_latlon, dtype=float).T
            errs = highprob_errors_km(X_val, w, lat, lon)
            val_mean, val_median = float(np.mean(errs)), float(np.median(errs))
        else:
            val_mean = val_median = math.nan
        rec = EpochRecord(epoch, mean_loss, val_mean, val_median)
        history.epochs.append(rec)
        logger.info("epoch %s", rec.log_line())
    return w, history


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_cases: int
    n_checked: int
    loss: str

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def relative_error(analytic, numeric, floor: float = 1e-6, scale: float = 1.0):
    """Elementwise relative error; magnitudes below ``floor * max(1, |scale|)``
    are compared absolutely.

    Rounding noise in a central difference grows like ``eps * |f| / h``, so
    passing the loss value as ``scale`` keeps gradients that are tiny next
    to the loss from being judged against noise.
    """
    cutoff = floor * max(1.0, abs(float(scale)))
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), cutoff)


def grad_check(dims=(8, 4, 2), n_cases: int = 25, seed=42, tol: float = 1e-4,
               loss: str = "mixture_nll", h: float = 1e-5) -> GradCheckReport:
    """Compare :func:`head.backward` against central differences on random cases.

    Each case draws fresh weights, a random feature vector and a random
    target; every parameter entry is perturbed by ``h``.
    """
    if n_cases == 0:
        warnings.warn("grad_check with n_cases=0 checks nothing", stacklevel=2)
        return GradCheckReport(0.0, tol, 0, 0, loss)
    rng = np.random.default_rng(seed)
    worst, checked = 0.0, 0
    for _ in range(n_cases):
        w = head.init(rng.integers(2**32), dims)
        x = rng.standard_normal(dims[0])
        target = rng.standard_normal(3)
        target /= np.linalg.norm(target)
        analytic = head.backward(x, w, target, loss)
        f0 = head.loss_value(x, w, target, loss)
        for a, g in zip(w.arrays(), analytic):
            flat, gflat = a.reshape(-1), g.reshape(-1)
            for j in range(flat.size):
                old = flat[j]
                flat[j] = old + h
                plus = head.loss_value(x, w, target, loss)
                flat[j] = old - h
                minus = head.loss_value(x, w, target, loss)
                flat[j] = old
                numeric = (plus - minus) / (2.0 * h)
                worst = max(worst, float(relative_error(gflat[j], numeric, scale=f0)))
                checked += 1
    return GradCheckReport(worst, tol, n_cases, checked, loss)
