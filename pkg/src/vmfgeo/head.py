"""Regression head mapping a feature vector to vMF mixture parameters.

Architecture: three dense sigmoid layers of width H, then a linear output
layer with 5 raw values per component laid out as
``[mu_raw (3), kappa_raw, rho_logit]``. The raw values become

* ``mu = mu_raw / |mu_raw|``
* ``kappa = clip(softplus(kappa_raw), KAPPA_MIN, KAPPA_MAX)``
* ``rho = softmax(rho_logits)``

Forward and backward passes operate on whole batches (rows of ``X``).
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, logsumexp

from . import vmf
from .mixture import VmfMixture

N_HIDDEN = 3
RAW_PER_COMPONENT = 5
KAPPA_MIN = 1e-6
KAPPA_INIT = 10.0
LOSSES = ("mixture_nll", "weighted_nll")

_DEGENERATE_NORM = 1e-12
_DEGENERATE_NUDGE = np.array([1.0, 0.0, 0.0]) * 1e-12


@dataclass
class HeadParams:
    """Weights ``W`` (out, in) and biases for the three hidden layers and the output layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    featurizer: dict | None = field(default=None, compare=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        d = self.weights[0].shape[1]
        h = self.weights[0].shape[0]
        k = self.weights[-1].shape[0] // RAW_PER_COMPONENT
        return d, h, k

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays in checkpoint order: W1, b1, ..., Wout, bout."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_arrays(cls, arrays, featurizer=None) -> "HeadParams":
        arrays = list(arrays)
        return cls(arrays[0::2], arrays[1::2], featurizer)

    def copy(self) -> "HeadParams":
        return HeadParams.from_arrays([a.copy() for a in self.arrays()], self.featurizer)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def __eq__(self, other):
        if not isinstance(other, HeadParams):
            return NotImplemented
        a, b = self.arrays(), other.arrays()
        return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y)
                                        for x, y in zip(a, b))


def layer_shapes(dims) -> list[tuple[int, int]]:
    d, h, k = dims
    return [(h, d), (h, h), (h, h), (RAW_PER_COMPONENT * k, h)]


def init(seed, dims, kappa_init: float = KAPPA_INIT) -> HeadParams:
    """Glorot-uniform weights, zero biases, kappa biases set so softplus gives ``kappa_init``."""
    d, h, k = dims
    if min(d, h, k) < 1:
        raise ValueError(f"dims must be positive, got {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_out, fan_in in layer_shapes(dims):
        a = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    biases[-1].reshape(k, RAW_PER_COMPONENT)[:, 3] = kappa_init + math.log(-math.expm1(-kappa_init))
    return HeadParams(weights, biases)


@dataclass
class ForwardCache:
    inputs: np.ndarray
    hidden: list[np.ndarray]
    mu_raw: np.ndarray
    mu_norm: np.ndarray
    mu: np.ndarray
    kappa_raw: np.ndarray
    kappa: np.ndarray
    kappa_clamped: np.ndarray
    log_rho: np.ndarray

    @property
    def rho(self) -> np.ndarray:
        return np.exp(self.log_rho)


def _check_inputs(X, w: HeadParams) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    d = w.dims[0]
    if X.ndim != 2 or X.shape[1] != d:
        raise ValueError(f"feature dimension mismatch: head expects {d}, got {X.shape[-1]}")
    return X


def forward_batch(X, w: HeadParams) -> ForwardCache:
    X = _check_inputs(X, w)
    hidden = []
    a = X
    for W, b in zip(w.weights[:-1], w.biases[:-1]):
        a = expit(a @ W.T + b)
        hidden.append(a)
    n, k = X.shape[0], w.dims[2]
    out = (a @ w.weights[-1].T + w.biases[-1]).reshape(n, k, RAW_PER_COMPONENT)

    mu_raw = out[..., :3]
    norm = np.linalg.norm(mu_raw, axis=-1)
    degenerate = norm < _DEGENERATE_NORM
    if np.any(degenerate):
        mu_raw = mu_raw.copy()
        mu_raw[degenerate] += _DEGENERATE_NUDGE
        norm = np.linalg.norm(mu_raw, axis=-1)
    mu = mu_raw / norm[..., None]

    kappa_raw = out[..., 3]
    soft = np.logaddexp(0.0, kappa_raw)
    kappa = np.clip(soft, KAPPA_MIN, vmf.KAPPA_MAX)
    clamped = (soft < KAPPA_MIN) | (soft > vmf.KAPPA_MAX)

    logits = out[..., 4]
    log_rho = logits - logsumexp(logits, axis=1, keepdims=True)
    return ForwardCache(X, hidden, mu_raw, norm, mu, kappa_raw, kappa, clamped, log_rho)


def forward(f, w: HeadParams) -> VmfMixture:
    """Mixture predicted for a single feature vector."""
    c = forward_batch(np.asarray(f, dtype=float).reshape(1, -1), w)
    rho = c.rho[0]
    return VmfMixture(c.mu[0], c.kappa[0], rho / rho.sum())


def predict_mixtures(X, w: HeadParams) -> list[VmfMixture]:
    c = forward_batch(X, w)
    rho = c.rho
    rho = rho / rho.sum(axis=1, keepdims=True)
    return [VmfMixture(c.mu[i], c.kappa[i], rho[i]) for i in range(len(rho))]


def losses_from_cache(c: ForwardCache, y) -> dict[str, np.ndarray]:
    """Per-observation values of both losses."""
    y = np.asarray(y, dtype=float).reshape(-1, 3)
    log_f = vmf.log_density(y[:, None, :], c.mu, c.kappa)
    return {"mixture_nll": -logsumexp(log_f + c.log_rho, axis=1),
            "weighted_nll": -np.sum(c.rho * log_f, axis=1)}


def backward_batch(c: ForwardCache, w: HeadParams, y, loss: str = "mixture_nll"):
    """Gradient of the summed per-observation loss over the batch.

    Returns
    -------
    grads : list of ndarray
        Same order and shapes as :meth:`HeadParams.arrays`.
    values : ndarray, shape (n,)
        Per-observation loss values.
    """
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    y = np.asarray(y, dtype=float).reshape(-1, 3)
    n = y.shape[0]
    cos = np.einsum("nkj,nj->nk", c.mu, y)
    log_f = vmf.log_norm_const(c.kappa) + c.kappa * cos
    rho = c.rho

    if loss == "mixture_nll":
        joint = log_f + c.log_rho
        lse = logsumexp(joint, axis=1, keepdims=True)
        resp = np.exp(joint - lse)
        values = -lse[:, 0]
        g_logf = -resp
        g_logit = rho - resp
    else:
        values = -np.sum(rho * log_f, axis=1)
        g_logf = -rho
        centred = log_f - np.sum(rho * log_f, axis=1, keepdims=True)
        g_logit = -rho * centred

    g_kappa = g_logf * (cos - vmf.mean_resultant_length(c.kappa))
    g_kappa_raw = np.where(c.kappa_clamped, 0.0, g_kappa * expit(c.kappa_raw))
    tangent = y[:, None, :] - cos[..., None] * c.mu
    g_mu_raw = (g_logf * c.kappa)[..., None] * tangent / c.mu_norm[..., None]

    k = c.mu.shape[1]
    g_out = np.concatenate([g_mu_raw, g_kappa_raw[..., None], g_logit[..., None]],
                           axis=-1).reshape(n, k * RAW_PER_COMPONENT)

    layer_inputs = [c.inputs] + c.hidden
    grads_w = [None] * len(w.weights)
    grads_b = [None] * len(w.biases)
    g = g_out
    for i in range(len(w.weights) - 1, -1, -1):
        grads_w[i] = g.T @ layer_inputs[i]
        grads_b[i] = g.sum(axis=0)
        if i:
            h = layer_inputs[i]
            g = (g @ w.weights[i]) * h * (1.0 - h)
    grads = []
    for gw, gb in zip(grads_w, grads_b):
        grads.extend((gw, gb))
    return grads, values


def backward(f, w: HeadParams, target, loss: str = "mixture_nll") -> list[np.ndarray]:
    """Gradient of one observation's loss with respect to every parameter array."""
    c = forward_batch(np.asarray(f, dtype=float).reshape(1, -1), w)
    return backward_batch(c, w, np.asarray(target, dtype=float).reshape(1, 3), loss)[0]


def loss_value(X, w: HeadParams, y, loss: str = "mixture_nll") -> float:
    """Summed loss over the rows of ``X``."""
    return float(np.sum(losses_from_cache(forward_batch(X, w), y)[loss]))


# --- checkpoints -----------------------------------------------------------

MAGIC = b"VMFGEOH\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIIIII")


class CheckpointError(ValueError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def save(w: HeadParams, path) -> None:
    """Write a checkpoint: header, featurizer JSON, float64 arrays, CRC-32."""
    d, h, k = w.dims
    meta = json.dumps(w.featurizer, sort_keys=True).encode("utf-8")
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, d, h, k, N_HIDDEN),
             struct.pack("<I", len(meta)), meta]
    for a, shape in zip(w.arrays(), _array_shapes((d, h, k))):
        if a.shape != shape:
            raise ShapeMismatchError(f"array shape {a.shape} does not match dims, expected {shape}")
        parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def _array_shapes(dims):
    shapes = []
    for fan_out, fan_in in layer_shapes(dims):
        shapes.extend(((fan_out, fan_in), (fan_out,)))
    return shapes


def load(path, expected_dims=None) -> HeadParams:
    """Read a checkpoint written by :func:`save`.

    ``expected_dims`` may give ``(D, H, K)`` with ``None`` for unchecked entries.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size + 8:
        raise ChecksumError(f"{path}: file too short to be a checkpoint")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError(f"{path}: checksum mismatch (truncated or corrupt file)")
    magic, version, d, h, k, n_hidden = _HEADER.unpack_from(body)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a head checkpoint")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if n_hidden != N_HIDDEN:
        raise ShapeMismatchError(f"{path}: {n_hidden} hidden layers, expected {N_HIDDEN}")
    if expected_dims is not None:
        for name, want, got in zip("DHK", expected_dims, (d, h, k)):
            if want is not None and want != got:
                raise ShapeMismatchError(f"{path}: dimension {name} mismatch: expected {want}, got {got}")
    off = _HEADER.size
    (meta_len,) = struct.unpack_from("<I", body, off)
    off += 4
    featurizer = json.loads(body[off:off + meta_len].decode("utf-8"))
    off += meta_len
    arrays = []
    for shape in _array_shapes((d, h, k)):
        count = int(np.prod(shape))
        a = np.frombuffer(body, dtype="<f8", count=count, offset=off).reshape(shape)
        arrays.append(a.astype(float))
        off += 8 * count
    if off != len(body):
        raise CheckpointError(f"{path}: {len(body) - off} trailing bytes")
    return HeadParams.from_arrays(arrays, featurizer)
