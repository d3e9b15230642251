"""Text featurization: hashed character n-grams, or precomputed embeddings."""

from __future__ import annotations

import logging
import unicodedata
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

logger = logging.getLogger(__name__)

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET
    for b in data:
        h = ((h ^ b) * FNV64_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class FeaturizerConfig:
    dim: int = 4096
    ngram_min: int = 3
    ngram_max: int = 5
    lowercase: bool = True
    hash_seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.dim & (self.dim - 1):
            raise ValueError(f"dim must be a power of two, got {self.dim}")
        if not 1 <= self.ngram_min <= self.ngram_max:
            raise ValueError(f"need 1 <= ngram_min <= ngram_max, got "
                             f"({self.ngram_min}, {self.ngram_max})")
        if not 0 <= self.hash_seed < 2**64:
            raise ValueError("hash_seed must fit in 64 bits")

    def to_dict(self) -> dict:
        return asdict(self)


@lru_cache(maxsize=1 << 18)
def _bucket(gram: str, hash_seed: int, dim: int) -> int:
    # dim is a power of two, so the modulo is a mask
    return (fnv1a_64(gram.encode("utf-8")) ^ hash_seed) & (dim - 1)


def normalize_text(text: str, lowercase: bool = True) -> str:
    text = unicodedata.normalize("NFC", text)
    return text.lower() if lowercase else text


def featurize(text: str, cfg: FeaturizerConfig = FeaturizerConfig()) -> np.ndarray:
    """Hashed character n-gram counts, L2-normalized.

    Empty text maps to the zero vector (logged at debug level).
    """
    text = normalize_text(text, cfg.lowercase)
    out = np.zeros(cfg.dim)
    for n in range(cfg.ngram_min, cfg.ngram_max + 1):
        for i in range(len(text) - n + 1):
            out[_bucket(text[i:i + n], cfg.hash_seed, cfg.dim)] += 1.0
    norm = np.linalg.norm(out)
    if norm == 0.0:
        logger.debug("text %r produced no n-grams; returning zero vector", text[:40])
        return out
    return out / norm


class HashedNgramVectorizer(TransformerMixin, BaseEstimator):
    """Stateless transformer turning an iterable of strings into an (n, dim) array."""

    def __init__(self, dim=4096, ngram_min=3, ngram_max=5, lowercase=True, hash_seed=0):
        self.dim = dim
        self.ngram_min = ngram_min
        self.ngram_max = ngram_max
        self.lowercase = lowercase
        self.hash_seed = hash_seed

    @property
    def config(self) -> FeaturizerConfig:
        return FeaturizerConfig(self.dim, self.ngram_min, self.ngram_max,
                                self.lowercase, self.hash_seed)

    def fit(self, X, y=None):
        self.config_ = self.config
        self.n_features_out_ = self.dim
        return self

    def transform(self, X):
        if isinstance(X, str):
            raise TypeError("expected an iterable of strings, got a single string")
        cfg = self.config
        return np.array([featurize(t, cfg) for t in X]).reshape(-1, cfg.dim)

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.input_tags.two_d_array = False
        tags.input_tags.string = True
        tags.requires_fit = False
        return tags


class EmbeddingFormatError(ValueError):
    pass


def load_embeddings(path) -> dict[str, np.ndarray]:
    """Read an embedding file.

    The first line is ``id<TAB>dim=D``; every following line is
    ``id<TAB>v1<TAB>...<TAB>vD``.
    """
    path = Path(path)
    out: dict[str, np.ndarray] = {}
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if len(header) != 2 or header[0] != "id" or not header[1].startswith("dim="):
            raise EmbeddingFormatError(f"{path}:1: malformed header {header!r}")
        try:
            dim = int(header[1][4:])
        except ValueError:
            raise EmbeddingFormatError(f"{path}:1: bad dimension {header[1]!r}") from None
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            rid, values = fields[0], fields[1:]
            if len(values) != dim:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: malformed row, expected {dim} values, got {len(values)}")
            if rid in out:
                raise EmbeddingFormatError(f"{path}:{lineno}: duplicate id {rid!r}")
            try:
                vec = np.array([float(v) for v in values])
            except ValueError as exc:
                raise EmbeddingFormatError(f"{path}:{lineno}: malformed row ({exc})") from None
            if not np.all(np.isfinite(vec)):
                raise EmbeddingFormatError(f"{path}:{lineno}: non-finite value")
            out[rid] = vec
    return out


def write_embeddings(path, embeddings: dict[str, np.ndarray]) -> None:
    dims = {len(v) for v in embeddings.values()}
    if len(dims) > 1:
        raise ValueError(f"embeddings have mixed dimensions {sorted(dims)}")
    dim = dims.pop() if dims else 0
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"id\tdim={dim}\n")
        for rid, vec in embeddings.items():
            fh.write(rid + "\t" + "\t".join(repr(float(v)) for v in vec) + "\n")
