"""Geocoded text corpora: JSONL I/O, seeded splits, and an article API client."""

from __future__ import annotations

import json
import logging
import math
import time
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .sphere import normalize_lon

logger = logging.getLogger(__name__)


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class GeoTextRecord:
    id: str
    text: str
    lat: float
    lon: float
    title: str | None = None

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise CorpusError("record id must be a non-empty string")
        if not isinstance(self.text, str):
            raise CorpusError(f"record {self.id!r}: text must be a string")
        try:
            lat, lon = float(self.lat), float(self.lon)
        except (TypeError, ValueError):
            raise CorpusError(f"record {self.id!r}: coordinates must be numbers") from None
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise CorpusError(f"record {self.id!r}: coordinates must be finite")
        if abs(lat) > 90.0:
            raise CorpusError(f"record {self.id!r}: latitude {lat} out of range")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", normalize_lon(lon))

    def to_json(self) -> dict:
        out = {"id": self.id, "text": self.text, "lat": self.lat, "lon": self.lon}
        if self.title is not None:
            out["title"] = self.title
        return out


@dataclass
class Dataset:
    records: list[GeoTextRecord]
    provenance: str = ""
    stats: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.id in seen:
                raise CorpusError(f"duplicate id {r.id!r}")
            seen.add(r.id)

    def __len__(self):
        return len(self.records)

    def __iter__(self) -> Iterator[GeoTextRecord]:
        return iter(self.records)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    @property
    def texts(self) -> list[str]:
        return [r.text for r in self.records]

    @property
    def latlon(self) -> np.ndarray:
        return np.array([(r.lat, r.lon) for r in self.records], dtype=float).reshape(-1, 2)

    def by_id(self) -> dict[str, GeoTextRecord]:
        return {r.id: r for r in self.records}


def _record_from_obj(obj) -> GeoTextRecord:
    if not isinstance(obj, dict):
        raise CorpusError("expected a JSON object")
    missing = [k for k in ("id", "text", "lat", "lon") if k not in obj]
    if missing:
        raise CorpusError(f"missing field(s) {', '.join(missing)}")
    if isinstance(obj["lat"], bool) or isinstance(obj["lon"], bool):
        raise CorpusError("coordinates must be numbers")
    return GeoTextRecord(obj["id"], obj["text"], obj["lat"], obj["lon"], obj.get("title"))


def parse_jsonl(path, strict: bool = True) -> Dataset:
    """Read a corpus file with one ``{"id", "text", "lat", "lon", "title"?}`` object per line.

    In strict mode the first bad line raises :class:`CorpusError` naming the
    line; otherwise bad lines are skipped and counted in ``stats["skipped"]``.
    Duplicate ids always raise.
    """
    path = Path(path)
    records: list[GeoTextRecord] = []
    seen: set[str] = set()
    skipped = 0
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = _record_from_obj(json.loads(line))
            except (json.JSONDecodeError, CorpusError) as exc:
                if strict:
                    raise CorpusError(f"{path}:{lineno}: {exc}") from None
                logger.warning("%s:%d: skipped (%s)", path, lineno, exc)
                skipped += 1
                continue
            if rec.id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    return Dataset(records, provenance=str(path), stats={"skipped": skipped})


def write_jsonl(d: Dataset | Sequence[GeoTextRecord], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in d:
            fh.write(json.dumps(r.to_json(), ensure_ascii=False) + "\n")


def _floor(x: float) -> int:
    # absorb float noise such as 0.29 * 100 = 28.999999999999996
    return math.floor(x + 1e-9)


def split_sizes(n: int, fractions) -> tuple[int, int, int]:
    """Train/val/test sizes.

    The held-out count ``floor(n * (f_val + f_test))`` is split into
    ``floor(n * f_val)`` validation records with the remainder going to
    test; training gets everything else.
    """
    _, f_val, f_test = fractions
    n_holdout = _floor(n * (f_val + f_test))
    n_val = _floor(n * f_val)
    return n - n_holdout, n_val, n_holdout - n_val


def split(d: Dataset, fractions=(0.98, 0.01, 0.01), seed=42) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded shuffle followed by a contiguous train/val/test partition."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValueError(f"need three positive fractions, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)!r}")
    if len(d) < 3:
        raise ValueError(f"cannot split a dataset of {len(d)} records")
    n_train, n_val, _ = split_sizes(len(d), fractions)
    order = np.random.default_rng(seed).permutation(len(d))
    recs = [d.records[i] for i in order]
    parts = (recs[:n_train], recs[n_train:n_train + n_val], recs[n_train + n_val:])
    names = ("train", "val", "test")
    return tuple(Dataset(p, provenance=f"{d.provenance}[{name}, seed={seed}]")
                 for p, name in zip(parts, names))


# --- article API client -----------------------------------------------------

DEFAULT_PARAMS = {
    "action": "query",
    "format": "json",
    "formatversion": "2",
    "generator": "allpages",
    "gapnamespace": "0",
    "prop": "extracts|coordinates",
    "exintro": "1",
    "explaintext": "1",
    "coprimary": "primary",
}


class _RateLimiter:
    def __init__(self, rate: float, clock=time.monotonic, sleep=time.sleep):
        self.interval = 1.0 / rate if rate > 0 else 0.0
        self.clock, self.sleep = clock, sleep
        self._next = 0.0

    def wait(self):
        now = self.clock()
        if now < self._next:
            self.sleep(self._next - now)
            now = self._next
        self._next = now + self.interval


def _pages(payload) -> list[dict]:
    pages = payload.get("query", {}).get("pages", [])
    return list(pages.values()) if isinstance(pages, dict) else list(pages)


def _page_record(page: dict) -> GeoTextRecord | None:
    coords = [c for c in page.get("coordinates") or []
              if c.get("globe", "earth") == "earth"]
    primary = [c for c in coords if "primary" in c and c["primary"] is not False]
    coord = (primary or coords or [None])[0]
    text = page.get("extract")
    if coord is None or not text:
        return None
    try:
        return GeoTextRecord(str(page.get("pageid", page.get("title"))), text,
                             coord["lat"], coord["lon"], page.get("title"))
    except (CorpusError, KeyError):
        return None


def fetch_geo_articles(endpoint: str, limit: int, rate: float = 1.0, cursor_path=None,
                       params: dict | None = None, max_attempts: int = 3,
                       backoff: float = 1.0, timeout: float = 30.0) -> Dataset:
    """Collect coordinate-bearing article extracts from a MediaWiki-style query API.

    Pages are requested in continuation order; the continuation token is
    written to ``cursor_path`` after each response so an interrupted run
    resumes where it stopped. Failed requests are retried with exponential
    backoff (``backoff * 2**attempt`` seconds) up to ``max_attempts`` times.

    ``stats`` on the returned dataset holds ``requests``, ``retries``,
    ``failed_requests`` and ``skipped`` (pages without usable coordinates).
    """
    stats = {"requests": 0, "retries": 0, "failed_requests": 0, "skipped": 0}
    records: list[GeoTextRecord] = []
    if limit <= 0:
        return Dataset(records, provenance=endpoint, stats=stats)
    base = dict(DEFAULT_PARAMS)
    base.update(params or {})
    cont: dict = {}
    cursor = Path(cursor_path) if cursor_path else None
    if cursor is not None and cursor.exists() and cursor.read_text().strip():
        cont = json.loads(cursor.read_text())
    limiter = _RateLimiter(rate)
    seen: set[str] = set()
    while len(records) < limit:
        query = dict(base)
        query.update(cont)
        url = endpoint + ("&" if "?" in endpoint else "?") + urllib.parse.urlencode(query)
        payload = None
        for attempt in range(max_attempts):
            limiter.wait()
            stats["requests"] += 1
            try:
                with urllib.request.urlopen(url, timeout=timeout) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
                break
            except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
                logger.warning("request failed (attempt %d/%d): %s", attempt + 1, max_attempts, exc)
                if attempt + 1 < max_attempts:
                    stats["retries"] += 1
                    time.sleep(backoff * 2**attempt)
        if payload is None:
            stats["failed_requests"] += 1
            logger.error("giving up on %s after %d attempts", url, max_attempts)
            break
        for page in _pages(payload):
            rec = _page_record(page)
            if rec is None or rec.id in seen:
                stats["skipped"] += 1
                continue
            seen.add(rec.id)
            records.append(rec)
            if len(records) >= limit:
                break
        cont = payload.get("continue") or {}
        if cursor is not None:
            cursor.write_text(json.dumps(cont))
        if not cont:
            break
    logger.info("fetched %d records (%s)", len(records), stats)
    return Dataset(records, provenance=endpoint, stats=stats)
