"""Scoring predicted coordinates against gold locations.

Each observation may carry several candidate locations (an external
geocoder) or a full mixture (this package's model). One of three rules
collapses them to a single point:

``highProb``
    the highest-scoring candidate / highest-weight component;
``best``
    the candidate nearest to the truth (an oracle, useful as a bound);
``random``
    a uniformly chosen candidate or component.

Observations without any prediction are either imputed at (0, 0) or dropped
(complete-cases analysis).
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

from .ingest import Dataset
from .mixture import VmfMixture, select_component
from .sphere import GeoPoint, cart_to_geo, geo_to_cart, haversine_km

logger = logging.getLogger(__name__)

RULES = ("highProb", "best", "random")
MODES = ("imputed", "complete_cases")
IMPUTED_POINT = GeoPoint(0.0, 0.0)


class PredictionFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Candidate:
    lat: float
    lon: float
    score: float | None = None

    def __post_init__(self):
        GeoPoint(self.lat, self.lon)

    @property
    def point(self) -> GeoPoint:
        return GeoPoint(self.lat, self.lon)


Prediction = Union[VmfMixture, Sequence[Candidate], None]
PredictionSet = Mapping[str, Prediction]


def resolve(pred: Prediction, truth: GeoPoint, rule: str, rng=None,
            weighted_random: bool = False) -> GeoPoint:
    """Reduce one prediction to a single point under ``rule``."""
    if pred is None:
        raise ValueError("cannot resolve a missing prediction")
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}; expected one of {RULES}")
    rng = rng if rng is not None else np.random.default_rng()
    if isinstance(pred, VmfMixture):
        if rule == "best":
            lat, lon = cart_to_geo(pred.mu)
            k = int(np.argmin(haversine_km(lat, lon, truth.lat_deg, truth.lon_deg)))
        else:
            k = select_component(pred.rho, rule, rng, weighted_random)
        return GeoPoint.from_cart(pred.mu[k])
    cands = list(pred)
    if not cands:
        raise ValueError("empty candidate list")
    if rule == "best":
        d = [haversine_km(c.lat, c.lon, truth.lat_deg, truth.lon_deg) for c in cands]
        return cands[int(np.argmin(d))].point
    if rule == "random":
        return cands[int(rng.integers(len(cands)))].point
    scores = [c.score for c in cands]
    if any(s is None for s in scores):
        return cands[0].point
    return cands[int(np.argmax(scores))].point


def _lacks_scores(pred: Prediction) -> bool:
    return (pred is not None and not isinstance(pred, VmfMixture)
            and len(pred) > 1 and any(c.score is None for c in pred))


def bootstrap_se(errors, stat: str = "mean", B: int = 1000, seed=0, chunk: int = 50) -> float:
    """Nonparametric bootstrap standard error of the mean or median."""
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise ValueError("no errors to bootstrap")
    if B < 100:
        raise ValueError("use at least 100 bootstrap resamples")
    func = {"mean": np.mean, "median": np.median}[stat]
    rng = np.random.default_rng(seed)
    n = errors.size
    stats = np.empty(B)
    for start in range(0, B, chunk):
        m = min(chunk, B - start)
        idx = rng.integers(0, n, size=(m, n))
        stats[start:start + m] = func(errors[idx], axis=1)
    return float(np.std(stats, ddof=1))


@dataclass
class EvalReport:
    rule: str
    n: int
    mean_km: float
    median_km: float
    se_mean_km: float
    se_median_km: float
    missing_imputed: int
    mode: str
    model: str = "model"
    missing: int = 0
    highprob_degraded: bool = False

    @property
    def label(self) -> str:
        return self.model + (" Complete Cases" if self.mode == "complete_cases" else "")

    def to_dict(self) -> dict:
        return asdict(self)


def per_observation_errors(preds: PredictionSet, gold: Dataset, rule: str, mode: str = "imputed",
                           seed=0, weighted_random: bool = False):
    """Haversine error for every scored gold record.

    Returns
    -------
    errors : ndarray
    ids : list of str
    missing : int
        Gold records without a prediction.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    present = [r for r in gold if preds.get(r.id) is not None]
    if not present:
        raise ValueError("no gold id has a prediction")
    rng = np.random.default_rng(seed)
    errors, ids, missing = [], [], 0
    for r in gold:
        truth = GeoPoint(r.lat, r.lon)
        pred = preds.get(r.id)
        if pred is None:
            missing += 1
            if mode == "complete_cases":
                continue
            point = IMPUTED_POINT
        else:
            point = resolve(pred, truth, rule, rng, weighted_random)
        errors.append(haversine_km(point.lat_deg, point.lon_deg, truth.lat_deg, truth.lon_deg))
        ids.append(r.id)
    return np.array(errors), ids, missing


def evaluate(preds: PredictionSet, gold: Dataset, rule: str = "highProb", mode: str = "imputed",
             seed=0, B: int = 1000, model: str = "model",
             weighted_random: bool = False) -> EvalReport:
    """Score predictions for ``gold`` under one aggregation rule and missing-data mode."""
    errors, _, missing = per_observation_errors(preds, gold, rule, mode, seed, weighted_random)
    degraded = rule == "highProb" and any(_lacks_scores(preds.get(r.id)) for r in gold)
    if degraded:
        logger.warning("some candidate lists lack scores; highProb falls back to the first candidate")
    return EvalReport(
        rule=rule, n=int(errors.size),
        mean_km=float(np.mean(errors)), median_km=float(np.median(errors)),
        se_mean_km=bootstrap_se(errors, "mean", B, seed),
        se_median_km=bootstrap_se(errors, "median", B, seed),
        missing_imputed=missing if mode == "imputed" else 0,
        mode=mode, model=model, missing=missing, highprob_degraded=degraded)


# --- prediction files -------------------------------------------------------

def read_predictions(path) -> dict[str, Prediction]:
    """Load a predictions JSONL file.

    Two line shapes are accepted: external candidates
    ``{"id", "candidates": [{"lat", "lon", "score"?}]}`` (an empty list means
    missing) and mixtures as written by :func:`write_mixture_predictions`.
    """
    out: dict[str, Prediction] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rid = obj["id"]
                if "mixture" in obj:
                    comps = obj["mixture"]
                    mu = geo_to_cart([c["lat"] for c in comps], [c["lon"] for c in comps])
                    rho = np.array([c["rho"] for c in comps], dtype=float)
                    pred: Prediction = VmfMixture(mu, [c["kappa"] for c in comps], rho / rho.sum())
                else:
                    cands = [Candidate(float(c["lat"]), float(c["lon"]),
                                       None if c.get("score") is None else float(c["score"]))
                             for c in obj.get("candidates") or []]
                    pred = cands or None
            except (KeyError, TypeError, ValueError) as exc:
                raise PredictionFormatError(f"{path}:{lineno}: {exc}") from None
            if rid in out:
                raise PredictionFormatError(f"{path}:{lineno}: duplicate id {rid!r}")
            out[rid] = pred
    return out


def mixture_to_json(m: VmfMixture) -> list[dict]:
    lat, lon = cart_to_geo(m.mu)
    return [{"lat": float(a), "lon": float(o), "kappa": float(k), "rho": float(r)}
            for a, o, k, r in zip(np.atleast_1d(lat), np.atleast_1d(lon), m.kappa, m.rho)]


def write_mixture_predictions(path, ids: Sequence[str], mixtures: Sequence[VmfMixture],
                              points: Sequence[GeoPoint] | None = None, rule: str | None = None) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for i, (rid, m) in enumerate(zip(ids, mixtures)):
            obj = {"id": rid, "mixture": mixture_to_json(m)}
            if points is not None:
                obj["point"] = {"lat": points[i].lat_deg, "lon": points[i].lon_deg, "rule": rule}
            fh.write(json.dumps(obj) + "\n")


# --- tables -------------------------------------------------------------------

_COL = 9


def _fmt(x: float) -> str:
    return f"{x:.1f}" if math.isfinite(x) else "nan"


def format_table(reports: Sequence[EvalReport]) -> str:
    """Render reports as a text table: one row per model label, Mean/Median per rule,
    bootstrap standard errors in parentheses on the line beneath."""
    if not reports:
        raise ValueError("no reports to format")
    groups: dict[str, dict[str, EvalReport]] = {}
    for r in reports:
        groups.setdefault(r.label, {})[r.rule] = r
    rules = [rule for rule in RULES if any(rule in g for g in groups.values())]
    name_w = max(len("Model"), *(len(k) for k in groups)) + 2
    n_w = 8
    head1 = " " * (name_w + n_w) + "".join(f"{rule:>{2 * _COL}}" for rule in rules)
    head2 = f"{'Model':<{name_w}}{'n':>{n_w}}" + f"{'Mean':>{_COL}}{'Median':>{_COL}}" * len(rules)
    lines = [head1.rstrip(), head2, "-" * len(head2)]
    for label, by_rule in groups.items():
        n = next(iter(by_rule.values())).n
        row = f"{label:<{name_w}}{n:>{n_w},}"
        se = " " * (name_w + n_w)
        for rule in rules:
            r = by_rule.get(rule)
            if r is None:
                row += f"{'-':>{_COL}}{'-':>{_COL}}"
                se += " " * (2 * _COL)
            else:
                row += f"{_fmt(r.mean_km):>{_COL}}{_fmt(r.median_km):>{_COL}}"
                se += f"{'(' + _fmt(r.se_mean_km) + ')':>{_COL}}{'(' + _fmt(r.se_median_km) + ')':>{_COL}}"
        lines.extend((row, se.rstrip()))
    return "\n".join(lines) + "\n"


def parse_table(text: str) -> list[dict]:
    """Recover the numbers printed by :func:`format_table`."""
    lines = text.rstrip("\n").split("\n")
    rules = lines[0].split()
    out = []
    body = lines[3:]
    for row, se in zip(body[0::2], body[1::2]):
        m = re.match(r"^(.*?)\s+([\d,]+)((?:\s+\S+)+)$", row)
        if not m:
            raise ValueError(f"unparseable row {row!r}")
        vals = m.group(3).split()
        ses = iter(se.split())
        entry = {"model": m.group(1).strip(), "n": int(m.group(2).replace(",", "")), "rules": {}}
        for i, rule in enumerate(rules):
            mean, median = vals[2 * i], vals[2 * i + 1]
            if mean == "-":
                continue
            entry["rules"][rule] = {
                "mean_km": float(mean), "median_km": float(median),
                "se_mean_km": float(next(ses).strip("()")),
                "se_median_km": float(next(ses).strip("()"))}
        out.append(entry)
    return out


def reports_json(reports: Sequence[EvalReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2)
