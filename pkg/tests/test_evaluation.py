import json
import math
import statistics

import numpy as np
import pytest

from conftest import random_unit
from vmfgeo.evaluation import (Candidate, EvalReport, PredictionFormatError, bootstrap_se,
                               evaluate, format_table, parse_table, per_observation_errors,
                               read_predictions, resolve, write_mixture_predictions)
from vmfgeo.ingest import Dataset, GeoTextRecord
from vmfgeo.mixture import VmfMixture
from vmfgeo.sphere import GeoPoint, geo_to_cart, haversine_km


def _gold(points):
    return Dataset([GeoTextRecord(f"g{i}", "t", lat, lon) for i, (lat, lon) in enumerate(points)])


def _offset(lat, lon, km, bearing_deg):
    # destination point on the sphere, coded separately from the package
    R = 6371.0088
    d = km / R
    la, lo, b = map(math.radians, (lat, lon, bearing_deg))
    la2 = math.asin(math.sin(la) * math.cos(d) + math.cos(la) * math.sin(d) * math.cos(b))
    lo2 = lo + math.atan2(math.sin(b) * math.sin(d) * math.cos(la),
                          math.cos(d) - math.sin(la) * math.sin(la2))
    return math.degrees(la2), (math.degrees(lo2) + 540) % 360 - 180


def test_single_candidate_all_rules():
    c = [Candidate(10, 20, 0.3)]
    for rule in ("highProb", "best", "random"):
        assert resolve(c, GeoPoint(0, 0), rule, np.random.default_rng(0)) == GeoPoint(10, 20)


def test_best_picks_nearest():
    truth = GeoPoint(40, -100)
    a = _offset(40, -100, 10, 30)
    b = _offset(40, -100, 500, 200)
    cands = [Candidate(*b, score=0.9), Candidate(*a, score=0.1)]
    assert resolve(cands, truth, "best") == GeoPoint(*a)
    assert resolve(cands, truth, "highProb") == GeoPoint(*b)


def test_highprob_without_scores_uses_first():
    cands = [Candidate(1, 1), Candidate(2, 2, 5.0)]
    assert resolve(cands, GeoPoint(0, 0), "highProb") == GeoPoint(1, 1)
    gold = _gold([(0, 0)])
    rep = evaluate({"g0": cands}, gold, "highProb", B=100)
    assert rep.highprob_degraded


def test_rule_ordering_on_random_prediction_sets():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        truth = GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180))
        k = int(rng.integers(1, 6))
        cands = [Candidate(rng.uniform(-90, 90), rng.uniform(-180, 180), rng.random()) for _ in range(k)]
        err = {rule: haversine_km(*resolve(cands, truth, rule, rng), *truth)
               for rule in ("best", "highProb", "random")}
        worst = max(haversine_km(c.lat, c.lon, *truth) for c in cands)
        assert err["best"] <= err["highProb"] <= worst + 1e-9
        assert err["best"] <= err["random"] <= worst + 1e-9


def test_mixture_rules():
    rng = np.random.default_rng(1)
    mu = random_unit(rng, 3)
    m = VmfMixture(mu, [5, 5, 5], [0.2, 0.5, 0.3])
    truth = GeoPoint.from_cart(mu[2])
    assert resolve(m, truth, "best") == truth
    assert resolve(m, truth, "highProb") == GeoPoint.from_cart(mu[1])


def test_perfect_predictions_score_zero():
    pts = [(10, 10), (-20, 30), (55, -3)]
    gold = _gold(pts)
    preds = {f"g{i}": [Candidate(*p, 1.0)] for i, p in enumerate(pts)}
    rep = evaluate(preds, gold, "highProb", B=200)
    assert rep.mean_km == 0 and rep.median_km == 0
    assert rep.se_mean_km == 0 and rep.se_median_km == 0


def test_hand_placed_offsets_match_independent_scorer():
    offsets = [3.0, 12.5, 40.0, 41.0, 99.9, 150.0, 220.0, 800.0, 1500.0, 4000.0]
    rng = np.random.default_rng(2)
    truths = [(rng.uniform(-60, 60), rng.uniform(-170, 170)) for _ in offsets]
    preds = {f"g{i}": [Candidate(*_offset(*t, km, rng.uniform(0, 360)))]
             for i, (t, km) in enumerate(zip(truths, offsets))}
    rep = evaluate(preds, _gold(truths), "highProb", B=200)
    assert rep.mean_km == pytest.approx(statistics.fmean(offsets), abs=1e-6)
    assert rep.median_km == pytest.approx(statistics.median(offsets), abs=1e-6)
    assert rep.median_km == pytest.approx((99.9 + 150.0) / 2, abs=1e-6)


def test_missing_accounting():
    gold = _gold([(0, 0), (10, 10), (20, 20), (30, 30)])
    preds = {"g0": [Candidate(0, 1)], "g2": [Candidate(20, 20)], "g3": None}
    imp = evaluate(preds, gold, "best", "imputed", B=100)
    cc = evaluate(preds, gold, "best", "complete_cases", B=100)
    assert imp.n == 4 and imp.missing_imputed == 2
    assert cc.n == 2 and cc.missing == 2
    assert cc.n + cc.missing == imp.n
    errs, ids, _ = per_observation_errors(preds, gold, "best", "imputed")
    assert errs[ids.index("g1")] == pytest.approx(haversine_km(0, 0, 10, 10))
    assert cc.label == "model Complete Cases"


def test_evaluate_is_deterministic():
    rng = np.random.default_rng(3)
    pts = [(rng.uniform(-80, 80), rng.uniform(-180, 180)) for _ in range(50)]
    preds = {f"g{i}": [Candidate(rng.uniform(-80, 80), rng.uniform(-180, 180)) for _ in range(3)]
             for i in range(50)}
    a = evaluate(preds, _gold(pts), "random", seed=5, B=200)
    b = evaluate(preds, _gold(pts), "random", seed=5, B=200)
    assert a == b


def test_no_predictions_at_all():
    with pytest.raises(ValueError):
        evaluate({}, _gold([(0, 0)]))


def test_bootstrap_se_analytic():
    errors = np.random.default_rng(4).normal(100, 10, 1000)
    se = bootstrap_se(errors, "mean", B=1000, seed=0)
    assert abs(se - 10 / math.sqrt(1000)) / (10 / math.sqrt(1000)) < 0.15
    assert se == bootstrap_se(errors, "mean", B=1000, seed=0)
    assert bootstrap_se(np.full(30, 7.0), "median") == 0
    with pytest.raises(ValueError):
        bootstrap_se(errors, B=10)


def _report(model="model", rule="highProb", mode="imputed"):
    return EvalReport(rule, 12864, 108.1, 44.1, 3.14, 0.96, 0, mode, model)


def test_table_format_and_round_trip():
    one = format_table([_report()])
    lines = one.rstrip("\n").split("\n")
    assert len(lines) == 5  # two header lines, rule, one row, one SE row
    assert "12,864" in lines[3]
    reports = [_report("Geocoder", r, "complete_cases") for r in ("highProb", "best", "random")]
    reports += [_report("model", "highProb"), _report("model", "random")]
    text = format_table(reports)
    assert "Geocoder Complete Cases" in text
    parsed = parse_table(text)
    assert [p["model"] for p in parsed] == ["Geocoder Complete Cases", "model"]
    assert parsed[1]["rules"]["random"] == {"mean_km": 108.1, "median_km": 44.1,
                                            "se_mean_km": 3.1, "se_median_km": 1.0}
    assert "best" not in parsed[1]["rules"]
    assert parsed[0]["n"] == 12864


def test_prediction_files(tmp_path):
    rng = np.random.default_rng(5)
    mixtures = [VmfMixture(random_unit(rng, 2), [3.0, 40.0], [0.25, 0.75]) for _ in range(3)]
    p = tmp_path / "pred.jsonl"
    write_mixture_predictions(p, ["a", "b", "c"], mixtures)
    back = read_predictions(p)
    for m, rid in zip(mixtures, "abc"):
        np.testing.assert_allclose(back[rid].mu, m.mu, atol=1e-12)
        np.testing.assert_allclose(back[rid].rho, m.rho, atol=1e-15)
    q = tmp_path / "ext.jsonl"
    q.write_text(json.dumps({"id": "x", "candidates": []}) + "\n"
                 + json.dumps({"id": "y", "candidates": [{"lat": 1, "lon": 2, "score": 0.5}]}) + "\n")
    ext = read_predictions(q)
    assert ext["x"] is None and ext["y"] == [Candidate(1, 2, 0.5)]
    q.write_text(json.dumps({"id": "z", "candidates": [{"lat": 100, "lon": 0}]}) + "\n")
    with pytest.raises(PredictionFormatError, match=":1:"):
        read_predictions(q)
