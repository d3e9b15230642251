import json
import subprocess
import sys

import pytest

from conftest import toy_corpus
from vmfgeo import head, ingest
from vmfgeo.cli import run


@pytest.fixture
def corpus(tmp_path):
    p = tmp_path / "corpus.jsonl"
    ingest.write_jsonl(toy_corpus(per_city=25), p)
    return p


def test_split_is_deterministic(tmp_path, corpus):
    args = ["split", "--in", str(corpus), "--fractions", "0.98,0.01,0.01", "--seed", "7"]
    assert run(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert run(args + ["--out-dir", str(tmp_path / "b")]) == 0
    for name in ("train", "val", "test"):
        assert (tmp_path / "a" / f"{name}.jsonl").read_bytes() == \
            (tmp_path / "b" / f"{name}.jsonl").read_bytes()
    manifest = json.loads((tmp_path / "a" / "split.manifest.json").read_text())
    assert manifest["seed"] == 7
    assert manifest["inputs"][str(corpus)]
    assert manifest["config"]["fractions"] == [0.98, 0.01, 0.01]


def test_usage_errors(capsys):
    assert run([]) == 1
    assert run(["gradcheck", "--bogus"]) == 1
    assert "unrecognized arguments: --bogus" in capsys.readouterr().err
    assert run(["train", "--out", "x"]) == 1
    assert "required" in capsys.readouterr().err
    assert run(["nosuchcommand"]) == 1
    assert "invalid choice" in capsys.readouterr().err


def test_data_error(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "a", "text": "t", "lat": 95, "lon": 0}\n')
    assert run(["split", "--in", str(bad), "--out-dir", str(tmp_path)]) == 2
    assert run(["split", "--in", str(tmp_path / "missing.jsonl")]) == 2


def test_gradcheck(capsys):
    assert run(["gradcheck", "--dims", "8,4,2", "--cases", "25", "--tol", "1e-4"]) == 0
    out = capsys.readouterr().out
    assert out.count("max_rel_error=") == 2
    assert run(["gradcheck", "--cases", "2", "--tol", "1e-14", "--loss", "weighted_nll"]) == 3


def _write_preds(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))


def test_evaluate_complete_cases(tmp_path, capsys):
    gold = tmp_path / "gold.jsonl"
    ingest.write_jsonl([ingest.GeoTextRecord(f"g{i}", "t", float(i), float(i)) for i in range(5)], gold)
    preds = tmp_path / "preds.jsonl"
    _write_preds(preds, [{"id": "g0", "candidates": [{"lat": 0, "lon": 0.5}]},
                         {"id": "g1", "candidates": []},
                         {"id": "g3", "candidates": [{"lat": 3, "lon": 3, "score": 1}]}])
    out = tmp_path / "report.json"
    assert run(["evaluate", "--pred", str(preds), "--gold", str(gold), "--rule", "best",
                "--mode", "complete_cases", "--out", str(out), "--model-name", "Geocoder"]) == 0
    table = capsys.readouterr().out
    assert "Geocoder Complete Cases" in table
    (rep,) = json.loads(out.read_text())
    assert rep["n"] == 2 and rep["missing"] == 3
    assert (tmp_path / "report.json.manifest.json").exists()


def test_train_predict_evaluate_replay(tmp_path, corpus, capsys):
    assert run(["split", "--in", str(corpus), "--fractions", "0.8,0.1,0.1",
                "--out-dir", str(tmp_path)]) == 0
    model = tmp_path / "head.bin"
    train = ["train", "--train", str(tmp_path / "train.jsonl"), "--val", str(tmp_path / "val.jsonl"),
             "--out", str(model), "--dim", "256", "--hidden", "8", "--components", "3",
             "--epochs", "2", "--lr", "1e-3", "--log", str(tmp_path / "train.log")]
    assert run(train) == 0
    log = (tmp_path / "train.log").read_text().splitlines()
    assert log[0].startswith("epoch") and len(log) == 3
    w = head.load(model)
    assert w.dims == (256, 8, 3) and w.featurizer["dim"] == 256
    first = model.read_bytes()

    manifest = tmp_path / "head.bin.manifest.json"
    assert run(["replay", str(manifest)]) == 0
    assert model.read_bytes() == first

    preds = tmp_path / "preds.jsonl"
    assert run(["predict", "--model", str(model), "--in", str(tmp_path / "test.jsonl"),
                "--out", str(preds), "--rule", "highProb"]) == 0
    line = json.loads(preds.read_text().splitlines()[0])
    assert len(line["mixture"]) == 3 and line["point"]["rule"] == "highProb"
    assert run(["evaluate", "--pred", str(preds), "--gold", str(tmp_path / "test.jsonl"),
                "--bootstrap", "200"]) == 0
    assert "highProb" in capsys.readouterr().out

    geo = tmp_path / "c.geojson"
    rid = line["id"]
    assert run(["contours", "--model", str(model), "--in", str(tmp_path / "test.jsonl"),
                "--id", rid, "--levels", "0.5,0.9", "--res", "2", "--out", str(geo)]) == 0
    doc = json.loads(geo.read_text())
    markers = [f["properties"].get("marker") for f in doc["features"]]
    assert markers.count("star") == 1 and markers.count("diamond") == 3


def test_contours_and_sample_from_explicit_mixture(tmp_path, capsys):
    out = tmp_path / "s.tsv"
    args = ["sample", "--mu-lat", "10", "--mu-lon", "20", "--kappa", "50", "-n", "5",
            "--seed", "3", "--out", str(out)]
    assert run(args) == 0
    first = out.read_text()
    assert first.startswith("lat\tlon\n") and len(first.splitlines()) == 6
    assert run(["replay", str(out) + ".manifest.json"]) == 0
    assert out.read_text() == first
    mix = tmp_path / "m.json"
    mix.write_text(json.dumps([{"lat": 0, "lon": 179, "kappa": 100, "rho": 1}]))
    assert run(["contours", "--mixture", str(mix), "--levels", "0.9"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["features"][0]["geometry"]["coordinates"]) == 2
    assert run(["contours"]) == 1


def test_config_file_with_flag_override(tmp_path, corpus):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# split settings\nfractions = 0.5,0.25,0.25\nseed = 3\n")
    assert run(["--config", str(cfg), "split", "--in", str(corpus), "--out-dir", str(tmp_path / "a")]) == 0
    assert len((tmp_path / "a" / "train.jsonl").read_text().splitlines()) == 50
    m = json.loads((tmp_path / "a" / "split.manifest.json").read_text())
    assert m["seed"] == 3
    assert run(["--config", str(cfg), "split", "--in", str(corpus), "--seed", "9",
                "--out-dir", str(tmp_path / "b")]) == 0
    assert json.loads((tmp_path / "b" / "split.manifest.json").read_text())["seed"] == 9
    cfg.write_text("colour = blue\n")
    assert run(["--config", str(cfg), "split", "--in", str(corpus)]) == 1


def test_entry_point_subprocess():
    r = subprocess.run([sys.executable, "-m", "vmfgeo.cli", "gradcheck", "--cases", "2"],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert "pass" in r.stdout
