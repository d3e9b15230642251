"""Command-line entry point: ``vmfgeo <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, density, evaluation, features, head, ingest, mixture
from .sphere import GeoPoint, cart_to_geo, geo_to_cart
from .train import TrainConfig, grad_check, train_head

logger = logging.getLogger("vmfgeo")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- manifests -----------------------------------------------------------------

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_path, args, argv, inputs, started) -> Path:
    """Record how an output was produced, next to it as ``<out>.manifest.json``."""
    config = {k: v for k, v in vars(args).items() if k not in ("func",)}
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "config": config,
        "seed": getattr(args, "seed", None),
        "inputs": {str(p): file_digest(p) for p in inputs if p and Path(p).is_file()},
        "version": __version__,
        "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_clock_s": round(time.time() - started, 3),
    }
    path = Path(str(out_path) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return path


# --- config files ----------------------------------------------------------------

def read_config(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment. Keys use flag spelling."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


# --- helpers ----------------------------------------------------------------------

def _floats(text: str, n: int | None = None) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} values, got {len(vals)}")
    return vals


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _featurizer_from_args(args) -> dict:
    if getattr(args, "embeddings", None):
        return {"kind": "embeddings"}
    cfg = features.FeaturizerConfig(args.dim, args.ngram_min, args.ngram_max,
                                    not args.no_lowercase, args.hash_seed)
    return {"kind": "hashed", **cfg.to_dict()}


def _features_for(ds: ingest.Dataset, featurizer: dict, embeddings_path=None) -> np.ndarray:
    if featurizer.get("kind") == "embeddings":
        if not embeddings_path:
            raise ingest.CorpusError("this model was trained on embeddings; pass --embeddings")
        emb = features.load_embeddings(embeddings_path)
        missing = [r.id for r in ds if r.id not in emb]
        if missing:
            raise ingest.CorpusError(f"no embedding for id {missing[0]!r} ({len(missing)} missing)")
        return np.array([emb[r.id] for r in ds])
    cfg = features.FeaturizerConfig(**{k: v for k, v in featurizer.items() if k != "kind"})
    return np.array([features.featurize(t, cfg) for t in ds.texts]).reshape(-1, cfg.dim)


def _mixture_for_text(args):
    w = head.load(args.model)
    featurizer = w.featurizer or {}
    if featurizer.get("kind") == "embeddings":
        raise UsageError("text input needs a model trained on hashed n-gram features")
    cfg = features.FeaturizerConfig(**{k: v for k, v in featurizer.items() if k != "kind"})
    return head.forward(features.featurize(args.text, cfg), w)


def _record_mixture(args):
    """Mixture and gold point for ``--id`` in ``--in`` under ``--model``."""
    w = head.load(args.model)
    ds = ingest.parse_jsonl(args.input)
    rec = ds.by_id().get(args.id)
    if rec is None:
        raise ingest.CorpusError(f"id {args.id!r} not found in {args.input}")
    one = ingest.Dataset([rec])
    X = _features_for(one, w.featurizer or {}, getattr(args, "embeddings", None))
    return head.forward(X[0], w), (rec.lat, rec.lon)


def _explicit_mixture(args):
    comps = json.loads(Path(args.mixture).read_text()) if args.mixture else None
    if comps is None:
        return mixture.VmfMixture.single(geo_to_cart(args.mu_lat, args.mu_lon), args.kappa)
    if isinstance(comps, dict):
        comps = comps.get("mixture", comps)
    mu = geo_to_cart([c["lat"] for c in comps], [c["lon"] for c in comps])
    rho = np.array([c["rho"] for c in comps], dtype=float)
    return mixture.VmfMixture(mu, [c["kappa"] for c in comps], rho / rho.sum())


def _resolve_mixture(args):
    if getattr(args, "model", None) and getattr(args, "text", None):
        return _mixture_for_text(args), None
    if getattr(args, "model", None) and getattr(args, "id", None):
        return _record_mixture(args)
    if getattr(args, "mixture", None) or getattr(args, "kappa", None) is not None:
        return _explicit_mixture(args), None
    raise UsageError("give --model with --text or --in/--id, or --mixture, "
                     "or --mu-lat/--mu-lon/--kappa")


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# --- commands ---------------------------------------------------------------------

def cmd_ingest(args, argv, started):
    if args.endpoint:
        ds = ingest.fetch_geo_articles(args.endpoint, args.limit, args.rate, args.cursor,
                                       max_attempts=args.attempts, backoff=args.backoff)
        inputs = []
    elif args.input:
        ds = ingest.parse_jsonl(args.input, strict=not args.lenient)
        inputs = [args.input]
    else:
        raise UsageError("ingest needs --endpoint or --in")
    ingest.write_jsonl(ds, args.out)
    print(json.dumps({"records": len(ds), **ds.stats}))
    write_manifest(args.out, args, argv, inputs, started)


def cmd_split(args, argv, started):
    ds = ingest.parse_jsonl(args.input)
    parts = ingest.split(ds, args.fractions, args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, part in zip(("train", "val", "test"), parts):
        path = out_dir / f"{args.prefix}{name}.jsonl"
        ingest.write_jsonl(part, path)
        print(f"{name}\t{len(part)}\t{path}")
    write_manifest(out_dir / f"{args.prefix}split", args, argv, [args.input], started)


def cmd_train(args, argv, started):
    train_ds = ingest.parse_jsonl(args.train)
    val_ds = ingest.parse_jsonl(args.val) if args.val else None
    featurizer = _featurizer_from_args(args)
    X = _features_for(train_ds, featurizer, args.embeddings)
    if featurizer["kind"] == "embeddings":
        featurizer["dim"] = int(X.shape[1])
    X_val = _features_for(val_ds, featurizer, args.embeddings) if val_ds else None
    cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                      loss=args.loss, seed=args.seed, shuffle=not args.no_shuffle)
    latlon = train_ds.latlon
    w, history = train_head(X, geo_to_cart(latlon[:, 0], latlon[:, 1]), cfg,
                            hidden_units=args.hidden, n_components=args.components,
                            X_val=X_val, val_latlon=val_ds.latlon if val_ds else None)
    w.featurizer = featurizer
    head.save(w, args.out)
    log = "\n".join(["epoch\tmean_loss\tval_mean_km\tval_median_km", *history.log_lines()]) + "\n"
    if args.log:
        Path(args.log).write_text(log)
    sys.stdout.write(log)
    if history.skipped_steps:
        logger.warning("%d steps skipped for non-finite gradients", len(history.skipped_steps))
    write_manifest(args.out, args, argv, [args.train, args.val, args.embeddings], started)


def cmd_predict(args, argv, started):
    w = head.load(args.model)
    ds = ingest.parse_jsonl(args.input)
    X = _features_for(ds, w.featurizer or {}, args.embeddings)
    mixtures = head.predict_mixtures(X, w)
    rng = np.random.default_rng(args.seed)
    points = None
    if args.rule:
        points = [GeoPoint.from_cart(m.mu[mixture.select_component(m.rho, args.rule, rng)])
                  for m in mixtures]
    evaluation.write_mixture_predictions(args.out, ds.ids, mixtures, points, args.rule)
    print(f"wrote {len(mixtures)} predictions to {args.out}")
    write_manifest(args.out, args, argv, [args.model, args.input, args.embeddings], started)


def cmd_evaluate(args, argv, started):
    preds = evaluation.read_predictions(args.pred)
    gold = ingest.parse_jsonl(args.gold)
    rules = evaluation.RULES if args.rule == "all" else (args.rule,)
    modes = evaluation.MODES if args.mode == "both" else (args.mode,)
    reports = [evaluation.evaluate(preds, gold, rule, mode, args.seed, args.bootstrap,
                                   args.model_name, args.weighted_random)
               for mode in modes for rule in rules]
    sys.stdout.write(evaluation.format_table(reports))
    if args.out:
        Path(args.out).write_text(evaluation.reports_json(reports) + "\n")
        write_manifest(args.out, args, argv, [args.pred, args.gold], started)


def cmd_contours(args, argv, started):
    m, gold = _resolve_mixture(args)
    if args.res:
        g = density.density_grid(m, args.res)
    else:
        g = density.adaptive_density_grid(m)
    levels = args.levels
    thresholds = density.hpd_thresholds(g, levels)
    doc = density.contours_geojson(g, thresholds, levels, predicted=m, actual=gold)
    _emit(json.dumps(doc) + "\n", args.out)
    if args.out:
        write_manifest(args.out, args, argv, [getattr(args, "model", None),
                                              getattr(args, "input", None), args.mixture], started)


def cmd_sample(args, argv, started):
    m, _ = _resolve_mixture(args)
    x = mixture.sample_mixture(m, args.n, args.seed)
    lat, lon = cart_to_geo(x)
    text = "lat\tlon\n" + "".join(f"{a!r}\t{o!r}\n" for a, o in zip(lat, lon))
    _emit(text, args.out)
    if args.out:
        write_manifest(args.out, args, argv, [getattr(args, "model", None), args.mixture], started)


def cmd_gradcheck(args, argv, started):
    losses = head.LOSSES if args.loss == "both" else (args.loss,)
    ok = True
    for loss in losses:
        rep = grad_check(tuple(args.dims), args.cases, args.seed, args.tol, loss)
        status = "pass" if rep.passed else "FAIL"
        print(f"{loss}\tmax_rel_error={rep.max_rel_error:.3e}\ttol={rep.tol:g}\t"
              f"checked={rep.n_checked}\t{status}")
        ok &= rep.passed
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_replay(args, argv, started):
    manifest = json.loads(Path(args.manifest).read_text())
    return run(manifest["argv"])


# --- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vmfgeo", description="Probabilistic geocoding with vMF mixtures.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="key = value file; command-line flags override it")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--seed", type=int, default=42)
        sp.add_argument("--config", help=argparse.SUPPRESS)
        return sp

    def featurizer_flags(sp):
        sp.add_argument("--embeddings", help="embedding file instead of hashed n-grams")
        sp.add_argument("--dim", type=int, default=4096)
        sp.add_argument("--ngram-min", type=int, default=3)
        sp.add_argument("--ngram-max", type=int, default=5)
        sp.add_argument("--no-lowercase", action="store_true")
        sp.add_argument("--hash-seed", type=int, default=0)

    def mixture_source(sp):
        sp.add_argument("--model")
        sp.add_argument("--text")
        sp.add_argument("--in", dest="input")
        sp.add_argument("--id")
        sp.add_argument("--embeddings")
        sp.add_argument("--mixture", help="JSON list of {lat, lon, kappa, rho}")
        sp.add_argument("--mu-lat", type=float, default=0.0)
        sp.add_argument("--mu-lon", type=float, default=0.0)
        sp.add_argument("--kappa", type=float)

    sp = common(sub.add_parser("ingest", help="fetch or validate a corpus"))
    sp.add_argument("--endpoint")
    sp.add_argument("--in", dest="input")
    sp.add_argument("--out", required=True)
    sp.add_argument("--limit", type=int, default=1000)
    sp.add_argument("--rate", type=float, default=1.0)
    sp.add_argument("--cursor")
    sp.add_argument("--attempts", type=int, default=3)
    sp.add_argument("--backoff", type=float, default=1.0)
    sp.add_argument("--lenient", action="store_true")
    sp.set_defaults(func=cmd_ingest)

    sp = common(sub.add_parser("split", help="seeded train/val/test split"))
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--fractions", type=lambda s: _floats(s, 3), default="0.98,0.01,0.01")
    sp.add_argument("--out-dir", default=".")
    sp.add_argument("--prefix", default="")
    sp.set_defaults(func=cmd_split)

    sp = common(sub.add_parser("train", help="fit the regression head"))
    sp.add_argument("--train", required=True)
    sp.add_argument("--val")
    sp.add_argument("--out", required=True)
    sp.add_argument("--log")
    featurizer_flags(sp)
    sp.add_argument("--hidden", type=int, default=256)
    sp.add_argument("--components", type=int, default=5)
    sp.add_argument("--lr", type=float, default=5e-5)
    sp.add_argument("--epochs", type=int, default=5)
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--loss", choices=head.LOSSES, default="mixture_nll")
    sp.add_argument("--no-shuffle", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = common(sub.add_parser("predict", help="write per-record mixtures"))
    sp.add_argument("--model", required=True)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--embeddings")
    sp.add_argument("--out", required=True)
    sp.add_argument("--rule", choices=mixture.RULES)
    sp.set_defaults(func=cmd_predict)

    sp = common(sub.add_parser("evaluate", help="score predictions against gold"))
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gold", required=True)
    sp.add_argument("--rule", choices=(*evaluation.RULES, "all"), default="all")
    sp.add_argument("--mode", choices=(*evaluation.MODES, "both"), default="imputed")
    sp.add_argument("--bootstrap", type=int, default=1000)
    sp.add_argument("--model-name", default="model")
    sp.add_argument("--weighted-random", action="store_true")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_evaluate)

    sp = common(sub.add_parser("contours", help="HPD contours as GeoJSON"))
    mixture_source(sp)
    sp.add_argument("--levels", type=_floats, default=",".join(map(str, density.DECILES)))
    sp.add_argument("--res", type=float, help="fixed grid resolution (default: adaptive)")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_contours)

    sp = common(sub.add_parser("sample", help="draw coordinates from a mixture"))
    mixture_source(sp)
    sp.add_argument("-n", type=int, default=1000)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_sample)

    sp = common(sub.add_parser("gradcheck", help="finite-difference gradient check"))
    sp.add_argument("--dims", type=_ints, default="8,4,2")
    sp.add_argument("--cases", type=int, default=25)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--loss", choices=(*head.LOSSES, "both"), default="both")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    sp.add_argument("manifest")
    sp.set_defaults(func=cmd_replay)
    return p


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = read_config(known.config)
    for action in parser._subparsers._group_actions:
        for name, sp in action.choices.items():
            dests = {a.dest for a in sp._actions}
            unknown = set(values) - dests
            if name == _command_of(argv, action.choices) and unknown:
                raise UsageError(f"{known.config}: unknown key(s) {', '.join(sorted(unknown))}")
            sp.set_defaults(**{k: _config_value(sp, k, v) for k, v in values.items() if k in dests})


def _config_value(sp, dest, value):
    for a in sp._actions:
        if a.dest == dest and a.nargs == 0:  # store_true flags
            return value.lower() in ("1", "true", "yes", "on")
    return value


def _command_of(argv, choices):
    return next((a for a in argv if a in choices), None)


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    started = time.time()
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError(parser.format_usage().strip())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        code = args.func(args, argv, started)
        return EXIT_OK if code is None else code
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
