"""Command-line front door.

Subcommands wire the pipeline stages into reproducible batch runs:

    corpus     render a synthetic single-bubble training set -> .bdb
    extract    segment real flow images (PGM) into a training set -> .bdb
    train      train the conditioned generator on a corpus -> .bgm
    gendb      pre-generate the searchable bubble database -> .bdb
    synth      assemble labeled flow scenes from flow.json + .bdb
    eval       conditioning fidelity report for a trained model
    features   print the feature vector of one image (+ optional mask)
    gradcheck  verify reverse-mode gradients against finite differences

Every run is reproducible: the seed defaults to 0 and is echoed in outputs.
Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import bubdb, netpbm
from .assembler import FlowSpec, export, synthesize
from .ccarender import CorpusRanges, make_corpus
from .features import extract_features
from .gan import (
    GanConfig,
    default_sweep,
    evaluate_conditioning,
    grad_check,
    load_model,
    save_model,
    train,
)
from .imgproc import largest_component
from .patchpipe import PatchConfig, build_training_set, derive_mask

log = logging.getLogger("bubforge")


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    return max(1, int(os.environ.get("BUBFORGE_THREADS", "1")))


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def cmd_corpus(args) -> int:
    ranges = CorpusRanges()
    records = make_corpus(args.n, seed=args.seed, ranges=ranges, patch_side=args.size)
    db = bubdb.from_training_records(records, seed=args.seed)
    bubdb.save(db, args.out)
    print(json.dumps({"records": len(records), "side": args.size,
                      "seed": args.seed, "out": str(args.out)}))
    return 0


def cmd_extract(args) -> int:
    paths = sorted(Path(args.images).glob("*.pgm"))
    if not paths:
        raise ValueError(f"no .pgm images under {args.images}")
    images = [netpbm.read_pgm(p) for p in paths]
    records = build_training_set(images, PatchConfig(), side=args.size)
    if not records:
        raise ValueError("no single-bubble patches survived classification")
    db = bubdb.from_training_records(records, seed=args.seed)
    bubdb.save(db, args.out)
    print(json.dumps({"images": len(images), "records": len(records),
                      "out": str(args.out)}))
    return 0


def _gan_config(args) -> GanConfig:
    base = {}
    if args.config:
        base = _load_json(args.config)
    base.setdefault("seed", args.seed)
    if args.epochs is not None:
        base["epochs"] = args.epochs
    if args.size is not None:
        base["side"] = args.size
    return GanConfig.from_dict(base)


def cmd_train(args) -> int:
    db = bubdb.load(args.corpus)
    cfg = _gan_config(args)
    records = db.records
    model = train(records, cfg,
                  callback=lambda s: log.info("epoch %d: D=%.4f G=%.4f",
                                              s.epoch, s.loss_d, s.loss_g))
    save_model(model, args.out)
    print(json.dumps({"records": len(records), "epochs": cfg.epochs,
                      "seed": cfg.seed, "out": str(args.out)}))
    return 0


def cmd_gendb(args) -> int:
    model = load_model(args.model)
    pool_db = bubdb.load(args.pool)
    pool = [r.features for r in pool_db.records]
    db = bubdb.build(model, args.n, pool, seed=args.seed)
    bubdb.save(db, args.out)
    print(json.dumps({"records": len(db), "seed": args.seed, "out": str(args.out)}))
    return 0


def cmd_synth(args) -> int:
    spec = FlowSpec.from_dict(_load_json(args.flow))
    if args.seed is not None:
        spec.seed = args.seed
    db = bubdb.load(args.db)
    seeds = [int(s.generate_state(1)[0] % (2 ** 31))
             for s in np.random.SeedSequence(spec.seed).spawn(args.count)]

    def run_one(i: int):
        one = FlowSpec.from_dict(spec.to_dict())
        one.seed = seeds[i]
        img, labels, dmap = synthesize(one, db)
        return export(img, labels, dmap, Path(args.out) / f"scene_{i:03d}")

    nthreads = _threads(args)
    if nthreads > 1:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            outs = list(pool.map(run_one, range(args.count)))
    else:
        outs = [run_one(i) for i in range(args.count)]
    print(json.dumps({"scenes": args.count, "seed": spec.seed,
                      "outputs": outs}))
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    pool_db = bubdb.load(args.pool)
    pool = [r.features for r in pool_db.records]
    components = ["E", "phi", "psi", "m"] if args.sweep == "all" else [args.sweep]
    report = {}
    for comp in components:
        sweep = default_sweep(pool, comp, args.points)
        rep = evaluate_conditioning(model, comp, sweep, args.samples, pool,
                                    seed=args.seed)
        report[comp] = {
            "rmse_normalized": rep.rmse_normalized,
            "pool_range": rep.pool_range,
            "points": [
                {"target": p.target, "measured_mean": p.measured_mean,
                 "n_ok": p.n_ok, "n_samples": p.n_samples}
                for p in rep.points
            ],
        }
    print(json.dumps({"seed": args.seed, "report": report}, indent=None if args.json else 2))
    return 0


def cmd_features(args) -> int:
    img = netpbm.read_pgm(args.image)
    if args.mask:
        mask = netpbm.read_pbm(args.mask)
    else:
        mask = largest_component(derive_mask(img))
    k = extract_features(img, mask)
    print(json.dumps({"E": k.E, "phi": k.phi, "psi": k.psi, "m": k.m}))
    return 0


def cmd_gradcheck(args) -> int:
    err = grad_check(seed=args.seed)
    ok = err < 1e-4
    print(json.dumps({"max_relative_error": err, "threshold": 1e-4,
                      "pass": ok, "seed": args.seed}))
    return 0 if ok else 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bubforge",
                                 description="labeled synthetic bubbly-flow image generation")
    ap.add_argument("--verbose", "-v", action="store_true")
    ap.add_argument("--threads", type=int, default=None,
                    help="worker threads for scene-level parallelism "
                         "(default: BUBFORGE_THREADS or 1)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("corpus", help="render a synthetic training corpus")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("extract", help="build a training set from PGM images")
    p.add_argument("--images", required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train the conditioned generator")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", help="JSON file with training-config fields")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gendb", help="pre-generate the bubble database")
    p.add_argument("--model", required=True)
    p.add_argument("--pool", required=True,
                   help="corpus .bdb supplying conditioning feature vectors")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gendb)

    p = sub.add_parser("synth", help="assemble labeled flow scenes")
    p.add_argument("--flow", required=True, help="flow spec JSON")
    p.add_argument("--db", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="conditioning fidelity report")
    p.add_argument("--model", required=True)
    p.add_argument("--pool", required=True)
    p.add_argument("--sweep", choices=["E", "phi", "psi", "m", "all"], default="all")
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true", help="single-line JSON output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("features", help="print the feature vector of an image")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", help="PBM mask; derived from the image if omitted")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failures
        print(f"runtime error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
