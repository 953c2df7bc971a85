"""Command line entry point: ``fogids <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields

from .. import dataset as ds
from ..errors import FogIDSError, ParseError, ProtocolError, SchemaError, TrainingError

EXIT_OK, EXIT_OTHER, EXIT_PARSE, EXIT_SCHEMA, EXIT_PROTOCOL, EXIT_TRAINING = 0, 1, 3, 4, 5, 6

DEFAULT_DATA_DIR = os.environ.get("FOGIDS_DATA_DIR", "data/nslkdd")


def data_file(data_dir, name_or_path):
    """A dataset name (KDDTest+) resolves inside the data dir; anything else is a path."""
    if name_or_path in ds.FILE_NAMES:
        return os.path.join(data_dir, ds.FILE_NAMES[name_or_path])
    return name_or_path


def _load_model_desc(text):
    from .. import models as M
    named = {"tree": M.TREE, "knn": M.KNN, "mlp": M.MLP, "mlp_raw": M.MLP_RAW, "rf": M.RF,
             "bagging": M.BAGGING, "adaboost": M.ADABOOST, "stage1": M.STAGE1_DEFAULT,
             "stage2": M.STAGE2_DEFAULT}
    if text in named:
        return named[text]
    if os.path.exists(text):
        with open(text) as fh:
            return json.load(fh)
    return json.loads(text)


def _dump(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_ingest(args):
    names = args.files or list(ds.FILE_NAMES)
    out = {}
    for name in names:
        path = data_file(args.data_dir, name)
        recs = ds.parse_records(path)
        counts = ds.class_counts(recs)
        entry = {"path": path, "counts": counts}
        if name in ds.REFERENCE_COUNTS:
            entry["mismatches"] = ds.reconcile_counts(name, counts)
        out[name] = entry
    _dump(out)
    return EXIT_OK


def cmd_train(args):
    from ..pipeline import StageConfig, train_stage
    kw = {}
    if args.model:
        kw["model"] = _load_model_desc(args.model)
    if args.normalize is not None:
        kw["normalize"] = args.normalize
    if args.threshold is not None:
        kw["threshold"] = args.threshold
    cfg = StageConfig.stage1(**kw) if args.stage == 1 else StageConfig.stage2(**kw)
    recs = ds.parse_records(data_file(args.data_dir, args.train))
    stage = train_stage(recs, cfg, seed=args.seed)
    stage.save(args.out)
    _dump({"out": args.out, "model_id": stage.model_id, "schema_hash": stage.model.schema_hash})
    return EXIT_OK


def cmd_evaluate(args):
    from ..pipeline import Stage
    from .metrics import evaluate
    stage = Stage.load(args.model)
    task = stage.config.label_task()
    out = {}
    for name in args.test:
        m = stage.preprocessor.matrix(ds.parse_records(data_file(args.data_dir, name)), task)
        thr = stage.config.threshold if stage.config.task == "binary" else None
        out[name] = evaluate(stage.model, m, thr).as_dict()
    _dump(out)
    return EXIT_OK


def cmd_sweep(args):
    from .experiment import binary_sweep, category_sweep, run_all
    from .report import report
    train = data_file(args.data_dir, args.train)
    tests = {t: data_file(args.data_dir, t) for t in args.test}
    seeds = args.seeds if args.seeds else [args.seed]
    specs = []
    for s in seeds:
        if args.task in ("binary", "both"):
            specs += binary_sweep(train, tests, s, not args.no_voting)
        if args.task in ("category", "both"):
            specs += category_sweep(train, tests, s, not args.no_voting)
    if args.only:
        specs = [sp for sp in specs if sp.name in set(args.only)]

    def progress(spec, rows):
        for r in rows:
            acc = "failed: " + r["error"] if r["status"] != "ok" else f"{100 * r['accuracy']:.2f}%"
            print(f"{r['task']:8s} seed={r['seed']} {r['name']:32s} {r['rule'] or '-':12s} "
                  f"{r['dataset']:11s} {acc}", flush=True)

    rows = run_all(specs, progress=progress)
    for path in report(rows, args.out):
        print("wrote", path)
    return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_TRAINING


def _service_config(args, config):
    from ..netsvc.server import ServiceConfig
    known = {f.name for f in fields(ServiceConfig)}
    data = {k: v for k, v in config.items() if k in known}
    over = {"listen_host": args.host, "listen_port": args.port, "model_path": args.model,
            "alert_sink": args.alerts}
    if getattr(args, "cloud", None):
        host, _, port = args.cloud.rpartition(":")
        over.update(peer_host=host or "127.0.0.1", peer_port=int(port))
    data.update({k: v for k, v in over.items() if v is not None})
    return ServiceConfig(**data)


def cmd_serve_fog(args, config):
    from ..netsvc.fog import run_fog
    run_fog(_service_config(args, config))
    return EXIT_OK


def cmd_serve_cloud(args, config):
    from ..netsvc.cloud import run_cloud
    run_cloud(_service_config(args, config))
    return EXIT_OK


def cmd_replay(args):
    from ..netsvc.replay import replay
    host, _, port = args.target.rpartition(":")
    s = replay(data_file(args.data_dir, args.file), host or "127.0.0.1", int(port), rate=args.rate)
    _dump(s.to_dict())
    return EXIT_PROTOCOL if s.partial else EXIT_OK


def cmd_report(args):
    from .report import read_csv, report
    for path in report(read_csv(args.rows), args.out, args.stem):
        print("wrote", path)
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="fogids", description="Two-level fog/cloud intrusion detection")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON file of defaults (global flags and service settings)")
    p.add_argument("--data-dir", default=DEFAULT_DATA_DIR, help="directory holding the NSL-KDD files")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="parse datasets and print class counts")
    s.add_argument("files", nargs="*", help="dataset names or paths (default: all three)")

    s = sub.add_parser("train", help="train a stage bundle")
    s.add_argument("--stage", type=int, choices=(1, 2), required=True)
    s.add_argument("--train", default="KDDTrain+")
    s.add_argument("--model", help="named model, JSON descriptor or descriptor file")
    s.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=None)
    s.add_argument("--threshold", type=float)
    s.add_argument("--out", required=True)

    s = sub.add_parser("evaluate", help="score a bundle on test files")
    s.add_argument("--model", required=True)
    s.add_argument("--test", nargs="+", default=["KDDTest+", "KDDTest-21"])

    s = sub.add_parser("sweep", help="run the model sweeps and write a report")
    s.add_argument("--task", choices=("binary", "category", "both"), default="both")
    s.add_argument("--train", default="KDDTrain+")
    s.add_argument("--test", nargs="+", default=["KDDTest+", "KDDTest-21"])
    s.add_argument("--seeds", type=int, nargs="+")
    s.add_argument("--only", nargs="+", help="restrict to these model names")
    s.add_argument("--no-voting", action="store_true")
    s.add_argument("--out", default="results")

    for name in ("serve-fog", "serve-cloud"):
        s = sub.add_parser(name, help=f"run the {name[6:]} daemon")
        s.add_argument("--host")
        s.add_argument("--port", type=int)
        s.add_argument("--model")
        s.add_argument("--alerts", help="alert sink path")
        if name == "serve-fog":
            s.add_argument("--cloud", help="cloud address host:port")

    s = sub.add_parser("replay", help="stream a dataset file to a fog daemon")
    s.add_argument("--file", default="KDDTest+")
    s.add_argument("--target", required=True, help="fog address host:port")
    s.add_argument("--rate", type=float, help="records per second (default: unthrottled)")

    s = sub.add_parser("report", help="rebuild summary and figure files from a results CSV")
    s.add_argument("rows")
    s.add_argument("--out", default="results")
    s.add_argument("--stem", default="results")
    return p


def main(argv=None):
    parser = build_parser()
    pre, _ = parser.parse_known_args(argv)
    config = {}
    if pre.config:
        with open(pre.config) as fh:
            config = json.load(fh)
        dests = {a.dest for a in parser._actions}
        parser.set_defaults(**{k.replace("-", "_"): v for k, v in config.items()
                               if k.replace("-", "_") in dests})
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"ingest": cmd_ingest, "train": cmd_train, "evaluate": cmd_evaluate,
                "sweep": cmd_sweep, "replay": cmd_replay, "report": cmd_report}
    try:
        if args.command == "serve-fog":
            return cmd_serve_fog(args, config)
        if args.command == "serve-cloud":
            return cmd_serve_cloud(args, config)
        return handlers[args.command](args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (FogIDSError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER
    except KeyboardInterrupt:
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
