"""``goat-lab`` command-line entry point.

Subcommands: generate, train, eval, suite, pid, bench, orderings.
Exit codes: 0 success, 2 usage error, 3 validation error, 4 runtime failure.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import layers as L
from . import pid as pid_mod
from .errors import GoatLabError, InputError, SchemaError
from .graph import erdos_renyi, load_dataset, max_degree, save_dataset
from .rng import Rng, derive_seed
from .tasks import generate
from .tensor import save_checkpoint
from .training import (REQUIRED_CONFIG_FIELDS, SuiteSpec, TrainConfig, TrainingDiverged,
                       evaluate, format_table, load_model, run_experiment_suite, save_run,
                       train)

log = logging.getLogger("goat_lab")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3, 4


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def write_manifest(out_dir, argv, config=None, seed=None, artifacts=(), started=None):
    manifest = {
        "schema_version": 1,
        "tool_version": __version__,
        "command": ["goat-lab", *argv],
        "config": config,
        "master_seed": seed,
        "artifacts": sorted(str(a) for a in artifacts),
        "started": started,
        "finished": _now(),
    }
    Path(out_dir, "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")


def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError("<root>", f"{what} is not valid JSON: {exc}") from None


def _seed_override(default):
    env = os.environ.get("GOAT_LAB_SEED")
    if env is None:
        return default
    try:
        return int(env)
    except ValueError:
        raise InputError(f"GOAT_LAB_SEED must be an integer, got {env!r}") from None


def cmd_generate(args, argv):
    started = _now()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = _seed_override(args.seed)
    files = []
    for i in range(args.graphs):
        dataset = generate(args.task, args.n, args.p, Rng(derive_seed(seed, i)))
        path = out / f"{args.task}_{i:03d}.json"
        save_dataset(dataset, path)
        files.append(path.name)
    write_manifest(out, argv, {"task": args.task, "n": args.n, "p": args.p,
                               "graphs": args.graphs}, seed, files, started)
    print(json.dumps({"written": files}))
    return EXIT_OK


def _load_config(path):
    doc = _read_json(path, "config")
    cfg = TrainConfig.from_dict(doc, require=REQUIRED_CONFIG_FIELDS)
    cfg.seed = _seed_override(cfg.seed)
    return cfg


def cmd_train(args, argv):
    started = _now()
    cfg = _load_config(args.config)
    dataset = load_dataset(args.dataset)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fixed = None
    if args.fixed_ordering:
        fixed = L.NeighborhoodOrdering.load(args.fixed_ordering)
        fixed.validate(dataset.graph)
    written = []

    def snapshot(epoch, ordering):
        path = out / f"orderings_epoch{epoch:04d}.json"
        ordering.save(path)
        written.append(path.name)

    try:
        result, model = train(cfg, dataset, fixed_ordering=fixed,
                              snapshot_epochs=args.snapshot_orderings_at, on_snapshot=snapshot)
    except TrainingDiverged as exc:
        if exc.best_params is not None:
            save_checkpoint(exc.best_params, out / "checkpoint_last_good.json",
                            config=cfg.to_dict())
        raise
    save_run(out, cfg, result, model, fixed)
    written += ["run_result.json", "history.csv", "checkpoint.json"]
    write_manifest(out, argv, cfg.to_dict(), cfg.seed, written, started)
    print(json.dumps(result.to_json()))
    return EXIT_OK


def cmd_eval(args, argv):
    dataset = load_dataset(args.dataset)
    model, ordering = load_model(args.checkpoint, dataset)
    value = evaluate(model, dataset, args.mask, ordering=ordering)
    name = "accuracy" if dataset.task_kind == "classification" else "mse"
    print(json.dumps({"mask": args.mask, "metric": name, "value": value}))
    return EXIT_OK


def cmd_suite(args, argv):
    started = _now()
    doc = _read_json(args.config, "suite config")
    suite = SuiteSpec.from_dict(doc)
    suite.seed = _seed_override(suite.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results, timings = run_experiment_suite(suite, out_dir=out, jobs=args.jobs)
    (out / "results.json").write_text(json.dumps(results, indent=1) + "\n")
    table = format_table(results)
    (out / "table.txt").write_text(table)
    (out / "timings.json").write_text(json.dumps(timings, indent=1) + "\n")
    write_manifest(out, argv, doc, suite.seed, ["results.json", "table.txt", "timings.json"],
                   started)
    print(table, end="")
    failed = [name for name, row in results["models"].items() if row["failed"]]
    if failed:
        print(f"failed cells in: {', '.join(failed)}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_pid(args, argv):
    joint = pid_mod.load_joint(args.joint_file)
    print(json.dumps(pid_mod.report(joint), indent=1))
    return EXIT_OK


def cmd_bench(args, argv):
    rows = []
    rng = np.random.default_rng(args.seed)
    for n in args.n:
        p = args.p if args.p is not None else min(1.0, args.avg_degree / max(n - 1, 1))
        g = erdos_renyi(n, p, Rng(derive_seed(args.seed, n)))
        layer = L.GoatLayer(args.dims, args.dims, args.dims, heads=args.heads, rng=rng)
        H = rng.normal(size=(n, args.dims))
        times = []
        L.goat_forward(layer, g, H)  # warm the neighborhood cache
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            L.goat_forward(layer, g, H)
            times.append(time.perf_counter() - t0)
        rows.append({"n": n, "p": p, "edges": g.num_edges, "d_max": max_degree(g),
                     "mean_s": statistics.fmean(times),
                     "std_s": statistics.stdev(times) if len(times) > 1 else 0.0,
                     "repeats": len(times)})
    print(json.dumps({"schema_version": 1, "heads": args.heads, "dims": args.dims,
                      "rows": rows}, indent=1))
    return EXIT_OK


def cmd_orderings(args, argv):
    dataset = load_dataset(args.dataset)
    model, _ = load_model(args.checkpoint, dataset)
    if args.action == "extract":
        ordering = model.extract_orderings(dataset.graph, dataset.features)
        ordering.save(args.ordering_file)
        print(json.dumps({"written": str(args.ordering_file), "heads": ordering.heads}))
        return EXIT_OK
    ordering = L.NeighborhoodOrdering.load(args.ordering_file)
    ordering.validate(dataset.graph)
    out = model.forward(dataset.graph, dataset.features, ordering=ordering)
    doc = {"schema_version": 1, "outputs": out.data.tolist()}
    if args.out:
        Path(args.out).write_text(json.dumps(doc) + "\n")
        print(json.dumps({"written": str(args.out)}))
    else:
        print(json.dumps(doc))
    return EXIT_OK


def _probability(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"probability must lie in [0, 1], got {text}")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _epochs(text):
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated epochs, got {text}") from None


def build_parser():
    parser = argparse.ArgumentParser(prog="goat-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic datasets")
    p.add_argument("task", choices=["top2", "betweenness", "effective-size"])
    p.add_argument("--n", type=_positive, required=True)
    p.add_argument("--p", type=_probability, required=True)
    p.add_argument("--graphs", type=_positive, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train one model on one dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--fixed-ordering")
    p.add_argument("--snapshot-orderings-at", type=_epochs, default=[])
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--mask", choices=["train", "val", "test"], default="test")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("suite", help="train several models over several generated graphs")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=_positive, default=1)
    p.set_defaults(fn=cmd_suite)

    p = sub.add_parser("pid", help="partial information decomposition of a joint table")
    p.add_argument("joint_file")
    p.set_defaults(fn=cmd_pid)

    p = sub.add_parser("bench", help="time GOAT forward passes")
    p.add_argument("--n", type=_positive, nargs="+", default=[100, 200, 400])
    p.add_argument("--p", type=_probability)
    p.add_argument("--avg-degree", type=float, default=8.0)
    p.add_argument("--heads", type=_positive, default=1)
    p.add_argument("--dims", type=_positive, default=16)
    p.add_argument("--repeats", type=_positive, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("orderings", help="extract or apply GOAT neighborhood orderings")
    p.add_argument("action", choices=["extract", "apply"])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--ordering-file", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_orderings)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args, argv)
    except GoatLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
