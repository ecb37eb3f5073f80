"""Command-line entry point: ``ccnf <command> ...``.

Exit codes: 0 success, 1 usage error, 2 numeric failure, 3 I/O failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import inference, metrics
from .datasets import get_dataset
from .errors import (
    CcnfError,
    DegenerateVariance,
    EmptyRunDir,
    EmptySample,
    InvalidConfig,
    IoFailure,
    NonBinaryOutput,
    NonFiniteLoss,
    NonFiniteValue,
    OutOfSupport,
    VersionMismatch,
)
from .files import read_csv, read_json, write_csv, write_json
from .flow import CcnfModel, build_model
from .graph import load_graph, parse_graph_document
from .scm import scm_sample
from .training import TrainConfig, config_from_document, train

log = logging.getLogger("ccnf")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
NUMERIC_ERRORS = (NonFiniteValue, NonFiniteLoss, DegenerateVariance, OutOfSupport, EmptySample,
                  NonBinaryOutput, FloatingPointError)
IO_ERRORS = (IoFailure, VersionMismatch, OSError)

METRICS = ("kl_latent", "kl_data", "consistency_loss", "max_mmd", "cf_rmsd", "fairness", "ate")
ALIASES = {"consistency": "consistency_loss", "mmd": "max_mmd", "rmsd": "cf_rmsd", "kl": "kl_latent"}
SCM_METRICS = {"kl_data", "max_mmd", "cf_rmsd"}


class UsageError(CcnfError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def threads() -> int:
    raw = os.environ.get("CCNF_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"CCNF_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"CCNF_THREADS must be a positive integer, got {raw!r}")
    return n


def _seed_list(text):
    seeds = [int(s) for s in text.split(",") if s.strip()]
    if not seeds or len(set(seeds)) != len(seeds):
        raise UsageError("seeds must be a non-empty list of distinct integers")
    return seeds


def _load_config(path):
    return read_json(path) if path else {}


def _columns(text, names):
    if not text:
        return []
    out = []
    for c in text.split(","):
        c = c.strip()
        if c in names:
            out.append(names.index(c))
        elif c.isdigit() and int(c) < len(names):
            out.append(int(c))
        else:
            raise UsageError(f"unknown column {c!r}")
    return out


# gen ------------------------------------------------------------------------------

def cmd_gen(args):
    spec = get_dataset(args.dataset)
    if args.n < 0:
        raise UsageError("n must be non-negative")
    data = scm_sample(spec, args.n, args.seed)
    out = args.out or f"{args.dataset}.csv"
    write_csv(out, spec.graph.names, data)
    info = sys.stderr if out == "-" else sys.stdout
    if args.n:
        print(f"{'column':<10} {'mean':>10} {'std':>10} {'min':>10} {'max':>10}", file=info)
        for name, col in zip(spec.graph.names, data.T):
            print(f"{name:<10} {col.mean():>10.4f} {col.std():>10.4f} {col.min():>10.4f} {col.max():>10.4f}",
                  file=info)
    print(f"wrote {args.n} rows to {out}", file=info)
    return EXIT_OK


# train ------------------------------------------------------------------------------

def _input_data(args, n_default):
    """Return ``(dataset_name, graph, data)`` from ``--dataset`` or ``--data/--graph``."""
    if args.data:
        if not args.graph:
            raise UsageError("--data needs --graph")
        graph = load_graph(args.graph)
        names, data = read_csv(args.data)
        if tuple(names) != tuple(graph.names):
            raise UsageError(f"CSV header {list(names)} does not match graph names {list(graph.names)}")
        return Path(args.data).stem, graph, data
    if not args.dataset:
        raise UsageError("give --dataset NAME or --data FILE --graph FILE")
    spec = get_dataset(args.dataset)
    n = args.n if args.n is not None else n_default
    return args.dataset, spec.graph, scm_sample(spec, n, args.seed)


def _train_one(job):
    graph_doc, data, arch, cfg, run_dir = job
    graph = parse_graph_document(graph_doc)
    model = build_model(graph, seed=cfg.seed, **arch)
    model, report = train(model, data, cfg)
    run_dir = Path(run_dir)
    model.save(run_dir / "best.model")
    write_json(run_dir / "report.json", report.to_dict(timing=False))
    return cfg.seed, report.best_epoch, report.test_nll, report.wall_time


def cmd_train(args):
    doc = _load_config(args.config)
    name, graph, data = _input_data(args, 10_000)
    arch, base = config_from_document(doc, graph.names)
    arch.setdefault("hidden", (32, 32))
    arch.setdefault("layers_per_batch", 2)
    deq = tuple(sorted(set(base.dequantize) | set(_columns(args.dequantize, list(graph.names)))))
    seeds = _seed_list(args.seeds) if args.seeds else [args.seed + k for k in range(5)]
    if args.max_epochs is not None:
        base = TrainConfig(**{**base.__dict__, "max_epochs": args.max_epochs,
                              "patience": min(base.patience, args.max_epochs - 1) or 1})
    configs = [TrainConfig(**{**base.__dict__, "seed": s, "dequantize": deq}) for s in seeds]
    build_model(graph, **arch)  # validate the architecture before writing anything

    out = Path(args.out or "run")
    manifest = {
        "dataset": name,
        "graph": graph.to_document(),
        "arch": {k: list(v) if isinstance(v, tuple) else v for k, v in arch.items()},
        "train": {k: list(v) if isinstance(v, tuple) else v for k, v in base.__dict__.items() if k != "seed"},
        "dequantize": list(deq),
        "seeds": seeds,
        "data_seed": args.seed if not args.data else None,
        "rows": int(data.shape[0]),
    }
    write_json(out / "manifest.json", manifest)
    jobs = [(graph.to_document(), data, arch, c, str(out / f"seed_{c.seed}")) for c in configs]
    workers = min(threads(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_train_one, jobs))
    else:
        results = [_train_one(j) for j in jobs]
    for seed, best, test_nll, wall in results:
        print(f"seed {seed}: best epoch {best}, test NLL {test_nll:.4f}")
        log.info("seed %d trained in %.1fs", seed, wall)
    return EXIT_OK


# eval -----------------------------------------------------------------------------

def _model_paths(items):
    paths = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            found = sorted(p.glob("**/best.model"))
            if not found:
                raise EmptyRunDir(f"no best.model under {p}")
            paths.extend(found)
        elif p.exists():
            paths.append(p)
        else:
            raise IoFailure(f"model {p} does not exist")
    return paths


def _manifest_for(model_path):
    for parent in Path(model_path).parents:
        if (parent / "manifest.json").exists():
            return read_json(parent / "manifest.json")
    return {}


def _metric_list(text):
    if not text:
        raise UsageError("metric list is empty")
    out = []
    for m in text.split(","):
        m = ALIASES.get(m.strip(), m.strip())
        if m not in METRICS:
            raise UsageError(f"unknown metric {m!r}; choose from {', '.join(METRICS)}")
        if m not in out:
            out.append(m)
    return out


def evaluate_model(model, spec, data, wanted, args, dataset, seed):
    grid = None
    if wanted & {"max_mmd", "cf_rmsd"}:
        grid = (metrics.quantile_grid(model.graph, data) if args.grid == "quantile"
                else metrics.default_grid(model.graph))
    rep = metrics.MetricsReport(dataset=dataset, model="ccnf", seed=seed, grid=[list(c) for c in grid or []])
    if "kl_latent" in wanted:
        rep.kl_latent = metrics.kl_latent(model, data)
    if "kl_data" in wanted:
        rep.kl_data = metrics.kl_data(model, spec, args.n, [args.seed, 1])
    if "consistency_loss" in wanted:
        rep.consistency_loss = metrics.consistency_loss(model, data, model.graph)
    if "max_mmd" in wanted:
        rep.max_mmd, rep.tables["mmd"] = metrics.max_intervention_mmd(model, spec, grid, args.n, [args.seed, 2])
    if "cf_rmsd" in wanted:
        rep.cf_rmsd, rep.tables["rmsd"] = metrics.rmsd_counterfactual(model, spec, args.n, grid, [args.seed, 3])
    if "fairness" in wanted:
        if args.sensitive is None or args.target is None:
            raise UsageError("fairness needs --sensitive and --target")
        s = inference.resolve_node(model, args.sensitive)
        t = inference.resolve_node(model, args.target)
        threshold = float(np.median(data[:, t]))
        predict = metrics.mean_latent_classifier(model, t, threshold)
        rep.fairness = metrics.individual_fairness(predict, data, s, model=model)
    if "ate" in wanted:
        if args.treatment is None or args.outcome is None:
            raise UsageError("ate needs --treatment and --outcome")
        value, _ = metrics.ate(model, inference.resolve_node(model, args.treatment),
                               inference.resolve_node(model, args.outcome), args.n, [args.seed, 4])
        rep.ate = {"ate": value}
    return rep


def cmd_eval(args):
    wanted = set(_metric_list(args.metrics))
    paths = _model_paths(args.models)
    reports = []
    for path in paths:
        model = CcnfModel.load(path)
        manifest = _manifest_for(path)
        dataset = args.dataset or manifest.get("dataset")
        spec = None
        if args.data:
            names, data = read_csv(args.data)
            if tuple(names) != tuple(model.names):
                raise UsageError("CSV header does not match the model's graph")
        else:
            if not dataset:
                raise UsageError("give --dataset or --data")
            spec = get_dataset(dataset)
            data = scm_sample(spec, args.n, [args.seed, 0])
        if wanted & SCM_METRICS and spec is None:
            if dataset is None:
                raise UsageError(f"{sorted(wanted & SCM_METRICS)} need a registered --dataset")
            spec = get_dataset(dataset)
        rep = evaluate_model(model, spec, data, wanted, args, dataset or Path(args.data).stem, model.seed)
        write_json(path.parent / "metrics.json", rep.to_dict())
        row = rep.flat_row()
        write_csv_row(path.parent / "metrics.csv", row)
        reports.append(rep)
    rows = [r.flat_row() for r in reports]
    summary = summarize(rows)
    print(markdown_table(summary))
    if args.out:
        write_json(args.out, {"reports": [r.to_dict() for r in reports], "summary": summary})
    return EXIT_OK


def write_csv_row(path, row):
    from .files import _atomic_write, format_float

    keys = list(row)
    vals = [format_float(v) if isinstance(v, float) else str(v) for v in row.values()]
    _atomic_write(path, ",".join(keys) + "\n" + ",".join(vals) + "\n")


# summaries --------------------------------------------------------------------

def summarize(rows):
    """Group flat metric rows by (dataset, model); mean and max deviation per metric."""
    groups = {}
    for row in rows:
        groups.setdefault((row["dataset"], row["model"]), []).append(row)
    out = []
    for (dataset, model), members in sorted(groups.items()):
        keys = [k for k in members[0] if k not in ("dataset", "model", "seed")]
        for m in members[1:]:
            keys += [k for k in m if k not in keys and k not in ("dataset", "model", "seed")]
        entry = {"dataset": dataset, "model": model, "seeds": sorted(m["seed"] for m in members), "metrics": {}}
        for k in keys:
            vals = [m[k] for m in members if k in m]
            mean, dev = metrics.aggregate(vals)
            entry["metrics"][k] = {"mean": mean, "max_dev": dev, "n": len(vals)}
        out.append(entry)
    return out


def markdown_table(summary) -> str:
    cols = []
    for e in summary:
        cols += [k for k in e["metrics"] if k not in cols]
    lines = ["| dataset | model | seeds | " + " | ".join(cols) + " |",
             "|" + "---|" * (3 + len(cols))]
    for e in summary:
        cells = []
        for k in cols:
            m = e["metrics"].get(k)
            cells.append(f"{m['mean']:.4f} ± {m['max_dev']:.4f}" if m else "")
        lines.append(f"| {e['dataset']} | {e['model']} | {len(e['seeds'])} | " + " | ".join(cells) + " |")
    return "\n".join(lines)


def cmd_report(args):
    rows = []
    for d in args.runs:
        d = Path(d)
        if not d.is_dir():
            raise IoFailure(f"run directory {d} does not exist")
        found = sorted(d.glob("**/metrics.json"))
        for f in found:
            rows.append(metrics.MetricsReport(**read_json(f)).flat_row())
    if not rows:
        raise EmptyRunDir("no metrics.json found; run `ccnf eval` first")
    summary = summarize(rows)
    table = markdown_table(summary)
    print(table)
    out = Path(args.out) if args.out else Path(args.runs[0])
    from .files import _atomic_write, format_float

    lines = ["dataset,model,metric,n_seeds,mean,max_dev"]
    for e in summary:
        for k, m in e["metrics"].items():
            lines.append(f"{e['dataset']},{e['model']},{k},{m['n']},{format_float(m['mean'])},{format_float(m['max_dev'])}")
    _atomic_write(out / "summary.csv", "\n".join(lines) + "\n")
    _atomic_write(out / "summary.md", table + "\n")
    return EXIT_OK


# queries ----------------------------------------------------------------------------

def cmd_intervene(args):
    model = CcnfModel.load(args.model)
    node = inference.resolve_node(model, args.node)
    x = inference.interventions_sample(model, inference.Intervention(node, args.value), args.n, args.seed)
    write_csv(args.out or "-", model.names, x)
    return EXIT_OK


def cmd_counterfactual(args):
    model = CcnfModel.load(args.model)
    node = inference.resolve_node(model, args.node)
    names, x = read_csv(args.input)
    if tuple(names) != tuple(model.names):
        raise UsageError("input header does not match the model's graph")
    out = inference.counterfactual(model, x, inference.Intervention(node, args.value)) if len(x) else x
    write_csv(args.out or "-", model.names, out)
    return EXIT_OK


def cmd_consistency(args):
    model = CcnfModel.load(args.model)
    if args.data:
        _, data = read_csv(args.data)
    else:
        if not args.dataset:
            raise UsageError("give --dataset or --data")
        data = scm_sample(get_dataset(args.dataset), args.n, args.seed)
    value = metrics.consistency_loss(model, data, model.graph)
    print(f"consistency_loss {value:.6e}")
    if args.out:
        write_json(args.out, {"consistency_loss": value, "rows": int(data.shape[0])})
    return EXIT_OK


# parser -----------------------------------------------------------------------------

def _global_flags(p, suppress=False):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=default(0), help="random seed (default 0)")
    p.add_argument("--out", default=default(None), help="output file or directory")
    p.add_argument("--config", default=default(None), help="JSON config document")
    p.add_argument("-v", "--verbose", action="store_true", default=default(False))


def build_parser():
    parser = _Parser(prog="ccnf", description="Causally consistent normalizing flows.")
    _global_flags(parser)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="sample a registered SCM to CSV")
    _global_flags(p, True)
    p.add_argument("dataset")
    p.add_argument("n", type=int)
    p.set_defaults(func=cmd_gen)

    def data_flags(p, with_n=True):
        p.add_argument("--dataset", help="registered dataset name")
        p.add_argument("--data", help="CSV file with a header")
        p.add_argument("--graph", help="graph JSON (with --data)")
        if with_n:
            p.add_argument("--n", type=int, default=None, help="rows to sample")

    p = sub.add_parser("train", help="train one model per seed")
    _global_flags(p, True)
    data_flags(p)
    p.add_argument("--seeds", help="comma-separated training seeds (default: 5 seeds from --seed)")
    p.add_argument("--dequantize", help="comma-separated columns to dequantize")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compute metrics for trained models")
    _global_flags(p, True)
    p.add_argument("models", nargs="+", help="model files or run directories")
    data_flags(p, with_n=False)
    p.add_argument("--n", type=int, default=2500)
    p.add_argument("--metrics", default="kl_latent,consistency_loss")
    p.add_argument("--grid", choices=("default", "quantile"), default="default")
    p.add_argument("--sensitive")
    p.add_argument("--target")
    p.add_argument("--treatment")
    p.add_argument("--outcome")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("intervene", help="sample under Do(node = value)")
    _global_flags(p, True)
    p.add_argument("--model", required=True)
    p.add_argument("--node", required=True)
    p.add_argument("--value", type=float, required=True)
    p.add_argument("--n", type=int, default=2500)
    p.set_defaults(func=cmd_intervene)

    p = sub.add_parser("counterfactual", help="counterfactuals of the rows in a CSV")
    _global_flags(p, True)
    p.add_argument("--model", required=True)
    p.add_argument("--node", required=True)
    p.add_argument("--value", type=float, required=True)
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_counterfactual)

    p = sub.add_parser("consistency", help="causal consistency loss of a model")
    _global_flags(p, True)
    p.add_argument("--model", required=True)
    data_flags(p)
    p.set_defaults(func=cmd_consistency, n=None)

    p = sub.add_parser("report", help="aggregate metrics across seeds")
    _global_flags(p, True)
    p.add_argument("runs", nargs="+")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help exits 0, parse errors exit 1
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "n", 0) is None and args.command == "consistency":
        args.n = 2500
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except NUMERIC_ERRORS as exc:
        print(f"ccnf: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except IO_ERRORS as exc:
        print(f"ccnf: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except (CcnfError, InvalidConfig, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"ccnf: error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    log.info("%s finished in %.1fs", args.command, time.perf_counter() - t0)
    return code
