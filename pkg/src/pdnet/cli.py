"""Command line front end: ``pdnet <command> [flags]``.

Commands: ``generate``, ``scenario``, ``xor-demo``, ``runtime``, ``attention``
and ``train``. Every command accepts ``--seed``, ``--out`` and
``--config FILE``.

A config file holds one ``flag = value`` pair per line, named like the long
flag without its leading dashes (``sigma_F`` and ``sigma-F`` both work).
Blank lines and lines starting with ``#`` or ``;`` are ignored. List flags
take comma separated values in both places::

    # scenario.cfg
    param = Q
    values = 0.001, 0.01
    repetitions = 3
    seed = 7

Flags given on the command line override the file. Errors are reported as
one JSON object on stderr, ``{"error": kind, "message": text}``, with exit
status 2 for usage errors and 1 for everything else.

CSV outputs (header row first, floats in shortest round-trip form):

``scenario``
    row, scenario, param, value, model, seed, test_acc, epoch_time, mean,
    std, count. ``row`` is ``run`` for one training run (mean/std/count
    empty) or ``summary`` for the per (value, model) aggregate (seed,
    test_acc and epoch_time empty). Runs are flushed as they finish.
``runtime``
    nodes, edges, edge_features, model, epoch_time, relative
``attention``
    epoch followed by one column per weight (``P1``... or metric names),
    averaged over repetitions.
``xor-demo``
    seed, pdn_acc, gcn_acc
``train``
    ``history.csv`` (epoch, loss, train_acc, test_acc, then ``att_*``
    columns) and ``checkpoint.json`` inside the ``--out`` directory.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .dataset import GraphDataset
from .experiments import (
    RUNTIME_MODELS,
    SCENARIO_MODELS,
    SWEEPABLE,
    ScenarioSpec,
    linear_attention,
    model_for,
    multiscale_attention,
    run_scenario,
    runtime_benchmark,
    summarize,
    xor_demo,
)
from .features import METRICS, feature_matrix
from .models import ModelInputs, save_checkpoint
from .synth import SyntheticConfig, generate
from .training import SplitSpec, TrainConfig, TrainingDiverged, split, train

CSV_SCHEMA_VERSION = 1
SCENARIO_COLUMNS = ("row", "scenario", "param", "value", "model", "seed", "test_acc",
                    "epoch_time", "mean", "std", "count")
RUNTIME_COLUMNS = ("nodes", "edges", "edge_features", "model", "epoch_time", "relative")
XOR_COLUMNS = ("seed", "pdn_acc", "gcn_acc")
TRAIN_MODELS = ("gcn", "pdn", "pdn_linear", "pdn_attention", "pdn_edgeconv", "pdn_multiscale")


class CliError(Exception):
    def __init__(self, kind, message, status=1):
        super().__init__(message)
        self.kind = kind
        self.status = status


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        raise CliError("usage", message, status=2)


# value types ----------------------------------------------------------------

def _list_of(cast):
    def parse(text):
        items = [t.strip() for t in str(text).split(",")]
        try:
            return tuple(cast(t) for t in items if t)
        except ValueError:
            raise argparse.ArgumentTypeError(
                f"expected a comma separated list, got {text!r}"
            ) from None
    parse.__name__ = f"list of {cast.__name__}"
    return parse


def _probability(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not a probability")
    return value


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


class CsvSink:
    """CSV writer that checks every row against a fixed column schema."""

    def __init__(self, fh, columns):
        self.fh = fh
        self.columns = tuple(columns)
        self.writer = csv.writer(fh, lineterminator="\n")
        self.writer.writerow(self.columns)

    def write(self, row):
        unknown = set(row) - set(self.columns)
        if unknown:
            raise ValueError(f"row has columns outside the schema: {sorted(unknown)}")
        values = [_fmt(row.get(c)) for c in self.columns]
        if len(values) != len(self.columns):
            raise ValueError("row does not match the CSV schema")
        self.writer.writerow(values)
        self.fh.flush()


class _Output:
    """``-`` or None means stdout; anything else is a file opened for writing."""

    def __init__(self, path):
        self.path = None if path in (None, "-") else Path(path)

    def __enter__(self):
        if self.path is None:
            return sys.stdout
        self.fh = self.path.open("w", encoding="utf-8", newline="")
        return self.fh

    def __exit__(self, *exc):
        if self.path is not None:
            self.fh.close()


# shared flag groups -------------------------------------------------------------

def _global_flags():
    p = _Parser(add_help=False)
    g = p.add_argument_group("global")
    g.add_argument("--seed", type=int, default=0, help="master random seed")
    g.add_argument("--out", default=None, help="output path (see command help)")
    g.add_argument("--config", default=None, help="key = value file of flag defaults")
    return p


def _generator_flags(parser):
    d = SyntheticConfig()
    g = parser.add_argument_group("synthetic graph")
    g.add_argument("--C", type=_positive_int, default=d.C, help="number of classes")
    g.add_argument("--n", type=_positive_int, default=d.n, help="nodes per class")
    g.add_argument("--P", type=_probability, default=d.P, help="intra-class edge probability")
    g.add_argument("--Q", type=_probability, default=d.Q, help="inter-class edge probability")
    g.add_argument("--F", type=_positive_int, default=d.F, help="node feature dimension")
    g.add_argument("--D", type=_positive_int, default=d.D, help="edge feature dimension")
    g.add_argument("--sigma-F", dest="sigma_F", type=float, default=d.sigma_F,
                   help="label noise standard deviation")
    g.add_argument("--sigma-D", dest="sigma_D", type=float, default=d.sigma_D,
                   help="edge feature standard deviation")


def _training_flags(parser, epochs=200):
    d = TrainConfig()
    g = parser.add_argument_group("training")
    g.add_argument("--epochs", type=_positive_int, default=epochs)
    g.add_argument("--lr", type=float, default=d.lr)
    g.add_argument("--dropout", type=float, default=d.dropout)
    g.add_argument("--l2", type=float, default=d.l2)


def _split_flags(parser):
    g = parser.add_argument_group("split")
    g.add_argument("--split", choices=("fraction", "per_class"), default="fraction")
    g.add_argument("--train-frac", type=float, default=0.8)
    g.add_argument("--k", type=_positive_int, default=100, help="labels per class for per_class")


def _synthetic_config(args, seed=None):
    return SyntheticConfig(C=args.C, n=args.n, P=args.P, Q=args.Q, F=args.F, D=args.D,
                           sigma_F=args.sigma_F, sigma_D=args.sigma_D,
                           seed=args.seed if seed is None else seed)


def _train_config(args, seed=None):
    return TrainConfig(lr=args.lr, epochs=args.epochs, dropout=args.dropout, l2=args.l2,
                       seed=args.seed if seed is None else seed)


def _split_spec(args, seed=None):
    return SplitSpec(args.split, args.train_frac, args.k, args.seed if seed is None else seed)


def _dataset(args):
    if args.dataset:
        return GraphDataset.load(args.dataset)
    return generate(_synthetic_config(args))


# commands -------------------------------------------------------------------

def cmd_generate(args):
    ds = generate(_synthetic_config(args))
    out = args.out or "dataset.json"
    ds.save(out)
    print(json.dumps({**ds.summary(), "path": str(out)}))


def default_sweep(param):
    text = resources.files("pdnet").joinpath("sweeps.cfg").read_text(encoding="utf-8")
    return _list_of(float)(_read_config_text(text)[param])


def cmd_scenario(args):
    values = args.values if args.values else default_sweep(args.param)
    spec = ScenarioSpec(args.param, values, args.repetitions, args.models,
                        _synthetic_config(args), args.name)
    with _Output(args.out) as fh:
        sink = CsvSink(fh, SCENARIO_COLUMNS)
        records = run_scenario(spec, _train_config(args), seed=args.seed, jobs=args.jobs,
                               on_record=lambda r: sink.write({"row": "run", **r}))
        for s in summarize(records):
            sink.write({"row": "summary", "scenario": spec.name, "param": spec.param, **s})


def cmd_xor_demo(args):
    seeds = range(args.seed, args.seed + args.seeds)
    table, results = xor_demo(seeds, n_nodes=args.nodes, epochs=args.epochs, jobs=args.jobs)
    print("a b h1 h2 weight")
    for a, b, h1, h2, w in table:
        print(f"{a} {b} {h1:g} {h2:g} {w:g}")
    wins = sum(r.pdn_accuracy > r.gcn_accuracy for r in results)
    gap = float(np.mean([r.pdn_accuracy - r.gcn_accuracy for r in results]))
    print(f"pdn_wins={wins}/{len(results)} mean_gap={gap:.4f}")
    if args.out not in (None, "-"):
        with _Output(args.out) as fh:
            sink = CsvSink(fh, XOR_COLUMNS)
            for r in results:
                sink.write({"seed": r.seed, "pdn_acc": r.pdn_accuracy, "gcn_acc": r.gcn_accuracy})


def cmd_runtime(args):
    unknown = set(args.models) - set(RUNTIME_MODELS)
    if unknown:
        raise CliError("usage", f"unknown runtime models {sorted(unknown)}", status=2)
    with _Output(args.out) as fh:
        sink = CsvSink(fh, RUNTIME_COLUMNS)
        for d in args.edge_features:
            try:
                records = runtime_benchmark(
                    args.nodes, k=args.k, p_rewire=args.p_rewire, n_features=args.features,
                    n_edge_features=d, n_classes=args.classes, epochs=args.epochs,
                    warmup=args.warmup, seed=args.seed, models=args.models,
                )
            except MemoryError:
                raise CliError(
                    "memory",
                    f"allocation failed for nodes={list(args.nodes)} edge_features={d}; "
                    "try fewer --nodes or --edge-features",
                ) from None
            for rec in records:
                sink.write(rec)


def cmd_attention(args):
    ds = _dataset(args)
    spec = _split_spec(args)
    config = _train_config(args)
    if args.mode == "multiscale":
        traces = multiscale_attention(ds, args.hops, args.repetitions, spec, config, args.seed)
        names = [f"P{i + 1}" for i in range(args.hops)]
    else:
        traces = linear_attention(ds, args.repetitions, spec, config, args.seed)
        names = list(METRICS)
    mean = traces.mean(axis=0)
    with _Output(args.out) as fh:
        sink = CsvSink(fh, ("epoch", *names))
        for epoch, row in enumerate(mean, start=1):
            sink.write({"epoch": epoch, **dict(zip(names, row))})


def cmd_train(args):
    ds = _dataset(args)
    names = None
    if args.edge_source == "tie-strength":
        feats = feature_matrix(ds.graph)
        feats = feats.max_scaled() if args.model == "pdn_attention" else feats.standardized()
        ds = GraphDataset(ds.graph, ds.node_features, ds.labels, edge_features=feats.values,
                          edge_class_mask=ds.edge_class_mask, meta=ds.meta)
        names = METRICS
    overrides = {"hidden": args.hidden}
    if args.model == "pdn":
        overrides["pathfinder_hidden"] = args.pathfinder_hidden
    elif args.model == "pdn_edgeconv":
        overrides["hops"] = args.hops
    elif args.model == "pdn_multiscale":
        overrides["n_hops"] = args.n_hops
    elif args.model == "pdn_attention" and names:
        overrides["feature_names"] = names
    model = model_for(args.model, ds, **overrides)
    masks = split(ds.n_nodes, ds.labels, _split_spec(args))
    hist = train(model, ModelInputs.from_dataset(ds), ds.labels, masks, _train_config(args),
                 attention_names=names if args.model == "pdn_attention" else None)
    out = Path(args.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    (out / "history.csv").write_text(hist.to_csv(), encoding="utf-8")
    save_checkpoint(out / "checkpoint.json", model, hist.params)
    print(json.dumps({
        "model": args.model,
        "epochs": len(hist.rows),
        "final_loss": hist.rows[-1]["loss"],
        "final_test_acc": hist.final_test_accuracy,
        "history": str(out / "history.csv"),
        "checkpoint": str(out / "checkpoint.json"),
    }))


# parsing --------------------------------------------------------------------

def build_parser():
    common = _global_flags()
    parser = _Parser(prog="pdnet", description="Pathfinder discovery network experiments.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("generate", parents=[common],
                       help="sample a synthetic multiplex dataset (--out: JSON file)")
    _generator_flags(p)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("scenario", parents=[common],
                       help="sweep one generator parameter (--out: CSV, default stdout)")
    p.add_argument("--param", required=True, choices=SWEEPABLE)
    p.add_argument("--values", type=_list_of(float), default=(),
                   help="sweep values; defaults come from the shipped sweeps.cfg")
    p.add_argument("--repetitions", type=_positive_int, default=10)
    p.add_argument("--models", type=_list_of(str), default=("gcn", "pdn"),
                   help=f"subset of {','.join(SCENARIO_MODELS)}")
    p.add_argument("--name", default="", help="scenario label written to every row")
    p.add_argument("--jobs", type=_positive_int, default=1)
    _generator_flags(p)
    _training_flags(p)
    p.set_defaults(handler=cmd_scenario)

    p = sub.add_parser("xor-demo", parents=[common],
                       help="XOR truth table and PDN vs GCN on an XOR multiplex task")
    p.add_argument("--seeds", type=_positive_int, default=10, help="number of seeds")
    p.add_argument("--nodes", type=_positive_int, default=300)
    p.add_argument("--epochs", type=_positive_int, default=200)
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.set_defaults(handler=cmd_xor_demo)

    p = sub.add_parser("runtime", parents=[common],
                       help="epoch time of PDNs relative to a GCN (--out: CSV)")
    p.add_argument("--nodes", type=_list_of(int), default=(4096,))
    p.add_argument("--k", type=_positive_int, default=16, help="ring lattice degree")
    p.add_argument("--p-rewire", type=_probability, default=0.5)
    p.add_argument("--features", type=_positive_int, default=128)
    p.add_argument("--edge-features", type=_list_of(int), default=(128,))
    p.add_argument("--classes", type=_positive_int, default=4)
    p.add_argument("--models", type=_list_of(str), default=tuple(RUNTIME_MODELS),
                   help=f"subset of {','.join(RUNTIME_MODELS)}")
    p.add_argument("--epochs", type=_positive_int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    p.set_defaults(handler=cmd_runtime)

    p = sub.add_parser("attention", parents=[common],
                       help="per-epoch attention traces (--out: CSV)")
    p.add_argument("--mode", choices=("multiscale", "linear"), default="multiscale")
    p.add_argument("--dataset", default=None, help="dataset file; default: a fresh synthetic graph")
    p.add_argument("--hops", type=_positive_int, default=5)
    p.add_argument("--repetitions", type=_positive_int, default=10)
    _generator_flags(p)
    _training_flags(p)
    _split_flags(p)
    p.set_defaults(handler=cmd_attention)

    p = sub.add_parser("train", parents=[common],
                       help="train one model (--out: directory for history.csv, checkpoint.json)")
    p.add_argument("--dataset", default=None, help="dataset file; default: a fresh synthetic graph")
    p.add_argument("--model", choices=TRAIN_MODELS, default="pdn")
    p.add_argument("--hidden", type=_positive_int, default=32)
    p.add_argument("--pathfinder-hidden", type=_list_of(int), default=(16,),
                   help="per-edge MLP widths; empty for a linear PDN")
    p.add_argument("--hops", type=_list_of(int), default=(1, 2), help="edge-conv hops")
    p.add_argument("--n-hops", type=_positive_int, default=2, help="multi-scale powers")
    p.add_argument("--edge-source", choices=("dataset", "tie-strength"), default="dataset")
    _generator_flags(p)
    _training_flags(p)
    _split_flags(p)
    p.set_defaults(handler=cmd_train)
    return parser


def _read_config_text(text):
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string("[flags]\n" + text)
    except configparser.Error as exc:
        raise CliError("config", " ".join(str(exc).split()), status=2) from None
    return dict(cp["flags"])


def config_tokens(path):
    """Command line tokens equivalent to a config file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError("io", f"cannot read config {path}: {exc.strerror}") from None
    tokens = []
    for key, value in _read_config_text(text).items():
        flag = key.strip().replace("_", "-")
        if flag == "config":
            raise CliError("config", "config files cannot include other config files", status=2)
        tokens += [f"--{flag}", value.strip()]
    return tokens


def parse_args(argv):
    parser = build_parser()
    pre = _Parser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config:
        commands = set(parser._subparsers._group_actions[0].choices)
        pos = next((i for i, tok in enumerate(argv) if tok in commands), None)
        if pos is None:
            raise CliError("usage", "a command is required before config values apply", status=2)
        argv = argv[: pos + 1] + config_tokens(known.config) + argv[pos + 1:]
    return parser.parse_args(argv)


def _fail(kind, message, status):
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return status


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        args.handler(args)
    except CliError as exc:
        return _fail(exc.kind, str(exc), exc.status)
    except TrainingDiverged as exc:
        return _fail("diverged", str(exc), 1)
    except MemoryError:
        return _fail("memory", "allocation failed; try a smaller problem", 1)
    except OSError as exc:
        return _fail("io", f"{exc.filename or ''}: {exc.strerror or exc}".strip(": "), 1)
    except (ValueError, KeyError, TypeError) as exc:
        return _fail("invalid", " ".join(str(exc).split()), 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
