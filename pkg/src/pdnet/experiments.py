"""Experiment drivers shared by the command line and the acceptance suite."""

from __future__ import annotations

import ctypes
import gc
from dataclasses import dataclass
from functools import partial

import numpy as np

from .dataset import GraphDataset, undirected_edges
from .features import METRICS, feature_matrix
from .layers import xor_truth_table
from .models import (
    EdgeConvPdn,
    GcnModel,
    LinearAttentionPdn,
    ModelInputs,
    MultiScalePdn,
    PdnModel,
)
from .sparse import CsrMatrix
from .synth import SyntheticConfig, generate, watts_strogatz
from .training import SplitSpec, TrainConfig, Trainer, run_repetitions, split, train

SWEEPABLE = ("C", "n", "P", "Q", "F", "D", "sigma_F", "sigma_D")
SCENARIO_MODELS = ("gcn", "pdn", "pdn_edgeconv", "pdn_multiscale")
_INTEGER_PARAMS = ("C", "n", "F", "D")


def model_for(kind, ds, **overrides):
    """Default configuration of each model family for a dataset."""
    base = dict(n_features=ds.node_features.shape[1], n_classes=ds.n_classes)
    if kind == "gcn":
        return GcnModel(**base, **overrides)
    if kind == "pdn":
        return PdnModel(**base, n_edge_features=ds.edge_features.shape[1], **overrides)
    if kind == "pdn_linear":
        return PdnModel(**base, n_edge_features=ds.edge_features.shape[1],
                        pathfinder_hidden=(), **overrides)
    if kind == "pdn_attention":
        return LinearAttentionPdn(**base, n_edge_features=ds.edge_features.shape[1], **overrides)
    if kind == "pdn_edgeconv":
        return EdgeConvPdn(**base, **overrides)
    if kind == "pdn_multiscale":
        return MultiScalePdn(**base, **overrides)
    raise ValueError(f"unknown model {kind!r}")


# XOR multiplex task -----------------------------------------------------------

def xor_task(n_nodes=300, seed=0, degree_in=5.0, degree_out=5.0, n_features=8, signal=0.5):
    """Two-class graph whose two binary edge layers encode edge type by XOR.

    Intra-class edges appear in exactly one layer, inter-class edges in both,
    so an edge is useful exactly when ``xor(layer1, layer2) == 1``. Node
    features carry a weak class signal that neighbourhood averaging over
    useful edges amplifies.
    """
    rng = np.random.default_rng(seed)
    labels = np.repeat([0, 1], [n_nodes // 2, n_nodes - n_nodes // 2])
    rng.shuffle(labels)
    x = rng.standard_normal((n_nodes, n_features))
    x[:, :2] += signal * (2 * labels[:, None] - 1)
    half = n_nodes / 2
    p_in = degree_in / (half - 1)
    p_out = degree_out / half
    u, v = np.triu_indices(n_nodes, k=1)
    same = labels[u] == labels[v]
    keep = rng.random(len(u)) < np.where(same, p_in, p_out)
    graph = CsrMatrix.from_edges(n_nodes, np.column_stack([u[keep], v[keep]]))
    intra = same[keep]
    first = rng.random(len(intra)) < 0.5
    layers = np.where(intra[:, None], np.column_stack([first, ~first]), True).astype(float)
    return GraphDataset(graph, x, labels, edge_features=layers, edge_class_mask=intra,
                        meta={"generator": "xor", "seed": seed})


@dataclass
class XorResult:
    seed: int
    pdn_accuracy: float
    gcn_accuracy: float


def xor_run(seed, n_nodes=300, epochs=200):
    ds = xor_task(n_nodes, seed)
    masks = split(ds.n_nodes, ds.labels, SplitSpec(seed=seed))
    inputs = ModelInputs.from_dataset(ds)
    config = TrainConfig(epochs=epochs, seed=seed)
    pdn = model_for("pdn", ds, pathfinder_hidden=(2,))
    gcn = model_for("gcn", ds)
    return XorResult(
        seed,
        train(pdn, inputs, ds.labels, masks, config).final_test_accuracy,
        train(gcn, inputs, ds.labels, masks, config).final_test_accuracy,
    )


def xor_demo(seeds=range(10), n_nodes=300, epochs=200, jobs=1):
    table = xor_truth_table()
    expected = [(0, 0, 0.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 0.0)]
    if [(a, b, w) for a, b, _, _, w in table] != expected:
        raise AssertionError(f"reference module does not reproduce XOR: {table}")
    runs = run_repetitions(partial(xor_run, n_nodes=n_nodes, epochs=epochs), seeds, jobs)
    return table, [r for _, r in runs]


# runtime ----------------------------------------------------------------------

RUNTIME_MODELS = {
    "gcn": dict(kind="gcn"),
    "linear_pdn": dict(kind="pdn", pathfinder_hidden=()),
    "shallow_pdn": dict(kind="pdn", pathfinder_hidden=(32,)),
    "deep_pdn": dict(kind="pdn", pathfinder_hidden=(32, 16)),
}


def runtime_dataset(n_nodes, k=16, p_rewire=0.5, n_features=128, n_edge_features=128,
                    n_classes=4, seed=0):
    rng = np.random.default_rng(seed)
    graph = watts_strogatz(n_nodes, k, p_rewire, rng)
    m = len(undirected_edges(graph))
    return GraphDataset(
        graph,
        rng.standard_normal((n_nodes, n_features)),
        rng.integers(n_classes, size=n_nodes),
        edge_features=rng.standard_normal((m, n_edge_features)),
        meta={"generator": "watts_strogatz", "k": k, "p": p_rewire, "seed": seed},
    )


_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def retain_heap(mmap_threshold=32 << 20, trim_threshold=(1 << 31) - 1):
    """Ask glibc to keep freed buffers instead of returning them to the OS.

    Epoch temporaries are large; without this every epoch pays fresh page
    faults for them, which dominates small graphs and makes timings jittery.
    Returns False where the allocator cannot be tuned (non-glibc platforms).
    """
    try:
        libc = ctypes.CDLL("libc.so.6")
    except OSError:
        return False
    return bool(libc.mallopt(_M_MMAP_THRESHOLD, mmap_threshold)) and bool(
        libc.mallopt(_M_TRIM_THRESHOLD, trim_threshold)
    )


def time_epochs(models, ds, epochs=20, warmup=3, seed=0):
    """Mean wall time of a training epoch (forward, backward, update) per model.

    ``models`` maps names to models. Their epochs run interleaved, one epoch
    of each model in turn, so slow phases of the machine hit every model
    alike and the ratios between them stay paired. The garbage collector is
    paused so a collection of an old tape cannot land inside a timed epoch.
    """
    inputs = ModelInputs.from_dataset(ds)
    masks = split(ds.n_nodes, ds.labels, SplitSpec(seed=seed))
    config = TrainConfig(epochs=epochs + warmup, seed=seed)
    trainers = {name: Trainer(m, inputs, ds.labels, masks, config) for name, m in models.items()}
    times = {name: [] for name in models}
    gc.collect()
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        for epoch in range(warmup + epochs):
            for name, trainer in trainers.items():
                elapsed = trainer.step()
                if epoch >= warmup:
                    times[name].append(elapsed)
    finally:
        if was_enabled:
            gc.enable()
    return {name: float(np.mean(t)) for name, t in times.items()}


def runtime_benchmark(node_counts, k=16, p_rewire=0.5, n_features=128, n_edge_features=128,
                      n_classes=4, epochs=20, warmup=3, seed=0, models=tuple(RUNTIME_MODELS)):
    """Per size: absolute epoch time of each model and its ratio to the GCN."""
    names = ("gcn", *[m for m in models if m != "gcn"])
    unknown = set(names) - set(RUNTIME_MODELS)
    if unknown:
        raise ValueError(f"unknown runtime models {sorted(unknown)}")
    retain_heap()
    records = []
    for n in node_counts:
        ds = runtime_dataset(n, k, p_rewire, n_features, n_edge_features, n_classes, seed)
        built = {}
        for name in names:
            spec = dict(RUNTIME_MODELS[name])
            built[name] = model_for(spec.pop("kind"), ds, **spec)
        times = time_epochs(built, ds, epochs, warmup, seed)
        for name, t in times.items():
            records.append({
                "nodes": n,
                "edges": len(undirected_edges(ds.graph)),
                "edge_features": n_edge_features,
                "model": name,
                "epoch_time": t,
                "relative": t / times["gcn"],
            })
    return records


# attention -----------------------------------------------------------------------

def multiscale_attention(ds, n_hops=5, repetitions=10, split_spec=None, train_config=None,
                         seed=0):
    """Per-epoch mixing weights; returns an array ``(repetitions, epochs, n_hops)``."""
    train_config = train_config or TrainConfig()
    inputs = ModelInputs.from_dataset(ds)
    traces = []
    for rep in range(repetitions):
        run_seed = seed + rep
        spec = split_spec or SplitSpec()
        masks = split(ds.n_nodes, ds.labels, SplitSpec(spec.mode, spec.train_frac, spec.k, run_seed))
        cfg = TrainConfig(train_config.lr, train_config.epochs, train_config.dropout,
                          train_config.l2, run_seed)
        hist = train(model_for("pdn_multiscale", ds, n_hops=n_hops), inputs, ds.labels,
                     masks, cfg)
        traces.append(hist.attention_trace())
    return np.array(traces)


def linear_attention(ds, repetitions=10, split_spec=None, train_config=None, seed=0):
    """Softmax attention over tie-strength metrics; ``(repetitions, epochs, n_metrics)``."""
    train_config = train_config or TrainConfig()
    feats = feature_matrix(ds.graph).max_scaled()
    att_ds = GraphDataset(ds.graph, ds.node_features, ds.labels, edge_features=feats.values)
    inputs = ModelInputs.from_dataset(att_ds)
    traces = []
    for rep in range(repetitions):
        run_seed = seed + rep
        spec = split_spec or SplitSpec()
        masks = split(ds.n_nodes, ds.labels, SplitSpec(spec.mode, spec.train_frac, spec.k, run_seed))
        cfg = TrainConfig(train_config.lr, train_config.epochs, train_config.dropout,
                          train_config.l2, run_seed)
        model = model_for("pdn_attention", att_ds, feature_names=METRICS)
        hist = train(model, inputs, ds.labels, masks, cfg, attention_names=METRICS)
        traces.append(hist.attention_trace())
    return np.array(traces)


# scenario sweeps ------------------------------------------------------------------

@dataclass
class ScenarioSpec:
    param: str
    values: tuple
    repetitions: int = 10
    models: tuple = ("gcn", "pdn")
    base: SyntheticConfig = SyntheticConfig()
    name: str = ""

    def __post_init__(self):
        if self.param not in SWEEPABLE:
            raise ValueError(f"cannot sweep {self.param!r}; choose from {SWEEPABLE}")
        cast = int if self.param in _INTEGER_PARAMS else float
        if cast is int and any(float(v) != int(float(v)) for v in self.values):
            raise ValueError(f"{self.param} takes integer values, got {list(self.values)}")
        self.values = tuple(cast(v) for v in self.values)
        self.models = tuple(self.models)
        self.name = self.name or self.param
        if not self.values:
            raise ValueError("a scenario needs at least one sweep value")
        unknown = set(self.models) - set(SCENARIO_MODELS)
        if unknown:
            raise ValueError(f"unknown scenario models {sorted(unknown)}")
        if self.repetitions < 1:
            raise ValueError("need at least one repetition")


def _scenario_cell(args):
    name, param, value, rep, model_kind, base, train_config, seed = args
    data_seed = seed * 1_000_003 + rep
    ds = generate(base.replace(**{param: value, "seed": data_seed}))
    masks = split(ds.n_nodes, ds.labels, SplitSpec(seed=data_seed))
    cfg = TrainConfig(train_config.lr, train_config.epochs, train_config.dropout,
                      train_config.l2, data_seed)
    hist = train(model_for(model_kind, ds), ModelInputs.from_dataset(ds), ds.labels, masks, cfg)
    return {
        "scenario": name,
        "param": param,
        "value": value,
        "model": model_kind,
        "seed": data_seed,
        "test_acc": hist.final_test_accuracy,
        "epoch_time": float(np.mean(hist.epoch_times)),
    }


def run_scenario(spec, train_config=None, seed=0, jobs=1, on_record=None):
    """Fresh dataset per (value, repetition); every model trains on the same datasets."""
    train_config = train_config or TrainConfig()
    cells = [
        (spec.name, spec.param, value, rep, model, spec.base, train_config, seed)
        for value in spec.values
        for rep in range(spec.repetitions)
        for model in spec.models
    ]
    records = []
    if jobs <= 1:
        for cell in cells:
            rec = _scenario_cell(cell)
            records.append(rec)
            if on_record:
                on_record(rec)
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for rec in pool.map(_scenario_cell, cells):
                records.append(rec)
                if on_record:
                    on_record(rec)
    return records


def summarize(records):
    """Mean and std of test accuracy per (value, model), records sorted by seed first."""
    groups = {}
    for rec in sorted(records, key=lambda r: r["seed"]):
        groups.setdefault((rec["value"], rec["model"]), []).append(rec["test_acc"])
    return [
        {"value": value, "model": model, "mean": float(np.mean(accs)),
         "std": float(np.std(accs)), "count": len(accs)}
        for (value, model), accs in groups.items()
    ]
