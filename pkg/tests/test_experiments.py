import numpy as np
import pytest

from pdnet.experiments import (
    RUNTIME_MODELS,
    ScenarioSpec,
    linear_attention,
    model_for,
    multiscale_attention,
    retain_heap,
    run_scenario,
    runtime_benchmark,
    runtime_dataset,
    summarize,
    xor_task,
)
from pdnet.features import METRICS
from pdnet.synth import SyntheticConfig, generate
from pdnet.training import TrainConfig

SMALL = SyntheticConfig(n=20, F=4, D=3, P=0.2, Q=0.05)
FAST = TrainConfig(epochs=2)


def test_xor_task_layers_encode_edge_type():
    ds = xor_task(120, seed=3)
    a, b = ds.edge_features[:, 0].astype(bool), ds.edge_features[:, 1].astype(bool)
    assert np.array_equal(a ^ b, ds.edge_class_mask)
    assert np.all(a | b)
    assert np.bincount(ds.labels).tolist() == [60, 60]


def test_xor_task_is_seeded():
    assert xor_task(60, seed=1).to_json() == xor_task(60, seed=1).to_json()


def test_scenario_record_count():
    spec = ScenarioSpec("Q", [0.01, 0.02, 0.05, 0.1], repetitions=10, base=SMALL)
    seen = []
    records = run_scenario(spec, FAST, on_record=seen.append)
    assert len(records) == 2 * 4 * 10 == len(seen)
    assert {r["model"] for r in records} == {"gcn", "pdn"}
    summary = summarize(records)
    assert len(summary) == 8 and all(s["count"] == 10 for s in summary)


def test_scenario_models_share_datasets():
    spec = ScenarioSpec("C", [2], repetitions=2, models=("gcn", "pdn_multiscale"), base=SMALL)
    records = run_scenario(spec, FAST)
    by_model = {}
    for r in records:
        by_model.setdefault(r["model"], []).append(r["seed"])
    assert by_model["gcn"] == by_model["pdn_multiscale"]


def test_scenario_is_deterministic():
    spec = ScenarioSpec("sigma_D", [1.0], repetitions=1, base=SMALL)

    def strip(records):
        # wall-clock timing is the only nondeterministic field
        return [{k: v for k, v in r.items() if k != "epoch_time"} for r in records]

    assert strip(run_scenario(spec, FAST, seed=4)) == strip(run_scenario(spec, FAST, seed=4))


def test_summarize_statistics():
    recs = [{"value": 1, "model": "gcn", "seed": s, "test_acc": a} for s, a in enumerate([0.5, 0.7])]
    assert summarize(recs) == [{"value": 1, "model": "gcn", "mean": 0.6, "std": pytest.approx(0.1),
                                "count": 2}]


@pytest.mark.parametrize("bad", [
    dict(param="k", values=[1]),
    dict(param="C", values=[2.5]),
    dict(param="Q", values=[]),
    dict(param="Q", values=[0.1], models=("gat",)),
    dict(param="Q", values=[0.1], repetitions=0),
])
def test_scenario_spec_validation(bad):
    with pytest.raises(ValueError):
        ScenarioSpec(**bad)


def test_scenario_spec_casts_integers():
    spec = ScenarioSpec("n", ["10", 20.0])
    assert spec.values == (10, 20) and spec.name == "n"


def test_single_hop_multiscale_trace_is_constant():
    trace = multiscale_attention(generate(SMALL), n_hops=1, repetitions=2, train_config=FAST)
    assert trace.shape == (2, 2, 1) and np.all(trace == 1.0)


def test_linear_attention_trace_sums_to_one():
    trace = linear_attention(generate(SMALL), repetitions=2, train_config=TrainConfig(epochs=5))
    assert trace.shape == (2, 5, len(METRICS))
    assert np.all(np.abs(trace.sum(axis=2) - 1.0) <= 1e-9)


def test_model_for_kinds():
    ds = generate(SMALL)
    assert model_for("pdn_linear", ds).pathfinder_hidden == ()
    assert model_for("pdn", ds).n_edge_features == 3
    with pytest.raises(ValueError):
        model_for("gat", ds)


def test_runtime_dataset_size():
    ds = runtime_dataset(256, k=8, n_features=4, n_edge_features=2)
    assert len(ds.edges) == 256 * 4
    assert ds.node_features.shape == (256, 4) and ds.edge_features.shape == (1024, 2)


def test_runtime_benchmark_small():
    assert isinstance(retain_heap(), bool)
    records = runtime_benchmark([128, 256], k=4, n_features=8, n_edge_features=8,
                                epochs=2, warmup=1)
    assert len(records) == 2 * len(RUNTIME_MODELS)
    assert {r["edges"] for r in records} == {256, 512}
    for r in records:
        assert r["epoch_time"] > 0
        if r["model"] == "gcn":
            assert r["relative"] == 1.0
    with pytest.raises(ValueError):
        runtime_benchmark([64], models=("gcn", "gat"))
