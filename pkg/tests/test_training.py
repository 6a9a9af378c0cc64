import csv
import io

import numpy as np
import pytest

from pdnet.models import GcnModel, ModelInputs, PdnModel
from pdnet.synth import SyntheticConfig, generate
from pdnet.training import (
    HISTORY_COLUMNS,
    AdamState,
    SplitSpec,
    TrainConfig,
    Trainer,
    TrainingDiverged,
    accuracy,
    adam_step,
    split,
    train,
)

# torch.optim.Adam references in float64
ADAM_QUADRATIC_X500 = -4.15678513982252e-12
ADAM_FIRST_STEP_DELTA = 0.009999999666666648


def test_adam_matches_reference_on_quadratic():
    params = {"x": np.array([1.0])}
    state = AdamState()
    for _ in range(500):
        adam_step(params, {"x": 2 * params["x"]}, state, 0.1)
    assert params["x"][0] == pytest.approx(ADAM_QUADRATIC_X500, rel=1e-9, abs=0)


def test_adam_first_step():
    params = {"x": np.array([2.0])}
    adam_step(params, {"x": np.array([0.3])}, AdamState(), 0.01)
    assert 2.0 - params["x"][0] == ADAM_FIRST_STEP_DELTA


def test_adam_shape_check():
    with pytest.raises(ValueError):
        adam_step({"x": np.zeros(2)}, {"x": np.zeros(3)}, AdamState(), 0.1)


def test_fraction_split_sizes():
    labels = np.repeat([0, 1, 2], 500)
    train_mask, test_mask = split(1500, labels, SplitSpec())
    assert train_mask.sum() == 1200 and test_mask.sum() == 300
    assert not np.any(train_mask & test_mask)


def test_per_class_split():
    labels = np.repeat([0, 1, 2], 5)
    train_mask, _ = split(15, labels, SplitSpec(mode="per_class", k=1))
    assert np.bincount(labels[train_mask]).tolist() == [1, 1, 1]
    with pytest.raises(ValueError):
        split(15, labels, SplitSpec(mode="per_class", k=6))


def test_split_is_seeded():
    labels = np.zeros(50, dtype=int)
    a = split(50, labels, SplitSpec(seed=3))[0]
    assert np.array_equal(a, split(50, labels, SplitSpec(seed=3))[0])
    assert not np.array_equal(a, split(50, labels, SplitSpec(seed=4))[0])


@pytest.mark.parametrize("bad", [{"mode": "odd"}, {"train_frac": 1.0}, {"mode": "per_class", "k": 0}])
def test_split_spec_validation(bad):
    with pytest.raises(ValueError):
        SplitSpec(**bad)


@pytest.mark.parametrize("bad", [{"epochs": 0}, {"lr": 0.0}, {"dropout": 1.0}, {"l2": -1.0}])
def test_train_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_accuracy_cases():
    logits = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    assert accuracy(logits, [0, 1, 1], [True, True, True]) == pytest.approx(2 / 3)
    assert accuracy(logits, [0, 1, 1], [True, True, False]) == 1.0
    with pytest.raises(ValueError):
        accuracy(logits, [0, 1, 1], [False] * 3)


def small_problem(seed=0, n=60):
    ds = generate(SyntheticConfig(n=n, F=8, D=4, P=0.1, Q=0.02, seed=seed))
    inputs = ModelInputs.from_dataset(ds)
    masks = split(ds.n_nodes, ds.labels, SplitSpec(seed=seed))
    return ds, inputs, masks


def test_training_is_deterministic():
    ds, inputs, masks = small_problem()
    model = PdnModel(8, 3, n_edge_features=4)
    a = train(model, inputs, ds.labels, masks, TrainConfig(epochs=15, seed=2))
    b = train(model, inputs, ds.labels, masks, TrainConfig(epochs=15, seed=2))
    assert a.to_csv() == b.to_csv()
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])


def test_random_labels_give_chance_accuracy():
    ds, inputs, masks = small_problem(n=300)
    labels = np.random.default_rng(9).integers(0, 3, ds.n_nodes)
    hist = train(GcnModel(8, 3), inputs, labels, masks, TrainConfig(epochs=100))
    assert abs(hist.final_test_accuracy - 1 / 3) <= 0.08


def test_early_loss_mostly_decreases():
    monotone = 0
    for seed in range(10):
        ds, inputs, masks = small_problem(seed)
        hist = train(PdnModel(8, 3, n_edge_features=4), inputs, ds.labels, masks,
                     TrainConfig(epochs=10, seed=seed))
        losses = [r["loss"] for r in hist.rows]
        monotone += all(b < a for a, b in zip(losses, losses[1:]))
    assert monotone >= 8


def test_history_csv_schema():
    ds, inputs, masks = small_problem()
    hist = train(GcnModel(8, 3), inputs, ds.labels, masks, TrainConfig(epochs=3))
    rows = list(csv.reader(io.StringIO(hist.to_csv())))
    assert tuple(rows[0]) == HISTORY_COLUMNS
    assert [r[0] for r in rows[1:]] == ["1", "2", "3"]
    assert all(float(x) == float(repr(float(x))) for r in rows[1:] for x in r[1:])


def test_trainer_steps_without_history():
    ds, inputs, masks = small_problem()
    trainer = Trainer(GcnModel(8, 3), inputs, ds.labels, masks, TrainConfig(epochs=5))
    for _ in range(3):
        assert trainer.step() > 0
    assert trainer.epoch == 3 and trainer.history.rows == []
    assert trainer.evaluate()["epoch"] == 3


def test_divergence_is_reported():
    ds, inputs, masks = small_problem()
    model = GcnModel(8, 3)
    params = model.init_params(np.random.default_rng(0))
    first = next(iter(params))
    params[first] = np.full_like(params[first], np.nan)
    with pytest.raises(TrainingDiverged, match="non-finite loss at epoch 1"):
        train(model, inputs, ds.labels, masks, TrainConfig(epochs=2), params=params)
