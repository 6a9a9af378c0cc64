"""Full-graph training: Adam, train/test splits, accuracy and run history."""

from __future__ import annotations

import csv
import dataclasses
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

HISTORY_SCHEMA_VERSION = 1
HISTORY_COLUMNS = ("epoch", "loss", "train_acc", "test_acc")


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-2
    epochs: int = 200
    dropout: float = 0.5
    l2: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.l2 < 0:
            raise ValueError("l2 coefficient must be nonnegative")


# optimizer ------------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr):
    """Bias-corrected Adam update of ``params`` in place; returns ``params``."""
    state.step += 1
    t = state.step
    for name in params:
        p, g = params[name], grads[name]
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


# splits and metrics -------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    """``mode`` is ``"fraction"`` (uses ``train_frac``) or ``"per_class"`` (uses ``k``)."""

    mode: str = "fraction"
    train_frac: float = 0.8
    k: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("fraction", "per_class"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        if self.mode == "fraction" and not 0.0 < self.train_frac < 1.0:
            raise ValueError("train fraction must be in (0, 1)")
        if self.mode == "per_class" and self.k < 1:
            raise ValueError("k must be at least 1")


def split(n_nodes, labels, spec):
    """Disjoint covering ``(train_mask, test_mask)``."""
    labels = np.asarray(labels)
    if len(labels) != n_nodes:
        raise ValueError("need one label per node")
    rng = np.random.default_rng(spec.seed)
    train = np.zeros(n_nodes, dtype=bool)
    if spec.mode == "fraction":
        order = rng.permutation(n_nodes)
        train[order[: int(round(spec.train_frac * n_nodes))]] = True
    else:
        for c in np.unique(labels):
            members = np.flatnonzero(labels == c)
            if spec.k > len(members):
                raise ValueError(f"class {c} has only {len(members)} nodes, fewer than k={spec.k}")
            train[rng.choice(members, size=spec.k, replace=False)] = True
    return train, ~train


def accuracy(logits, labels, mask):
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("accuracy needs a nonempty mask")
    if isinstance(logits, ad.Value):
        logits = logits.data
    pred = np.argmax(logits[mask], axis=1)
    return float(np.mean(pred == np.asarray(labels)[mask]))


# training ---------------------------------------------------------------

@dataclass
class History:
    rows: list = field(default_factory=list)
    attention_names: tuple = ()
    params: dict = field(default_factory=dict)
    epoch_times: list = field(default_factory=list)

    @property
    def columns(self):
        return HISTORY_COLUMNS + tuple(f"att_{n}" for n in self.attention_names)

    @property
    def final_test_accuracy(self):
        return self.rows[-1]["test_acc"]

    def attention_trace(self):
        return np.array([r["attention"] for r in self.rows]) if self.attention_names else None

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        cols = self.columns
        writer.writerow(cols)
        for r in self.rows:
            row = [r["epoch"], repr(r["loss"]), repr(r["train_acc"]), repr(r["test_acc"])]
            row += [repr(float(a)) for a in r.get("attention", ())]
            if len(row) != len(cols):
                raise ValueError("history row does not match the CSV schema")
            writer.writerow(row)
        return buf.getvalue()


def _leaves(tape, params):
    return {name: tape.leaf(arr, name=name) for name, arr in params.items()}


class Trainer:
    """Stepwise full-batch trainer; :func:`train` drives it for a fixed epoch count."""

    def __init__(self, model, inputs, labels, masks, config, params=None, attention_names=None):
        self.train_mask, self.test_mask = masks
        self.inputs = inputs
        self.labels = np.asarray(labels)
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        if params is None:
            params = model.init_params(self.rng)
        self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        if hasattr(model, "dropout"):
            model = dataclasses.replace(model, dropout=config.dropout)
        self.model = model
        self.cache = model.prepare(inputs)
        self.state = AdamState()
        self.attention_names = attention_names
        self.history = History(params=self.params)

    @property
    def epoch(self):
        return self.state.step

    def step(self):
        """One forward/backward pass and Adam update; returns the epoch wall time."""
        start = time.perf_counter()
        tape = ad.Tape()
        leaves = _leaves(tape, self.params)
        logits, _ = self.model.forward(tape, leaves, self.inputs, self.cache, train=True,
                                       rng=self.rng)
        ce = ad.softmax_cross_entropy(logits, self.labels, self.train_mask)
        loss = ad.add(ce, ad.l2_penalty(leaves.values(), self.config.l2))
        if not np.isfinite(loss.data):
            params = self.params
            worst = max(params, key=lambda k: np.linalg.norm(params[k]))
            raise TrainingDiverged(
                f"non-finite loss at epoch {self.epoch + 1}; largest parameter {worst} "
                f"has norm {np.linalg.norm(params[worst]):.3g}"
            )
        ad.backward(tape, loss)
        adam_step(self.params, {k: v.grad for k, v in leaves.items()}, self.state,
                  self.config.lr)
        tape.release()
        elapsed = time.perf_counter() - start
        self.history.epoch_times.append(elapsed)
        return elapsed

    def evaluate(self):
        """Append a dropout-free history row for the current parameters."""
        tape = ad.Tape()
        logits, extras = self.model.forward(tape, _leaves(tape, self.params), self.inputs,
                                            self.cache, train=False)
        eval_ce = ad.softmax_cross_entropy(logits, self.labels, self.train_mask)
        test_mask = self.test_mask
        row = {
            "epoch": self.epoch,
            "loss": float(eval_ce.data),
            "train_acc": accuracy(logits, self.labels, self.train_mask),
            "test_acc": accuracy(logits, self.labels, test_mask) if test_mask.any() else float("nan"),
        }
        if "attention" in extras:
            row["attention"] = extras["attention"]
            if not self.history.attention_names:
                n_att = len(extras["attention"])
                names = self.attention_names or [str(i) for i in range(n_att)]
                self.history.attention_names = tuple(names)
        self.history.rows.append(row)
        tape.release()
        return row


def train(model, inputs, labels, masks, config, params=None, attention_names=None,
          evaluate=True):
    """Train ``model`` on one graph for ``config.epochs`` full-batch epochs.

    Each history row records the dropout-free cross entropy on the training
    nodes, train and test accuracy after that epoch's update, and the
    attention/mixing weights when the model exposes them.
    """
    trainer = Trainer(model, inputs, labels, masks, config, params, attention_names)
    for _ in range(config.epochs):
        trainer.step()
        if evaluate:
            trainer.evaluate()
    return trainer.history


def predict_logits(model, inputs, params):
    tape = ad.Tape()
    logits, _ = model.forward(tape, _leaves(tape, params), inputs, model.prepare(inputs))
    tape.release()
    return logits.data


def run_repetitions(fn, seeds, jobs=1):
    """``[(seed, fn(seed)) ...]`` sorted by seed, optionally on a process pool."""
    seeds = sorted(seeds)
    if jobs <= 1:
        results = [fn(s) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(fn, seeds))
    return list(zip(seeds, results))
