"""Optimisation and training protocols.

* :func:`train_multitask` - random task per step, one mini-batch of that task,
  one Adam update; dev accuracy logged per interval; best-dev parameters kept.
* :func:`finetune` - shared parameters frozen, one task's own parameters trained.
* :func:`transfer` - new tasks attached to a frozen trained model.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from taskattn.data import LabeledSequence, TextExample
from taskattn.mtl import LABELING, Model, TaskSpec, total_loss
from taskattn.tensor import Graph, Tensor

log = logging.getLogger(__name__)

Example = Union[TextExample, LabeledSequence]

# log/selection name of the DA domain classifier
DC_TASK = "DC"


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 32
    dropout: float = 0.5
    d_e: int = 200
    d_h: int = 200
    init_range: float = 0.1
    max_epochs: int = 10
    eval_interval: int = 0  # optimizer steps between dev evaluations; 0 = once per epoch
    seed: int = 0
    task_weights: dict[str, float] = field(default_factory=dict)
    sampling: str = "uniform"  # or "proportional" to training-set size
    finetune_epochs: int = 0
    freeze_embeddings: bool = False
    dc_weight: float = 1.0

    def validate(self) -> None:
        if not self.lr > 0 or self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("lr, batch_size must be positive and max_epochs non-negative")
        if self.d_e < 1 or self.d_h < 1 or not self.init_range > 0:
            raise ValueError("d_e, d_h and init_range must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.sampling not in ("uniform", "proportional"):
            raise ValueError(f"sampling must be 'uniform' or 'proportional', got {self.sampling!r}")
        if self.eval_interval < 0 or self.finetune_epochs < 0 or not self.dc_weight > 0:
            raise ValueError("eval_interval, finetune_epochs must be >= 0 and dc_weight > 0")
        if any(not w > 0 for w in self.task_weights.values()):
            raise ValueError("task weights must be positive")


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update of every tensor in ``params``, in place."""
    missing = [name for name, t in params.items() if t.grad is None]
    if missing:
        raise ValueError(f"adam_step: no gradient for {', '.join(missing[:5])}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, t in params.items():
        g = t.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        t.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def param_checksum(model: Model, names: Optional[Iterable[str]] = None) -> str:
    h = hashlib.sha256()
    for name in (names if names is not None else model.params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(model.params[name].data).tobytes())
    return h.hexdigest()


# -- evaluation ----------------------------------------------------------------

def predict(model: Model, task: str, examples: Sequence[Example]) -> list:
    """Argmax labels (one per sentence, or one list of tags per sequence)."""
    spec = model.task(task)
    out = []
    for ex in examples:
        g = Graph()
        probs = model.predict_probs(g, spec, model.forward(g, spec, ex.tokens)).data
        out.append(probs.argmax(axis=-1).tolist() if spec.kind == LABELING else int(probs.argmax()))
    return out


def evaluate(model: Model, task: str, examples: Sequence[Example]) -> float:
    """Accuracy; per-token accuracy for labeling tasks."""
    if not examples:
        return float("nan")
    preds = predict(model, task, examples)
    if model.task(task).kind == LABELING:
        gold = [t for ex in examples for t in ex.tags]
        flat = [t for p in preds for t in p]
        return float(np.mean(np.equal(flat, gold)))
    return float(np.mean([p == ex.label for p, ex in zip(preds, examples)]))


def evaluate_domain(model: Model, data: dict[str, Sequence[TextExample]]) -> float:
    """Domain-classifier accuracy of a DA model over examples keyed by source task."""
    correct = total = 0
    for task, examples in data.items():
        k = model.domain_index(task)
        for ex in examples:
            g = Graph()
            out = model.forward(g, task, ex.tokens)
            correct += int(out.dc_probs.data.argmax() == k)
            total += 1
    return correct / total if total else float("nan")


# -- training loops ------------------------------------------------------------

@dataclass
class LogRow:
    step: int
    task: str
    train_loss: float
    dev_accuracy: float


@dataclass
class TrainResult:
    log: list[LogRow] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    best_dev: float = float("-inf")
    best_step: int = 0
    steps: int = 0
    examples_seen: int = 0

    def write_csv(self, path: Union[str, Path]) -> None:
        write_log(self.log, path)


def write_log(rows: Sequence[LogRow], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "task", "train_loss", "dev_accuracy"])
        for r in rows:
            w.writerow([r.step, r.task, repr(r.train_loss), repr(r.dev_accuracy)])


def _log_row(result: TrainResult, step: int, task: str, pending: dict, acc: float) -> None:
    losses = pending[task]
    result.log.append(LogRow(step, task, float(np.mean(losses)) if losses else float("nan"), acc))
    pending[task] = []


class _Stream:
    """Endless reshuffled pass over one task's training examples."""

    def __init__(self, items: list, rng: np.random.Generator):
        self.items = items
        self.rng = rng
        self.order = rng.permutation(len(items))
        self.pos = 0

    def take(self, n: int) -> list:
        if self.pos >= len(self.items):
            self.order = self.rng.permutation(len(self.items))
            self.pos = 0
        idx = self.order[self.pos:self.pos + n]
        self.pos += len(idx)
        return [self.items[i] for i in idx]


def _encode(model: Model, examples: Sequence[Example]) -> list[tuple[list[int], object]]:
    out = []
    for ex in examples:
        gold = ex.tags if isinstance(ex, LabeledSequence) else ex.label
        out.append((model.vocab.encode(ex.tokens), gold))
    return out


def _run(model: Model, train: dict[str, Sequence[Example]], dev: dict[str, Sequence[Example]],
         config: TrainConfig, trainable: Sequence[str], epochs: int, use_dc: bool,
         rng: np.random.Generator, on_step: Optional[Callable[[int], None]] = None,
         initial_eval: bool = False) -> TrainResult:
    tasks = [t for t in train if train[t]]
    if len(tasks) != len(train):
        empty = [t for t in train if not train[t]]
        raise ValueError(f"empty training set for task(s): {', '.join(empty)}")
    encoded = {t: _encode(model, train[t]) for t in tasks}
    streams = {t: _Stream(encoded[t], rng) for t in tasks}
    sizes = np.array([len(encoded[t]) for t in tasks], dtype=np.float64)
    probs = sizes / sizes.sum() if config.sampling == "proportional" else None
    steps_per_epoch = max(1, math.ceil(sizes.sum() / config.batch_size))
    interval = config.eval_interval or steps_per_epoch
    specs = {t: model.task(t) for t in tasks}
    for t, w in config.task_weights.items():
        if t in specs:
            specs[t] = replace(specs[t], weight=w)

    trainable_set = set(trainable)
    saved_flags = {n: p.requires_grad for n, p in model.params.items()}
    for n, p in model.params.items():
        p.requires_grad = n in trainable_set
        p.grad = None
    dc_tasks = {t for t in tasks if use_dc and model.scheme == "DA"
                and specs[t].kind != LABELING and t in model.dc_domains}
    active = {t: _active_params(model, specs[t], trainable_set, t in dc_tasks) for t in tasks}

    adam = AdamState()
    result = TrainResult()
    interval_loss = {t: [] for t in [*tasks, DC_TASK]}
    best_state = None

    def evaluate_dev(step: int) -> None:
        nonlocal best_state
        accs = []
        for t in tasks:
            acc = evaluate(model, t, dev.get(t, []))
            _log_row(result, step, t, interval_loss, acc)
            if not math.isnan(acc):
                accs.append(acc)
        if dc_tasks:
            acc = evaluate_domain(model, {t: dev.get(t, []) for t in sorted(dc_tasks, key=tasks.index)})
            _log_row(result, step, DC_TASK, interval_loss, acc)
            if not math.isnan(acc):
                accs.append(acc)
        score = float(np.mean(accs)) if accs else float("-inf")
        # ties go to the later checkpoint
        if best_state is None or score >= result.best_dev:
            result.best_dev = score
            result.best_step = step
            best_state = model.state_dict()

    try:
        if initial_eval:
            evaluate_dev(0)
        step = 0
        for _ in range(epochs):
            epoch_losses = []
            for _ in range(steps_per_epoch):
                t = tasks[int(rng.choice(len(tasks), p=probs))]
                spec = specs[t]
                batch = streams[t].take(config.batch_size)
                scale = 1.0 / len(batch)
                dc_label = model.domain_index(t) if t in dc_tasks else None
                for ids, gold in batch:
                    g = Graph()
                    out = model.forward(g, spec, ids, train=True, rng=rng)
                    items = [(spec, model.predict_probs(g, spec, out), gold)]
                    if dc_label is not None:
                        items.append((config.dc_weight, out.dc_probs, dc_label))
                    loss = total_loss(g, items)
                    if loss.requires_grad:
                        g.backward(loss, seed=scale)
                    value = loss.item()
                    epoch_losses.append(value)
                    if dc_label is not None:
                        dc_value = -config.dc_weight * math.log(out.dc_probs.data[dc_label])
                        interval_loss[DC_TASK].append(dc_value)
                        value -= dc_value
                    interval_loss[t].append(value)
                step_params = {n: model.params[n] for n in active[t]}
                if step_params:
                    adam_step(step_params, adam, config.lr)
                for p in model.params.values():
                    p.grad = None
                step += 1
                result.examples_seen += len(batch)
                if on_step is not None:
                    on_step(step)
                if step % interval == 0:
                    evaluate_dev(step)
            result.epoch_losses.append(float(np.mean(epoch_losses)))
            log.info("epoch %d: mean train loss %.4f, best dev %.4f",
                     len(result.epoch_losses), result.epoch_losses[-1], result.best_dev)
        if step % interval != 0:
            evaluate_dev(step)
        result.steps = step
    finally:
        for n, p in model.params.items():
            p.requires_grad = saved_flags[n]
            p.grad = None
    if best_state is not None:
        model.load_state_dict(best_state)
    return result


def _active_params(model: Model, spec: TaskSpec, trainable: set, dc_loss: bool) -> list[str]:
    """Trainable parameters that receive gradient from one batch of ``spec``."""
    names = []
    for n in model.params:
        if n not in trainable:
            continue
        component, owner, tensor = n.split("/")
        if owner not in ("shared", spec.name):
            continue
        if spec.kind == LABELING and component in ("query", "domain"):
            continue
        # the domain query steers the task query; the domain head only learns from its own loss
        if component == "domain" and tensor != "q" and not dc_loss:
            continue
        names.append(n)
    return names


def trainable_names(model: Model, config: TrainConfig) -> list[str]:
    names = list(model.params)
    if config.freeze_embeddings:
        names.remove("encoder/shared/embedding")
    return names


def train_multitask(model: Model, train: dict[str, Sequence[Example]],
                    dev: dict[str, Sequence[Example]], config: TrainConfig,
                    on_step: Optional[Callable[[int], None]] = None) -> TrainResult:
    """Joint training; each step samples a task and updates on one of its mini-batches.

    DA models also fit the domain classifier on every classification batch,
    with the source task's index as the domain label.
    """
    config.validate()
    if not train:
        raise ValueError("train_multitask: no tasks")
    rng = np.random.default_rng(config.seed)
    return _run(model, train, dev, config, trainable_names(model, config), config.max_epochs,
                use_dc=True, rng=rng, on_step=on_step)


def finetune(model: Model, task: str, train: Sequence[Example], dev: Sequence[Example],
             config: TrainConfig, epochs: Optional[int] = None) -> TrainResult:
    """Train only ``task``'s own parameters with every shared parameter frozen.

    The pre-fine-tuning state competes in dev selection, so dev accuracy never drops.
    """
    model.task(task)
    config.validate()
    own = model.task_param_names(task)
    rng = np.random.default_rng(config.seed + 1)
    return _run(model, {task: train}, {task: dev}, config, own,
                config.finetune_epochs if epochs is None else epochs,
                use_dc=False, rng=rng, initial_eval=True)


@dataclass
class TransferResult:
    test_accuracy: dict[str, float]
    dev_accuracy: dict[str, float]
    frozen_checksum_before: str
    frozen_checksum_after: str
    logs: dict[str, TrainResult]


def transfer(model: Model, tasks: Sequence[TaskSpec],
             train: dict[str, Sequence[Example]], dev: dict[str, Sequence[Example]],
             test: dict[str, Sequence[Example]], config: TrainConfig,
             expected_scheme: Optional[str] = None) -> TransferResult:
    """Attach ``tasks`` to a trained model and fit only their new parameters."""
    if expected_scheme is not None and expected_scheme != model.scheme:
        raise ValueError(f"checkpoint scheme {model.scheme} does not match {expected_scheme}")
    config.validate()
    frozen = list(model.params)
    before = param_checksum(model, frozen)
    logs, test_acc, dev_acc = {}, {}, {}
    for i, spec in enumerate(tasks):
        model.add_task(spec, seed=config.seed + 100 + i)
        own = model.task_param_names(spec.name)
        rng = np.random.default_rng(config.seed + 200 + i)
        logs[spec.name] = _run(model, {spec.name: train[spec.name]}, {spec.name: dev[spec.name]},
                               config, own, config.max_epochs, use_dc=False, rng=rng,
                               initial_eval=True)
        dev_acc[spec.name] = evaluate(model, spec.name, dev[spec.name])
        test_acc[spec.name] = evaluate(model, spec.name, test[spec.name])
    after = param_checksum(model, frozen)
    return TransferResult(test_acc, dev_acc, before, after, logs)


def grid_search(run: Callable[[TrainConfig], float], base: TrainConfig,
                grid: dict[str, Sequence]) -> tuple[TrainConfig, list[tuple[TrainConfig, float]]]:
    """Evaluate ``run`` (returning dev accuracy) on every grid point; best first wins ties."""
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(grid) - known
    if unknown:
        raise ValueError(f"unknown grid keys: {sorted(unknown)}")
    keys = list(grid)
    results = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        cfg = replace(base, **dict(zip(keys, combo)))
        results.append((cfg, float(run(cfg))))
    best = max(results, key=lambda r: r[1])[0] if results else base
    return best, results
