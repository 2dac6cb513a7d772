"""Multi-task model: five information-sharing schemes over one shared encoder.

Schemes
-------
FS   fully shared BiLSTM, mean-pooled sentence vector per task.
SSP  shared states feed a private BiLSTM per task (stacked).
PSP  shared and private BiLSTMs read the embeddings side by side (parallel);
     the task representation concatenates both pooled vectors.
SA   shared states, static learned query per task.
DA   shared states, per-task query generated from a domain-classifier context.

Parameter names follow ``component/task/tensor`` where ``task`` is a task name
or ``shared``:

    encoder/shared/embedding            [V x d_e]
    encoder/shared/{fwd,bwd}.{W,U,b}    shared BiLSTM
    encoder/<task>/{fwd,bwd}.{W,U,b}    private BiLSTM (SSP, PSP)
    query/<task>/q                      static query (SA)
    query/<task>/b                      dynamic query bias (DA)
    query/shared/U                      dynamic query projection (DA)
    domain/shared/{q,W,b}               domain classifier (DA)
    head/<task>/{W,b}                   output layer
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from taskattn.attention import (DomainAttnParams, DynamicQueryParams, attend,
                                domain_attend, dynamic_query)
from taskattn.encoder import BiLSTM, LSTMCell, Vocab, bilstm_states
from taskattn.tensor import Graph, ShapeError, Tensor

SCHEMES = ("FS", "SSP", "PSP", "SA", "DA")
CLASSIFICATION = "classification"
LABELING = "labeling"
CHECKPOINT_FORMAT = "taskattn-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class TaskSpec:
    name: str
    labels: list[str]
    kind: str = CLASSIFICATION
    weight: float = 1.0

    def __post_init__(self):
        if not self.name or "/" in self.name or self.name == "shared":
            raise ValueError(f"invalid task name {self.name!r}")
        if self.kind not in (CLASSIFICATION, LABELING):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if len(self.labels) < 2:
            raise ValueError(f"task {self.name!r} needs at least two labels")
        if not self.weight > 0:
            raise ValueError(f"task {self.name!r}: loss weight must be positive")

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "labels": list(self.labels),
                "weight": self.weight}


@dataclass
class Forward:
    """Result of one forward pass for one task."""

    rep: Tensor
    states: Tensor
    alpha: Optional[Tensor] = None
    dc_alpha: Optional[Tensor] = None
    dc_probs: Optional[Tensor] = None


def rep_width(scheme: str, d_h: int) -> int:
    return 4 * d_h if scheme == "PSP" else 2 * d_h


def _bilstm_shapes(prefix: str, d_in: int, d_h: int) -> dict[str, tuple]:
    out = {}
    for direction in ("fwd", "bwd"):
        out[f"{prefix}/{direction}.W"] = (4 * d_h, d_in)
        out[f"{prefix}/{direction}.U"] = (4 * d_h, d_h)
        out[f"{prefix}/{direction}.b"] = (4 * d_h,)
    return out


def param_layout(scheme: str, tasks: Sequence[TaskSpec], vocab_size: int,
                 d_e: int = 200, d_h: int = 200,
                 n_domains: Optional[int] = None) -> dict[str, tuple]:
    """Ordered mapping of parameter name to shape, without allocating anything.

    ``n_domains`` sizes the DA domain classifier; it defaults to the number of
    classification tasks.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    names = [t.name for t in tasks]
    if len(set(names)) != len(names):
        raise ValueError("task names must be unique")
    width = 2 * d_h
    classes = [t for t in tasks if t.kind == CLASSIFICATION]
    layout: dict[str, tuple] = {"encoder/shared/embedding": (vocab_size, d_e)}
    layout.update(_bilstm_shapes("encoder/shared", d_e, d_h))
    if scheme in ("SSP", "PSP"):
        d_in = width if scheme == "SSP" else d_e
        for t in classes:
            layout.update(_bilstm_shapes(f"encoder/{t.name}", d_in, d_h))
    if scheme == "SA":
        for t in classes:
            layout[f"query/{t.name}/q"] = (width,)
    if scheme == "DA":
        layout["query/shared/U"] = (width, width)
        for t in classes:
            layout[f"query/{t.name}/b"] = (width,)
        layout["domain/shared/q"] = (width,)
        k = len(classes) if n_domains is None else n_domains
        layout["domain/shared/W"] = (k, width)
        layout["domain/shared/b"] = (k,)
    for t in tasks:
        w = rep_width(scheme, d_h) if t.kind == CLASSIFICATION else width
        layout[f"head/{t.name}/W"] = (t.n_labels, w)
        layout[f"head/{t.name}/b"] = (t.n_labels,)
    return layout


def count_params(model: Union["Model", dict], include_embeddings: bool = False) -> int:
    """Number of trainable scalars in a model or a :func:`param_layout`."""
    if isinstance(model, Model):
        shapes = {name: t.shape for name, t in model.params.items()}
    else:
        shapes = model
    total = 0
    for name, shape in shapes.items():
        if name == "encoder/shared/embedding" and not include_embeddings:
            continue
        total += int(np.prod(shape))
    return total


class Model:
    def __init__(self, scheme: str, tasks: Sequence[TaskSpec], vocab: Vocab,
                 d_e: int = 200, d_h: int = 200, seed: int = 0, init_range: float = 0.1,
                 dropout: float = 0.5, embedding: Optional[np.ndarray] = None,
                 params: Optional[dict[str, np.ndarray]] = None,
                 dc_domains: Optional[Sequence[str]] = None):
        if not 0.0 <= dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {dropout}")
        self.scheme = scheme
        self.tasks = list(tasks)
        self.vocab = vocab
        self.d_e = d_e
        self.d_h = d_h
        self.init_range = init_range
        self.dropout = dropout
        # domains the DA classifier predicts; fixed once built, transfer tasks are not added
        self.dc_domains = list(dc_domains) if dc_domains is not None else [
            t.name for t in self.tasks if t.kind == CLASSIFICATION]
        self.meta: dict = {}
        layout = self.layout()
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        for name, shape in layout.items():
            if params is not None:
                if name not in params:
                    raise CheckpointError(f"missing parameter {name!r}")
                values = np.asarray(params[name], dtype=np.float64)
                if values.shape != shape:
                    raise CheckpointError(f"{name}: stored shape {values.shape}, expected {shape}")
            elif name == "encoder/shared/embedding" and embedding is not None:
                values = np.array(embedding, dtype=np.float64)
                if values.shape != shape:
                    raise ShapeError(f"embedding matrix {values.shape} does not fit {shape}")
            else:
                values = rng.uniform(-init_range, init_range, size=shape)
            self.params[name] = Tensor(values, requires_grad=True, name=name)

    # -- structure ----------------------------------------------------------

    @property
    def task_names(self) -> list[str]:
        return [t.name for t in self.tasks]

    @property
    def domains(self) -> list[TaskSpec]:
        """Classification tasks in order."""
        return [t for t in self.tasks if t.kind == CLASSIFICATION]

    def layout(self) -> dict[str, tuple]:
        return param_layout(self.scheme, self.tasks, len(self.vocab), self.d_e, self.d_h,
                            n_domains=len(self.dc_domains))

    def task(self, name: str) -> TaskSpec:
        for t in self.tasks:
            if t.name == name:
                return t
        raise KeyError(f"unknown task {name!r}")

    def domain_index(self, name: str) -> int:
        """Domain-classifier label of a task's examples."""
        try:
            return self.dc_domains.index(name)
        except ValueError:
            raise KeyError(f"{name!r} is not a domain of the domain classifier") from None

    def _bilstm(self, prefix: str) -> BiLSTM:
        p = self.params
        return BiLSTM(*(LSTMCell(p[f"{prefix}/{d}.W"], p[f"{prefix}/{d}.U"], p[f"{prefix}/{d}.b"])
                        for d in ("fwd", "bwd")))

    def domain_params(self) -> DomainAttnParams:
        p = self.params
        return DomainAttnParams(p["domain/shared/q"], p["domain/shared/W"], p["domain/shared/b"])

    def query_params(self) -> DynamicQueryParams:
        """Dynamic query parameters; bias ``k`` belongs to ``self.domains[k]``."""
        return DynamicQueryParams(self.params["query/shared/U"],
                                  [self.params[f"query/{t.name}/b"] for t in self.domains])

    def static_queries(self) -> dict[str, np.ndarray]:
        """Per-task query vectors (SA) or query biases (DA) for similarity analysis."""
        key = {"SA": "q", "DA": "b"}.get(self.scheme)
        if key is None:
            raise ValueError(f"scheme {self.scheme} has no task queries")
        return {t.name: self.params[f"query/{t.name}/{key}"].data for t in self.domains}

    def shared_names(self) -> list[str]:
        return [n for n in self.params if n.split("/")[1] == "shared"]

    def task_param_names(self, task: str) -> list[str]:
        return [n for n in self.params if n.split("/")[1] == task]

    def add_task(self, task: TaskSpec, seed: int = 0) -> None:
        """Attach a new task (transfer); its parameters are freshly initialised."""
        if task.name in self.task_names:
            raise ValueError(f"task {task.name!r} already exists")
        self.tasks.append(task)
        rng = np.random.default_rng(seed)
        for name, shape in self.layout().items():
            if name not in self.params:
                self.params[name] = Tensor(rng.uniform(-self.init_range, self.init_range, shape),
                                           requires_grad=True, name=name)

    # -- computation --------------------------------------------------------

    def forward(self, g: Graph, task: Union[str, TaskSpec], tokens: Sequence,
                train: bool = False, rng: Optional[np.random.Generator] = None) -> Forward:
        """Task representation for one sentence (token strings or vocabulary ids)."""
        spec = task if isinstance(task, TaskSpec) else self.task(task)
        if len(tokens) == 0:
            raise ValueError("forward: empty sentence")
        ids = tokens if isinstance(tokens[0], (int, np.integer)) else self.vocab.encode(tokens)
        p = self.params
        emb = g.dropout(g.rows(p["encoder/shared/embedding"], ids), self.dropout, rng, train)
        states = g.dropout(bilstm_states(g, self._bilstm("encoder/shared"), emb),
                           self.dropout, rng, train)
        if spec.kind == LABELING:
            return Forward(rep=states, states=states)
        scheme = self.scheme
        if scheme == "FS":
            return Forward(rep=g.mean_rows(states), states=states)
        if scheme == "SSP":
            private = g.dropout(bilstm_states(g, self._bilstm(f"encoder/{spec.name}"), states),
                                self.dropout, rng, train)
            return Forward(rep=g.mean_rows(private), states=states)
        if scheme == "PSP":
            private = g.dropout(bilstm_states(g, self._bilstm(f"encoder/{spec.name}"), emb),
                                self.dropout, rng, train)
            return Forward(rep=g.concat(g.mean_rows(states), g.mean_rows(private)),
                           states=states)
        if scheme == "SA":
            alpha, c = attend(g, p[f"query/{spec.name}/q"], states)
            return Forward(rep=c, states=states, alpha=alpha)
        if scheme == "DA":
            dc_alpha, c_dc, dc_probs = domain_attend(g, self.domain_params(), states)
            q = self.dynamic_query(g, c_dc, spec.name)
            alpha, c = attend(g, q, states)
            return Forward(rep=c, states=states, alpha=alpha, dc_alpha=dc_alpha,
                           dc_probs=dc_probs)
        raise ValueError(f"unknown scheme {scheme!r}")

    def dynamic_query(self, g: Graph, c_dc: Tensor, task: str) -> Tensor:
        k = [t.name for t in self.domains].index(task)
        return dynamic_query(g, self.query_params(), c_dc, k)

    def predict_probs(self, g: Graph, task: Union[str, TaskSpec], out: Forward) -> Tensor:
        spec = task if isinstance(task, TaskSpec) else self.task(task)
        W, b = self.params[f"head/{spec.name}/W"], self.params[f"head/{spec.name}/b"]
        if spec.kind == LABELING:
            return sequence_label(g, spec, W, b, out.states)
        return classify(g, W, b, out.rep)

    # -- state --------------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, values in state.items():
            self.params[name].data = np.array(values, dtype=np.float64, copy=True)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None


def classify(g: Graph, W: Tensor, b: Tensor, rep: Tensor) -> Tensor:
    """Softmax output layer over a sentence representation."""
    if W.data.ndim != 2 or rep.shape != (W.shape[1],) or b.shape != (W.shape[0],):
        raise ShapeError(f"classify: head {W.shape}/{b.shape} does not fit representation {rep.shape}")
    return g.softmax(g.add(g.matmul(W, rep), b))


def sequence_label(g: Graph, task: TaskSpec, W: Tensor, b: Tensor, states: Tensor) -> Tensor:
    """Independent per-position tag distributions, one row per position."""
    if task.kind != LABELING:
        raise ValueError(f"task {task.name!r} is not a sequence-labeling task")
    if states.data.ndim != 2 or states.shape[1] != W.shape[1]:
        raise ShapeError(f"sequence_label: head {W.shape} does not fit states {states.shape}")
    return g.softmax(g.add_bias(g.matmul(states, g.transpose(W)), b))


def total_loss(g: Graph, batch: Sequence[tuple]) -> Tensor:
    """Weighted cross-entropy summed over ``(task, probs, gold)`` items.

    ``gold`` is a label index for classification, or one tag index per
    position for labeling tasks (averaged over positions). ``task`` may be a
    :class:`TaskSpec` or a bare positive weight.
    """
    if not batch:
        raise ValueError("total_loss: empty batch")
    total = None
    for task, probs, gold in batch:
        weight = task.weight if isinstance(task, TaskSpec) else float(task)
        n = probs.shape[-1]
        if probs.data.ndim == 1:
            y = int(gold)
            if not 0 <= y < n:
                raise IndexError(f"label {y} out of range for {n} classes")
            term = g.scale(g.log(g.pick(probs, y)), -weight)
        else:
            ys = np.asarray(gold, dtype=np.intp)
            if ys.shape != (probs.shape[0],):
                raise ShapeError(f"need {probs.shape[0]} tags, got {ys.shape}")
            if ys.size and (ys.min() < 0 or ys.max() >= n):
                raise IndexError(f"tag out of range for {n} tags")
            term = g.scale(g.sum(g.log(g.pick(probs, ys))), -weight / probs.shape[0])
        total = term if total is None else g.add(total, term)
    return total


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(model: Model, path: Union[str, Path], meta: Optional[dict] = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "scheme": model.scheme,
        "d_e": model.d_e,
        "d_h": model.d_h,
        "init_range": model.init_range,
        "dropout": model.dropout,
        "tasks": [t.to_dict() for t in model.tasks],
        "dc_domains": model.dc_domains,
        "vocab": model.vocab.itos,
        "meta": meta or {},
        "params": {name: {"shape": list(t.shape), "values": t.data.ravel().tolist()}
                   for name, t in model.params.items()},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: Union[str, Path]) -> Model:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    vocab = Vocab(doc["vocab"][2:])
    tasks = [TaskSpec(**t) for t in doc["tasks"]]
    params = {name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
              for name, entry in doc["params"].items()}
    try:
        model = Model(doc["scheme"], tasks, vocab, doc["d_e"], doc["d_h"],
                      init_range=doc["init_range"], dropout=doc["dropout"], params=params,
                      dc_domains=doc["dc_domains"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
    model.meta = doc["meta"]
    return model
