"""Metrics and plot-ready exports: accuracy tables, query distances, attention dumps."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from taskattn.data import TextExample
from taskattn.mtl import Model
from taskattn.tensor import Graph
from taskattn.trainer import DC_TASK, LogRow

PathLike = Union[str, Path]


def accuracy(predictions: Sequence, golds: Sequence) -> float:
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions for {len(golds)} gold labels")
    if not golds:
        raise ValueError("accuracy of an empty set is undefined")
    return sum(p == g for p, g in zip(predictions, golds)) / len(golds)


def query_similarity(queries: Sequence[np.ndarray]) -> np.ndarray:
    """Pairwise Euclidean distances ``||q_i - q_j||`` (smaller means more similar)."""
    if len(queries) < 2:
        raise ValueError("need at least two query vectors")
    Q = [np.asarray(q, dtype=np.float64).ravel() for q in queries]
    if len({q.shape for q in Q}) != 1:
        raise ValueError(f"query widths differ: {sorted({q.size for q in Q})}")
    Q = np.stack(Q)
    diff = Q[:, None, :] - Q[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    np.fill_diagonal(dist, 0.0)
    return dist


@dataclass
class AttentionRecord:
    task: str
    tokens: list[str]
    alpha: list[float]
    prediction: str
    gold: Optional[str]
    source_task: str

    def __post_init__(self):
        if len(self.alpha) != len(self.tokens):
            raise ValueError("alpha length must equal token count")


def attention_records(model: Model,
                      examples: dict[str, Sequence[TextExample]]) -> list[AttentionRecord]:
    """Attention of every classification task on every example, plus the DC attention for DA.

    ``examples`` maps each example's source task to its examples; ``gold`` is
    only filled where the attending task is the source task (or for DC).
    """
    if model.scheme not in ("SA", "DA"):
        raise ValueError(f"scheme {model.scheme} has no attention to export")
    records = []
    for source, exs in examples.items():
        src_labels = model.task(source).labels
        for ex in exs:
            dc_done = False
            for spec in model.domains:
                g = Graph()
                out = model.forward(g, spec, ex.tokens)
                probs = model.predict_probs(g, spec, out).data
                gold = src_labels[ex.label] if spec.name == source else None
                records.append(AttentionRecord(spec.name, list(ex.tokens), out.alpha.data.tolist(),
                                               spec.labels[int(probs.argmax())], gold, source))
                if out.dc_alpha is not None and not dc_done:
                    dc_done = True
                    pred = model.dc_domains[int(out.dc_probs.data.argmax())]
                    gold_dc = source if source in model.dc_domains else None
                    records.append(AttentionRecord(DC_TASK, list(ex.tokens),
                                                   out.dc_alpha.data.tolist(), pred, gold_dc,
                                                   source))
    return records


def export_attention(model: Model, examples: dict[str, Sequence[TextExample]],
                     path: PathLike) -> int:
    """Write one JSON line per attention record; returns the record count."""
    records = attention_records(model, examples)
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(asdict(r)) + "\n")
    return len(records)


def read_attention(path: PathLike) -> list[AttentionRecord]:
    with open(path, encoding="utf-8") as fh:
        return [AttentionRecord(**json.loads(line)) for line in fh if line.strip()]


def attention_mass(records: Iterable[AttentionRecord], vocabulary: set[str],
                   task_filter=None) -> float:
    """Mean total attention that a record places on tokens from ``vocabulary``."""
    masses = [sum(a for tok, a in zip(r.tokens, r.alpha) if tok in vocabulary)
              for r in records if task_filter is None or task_filter(r)]
    if not masses:
        raise ValueError("no records matched")
    return float(np.mean(masses))


def write_similarity_csv(path: PathLike, names: Sequence[str], matrix: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task", *names])
        for name, row in zip(names, matrix):
            w.writerow([name, *(repr(float(x)) for x in row)])


def write_accuracy_table(path: PathLike, rows: dict[str, dict[str, float]]) -> None:
    """``rows`` maps task -> {split: accuracy}; columns are the union of splits."""
    cols = sorted({c for r in rows.values() for c in r})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task", *cols])
        for task, r in rows.items():
            w.writerow([task, *(repr(r[c]) if c in r else "" for c in cols)])


def convergence_table(log: Sequence[LogRow]) -> tuple[list[str], list[list]]:
    """Pivot a training log to one row per step with a dev-accuracy column per task."""
    tasks = list(dict.fromkeys(r.task for r in log))
    steps = list(dict.fromkeys(r.step for r in log))
    cell = {(r.step, r.task): r.dev_accuracy for r in log}
    rows = [[s, *(cell.get((s, t), float("nan")) for t in tasks)] for s in steps]
    return ["step", *tasks], rows


def write_convergence_csv(path: PathLike, log: Sequence[LogRow]) -> None:
    header, rows = convergence_table(log)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([r[0], *(repr(float(x)) for x in r[1:])])
