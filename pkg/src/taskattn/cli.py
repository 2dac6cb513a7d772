"""``taskattn`` command-line entry point.

Exit codes: 0 success, 1 configuration or usage error, 2 data error,
3 failed check (gradient check, or a frozen checksum that moved).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from taskattn import BACKEND
from taskattn.config import KEYS, Config, ConfigError, dump, resolve
from taskattn.data import (DataError, LabelingData, TaskData, gen_synthetic, load_classification,
                           load_conll, load_embeddings, shuffle_labels, split, write_synthetic)
from taskattn.encoder import Vocab
from taskattn.evalviz import (export_attention, query_similarity, write_accuracy_table,
                              write_similarity_csv)
from taskattn.gradcheck import run_suite
from taskattn.mtl import (LABELING, SCHEMES, CheckpointError, Model, TaskSpec, count_params,
                          load_checkpoint, param_layout, save_checkpoint)
from taskattn.trainer import (DC_TASK, evaluate, evaluate_domain, finetune, train_multitask,
                              transfer, write_log)

log = logging.getLogger("taskattn.cli")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3
SPLITS = ("train", "dev", "test")
CHECKPOINT_NAME = "model.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- data ---------------------------------------------------------------------

def discover_tasks(data_dir: Path) -> list[str]:
    if not data_dir.is_dir():
        raise DataError(f"data directory {data_dir} does not exist")
    names = set()
    for p in data_dir.glob("*.jsonl"):
        stem = p.name[:-len(".jsonl")]
        base, _, part = stem.rpartition(".")
        names.add(base if part in SPLITS and base else stem)
    if not names:
        raise DataError(f"no *.jsonl task files in {data_dir}")
    return sorted(names)


def load_task(data_dir: Path, name: str, split_seed: int = 0,
              labels: Optional[list[str]] = None) -> TaskData:
    """``<name>.{train,dev,test}.jsonl``, or ``<name>.jsonl`` split 70/10/20."""
    labels = [] if labels is None else list(labels)
    parts = [data_dir / f"{name}.{s}.jsonl" for s in SPLITS]
    if all(p.is_file() for p in parts):
        train, dev, test = (load_classification(p, 0, labels)[0] for p in parts)
    elif (data_dir / f"{name}.jsonl").is_file():
        examples, _ = load_classification(data_dir / f"{name}.jsonl", 0, labels)
        train, dev, test = split(examples, seed=split_seed)
    else:
        raise DataError(f"no data for task {name!r} in {data_dir}")
    if len(labels) < 2:
        raise DataError(f"task {name!r} has fewer than two labels")
    return TaskData(name, labels, train, dev, test)


def load_aux(cfg: Config, tags: Optional[list[str]] = None) -> Optional[LabelingData]:
    run = cfg.run
    if not run.aux_conll:
        return None
    tags = [] if tags is None else list(tags)
    path = Path(run.aux_conll)
    if path.is_file():
        seqs, _ = load_conll(path, run.aux_column, tags)
        train, dev, test = split(seqs, seed=run.split_seed)
    else:
        parts = [Path(f"{run.aux_conll}.{s}.conll") for s in SPLITS]
        missing = [str(p) for p in parts if not p.is_file()]
        if missing:
            raise DataError(f"auxiliary data not found: {', '.join(missing)}")
        train, dev, test = (load_conll(p, run.aux_column, tags)[0] for p in parts)
    return LabelingData(run.aux_name, tags, train, dev, test)


def _checkpoint(cfg: Config) -> Model:
    path = cfg.run.checkpoint or str(Path(cfg.run.out_dir) / CHECKPOINT_NAME)
    if not Path(path).is_file():
        raise DataError(f"checkpoint {path} not found")
    return load_checkpoint(path)


def _model_data(cfg: Config, model: Model) -> dict[str, TaskData]:
    data_dir = Path(cfg.run.data_dir)
    out = {}
    for spec in model.domains:
        data = load_task(data_dir, spec.name, cfg.run.split_seed, spec.labels)
        if data.labels != spec.labels:
            raise DataError(f"task {spec.name!r}: labels {data.labels[len(spec.labels):]} "
                            "are unknown to the checkpoint")
        out[spec.name] = data
    return out


def _out_dir(cfg: Config) -> Path:
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _meta(cfg: Config) -> dict:
    # output locations do not affect the model, so reruns elsewhere stay byte-identical
    return {"config": {k: v for k, v in dump(cfg).items() if k not in ("out_dir", "checkpoint")}}


def _report(rows: dict[str, dict[str, float]]) -> None:
    for task, accs in rows.items():
        print(task, " ".join(f"{k}={v:.4f}" for k, v in accs.items()))


# -- commands -------------------------------------------------------------------

def cmd_train(cfg: Config) -> int:
    run, tc = cfg.run, cfg.train
    data_dir = Path(run.data_dir)
    names = run.tasks or discover_tasks(data_dir)
    tasks = [load_task(data_dir, n, run.split_seed) for n in names]
    aux = load_aux(cfg)
    if aux is not None and aux.name in names:
        raise ConfigError(f"aux_name {aux.name!r} clashes with a classification task")
    seqs = [ex.tokens for t in tasks for ex in t.train]
    if aux is not None:
        seqs += [s.tokens for s in aux.train]
    vocab = Vocab.build(seqs, run.min_count)
    specs = [TaskSpec(t.name, t.labels) for t in tasks]
    train = {t.name: t.train for t in tasks}
    dev = {t.name: t.dev for t in tasks}
    if aux is not None:
        specs.append(TaskSpec(aux.name, aux.tags, kind=LABELING, weight=run.aux_weight))
        train[aux.name], dev[aux.name] = aux.train, aux.dev
    embedding = None
    if run.embeddings:
        embedding = load_embeddings(run.embeddings, vocab, tc.d_e, tc.seed, tc.init_range)
    model = Model(run.scheme, specs, vocab, tc.d_e, tc.d_h, seed=tc.seed,
                  init_range=tc.init_range, dropout=tc.dropout, embedding=embedding)
    log.info("train scheme=%s tasks=%s vocab=%d params=%d backend=%s", run.scheme,
             ",".join(model.task_names), len(vocab), count_params(model), BACKEND)
    result = train_multitask(model, train, dev, tc)
    rows, offset = list(result.log), result.steps
    if tc.finetune_epochs:
        for name in model.task_names:
            ft = finetune(model, name, train[name], dev[name], tc)
            rows += [replace(r, step=r.step + offset) for r in ft.log]
            offset += ft.steps
    out = _out_dir(cfg)
    write_log(rows, out / "train_log.csv")
    save_checkpoint(model, out / CHECKPOINT_NAME, _meta(cfg))
    test = {t.name: t.test for t in tasks}
    if aux is not None:
        test[aux.name] = aux.test
    table = {n: {"dev": evaluate(model, n, dev[n]), "test": evaluate(model, n, test[n])}
             for n in model.task_names}
    if run.scheme == "DA":
        table[DC_TASK] = {"dev": evaluate_domain(model, {t.name: t.dev for t in tasks}),
                          "test": evaluate_domain(model, {t.name: t.test for t in tasks})}
    write_accuracy_table(out / "accuracy.csv", table)
    _report(table)
    log.info("train done steps=%d best_dev=%.4f out=%s", result.steps, result.best_dev, out)
    return EXIT_OK


def cmd_eval(cfg: Config) -> int:
    model = _checkpoint(cfg)
    data = _model_data(cfg, model)
    table = {n: {"dev": evaluate(model, n, d.dev), "test": evaluate(model, n, d.test)}
             for n, d in data.items()}
    labeling = [t for t in model.tasks if t.kind == LABELING]
    if labeling and cfg.run.aux_conll:
        spec = labeling[0]
        aux = load_aux(cfg, spec.labels)
        table[spec.name] = {"dev": evaluate(model, spec.name, aux.dev),
                            "test": evaluate(model, spec.name, aux.test)}
    if model.scheme == "DA":
        known = {n: d for n, d in data.items() if n in model.dc_domains}
        table[DC_TASK] = {"dev": evaluate_domain(model, {n: d.dev for n, d in known.items()}),
                          "test": evaluate_domain(model, {n: d.test for n, d in known.items()})}
    write_accuracy_table(_out_dir(cfg) / "eval.csv", table)
    _report(table)
    return EXIT_OK


def cmd_finetune(cfg: Config) -> int:
    model = _checkpoint(cfg)
    data = _model_data(cfg, model)
    names = cfg.run.tasks or list(data)
    epochs = cfg.train.finetune_epochs or cfg.train.max_epochs
    rows, offset, table = [], 0, {}
    for name in names:
        if name not in data:
            raise ConfigError(f"task {name!r} is not a classification task of the checkpoint")
        ft = finetune(model, name, data[name].train, data[name].dev, cfg.train, epochs)
        rows += [replace(r, step=r.step + offset) for r in ft.log]
        offset += ft.steps
        table[name] = {"dev": evaluate(model, name, data[name].dev),
                       "test": evaluate(model, name, data[name].test)}
    out = _out_dir(cfg)
    write_log(rows, out / "finetune_log.csv")
    save_checkpoint(model, out / CHECKPOINT_NAME, _meta(cfg))
    write_accuracy_table(out / "finetune.csv", table)
    _report(table)
    return EXIT_OK


def cmd_transfer(cfg: Config) -> int:
    run = cfg.run
    if not run.transfer_tasks:
        raise ConfigError("transfer needs transfer_tasks")
    model = _checkpoint(cfg)
    if model.scheme not in ("SA", "DA"):
        raise ConfigError(f"transfer needs an SA or DA checkpoint, got {model.scheme}")
    data_dir = Path(run.data_dir)
    tasks = [load_task(data_dir, n, run.split_seed) for n in run.transfer_tasks]
    train = {t.name: t.train for t in tasks}
    dev = {t.name: t.dev for t in tasks}
    test = {t.name: t.test for t in tasks}
    if run.shuffle_labels:
        train, dev, test = ({n: shuffle_labels(xs, cfg.train.seed + i) for n, xs in part.items()}
                            for i, part in enumerate((train, dev, test)))
    try:
        res = transfer(model, [TaskSpec(t.name, t.labels) for t in tasks], train, dev, test,
                       cfg.train, expected_scheme=run.scheme)
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise
        raise ConfigError(str(exc)) from None
    out = _out_dir(cfg)
    rows = [row for r in res.logs.values() for row in r.log]
    write_log(rows, out / "transfer_log.csv")
    save_checkpoint(model, out / CHECKPOINT_NAME, _meta(cfg))
    table = {n: {"dev": res.dev_accuracy[n], "test": res.test_accuracy[n]} for n in res.test_accuracy}
    write_accuracy_table(out / "transfer.csv", table)
    _report(table)
    print(f"frozen checksum before={res.frozen_checksum_before} after={res.frozen_checksum_after}")
    if res.frozen_checksum_before != res.frozen_checksum_after:
        log.error("frozen parameters changed during transfer")
        return EXIT_CHECK
    return EXIT_OK


def cmd_export_attention(cfg: Config) -> int:
    model = _checkpoint(cfg)
    if model.scheme not in ("SA", "DA"):
        raise ConfigError(f"scheme {model.scheme} has no attention to export")
    data = _model_data(cfg, model)
    path = _out_dir(cfg) / "attention.jsonl"
    n = export_attention(model, {name: d.test for name, d in data.items()}, path)
    print(f"{n} attention records -> {path}")
    return EXIT_OK


def cmd_similarity(cfg: Config) -> int:
    model = _checkpoint(cfg)
    try:
        queries = model.static_queries()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    names = list(queries)
    dist = query_similarity([queries[n] for n in names])
    path = _out_dir(cfg) / "similarity.csv"
    write_similarity_csv(path, names, dist)
    width = max(len(n) for n in names)
    print(" " * width, *(n.rjust(8) for n in names))
    for n, row in zip(names, dist):
        print(n.ljust(width), *(f"{x:8.4f}" for x in row))
    return EXIT_OK


def cmd_param_count(cfg: Config) -> int:
    d_e, d_h, k = cfg.train.d_e, cfg.train.d_h, cfg.run.param_tasks
    tasks = [TaskSpec(f"task{i}", ["neg", "pos"]) for i in range(k)]
    print(f"# d_e={d_e} d_h={d_h} tasks={k} (embeddings excluded)")
    for scheme in SCHEMES:
        n = count_params(param_layout(scheme, tasks, 2, d_e, d_h))
        print(f"{scheme:4s} {n:>12,d}  ({n / 1000:,.0f}K)")
    return EXIT_OK


def cmd_gradcheck(cfg: Config) -> int:
    results = run_suite(cfg.run.gradcheck_seed, log=print)
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def cmd_gen_synthetic(cfg: Config) -> int:
    corpus = gen_synthetic(cfg.synth)
    written = write_synthetic(corpus, cfg.run.data_dir)
    print(f"wrote {len(written)} files to {cfg.run.data_dir}")
    return EXIT_OK


COMMANDS = {
    "train": (cmd_train, "multi-task training; writes checkpoint, log and accuracy table"),
    "eval": (cmd_eval, "dev/test accuracy of a checkpoint"),
    "transfer": (cmd_transfer, "attach new tasks to a frozen checkpoint"),
    "finetune": (cmd_finetune, "train task-specific parameters with shared ones frozen"),
    "export-attention": (cmd_export_attention, "dump attention weights over the test split"),
    "similarity": (cmd_similarity, "pairwise distances between task query vectors"),
    "param-count": (cmd_param_count, "per-scheme parameter counts"),
    "gradcheck": (cmd_gradcheck, "finite-difference gradient suite"),
    "gen-synthetic": (cmd_gen_synthetic, "write the planted-lexicon corpus"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="taskattn", description="Multi-task text classification with "
                     "task-specific attention.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="config file (default: $TASKATTN_CONFIG)")
        for key in KEYS:
            flags = [f"--{key}"]
            if "_" in key:
                flags.append(f"--{key.replace('_', '-')}")
            p.add_argument(*flags, dest=key, metavar="VALUE", help=argparse.SUPPRESS)
    return parser


def _setup_logging() -> None:
    logger = logging.getLogger("taskattn")
    for h in list(logger.handlers):
        logger.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s %(message)s"))
    logger.addHandler(handler)
    logger.setLevel(logging.INFO)
    logger.propagate = False


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"taskattn: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    _setup_logging()
    overrides = {k: getattr(args, k) for k in KEYS if getattr(args, k) is not None}
    try:
        cfg = resolve(args.config, overrides)
        return COMMANDS[args.command][0](cfg)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DataError, CheckpointError, OSError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())
