"""Acceptance criteria 1-10, each printing one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
The synthetic experiments (criteria 5-8) share one seeded 4-domain corpus and
take a few minutes on a laptop CPU.
"""

import copy
import io
import sys
import time
from contextlib import redirect_stdout

import numpy as np
import pytest

from taskattn.cli import run
from taskattn.data import SyntheticTaskConfig, TextExample, gen_synthetic, shuffle_labels, split
from taskattn.encoder import Vocab
from taskattn.evalviz import attention_mass, attention_records
from taskattn.gradcheck import MODEL_TOL, OP_TOL, run_suite
from taskattn.mtl import LABELING, SCHEMES, Model, TaskSpec
from taskattn.tensor import Graph
from taskattn.trainer import (TrainConfig, evaluate, evaluate_domain, param_checksum,
                              train_multitask, transfer)

RESULTS = {}

# desk-scale settings for the synthetic experiments
SYNTH = SyntheticTaskConfig(seed=0)
TRAIN = TrainConfig(d_e=32, d_h=32, lr=0.01, max_epochs=20, seed=0)


def report(n, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {title} | {detail}"
    RESULTS[n] = line
    print(line)
    return ok


@pytest.fixture(scope="module", autouse=True)
def summary(request):
    yield
    reporter = request.config.pluginmanager.getplugin("terminalreporter")
    write = reporter.write_line if reporter is not None else print
    write("")
    write("acceptance summary")
    for n in sorted(RESULTS):
        write(RESULTS[n])


# -- shared synthetic experiments --------------------------------------------------

@pytest.fixture(scope="module")
def corpus():
    return gen_synthetic(SYNTH)


def _train(corpus, scheme, domains, aux=False):
    seqs = [ex.tokens for t in domains for ex in t.train]
    specs = [TaskSpec(t.name, t.labels) for t in domains]
    train = {t.name: t.train for t in domains}
    dev = {t.name: t.dev for t in domains}
    if aux:
        lab = corpus.labeling
        seqs += [s.tokens for s in lab.train]
        specs.append(TaskSpec(lab.name, lab.tags, kind=LABELING))
        train[lab.name], dev[lab.name] = lab.train, lab.dev
    model = Model(scheme, specs, Vocab.build(seqs), TRAIN.d_e, TRAIN.d_h, seed=TRAIN.seed,
                  init_range=TRAIN.init_range, dropout=TRAIN.dropout)
    start = time.perf_counter()
    train_multitask(model, train, dev, TRAIN)
    return model, time.perf_counter() - start


@pytest.fixture(scope="module")
def mtl_runs(corpus):
    return {s: _train(corpus, s, corpus.domains) for s in ("SA", "DA")}


def _test_accuracies(model, corpus):
    return [evaluate(model, t.name, t.test) for t in corpus.domains]


# -- 1 ------------------------------------------------------------------------

def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    results = run_suite(seed=0)
    elapsed = time.perf_counter() - start
    schemes = {r.name.split("[")[1].split("]")[0] for r in results if r.name.startswith("model[")}
    tolerances_ok = all(r.tolerance == (MODEL_TOL if r.name.startswith(("model", "bilstm"))
                                        else OP_TOL) for r in results)
    failed = [r.line() for r in results if not r.passed]
    worst = max(r.max_rel_error for r in results)
    ok = not failed and schemes == set(SCHEMES) and tolerances_ok and elapsed < 60
    assert report(1, "gradient suite", ok,
                  f"{len(results) - len(failed)}/{len(results)} checks pass, worst rel err "
                  f"{worst:.1e}, {elapsed:.1f}s (< 60s)"), failed


# -- 2 ------------------------------------------------------------------------

def test_criterion_2_degeneracies():
    rng = np.random.default_rng(0)
    words = [f"w{i}" for i in range(30)]
    vocab = Vocab(words)
    tasks = [TaskSpec(f"t{k}", ["neg", "pos"]) for k in range(3)]
    models = {s: Model(s, tasks, vocab, d_e=16, d_h=16, seed=1, init_range=0.5)
              for s in ("FS", "SA", "DA")}
    for s in ("SA", "DA"):
        for name, t in models["FS"].params.items():
            if name in models[s].params:
                models[s].params[name].data = t.data.copy()
    sa, da, fs = models["SA"], models["DA"], models["FS"]
    for t in tasks:
        sa.params[f"query/{t.name}/q"].data[:] = 0.0
    sentences = [[str(w) for w in rng.choice(words, size=rng.integers(1, 15))] for _ in range(50)]
    gap = max(float(np.max(np.abs(sa.forward(Graph(), t.name, s).rep.data
                                  - fs.forward(Graph(), t.name, s).rep.data)))
              for s in sentences for t in tasks)
    # now nonzero static queries, copied into the DA biases with U = 0
    for t in tasks:
        sa.params[f"query/{t.name}/q"].data = rng.uniform(-1, 1, size=32)
        da.params[f"query/{t.name}/b"].data = sa.params[f"query/{t.name}/q"].data.copy()
    da.params["query/shared/U"].data[:] = 0.0
    bitwise = all(sa.forward(Graph(), t.name, s).rep.data.tobytes()
                  == da.forward(Graph(), t.name, s).rep.data.tobytes()
                  for s in sentences for t in tasks)
    ok = gap <= 1e-12 and bitwise
    assert report(2, "degeneracy equivalences", ok,
                  f"max |SA(q=0) - FS| = {gap:.1e} (<= 1e-12); DA(U=0, b=q) == SA bitwise: {bitwise}")


# -- 3 ------------------------------------------------------------------------

TABLE_ROW = {"FS": 644_000, "SSP": 16_074_000, "PSP": 10_972_000, "SA": 668_000, "DA": 818_000}


def test_criterion_3_parameter_counts():
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = run(["param-count", "--d_e", "200", "--d_h", "200", "--param_tasks", "16"])
    counts = {}
    for line in buf.getvalue().splitlines():
        parts = line.split()
        if parts and parts[0] in TABLE_ROW:
            counts[parts[0]] = int(parts[1].replace(",", ""))
    errors = {s: abs(counts.get(s, 0) - ref) / ref for s, ref in TABLE_ROW.items()}
    ok = code == 0 and all(e < 0.05 for e in errors.values())
    detail = ", ".join(f"{s} {counts.get(s, 0) / 1000:,.0f}K ({100 * errors[s]:+.1f}%)"
                       for s in TABLE_ROW)
    assert report(3, "parameter reconciliation", ok, detail)


# -- 4 ------------------------------------------------------------------------

def test_criterion_4_attention_invariants():
    rng = np.random.default_rng(4)
    vocab = Vocab([f"w{i}" for i in range(40)])
    tasks = [TaskSpec(f"t{k}", ["neg", "pos"]) for k in range(3)]
    worst_sum, negatives, hull_violations, n_dists = 0.0, 0, 0, 0
    for scheme in SCHEMES:
        model = Model(scheme, tasks, vocab, d_e=8, d_h=6, seed=int(rng.integers(1 << 30)),
                      init_range=1.0)
        for _ in range(1000):
            ids = [int(i) for i in rng.integers(2, len(vocab), size=rng.integers(1, 25))]
            task = tasks[int(rng.integers(len(tasks)))].name
            out = model.forward(Graph(), task, ids)
            S = out.states.data
            lo, hi = S.min(axis=0) - 1e-12, S.max(axis=0) + 1e-12
            if scheme in ("SA", "DA"):
                pairs = [(out.alpha.data, out.rep.data)]
                if out.dc_alpha is not None:
                    pairs.append((out.dc_alpha.data, out.dc_alpha.data @ S))
            else:
                # mean pooling is the uniform distribution over positions
                uniform = np.full(len(ids), 1.0 / len(ids))
                pairs = [(uniform, out.states.data.mean(axis=0))]
                if scheme == "FS":
                    pairs[0] = (uniform, out.rep.data)
            for alpha, c in pairs:
                n_dists += 1
                negatives += int(np.any(alpha < 0))
                worst_sum = max(worst_sum, abs(alpha.sum() - 1.0))
                hull_violations += int(np.any(c < lo) or np.any(c > hi))
    ok = negatives == 0 and worst_sum < 1e-9 and hull_violations == 0
    assert report(4, "attention invariants", ok,
                  f"{n_dists} distributions over 5 schemes x 1000 inputs: {negatives} negative, "
                  f"max |sum-1| {worst_sum:.1e}, {hull_violations} hull violations")


# -- 5 ------------------------------------------------------------------------

def test_criterion_5_synthetic_end_to_end(corpus, mtl_runs):
    sa, sa_time = mtl_runs["SA"]
    da, da_time = mtl_runs["DA"]
    sa_acc, da_acc = _test_accuracies(sa, corpus), _test_accuracies(da, corpus)
    dc = evaluate_domain(da, {t.name: t.test for t in corpus.domains})
    total = sa_time + da_time
    ok = min(sa_acc) >= 0.95 and min(da_acc) >= 0.95 and dc >= 0.95 and total < 600
    assert report(5, "synthetic end-to-end", ok,
                  f"SA per-domain {[round(a, 3) for a in sa_acc]}, DA per-domain "
                  f"{[round(a, 3) for a in da_acc]}, DC {dc:.3f}, {TRAIN.max_epochs} epochs, "
                  f"train time {total:.0f}s (< 600s)")


# -- 6 ------------------------------------------------------------------------

def test_criterion_6_attention_semantics(corpus, mtl_runs):
    S, D = corpus.sentiment_words, corpus.domain_words
    test = {t.name: t.test for t in corpus.domains}
    own = lambda r: r.task == r.source_task
    records = attention_records(mtl_runs["DA"][0], test)
    s_sent, d_sent = attention_mass(records, S, own), attention_mass(records, D, own)
    s_dc = attention_mass(records, S, lambda r: r.task == "DC")
    d_dc = attention_mass(records, D, lambda r: r.task == "DC")
    sa_records = attention_records(mtl_runs["SA"][0], test)
    sa_s, sa_d = attention_mass(sa_records, S, own), attention_mass(sa_records, D, own)
    ok = s_sent >= 2 * d_sent and d_dc > s_dc
    assert report(6, "attention semantics", ok,
                  f"DA sentiment tasks: mass on sentiment {s_sent:.3f} vs domain {d_sent:.3f} "
                  f"(ratio {s_sent / max(d_sent, 1e-12):.1f} >= 2); DC: domain {d_dc:.3f} > "
                  f"sentiment {s_dc:.3f}; SA (no DC, informational): {sa_s:.3f} vs {sa_d:.3f}")


# -- 7 ------------------------------------------------------------------------

def _transfer_run(corpus, scheme):
    sources, target = corpus.domains[:3], corpus.domains[3]
    model, _ = _train(corpus, scheme, sources)
    control_model = copy.deepcopy(model)
    spec = TaskSpec(target.name, target.labels)
    res = transfer(model, [spec], {target.name: target.train}, {target.name: target.dev},
                   {target.name: target.test}, TRAIN, expected_scheme=scheme)
    before = param_checksum(control_model)
    # the control task's labels are independent of the text in every split
    control = transfer(control_model, [spec],
                       {target.name: shuffle_labels(target.train, seed=1)},
                       {target.name: shuffle_labels(target.dev, seed=2)},
                       {target.name: shuffle_labels(target.test, seed=3)}, TRAIN,
                       expected_scheme=scheme)
    invariant = (res.frozen_checksum_before == res.frozen_checksum_after
                 and control.frozen_checksum_before == before == control.frozen_checksum_after)
    leak = evaluate(control_model, target.name, target.test)
    return res.test_accuracy[target.name], invariant, control.test_accuracy[target.name], leak


def test_criterion_7_transfer(corpus):
    parts, ok = [], True
    for scheme in ("DA", "SA"):
        acc, invariant, ctl, leak = _transfer_run(corpus, scheme)
        ok &= acc >= 0.90 and invariant and abs(ctl - 0.5) <= 0.1
        parts.append(f"{scheme}: held-out acc {acc:.3f} (>= 0.90), frozen checksum invariant "
                     f"{invariant}, label-shuffled control {ctl:.3f} (0.5 +- 0.1; "
                     f"{leak:.3f} against true labels, informational)")
    assert report(7, "transfer protocol", ok, "; ".join(parts))


# -- 8 ------------------------------------------------------------------------

def test_criterion_8_auxiliary_task(corpus, mtl_runs):
    parts, ok = [], True
    for scheme in ("SA", "DA"):
        base = float(np.mean(_test_accuracies(mtl_runs[scheme][0], corpus)))
        model, _ = _train(corpus, scheme, corpus.domains, aux=True)
        joint = float(np.mean(_test_accuracies(model, corpus)))
        tag_acc = evaluate(model, corpus.labeling.name, corpus.labeling.test)
        ok &= joint >= base - 0.01 and tag_acc >= 0.95
        parts.append(f"{scheme}: mean sentiment acc {joint:.3f} joint vs {base:.3f} alone "
                     f"(drop <= 0.01), labeling per-token acc {tag_acc:.3f} (>= 0.95)")
    assert report(8, "auxiliary-task protocol", ok, "; ".join(parts))


# -- 9 ------------------------------------------------------------------------

def _snapshot(root):
    return {p: p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _restore(root, state):
    for p in list(root.rglob("*")):
        if p.is_file() and p not in state:
            p.unlink()
    for p, data in state.items():
        p.write_bytes(data)


def _invoke(argv):
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = run(argv)
    return code, buf.getvalue()


def test_criterion_9_determinism(tmp_path):
    data, out = tmp_path / "data", tmp_path / "out"
    small = ["--d_e", "8", "--d_h", "8", "--max_epochs", "2", "--lr", "0.01", "--seed", "5"]
    base = ["--data_dir", str(data), "--out_dir", str(out)]
    commands = [
        ["gen-synthetic", "--data_dir", str(data), "--synth_n_train", "60", "--synth_n_dev", "20",
         "--synth_n_test", "20", "--synth_n_labeling_train", "40", "--synth_n_labeling_dev", "10",
         "--synth_n_labeling_test", "10", "--synth_seed", "2"],
        ["train", *base, *small, "--scheme", "DA", "--tasks", "dom0,dom1,dom2",
         "--aux_conll", str(data / "lextag"), "--aux_name", "lextag", "--finetune_epochs", "1"],
        ["eval", *base, "--aux_conll", str(data / "lextag")],
        ["export-attention", *base],
        ["similarity", *base],
        ["finetune", *base, *small, "--tasks", "dom1"],
        ["transfer", *base, *small, "--transfer_tasks", "dom3"],
        ["param-count"],
        ["gradcheck"],
    ]
    failures = []
    for argv in commands:
        # both runs start from the same files, so any difference comes from the command
        start = _snapshot(tmp_path)
        outcomes = []
        for _ in range(2):
            _restore(tmp_path, start)
            code, stdout = _invoke(argv)
            outcomes.append((code, stdout, _snapshot(tmp_path)))
        if outcomes[0][0] != 0:
            failures.append(f"{argv[0]} exited {outcomes[0][0]}")
        elif outcomes[0] != outcomes[1]:
            failures.append(f"{argv[0]} not reproducible")
    n_files = len(_snapshot(tmp_path))
    assert report(9, "determinism", not failures,
                  f"{len(commands)} commands each run twice: identical exit codes, stdout and "
                  f"{n_files} artifact files" + (f"; {failures}" if failures else "")), failures


# -- 10 -----------------------------------------------------------------------

def test_criterion_10_split_contract():
    rng = np.random.default_rng(10)
    seeds = [0, 1, *rng.integers(0, 2**31, size=18).tolist()]
    failures = []
    for seed in seeds:
        # identical contents, so disjointness is checked by object identity
        data = [TextExample(["same"], 0) for _ in range(2000)]
        parts = split(data, seed=int(seed))
        ids = [id(x) for p in parts for x in p]
        if tuple(map(len, parts)) != (1400, 200, 400) or sorted(ids) != sorted(map(id, data)):
            failures.append(seed)
    assert report(10, "data-split contract", not failures,
                  f"{len(seeds)} seeded splits of 2000 examples: 1400/200/400 disjoint covers"
                  + (f"; failing seeds {failures}" if failures else ""))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
