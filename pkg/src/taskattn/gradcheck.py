"""Central finite-difference checks of every differentiable operation and scheme."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from taskattn.attention import attend, domain_attend
from taskattn.encoder import Vocab, bilstm_encode, BiLSTM, LSTMCell, lstm_step
from taskattn.mtl import LABELING, SCHEMES, Model, TaskSpec, total_loss
from taskattn.tensor import Graph, Tensor

STEP = 1e-5
OP_TOL = 1e-4
MODEL_TOL = 1e-3
# below this magnitude both gradients count as zero-ish and the error is taken as absolute
REL_FLOOR = 1e-6


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    n_checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: max rel err {self.max_rel_error:.2e} "
                f"(tol {self.tolerance:.0e}, {self.n_checked} entries)")


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return np.abs(analytic - numeric) / scale


def numeric_grad(loss_fn: Callable[[Graph], Tensor], t: Tensor, step: float = STEP) -> np.ndarray:
    out = np.zeros(t.shape)
    flat = t.data.reshape(-1)
    grad = out.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        up = loss_fn(Graph()).item()
        flat[k] = orig - step
        down = loss_fn(Graph()).item()
        flat[k] = orig
        grad[k] = (up - down) / (2 * step)
    return out


def check(name: str, loss_fn: Callable[[Graph], Tensor], params: Iterable[Tensor],
          tolerance: float = OP_TOL, step: float = STEP) -> CheckResult:
    """Compare backward-pass gradients of ``loss_fn`` with central differences."""
    params = list(params)
    for p in params:
        p.grad = None
    g = Graph()
    g.backward(loss_fn(g))
    worst, n = 0.0, 0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros(p.shape)
        numeric = numeric_grad(loss_fn, p, step)
        err = relative_error(analytic, numeric)
        worst = max(worst, float(err.max()) if err.size else 0.0)
        n += err.size
        p.grad = None
    return CheckResult(name, worst, tolerance, n)


def _param(rng, *shape) -> Tensor:
    return Tensor(rng.uniform(-1.0, 1.0, size=shape), requires_grad=True)


def _weighted(g: Graph, x: Tensor, w: np.ndarray) -> Tensor:
    """Scalar probe <w, x> so every output entry influences the loss differently."""
    return g.sum(g.mul(x, Tensor(w)))


def op_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []

    a, b = _param(rng, 3, 4), _param(rng, 4, 2)
    w = rng.normal(size=(3, 2))
    results.append(check("matmul", lambda g: _weighted(g, g.matmul(a, b), w), [a, b]))

    m, v = _param(rng, 3, 4), _param(rng, 4)
    w3 = rng.normal(size=3)
    results.append(check("matvec", lambda g: _weighted(g, g.matmul(m, v), w3), [m, v]))
    u = _param(rng, 3)
    w4 = rng.normal(size=4)
    results.append(check("vecmat", lambda g: _weighted(g, g.matmul(u, m), w4), [u, m]))

    x = _param(rng, 5)
    w5 = rng.normal(size=5)
    results.append(check("softmax", lambda g: _weighted(g, g.softmax(x), w5), [x]))
    xm = _param(rng, 3, 4)
    wm = rng.normal(size=(3, 4))
    results.append(check("softmax_rows", lambda g: _weighted(g, g.softmax(xm), wm), [xm]))
    results.append(check("sigmoid", lambda g: _weighted(g, g.sigmoid(xm), wm), [xm]))
    results.append(check("tanh", lambda g: _weighted(g, g.tanh(xm), wm), [xm]))
    y = _param(rng, 3, 4)
    results.append(check("add", lambda g: _weighted(g, g.add(xm, y), wm), [xm, y]))
    results.append(check("mul", lambda g: _weighted(g, g.mul(xm, y), wm), [xm, y]))
    mask = (rng.random((3, 4)) >= 0.5) / 0.5
    results.append(check("dropout", lambda g: _weighted(
        g, g.dropout(xm, 0.5, None, train=True, mask=mask), wm), [xm]))
    bias = _param(rng, 4)
    results.append(check("add_bias", lambda g: _weighted(g, g.add_bias(xm, bias), wm), [xm, bias]))
    results.append(check("transpose", lambda g: _weighted(g, g.transpose(xm), wm.T), [xm]))
    results.append(check("mean_rows", lambda g: _weighted(g, g.mean_rows(xm), w4), [xm]))
    w8 = rng.normal(size=(3, 8))
    results.append(check("concat", lambda g: _weighted(g, g.concat(xm, y), w8), [xm, y]))
    table = _param(rng, 6, 4)
    results.append(check("rows", lambda g: _weighted(g, g.rows(table, [2, 0, 2]), wm), [table]))
    pos = Tensor(rng.uniform(0.5, 2.0, size=5), requires_grad=True)
    results.append(check("log", lambda g: _weighted(g, g.log(pos), w5), [pos]))
    results.append(check("pick", lambda g: g.scale(g.pick(x, 3), 2.0), [x]))

    T, D, H = 3, 4, 4
    X, W, U, bb = _param(rng, T, D), _param(rng, 4 * H, D), _param(rng, 4 * H, H), _param(rng, 4 * H)
    wh = rng.normal(size=(T, H))
    results.append(check("lstm_forward_dir", lambda g: _weighted(g, g.lstm(X, W, U, bb), wh),
                         [X, W, U, bb]))
    results.append(check("lstm_reverse_dir", lambda g: _weighted(
        g, g.lstm(X, W, U, bb, reverse=True), wh), [X, W, U, bb]))

    cell = LSTMCell(W, U, bb)
    h0, c0, x0 = _param(rng, H), _param(rng, H), _param(rng, D)
    wv = rng.normal(size=H)
    results.append(check("lstm_step", lambda g: g.add(
        _weighted(g, lstm_step(g, h0, c0, x0, cell)[0], wv),
        _weighted(g, lstm_step(g, h0, c0, x0, cell)[1], wv[::-1].copy())),
        [h0, c0, x0, W, U, bb]))

    bil = BiLSTM(LSTMCell(*(_param(rng, *s) for s in ((4 * H, D), (4 * H, H), (4 * H,)))),
                 LSTMCell(*(_param(rng, *s) for s in ((4 * H, D), (4 * H, H), (4 * H,)))))
    w2h = rng.normal(size=2 * H)
    results.append(check("bilstm_encode", lambda g: _weighted(g, bilstm_encode(g, bil, X).pooled, w2h),
                         [X, *bil.tensors().values()], tolerance=MODEL_TOL))

    S, q = _param(rng, T, 2 * H), _param(rng, 2 * H)
    results.append(check("attend", lambda g: g.add(
        _weighted(g, attend(g, q, S)[1], w2h), _weighted(g, attend(g, q, S)[0], wh[:, 0].copy())),
        [q, S]))

    from taskattn.attention import DomainAttnParams
    dparams = DomainAttnParams(_param(rng, 2 * H), _param(rng, 2, 2 * H), _param(rng, 2))
    results.append(check("domain_attend", lambda g: _weighted(
        g, domain_attend(g, dparams, S)[2], np.array([0.3, -1.1])),
        [dparams.q, dparams.W, dparams.b, S]))
    return results


def toy_model(scheme: str, seed: int = 0, with_labeling: bool = False) -> Model:
    vocab = Vocab(["good", "bad", "book", "film", "the", "is"])
    tasks = [TaskSpec("books", ["neg", "pos"]), TaskSpec("dvd", ["neg", "pos"])]
    if with_labeling:
        tasks.append(TaskSpec("tags", ["O", "DOM", "SENT"], kind=LABELING))
    # a wider init range keeps gradients away from the all-tiny regime
    return Model(scheme, tasks, vocab, d_e=4, d_h=4, seed=seed, init_range=0.5, dropout=0.5)


def model_loss_fn(model: Model) -> Callable[[Graph], Tensor]:
    data = [("books", ["the", "book", "good"], 1), ("dvd", ["film", "bad"], 0)]
    labeling = [t for t in model.tasks if t.kind == LABELING]

    def loss_fn(g: Graph) -> Tensor:
        items = []
        for task, tokens, y in data:
            out = model.forward(g, task, tokens, train=False)
            items.append((model.task(task), model.predict_probs(g, task, out), y))
            if out.dc_probs is not None:
                items.append((1.0, out.dc_probs, model.domain_index(task)))
        for t in labeling:
            out = model.forward(g, t, ["the", "film", "good"], train=False)
            items.append((t, model.predict_probs(g, t, out), [0, 1, 2]))
        return total_loss(g, items)

    return loss_fn


def model_checks(schemes=SCHEMES, seed: int = 0, with_labeling: bool = False) -> list[CheckResult]:
    results = []
    for scheme in schemes:
        model = toy_model(scheme, seed, with_labeling)
        name = f"model[{scheme}]" + ("+labeling" if with_labeling else "")
        results.append(check(name, model_loss_fn(model), model.params.values(),
                             tolerance=MODEL_TOL))
    return results


def run_suite(seed: int = 0, log: Optional[Callable[[str], None]] = None) -> list[CheckResult]:
    results = op_checks(seed) + model_checks(seed=seed) + model_checks(("SA",), seed, True)
    if log is not None:
        for r in results:
            log(r.line())
        log(f"gradcheck: {sum(r.passed for r in results)}/{len(results)} passed")
    return results
