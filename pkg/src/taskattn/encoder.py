"""Embedding lookup and the bidirectional LSTM sentence encoder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from taskattn.tensor import Graph, ShapeError, Tensor, init_uniform

PAD = "<pad>"
UNK = "<unk>"


class Vocab:
    """Token/index bijection with PAD at index 0 and UNK at index 1."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = [PAD, UNK]
        self.stoi: dict[str, int] = {PAD: 0, UNK: 1}
        for tok in tokens:
            self.add(tok)

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]], min_count: int = 1) -> "Vocab":
        """Vocabulary over all sentences, tokens in first-seen order."""
        counts: dict[str, int] = {}
        for sent in sentences:
            for tok in sent:
                counts[tok] = counts.get(tok, 0) + 1
        return cls(tok for tok, n in counts.items() if n >= min_count)

    def add(self, token: str) -> int:
        idx = self.stoi.get(token)
        if idx is None:
            idx = len(self.itos)
            self.stoi[token] = idx
            self.itos.append(token)
        return idx

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def index(self, token: str) -> int:
        return self.stoi.get(token, 1)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, 1) for t in tokens]


@dataclass
class LSTMCell:
    """One direction; gate blocks stacked in the order input, forget, output, candidate."""

    W: Tensor  # [4H x D]
    U: Tensor  # [4H x H]
    b: Tensor  # [4H]

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    @classmethod
    def init(cls, input_dim: int, hidden: int, rng: np.random.Generator,
             init_range: float = 0.1) -> "LSTMCell":
        return cls(
            W=init_uniform((4 * hidden, input_dim), -init_range, init_range, rng),
            U=init_uniform((4 * hidden, hidden), -init_range, init_range, rng),
            b=init_uniform((4 * hidden,), -init_range, init_range, rng),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {"W": self.W, "U": self.U, "b": self.b}


@dataclass
class BiLSTM:
    fwd: LSTMCell
    bwd: LSTMCell

    def __post_init__(self):
        if self.fwd.W.shape != self.bwd.W.shape or self.fwd.U.shape != self.bwd.U.shape:
            raise ShapeError("forward and backward cells must share input and hidden sizes")

    @property
    def hidden(self) -> int:
        return self.fwd.hidden

    @property
    def output_dim(self) -> int:
        return 2 * self.fwd.hidden

    @classmethod
    def init(cls, input_dim: int, hidden: int, rng: np.random.Generator,
             init_range: float = 0.1) -> "BiLSTM":
        return cls(LSTMCell.init(input_dim, hidden, rng, init_range),
                   LSTMCell.init(input_dim, hidden, rng, init_range))

    def tensors(self) -> dict[str, Tensor]:
        out = {}
        for direction, cell in (("fwd", self.fwd), ("bwd", self.bwd)):
            for key, t in cell.tensors().items():
                out[f"{direction}.{key}"] = t
        return out


@dataclass
class EncoderParams:
    embedding: Tensor  # [V x d_e]
    bilstm: BiLSTM


@dataclass
class EncoderOutput:
    states: Tensor  # [T x 2H]
    pooled: Tensor  # [2H]


def lookup(g: Graph, vocab: Vocab, embedding: Tensor, tokens: Sequence[str]) -> Tensor:
    if len(tokens) == 0:
        raise ValueError("lookup: empty token list")
    return g.rows(embedding, vocab.encode(tokens))


def lstm_step(g: Graph, prev_h: Tensor, prev_c: Tensor, x: Tensor,
              cell: LSTMCell) -> tuple[Tensor, Tensor]:
    """Single gated update built from primitive ops.

    The fused ``Graph.lstm`` kernel is what the encoder runs; this composition
    is kept as an independent reference for it.
    """
    H = cell.hidden
    if prev_h.shape != (H,) or prev_c.shape != (H,) or x.shape != (cell.input_dim,):
        raise ShapeError(
            f"lstm_step: h={prev_h.shape} c={prev_c.shape} x={x.shape} "
            f"do not fit a cell with input {cell.input_dim}, hidden {H}")
    z = g.add(g.add(g.matmul(cell.W, x), g.matmul(cell.U, prev_h)), cell.b)
    i = g.sigmoid(g.slice(z, 0, H))
    f = g.sigmoid(g.slice(z, H, 2 * H))
    o = g.sigmoid(g.slice(z, 2 * H, 3 * H))
    cand = g.tanh(g.slice(z, 3 * H, 4 * H))
    c = g.add(g.mul(f, prev_c), g.mul(i, cand))
    h = g.mul(o, g.tanh(c))
    return h, c


def bilstm_states(g: Graph, bilstm: BiLSTM, inputs: Tensor) -> Tensor:
    """Per-position concatenation of forward and backward hidden states."""
    if inputs.data.ndim != 2 or inputs.shape[0] == 0:
        raise ValueError(f"bilstm: need at least one position, got input shape {inputs.shape}")
    fwd = g.lstm(inputs, bilstm.fwd.W, bilstm.fwd.U, bilstm.fwd.b)
    bwd = g.lstm(inputs, bilstm.bwd.W, bilstm.bwd.U, bilstm.bwd.b, reverse=True)
    return g.concat(fwd, bwd)


def bilstm_encode(g: Graph, bilstm: BiLSTM, embedded: Tensor) -> EncoderOutput:
    states = bilstm_states(g, bilstm, embedded)
    return EncoderOutput(states=states, pooled=g.mean_rows(states))


def bilstm_states_stepwise(g: Graph, bilstm: BiLSTM, inputs: Tensor) -> Tensor:
    """Reference encoder unrolled through :func:`lstm_step`; slow, used for checking."""
    T = inputs.shape[0]
    rows = [_row(g, inputs, t) for t in range(T)]
    H = bilstm.hidden
    zero = Tensor(np.zeros(H))

    def run(cell, order):
        h, c = zero, zero
        out: list[Optional[Tensor]] = [None] * T
        for t in order:
            h, c = lstm_step(g, h, c, rows[t], cell)
            out[t] = h
        return g.stack(out)

    fwd = run(bilstm.fwd, range(T))
    bwd = run(bilstm.bwd, range(T - 1, -1, -1))
    return g.concat(fwd, bwd)


def _row(g: Graph, m: Tensor, t: int) -> Tensor:
    onehot = np.zeros(m.shape[0])
    onehot[t] = 1.0
    return g.matmul(Tensor(onehot), m)
