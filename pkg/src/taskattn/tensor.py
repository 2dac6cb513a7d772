"""Dense double-precision tensors with a tape-based reverse-mode graph.

A :class:`Graph` records every operation applied during a forward pass and
replays them in reverse in :meth:`Graph.backward`. Leaf tensors created with
``requires_grad=True`` (model parameters) accumulate ``d loss / d leaf`` into
their ``grad`` slot; intermediate gradients live only for the duration of one
backward call.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from taskattn import kernels


class ShapeError(ValueError):
    pass


class NumericDomainError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def init_uniform(shape, low: float, high: float, rng: np.random.Generator,
                 name: Optional[str] = None) -> Tensor:
    """I.i.d. uniform parameter tensor in ``[low, high)``."""
    if not low < high:
        raise ValueError(f"init_uniform needs low < high, got [{low}, {high}]")
    return Tensor(rng.uniform(low, high, size=tuple(shape)), requires_grad=True, name=name)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class _Node:
    __slots__ = ("tag", "inputs", "out", "backward")

    def __init__(self, tag: str, inputs: tuple, out: Tensor, backward: BackwardFn):
        self.tag = tag
        self.inputs = inputs
        self.out = out
        self.backward = backward


def _shape_mismatch(op: str, a: Tensor, b: Tensor) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


class Graph:
    """Tape of operations; nodes are appended in execution (topological) order."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._produced: set[int] = set()

    def __len__(self) -> int:
        return len(self.nodes)

    def _emit(self, tag: str, inputs: tuple, data: np.ndarray, backward: BackwardFn) -> Tensor:
        out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
        if out.requires_grad:
            self.nodes.append(_Node(tag, inputs, out, backward))
            self._produced.add(id(out))
        return out

    # -- linear algebra -------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        """Matrix product; 1-D operands act as row/column vectors."""
        if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
            raise ShapeError(f"matmul: operands must be 1-D or 2-D, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[0]:
            raise _shape_mismatch("matmul", a, b)
        A, B = a.data, b.data

        def backward(g):
            if A.ndim == 2 and B.ndim == 2:
                return g @ B.T, A.T @ g
            if A.ndim == 2:  # matrix @ vector
                return np.outer(g, B), A.T @ g
            if B.ndim == 2:  # vector @ matrix
                return B @ g, np.outer(A, g)
            return g * B, g * A

        return self._emit("matmul", (a, b), A @ B, backward)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise _shape_mismatch("add", a, b)
        return self._emit("add", (a, b), a.data + b.data, lambda g: (g, g))

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise _shape_mismatch("mul", a, b)
        A, B = a.data, b.data
        return self._emit("mul", (a, b), A * B, lambda g: (g * B, g * A))

    def add_bias(self, m: Tensor, b: Tensor) -> Tensor:
        """Add a vector to every row of a matrix."""
        if m.data.ndim != 2 or b.shape != (m.shape[1],):
            raise _shape_mismatch("add_bias", m, b)
        return self._emit("add_bias", (m, b), m.data + b.data, lambda g: (g, g.sum(axis=0)))

    def transpose(self, a: Tensor) -> Tensor:
        if a.data.ndim != 2:
            raise ShapeError(f"transpose: expected a matrix, got {a.shape}")
        return self._emit("transpose", (a,), a.data.T, lambda g: (g.T,))

    def scale(self, a: Tensor, factor: float) -> Tensor:
        return self._emit("scale", (a,), a.data * factor, lambda g: (g * factor,))

    def sum(self, a: Tensor) -> Tensor:
        shape = a.shape
        return self._emit("sum", (a,), np.asarray(a.data.sum()),
                          lambda g: (np.broadcast_to(g, shape).copy(),))

    def mean_rows(self, a: Tensor) -> Tensor:
        """Arithmetic mean over the first axis."""
        if a.data.ndim != 2 or a.shape[0] == 0:
            raise ShapeError(f"mean_rows: expected non-empty 2-D tensor, got {a.shape}")
        T = a.shape[0]
        return self._emit("mean_rows", (a,), a.data.sum(axis=0) / T,
                          lambda g: (np.broadcast_to(g / T, a.shape).copy(),))

    def concat(self, a: Tensor, b: Tensor) -> Tensor:
        """Concatenate along the last axis."""
        if a.data.ndim != b.data.ndim or a.shape[:-1] != b.shape[:-1]:
            raise _shape_mismatch("concat", a, b)
        n = a.shape[-1]
        return self._emit("concat", (a, b), np.concatenate([a.data, b.data], axis=-1),
                          lambda g: (g[..., :n], g[..., n:]))

    def slice(self, a: Tensor, start: int, stop: int) -> Tensor:
        """Contiguous slice ``a[..., start:stop]`` of the last axis."""
        n = a.shape[-1]
        if not 0 <= start < stop <= n:
            raise ShapeError(f"slice [{start}:{stop}] out of range for shape {a.shape}")

        def backward(g):
            out = np.zeros(a.shape)
            out[..., start:stop] = g
            return (out,)

        return self._emit("slice", (a,), a.data[..., start:stop], backward)

    def stack(self, vectors: Sequence[Tensor]) -> Tensor:
        """Stack equal-length 1-D tensors into the rows of a matrix."""
        if not vectors:
            raise ShapeError("stack: nothing to stack")
        shape = vectors[0].shape
        if any(v.shape != shape or v.data.ndim != 1 for v in vectors):
            raise ShapeError("stack: inputs must be 1-D with equal shapes")
        data = np.stack([v.data for v in vectors])
        return self._emit("stack", tuple(vectors), data, lambda g: tuple(g))

    def reverse_rows(self, a: Tensor) -> Tensor:
        return self._emit("reverse_rows", (a,), a.data[::-1], lambda g: (g[::-1],))

    def rows(self, table: Tensor, index: Sequence[int]) -> Tensor:
        """Gather rows of a 2-D table (embedding lookup)."""
        idx = np.asarray(index, dtype=np.intp)
        if idx.ndim != 1 or idx.size == 0:
            raise ShapeError("rows: index must be a non-empty 1-D sequence")
        shape = table.shape

        def backward(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)

        return self._emit("rows", (table,), table.data[idx], backward)

    def pick(self, a: Tensor, index) -> Tensor:
        """Select ``a[index]`` for a 1-D tensor, or ``a[t, index[t]]`` row-wise for 2-D."""
        if a.data.ndim == 1:
            i = int(index)
            shape = a.shape

            def backward(g):
                out = np.zeros(shape)
                out[i] = g
                return (out,)

            return self._emit("pick", (a,), np.asarray(a.data[i]), backward)
        idx = np.asarray(index, dtype=np.intp)
        if idx.shape != (a.shape[0],):
            raise ShapeError(f"pick: need one index per row of {a.shape}, got {idx.shape}")
        ar = np.arange(a.shape[0])

        def backward(g):
            out = np.zeros(a.shape)
            out[ar, idx] = g
            return (out,)

        return self._emit("pick", (a,), a.data[ar, idx], backward)

    # -- pointwise --------------------------------------------------------

    def sigmoid(self, a: Tensor) -> Tensor:
        s = kernels.sigmoid(a.data)
        return self._emit("sigmoid", (a,), s, lambda g: (g * s * (1.0 - s),))

    def tanh(self, a: Tensor) -> Tensor:
        t = np.tanh(a.data)
        return self._emit("tanh", (a,), t, lambda g: (g * (1.0 - t * t),))

    def log(self, a: Tensor) -> Tensor:
        x = a.data
        if np.any(x <= 0):
            raise NumericDomainError("log: non-positive input")
        return self._emit("log", (a,), np.log(x), lambda g: (g / x,))

    def dropout(self, a: Tensor, p: float, rng: Optional[np.random.Generator],
                train: bool = True, mask: Optional[np.ndarray] = None) -> Tensor:
        """Inverted dropout: survivors scaled by ``1/(1-p)``; identity outside training."""
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        if not train or p == 0.0:
            return a
        if mask is None:
            if rng is None:
                raise ValueError("dropout in training mode needs an rng or an explicit mask")
            mask = (rng.random(a.shape) >= p) / (1.0 - p)
        elif mask.shape != a.shape:
            raise ShapeError(f"dropout: mask shape {mask.shape} != input shape {a.shape}")
        return self._emit("dropout", (a,), a.data * mask, lambda g: (g * mask,))

    def softmax(self, a: Tensor) -> Tensor:
        """Softmax along the last axis, computed with max subtraction."""
        x = a.data
        if x.size == 0:
            raise ShapeError("softmax: empty input")
        if not np.all(np.isfinite(x)):
            raise NumericDomainError("softmax: non-finite input")
        y = _softmax(x)

        def backward(g):
            return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)

        return self._emit("softmax", (a,), y, backward)

    # -- fused recurrence -------------------------------------------------

    def lstm(self, x: Tensor, W: Tensor, U: Tensor, b: Tensor, reverse: bool = False) -> Tensor:
        """Run one LSTM direction over the rows of ``x`` from a zero state.

        Gate blocks in ``W`` [4H x D], ``U`` [4H x H] and ``b`` [4H] are ordered
        input, forget, output, candidate. With ``reverse=True`` the sequence is
        consumed right to left and output row ``t`` holds the state at input
        position ``t``.
        """
        X = x.data
        if X.ndim != 2 or X.shape[0] == 0:
            raise ShapeError(f"lstm: input must be a non-empty T x D matrix, got {x.shape}")
        H4, D = W.shape
        H = H4 // 4
        if H4 % 4 or D != X.shape[1] or U.shape != (H4, H) or b.shape != (H4,):
            raise ShapeError(
                f"lstm: inconsistent shapes x={x.shape} W={W.shape} U={U.shape} b={b.shape}")
        Xs = np.ascontiguousarray(X[::-1]) if reverse else np.ascontiguousarray(X)
        hs, gates, cs = kernels.lstm_forward(Xs, W.data, U.data, b.data)

        def backward(g):
            gs = np.ascontiguousarray(g[::-1]) if reverse else np.ascontiguousarray(g)
            dX, dW, dU, db = kernels.lstm_backward(gs, Xs, W.data, U.data, hs, gates, cs)
            if reverse:
                dX = dX[::-1]
            return dX, dW, dU, db

        out = hs[::-1] if reverse else hs
        return self._emit("lstm", (x, W, U, b), out, backward)

    # -- reverse pass ------------------------------------------------------

    def backward(self, loss: Tensor, seed: float = 1.0) -> None:
        """Accumulate ``seed * d loss / d leaf`` into every grad-requiring leaf."""
        if loss.data.size != 1:
            raise GraphError(f"backward: loss must be a scalar, got shape {loss.shape}")
        if id(loss) not in self._produced:
            raise GraphError("backward: loss was not produced by this graph")
        grads: dict[int, np.ndarray] = {id(loss): np.full(loss.shape, seed, dtype=np.float64)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in self._produced:
                    prev = grads.get(key)
                    grads[key] = ig if prev is None else prev + ig
                elif inp.grad is None:
                    inp.grad = np.array(ig, dtype=np.float64, copy=True).reshape(inp.shape)
                else:
                    inp.grad += ig


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - np.max(x, axis=-1, keepdims=True))
    return z / np.sum(z, axis=-1, keepdims=True)


def softmax(x) -> np.ndarray:
    """Graph-free softmax along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ShapeError("softmax: empty input")
    if not np.all(np.isfinite(x)):
        raise NumericDomainError("softmax: non-finite input")
    return _softmax(x)
