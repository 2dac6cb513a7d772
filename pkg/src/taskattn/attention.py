"""Task-specific selection over shared encoder states.

Static attention scores every position with a learned per-task query. Dynamic
attention first runs a domain classifier with its own static query, then
builds each task's query from the classifier's context vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from taskattn.tensor import Graph, ShapeError, Tensor, init_uniform


@dataclass
class DomainAttnParams:
    q: Tensor  # [2H]
    W: Tensor  # [K x 2H]
    b: Tensor  # [K]

    @property
    def n_domains(self) -> int:
        return self.W.shape[0]

    @classmethod
    def init(cls, width: int, n_domains: int, rng: np.random.Generator,
             init_range: float = 0.1) -> "DomainAttnParams":
        return cls(
            q=init_uniform((width,), -init_range, init_range, rng),
            W=init_uniform((n_domains, width), -init_range, init_range, rng),
            b=init_uniform((n_domains,), -init_range, init_range, rng),
        )


@dataclass
class DynamicQueryParams:
    U: Tensor  # [2H x 2H], one instance shared by every task
    biases: list[Tensor]  # per-task [2H]


def attend(g: Graph, q: Tensor, states: Tensor) -> tuple[Tensor, Tensor]:
    """Dot-product attention: returns (alpha over positions, context vector)."""
    if states.data.ndim != 2 or states.shape[0] == 0:
        raise ShapeError(f"attend: states must be a non-empty T x W matrix, got {states.shape}")
    if q.shape != (states.shape[1],):
        raise ShapeError(f"attend: query width {q.shape} does not match states {states.shape}")
    scores = g.matmul(states, q)
    alpha = g.softmax(scores)
    return alpha, g.matmul(alpha, states)


def domain_attend(g: Graph, params: DomainAttnParams,
                  states: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Domain-classifier attention: (alpha_dc, c_dc, distribution over domains)."""
    alpha, c = attend(g, params.q, states)
    y = g.softmax(g.add(g.matmul(params.W, c), params.b))
    return alpha, c, y


def dynamic_query(g: Graph, params: DynamicQueryParams, c_dc: Tensor, task: int) -> Tensor:
    if not 0 <= task < len(params.biases):
        raise IndexError(f"dynamic_query: unknown task index {task}")
    if c_dc.shape != (params.U.shape[1],):
        raise ShapeError(f"dynamic_query: context {c_dc.shape} does not fit U {params.U.shape}")
    return g.add(g.matmul(params.U, c_dc), params.biases[task])
