"""The three learned layer kinds: feed-forward nets, a recurrent memory
cell, and multi-head dot-product attention.

Layers register their weights on a shared :class:`ParameterSet` under a
name prefix, so a whole model checkpoints as one flat map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ParameterSet
from .tensor import (
    DimensionError,
    Tensor,
    add,
    gather_stack,
    matmul,
    mul,
    relu,
    reshape,
    sigmoid,
    slice_last,
    softmax,
    tanh,
    transpose,
)

VALID_KINDS = ("feedforward", "recurrent-cell", "attention")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    hidden_dim: int | None = None
    heads: int = 1
    key_dim: int | None = None
    value_dim: int | None = None

    def __post_init__(self):
        if self.kind not in VALID_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        dims = [self.in_dim, self.out_dim]
        if self.hidden_dim is not None:
            dims.append(self.hidden_dim)
        if self.key_dim is not None:
            dims.append(self.key_dim)
        if self.value_dim is not None:
            dims.append(self.value_dim)
        if any(d <= 0 for d in dims):
            raise ValueError("layer dims must be positive")
        if self.kind == "attention":
            if self.heads <= 0:
                raise ValueError("head count must be positive")
            if self.out_dim % self.heads:
                raise ValueError("attention output dim must be divisible by head count")


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Feedforward:
    """Two-layer perceptron: relu hidden layer, linear output."""

    def __init__(self, params: ParameterSet, name: str, in_dim: int, out_dim: int,
                 hidden_dim: int | None = None, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        hidden = out_dim if hidden_dim is None else hidden_dim
        self.spec = LayerSpec("feedforward", in_dim, out_dim, hidden_dim=hidden)
        self.name = name
        self.w1 = params.add(f"{name}.w1", uniform_init(rng, (hidden, in_dim), in_dim))
        self.b1 = params.add(f"{name}.b1", uniform_init(rng, (hidden,), in_dim))
        self.w2 = params.add(f"{name}.w2", uniform_init(rng, (out_dim, hidden), hidden))
        self.b2 = params.add(f"{name}.b2", uniform_init(rng, (out_dim,), hidden))

    def apply(self, x: Tensor) -> Tensor:
        if x.data.shape[-1] != self.spec.in_dim:
            raise DimensionError(
                f"{self.name}: input dim {x.data.shape[-1]} != {self.spec.in_dim}")
        if x.data.ndim == 1:
            h = relu(add(matmul(self.w1, x), self.b1))
            return add(matmul(self.w2, h), self.b2)
        h = relu(add(matmul(x, transpose(self.w1)), self.b1))
        return add(matmul(h, transpose(self.w2)), self.b2)

    __call__ = apply


class RecurrentCell:
    """Four-gate LSTM-style cell whose single state vector doubles as the
    carried cell value: new = output ⊙ tanh(forget ⊙ state + input ⊙ cand).

    Zero parameters make the zero state a fixed point for any input.
    """

    GATES = ("input", "forget", "candidate", "output")

    def __init__(self, params: ParameterSet, name: str, in_dim: int, state_dim: int,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = LayerSpec("recurrent-cell", in_dim, state_dim)
        self.name = name
        k = 4 * state_dim
        self.w = params.add(f"{name}.w", uniform_init(rng, (k, in_dim), in_dim))
        self.u = params.add(f"{name}.u", uniform_init(rng, (k, state_dim), state_dim))
        self.b = params.add(f"{name}.b", uniform_init(rng, (k,), state_dim))

    def apply(self, x: Tensor, state: Tensor, return_gates: bool = False):
        if x.data.shape[-1] != self.spec.in_dim or state.data.shape[-1] != self.spec.out_dim:
            raise DimensionError(
                f"{self.name}: got input dim {x.data.shape[-1]} / state dim "
                f"{state.data.shape[-1]}, expected {self.spec.in_dim} / {self.spec.out_dim}")
        if x.data.ndim == 1:
            z = add(add(matmul(self.w, x), matmul(self.u, state)), self.b)
        else:
            z = add(add(matmul(x, transpose(self.w)), matmul(state, transpose(self.u))), self.b)
        d = self.spec.out_dim
        gate_in = sigmoid(slice_last(z, 0, d))
        gate_forget = sigmoid(slice_last(z, d, 2 * d))
        cand = tanh(slice_last(z, 2 * d, 3 * d))
        gate_out = sigmoid(slice_last(z, 3 * d, 4 * d))
        cell = add(mul(gate_forget, state), mul(gate_in, cand))
        new_state = mul(gate_out, tanh(cell))
        if return_gates:
            gates = {"input": gate_in, "forget": gate_forget,
                     "candidate": cand, "output": gate_out}
            return new_state, gates
        return new_state

    __call__ = apply


class MultiHeadAttention:
    """Multi-head dot-product attention over a set of key/value rows.

    Per head: weights = softmax(q · kᵀ / sqrt(d_head)), output is the
    weight-combined value projections, heads concatenated.
    """

    def __init__(self, params: ParameterSet, name: str, query_dim: int, out_dim: int,
                 heads: int, key_dim: int | None = None, value_dim: int | None = None,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        key_dim = query_dim if key_dim is None else key_dim
        value_dim = key_dim if value_dim is None else value_dim
        self.spec = LayerSpec("attention", query_dim, out_dim, heads=heads,
                              key_dim=key_dim, value_dim=value_dim)
        self.name = name
        self.wq = params.add(f"{name}.wq", uniform_init(rng, (out_dim, query_dim), query_dim))
        self.wk = params.add(f"{name}.wk", uniform_init(rng, (out_dim, key_dim), key_dim))
        self.wv = params.add(f"{name}.wv", uniform_init(rng, (out_dim, value_dim), value_dim))

    @staticmethod
    def _as_matrix(rows) -> Tensor:
        if isinstance(rows, Tensor):
            return rows
        return gather_stack([(t, None) for t in rows])

    def apply(self, query: Tensor, keys, values):
        """Returns (output (out_dim,), weights (heads, n))."""
        keys = self._as_matrix(keys)
        values = self._as_matrix(values)
        n = keys.data.shape[0]
        if n == 0:
            raise ValueError("attention requires a non-empty key set")
        if values.data.shape[0] != n:
            raise DimensionError("keys and values must have equal length")
        if query.data.shape != (self.spec.in_dim,):
            raise DimensionError(
                f"{self.name}: query shape {query.data.shape} != ({self.spec.in_dim},)")
        if keys.data.shape[1] != self.spec.key_dim or values.data.shape[1] != self.spec.value_dim:
            raise DimensionError(f"{self.name}: key/value dims do not match layer spec")
        H = self.spec.heads
        D = self.spec.out_dim
        dh = D // H
        q3 = reshape(matmul(self.wq, query), (H, dh, 1))
        k3 = transpose(reshape(matmul(keys, transpose(self.wk)), (n, H, dh)), (1, 0, 2))
        v3 = transpose(reshape(matmul(values, transpose(self.wv)), (n, H, dh)), (1, 0, 2))
        logits = mul(matmul(k3, q3), 1.0 / np.sqrt(dh))
        weights = softmax(logits, axis=1)
        out = matmul(transpose(v3, (0, 2, 1)), weights)
        return reshape(out, (D,)), reshape(weights, (H, n))

    __call__ = apply
