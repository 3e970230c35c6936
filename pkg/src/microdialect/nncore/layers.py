"""Layers built from the primitives in :mod:`ops`.

Sequences are batch-first: ``(batch, time, features)``. Batches are bucketed
by exact length upstream, so nothing here masks or pads.
"""
from __future__ import annotations

import math

import numpy as np

from . import ops
from .module import Module
from .tensor import Parameter, ShapeMismatch, Tensor


class EmptySequence(ValueError):
    pass


class OddUnits(ValueError):
    pass


class IndivisibleDim(ValueError):
    pass


class Embedding(Module):
    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator, sigma: float = 0.05):
        self.weight = Parameter.normal((vocab_size, dim), rng, sigma=sigma, name="weight")

    def __call__(self, ids) -> Tensor:
        return ops.embedding_lookup(self.weight, ids)


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, sigma: float = 0.05):
        self.weight = Parameter.normal((n_in, n_out), rng, sigma=sigma, name="weight")
        self.bias = Parameter.zeros((n_out,), name="bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = Parameter.ones((dim,), name="gain")
        self.bias = Parameter.zeros((dim,), name="bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias)


class GRU(Module):
    """One direction of a GRU (Cho et al. convention).

    z = sigmoid(x W_z + h U_z + b_z)
    r = sigmoid(x W_r + h U_r + b_r)
    c = tanh(x W_c + (r * h) U_c + b_c)
    h' = z * h + (1 - z) * c

    The input weights are fused as ``w_x`` (D, 3H) in (z, r, c) order, the
    gate recurrences as ``u_zr`` (H, 2H), and the candidate recurrence as
    ``u_c`` (H, H). Parameter count: 3DH + 3H^2 + 3H.
    """

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator, sigma: float = 0.05):
        self.hidden = hidden
        self.w_x = Parameter.normal((n_in, 3 * hidden), rng, sigma=sigma, name="w_x")
        self.u_zr = Parameter.normal((hidden, 2 * hidden), rng, sigma=sigma, name="u_zr")
        self.u_c = Parameter.normal((hidden, hidden), rng, sigma=sigma, name="u_c")
        self.b = Parameter.zeros((3 * hidden,), name="b")

    def cell(self, x_proj: Tensor, h: Tensor) -> Tensor:
        """One step given the already-projected input ``x W + b`` of shape (B, 3H)."""
        H = self.hidden
        zr = ops.sigmoid(x_proj[:, : 2 * H] + ops.matmul(h, self.u_zr))
        z = zr[:, :H]
        r = zr[:, H:]
        c = ops.tanh(x_proj[:, 2 * H:] + ops.matmul(r * h, self.u_c))
        return c + z * (h - c)

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        if x.shape[-1] != self.w_x.shape[0] or h.shape[-1] != self.hidden:
            raise ShapeMismatch(f"gru step x{x.shape} h{h.shape}")
        return self.cell(ops.matmul(x, self.w_x) + self.b, h)

    def __call__(self, seq: Tensor, reverse: bool = False) -> Tensor:
        B, T, D = seq.shape
        if D != self.w_x.shape[0]:
            raise ShapeMismatch(f"gru input dim {D} != {self.w_x.shape[0]}")
        proj = ops.matmul(seq, self.w_x) + self.b
        h = Tensor(np.zeros((B, self.hidden), dtype=seq.data.dtype))
        states = [None] * T
        steps = range(T - 1, -1, -1) if reverse else range(T)
        for t in steps:
            h = self.cell(proj[:, t, :], h)
            states[t] = h
        return ops.stack(states, axis=1)


class BiGRU(Module):
    """Bidirectional GRU layer; ``units_total`` is split evenly between directions."""

    def __init__(self, n_in: int, units_total: int, rng: np.random.Generator, sigma: float = 0.05):
        if units_total % 2:
            raise OddUnits(f"units_total must be even, got {units_total}")
        self.units_total = units_total
        self.fwd = GRU(n_in, units_total // 2, rng, sigma)
        self.bwd = GRU(n_in, units_total // 2, rng, sigma)

    def __call__(self, seq: Tensor) -> Tensor:
        return ops.concat([self.fwd(seq), self.bwd(seq, reverse=True)], axis=-1)


class AttentionPool(Module):
    """Dot-product pooling against a learned query vector.

    weights_t = softmax_t(H_t . q); context = sum_t weights_t H_t
    """

    def __init__(self, dim: int, rng: np.random.Generator, sigma: float = 0.05):
        self.query = Parameter.normal((dim, 1), rng, sigma=sigma, name="query")

    def __call__(self, seq: Tensor) -> tuple[Tensor, Tensor]:
        if seq.ndim != 3 or seq.shape[1] == 0:
            raise EmptySequence("attention pooling needs a non-empty (B, T, D) sequence")
        B, T, D = seq.shape
        scores = ops.reshape(ops.matmul(seq, self.query), (B, T))
        weights = ops.softmax(scores, axis=-1)
        context = ops.matmul(ops.reshape(weights, (B, 1, T)), seq)
        return ops.reshape(context, (B, D)), weights


class MultiHeadAttention(Module):
    """Scaled dot-product attention over ``heads`` learned projections."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, sigma: float = 0.05):
        if dim % heads:
            raise IndivisibleDim(f"model dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.q = Dense(dim, dim, rng, sigma)
        self.k = Dense(dim, dim, rng, sigma)
        self.v = Dense(dim, dim, rng, sigma)
        self.o = Dense(dim, dim, rng, sigma)

    def _split(self, x: Tensor) -> Tensor:
        B, T, _ = x.shape
        return ops.transpose(ops.reshape(x, (B, T, self.heads, self.dim // self.heads)), (0, 2, 1, 3))

    def __call__(self, query: Tensor, key: Tensor, value: Tensor) -> tuple[Tensor, Tensor]:
        B, Tq, _ = query.shape
        dh = self.dim // self.heads
        q = self._split(self.q(query))
        k = self._split(self.k(key))
        v = self._split(self.v(value))
        scores = ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
        weights = ops.softmax(scores, axis=-1)
        heads = ops.matmul(weights, v)
        merged = ops.reshape(ops.transpose(heads, (0, 2, 1, 3)), (B, Tq, self.dim))
        return self.o(merged), weights
