"""Neural building blocks: dense, embedding, LSTM cell, bidirectional LSTM,
additive attention, and label-smoothed cross-entropy.

Initialization: uniform(-0.08, 0.08) for recurrent weights, Glorot-scaled
uniform for dense/embedding, forget-gate bias fixed to 1.0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

RECURRENT_INIT_SCALE = 0.08
FORGET_BIAS = 1.0


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class Dense:
    w: Tensor  # (in_dim, out_dim)
    b: Tensor  # (out_dim,)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.affine(x, self.w, self.b)


def init_dense(rng: np.random.Generator, in_dim: int, out_dim: int) -> Dense:
    return Dense(
        w=Tensor(glorot_uniform(rng, in_dim, out_dim, (in_dim, out_dim)), requires_grad=True),
        b=Tensor(np.zeros(out_dim), requires_grad=True),
    )


def init_embedding(rng: np.random.Generator, vocab_size: int, dim: int) -> Tensor:
    return Tensor(glorot_uniform(rng, vocab_size, dim, (vocab_size, dim)), requires_grad=True)


# ---------------------------------------------------------------------------
# LSTM

@dataclass
class LstmCell:
    """Single LSTM cell; gate order in the stacked pre-activation is (i, f, o, g)."""

    units: int
    w_x: Tensor  # (input_dim, 4*units)
    w_h: Tensor  # (units, 4*units)
    bias: Tensor  # (4*units,)


def init_lstm_cell(rng: np.random.Generator, input_dim: int, units: int) -> LstmCell:
    w_x = rng.uniform(-RECURRENT_INIT_SCALE, RECURRENT_INIT_SCALE, (input_dim, 4 * units))
    w_h = rng.uniform(-RECURRENT_INIT_SCALE, RECURRENT_INIT_SCALE, (units, 4 * units))
    bias = np.zeros(4 * units)
    bias[units:2 * units] = FORGET_BIAS
    return LstmCell(
        units=units,
        w_x=Tensor(w_x, requires_grad=True),
        w_h=Tensor(w_h, requires_grad=True),
        bias=Tensor(bias, requires_grad=True),
    )


def lstm_step(cell: LstmCell, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    """One recurrence step: returns (h', c'). x/h/c may be single vectors or
    (B, .) batches (the recurrence is over time, not over examples)."""
    if x.shape[-1] != cell.w_x.shape[0]:
        raise ValueError(f"lstm_step: input dim {x.shape[-1]} != cell input dim {cell.w_x.shape[0]}")
    z = ad.lstm_preact(x, cell.w_x, h, cell.w_h, cell.bias)
    hc = ad.lstm_fused(z, c)
    u = cell.units
    return ad.slice_last(hc, 0, u), ad.slice_last(hc, u, 2 * u)


def zero_state(cell: LstmCell) -> tuple[Tensor, Tensor]:
    return Tensor(np.zeros(cell.units)), Tensor(np.zeros(cell.units))


@dataclass
class BiLstm:
    units: int  # per direction; output dimension is 2*units
    fwd: LstmCell
    bwd: LstmCell


def init_bilstm(rng: np.random.Generator, input_dim: int, units: int) -> BiLstm:
    return BiLstm(
        units=units,
        fwd=init_lstm_cell(rng, input_dim, units),
        bwd=init_lstm_cell(rng, input_dim, units),
    )


def bilstm_sequence(
    layer: BiLstm,
    xs: Tensor,
    init_fwd: tuple[Tensor, Tensor] | None = None,
    init_bwd: tuple[Tensor, Tensor] | None = None,
) -> Tensor:
    """Run both directions over a (T, d) sequence; row t is
    concat(forward h_t, backward h_t), the backward pass reading xs reversed."""
    if xs.data.ndim != 2 or xs.shape[0] < 1:
        raise ValueError(f"bilstm_sequence: need a nonempty (T, d) sequence, got {xs.shape}")
    t_len = xs.shape[0]
    d = xs.shape[1]
    rows = [ad.reshape(ad.gather_rows(xs, [t]), (d,)) for t in range(t_len)]

    h, c = init_fwd if init_fwd is not None else zero_state(layer.fwd)
    fwd_states = []
    for t in range(t_len):
        h, c = lstm_step(layer.fwd, rows[t], h, c)
        fwd_states.append(h)

    h, c = init_bwd if init_bwd is not None else zero_state(layer.bwd)
    bwd_states: list[Tensor] = [None] * t_len  # type: ignore[list-item]
    for t in reversed(range(t_len)):
        h, c = lstm_step(layer.bwd, rows[t], h, c)
        bwd_states[t] = h
    out_rows = [
        ad.reshape(ad.concat([fwd_states[t], bwd_states[t]]), (1, 2 * layer.units))
        for t in range(t_len)
    ]
    return ad.concat(out_rows, axis=0)


# ---------------------------------------------------------------------------
# additive attention

@dataclass
class AdditiveAttention:
    """Additive (concat) scoring: score_i = v . tanh(Wq q + Wk k_i)."""

    attn_dim: int
    w_q: Tensor  # (query_dim, attn_dim)
    w_k: Tensor  # (value_dim, attn_dim)
    v: Tensor    # (attn_dim,)


def init_attention(rng: np.random.Generator, query_dim: int, value_dim: int, attn_dim: int) -> AdditiveAttention:
    return AdditiveAttention(
        attn_dim=attn_dim,
        w_q=Tensor(glorot_uniform(rng, query_dim, attn_dim, (query_dim, attn_dim)), requires_grad=True),
        w_k=Tensor(glorot_uniform(rng, value_dim, attn_dim, (value_dim, attn_dim)), requires_grad=True),
        v=Tensor(glorot_uniform(rng, attn_dim, 1, (attn_dim,)), requires_grad=True),
    )


def attention_keys(attn: AdditiveAttention, values: Tensor) -> Tensor:
    """Projected keys (S, attn_dim); query-independent, so decoders compute
    them once per image rather than once per step."""
    return ad.matmul(values, attn.w_k)


def attend(
    attn: AdditiveAttention, query: Tensor, values: Tensor, keys: Tensor | None = None
) -> tuple[Tensor, Tensor]:
    """Score every value row against the query; returns (context, weights).

    context is the weight-averaged value row, so it always lies in the
    convex hull of the rows.
    """
    if values.data.ndim != 2 or values.shape[0] < 1:
        raise ValueError(f"attend: values must be a nonempty (S, m) matrix, got {values.shape}")
    if keys is None:
        keys = attention_keys(attn, values)     # (S, a)
    q_proj = ad.matmul(query, attn.w_q)         # (a,)
    scores = ad.matmul(ad.tanh(ad.add(keys, q_proj)), attn.v)  # (S,)
    weights = ad.softmax(scores)
    context = ad.matmul(weights, values)        # (m,)
    return context, weights


def multiplicative_scores(attn: AdditiveAttention, query: Tensor, values: Tensor) -> Tensor:
    """Dot-product (Luong-style) scoring variant, kept for comparison."""
    q_proj = ad.matmul(query, attn.w_q)  # (a,)
    keys = ad.matmul(values, attn.w_k)   # (S, a)
    return ad.matmul(keys, q_proj)       # (S,)


# ---------------------------------------------------------------------------
# loss

def label_smoothed_ce(logits: Tensor, target: int, epsilon: float) -> Tensor:
    """Cross-entropy against (1-eps)*onehot(target) + eps/V. epsilon=0 is
    exactly standard cross-entropy."""
    v = logits.shape[-1]
    if not 0 <= target < v:
        raise IndexError(f"label_smoothed_ce: target {target} out of range for V={v}")
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"label_smoothed_ce: epsilon must be in [0, 1), got {epsilon}")
    q = np.full(v, epsilon / v)
    q[target] += 1.0 - epsilon
    log_probs = ad.log_softmax(logits)
    neg_one = Tensor(np.array(-1.0))
    return ad.mul(ad.sum_all(ad.mul(log_probs, Tensor(q))), neg_one)
