"""Causal self-attention encoder over item sequences, with two linear heads.

The encoder embeds right-padded item-id rows, runs them through post-norm
transformer blocks with a causal mask, and returns the hidden state at each
row's last valid position. Item ids live in [0, n); id n is the padding id
whose embedding row is pinned to zero. The supervised head maps a state to
next-item logits (no bias, so a zero state scores every item zero); the Q head
maps the same state to action values (with bias, zero-initialized).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MASK_FILL_VALUE = -1e9
LAYER_NORM_EPS = 1e-8


@dataclass(frozen=True)
class EncoderConfig:
    n_items: int
    hidden_size: int = 64
    num_blocks: int = 2
    num_heads: int = 1
    max_len: int = 10
    dropout: float = 0.1

    def __post_init__(self):
        if self.n_items < 1:
            raise ValueError(f"n_items must be >= 1, got {self.n_items}")
        if self.hidden_size < 1 or self.num_blocks < 1 or self.max_len < 1:
            raise ValueError("hidden_size, num_blocks and max_len must be >= 1")
        if self.hidden_size % self.num_heads != 0:
            raise ValueError(
                f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def pad_id(self) -> int:
        return self.n_items

    @property
    def d_ff(self) -> int:
        return self.hidden_size


@dataclass
class BlockParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor


@dataclass
class EncoderParams:
    """All trainable tensors, in the order they serialize to checkpoints."""

    config: EncoderConfig
    item_embedding: Tensor
    positional_embedding: Tensor
    blocks: list[BlockParams] = field(default_factory=list)
    logits_head: Tensor = None
    q_head: Tensor = None
    q_bias: Tensor = None

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = [
            ("item_embedding", self.item_embedding),
            ("positional_embedding", self.positional_embedding),
        ]
        for i, blk in enumerate(self.blocks):
            for name in ("wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2",
                         "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias"):
                out.append((f"block{i}.{name}", getattr(blk, name)))
        out.append(("logits_head", self.logits_head))
        out.append(("q_head", self.q_head))
        out.append(("q_bias", self.q_bias))
        return out

    def watch_all(self, tape: ad.GradientTape) -> None:
        for _, t in self.named_tensors():
            tape.watch(t)

    def zero_pad_row(self) -> None:
        self.item_embedding.data[self.config.pad_id, :] = 0.0


def init_params(config: EncoderConfig, rng: np.random.Generator) -> EncoderParams:
    """Uniform(-1/sqrt(d), 1/sqrt(d)) weights, zero biases, unit norm gains.

    The pad embedding row and the whole Q head start at zero: padding must
    contribute nothing, and every action must open with the same value.
    """
    d = config.hidden_size
    s = 1.0 / np.sqrt(d)

    def u(*shape):
        return Tensor(rng.uniform(-s, s, size=shape))

    params = EncoderParams(
        config=config,
        item_embedding=u(config.n_items + 1, d),
        positional_embedding=u(config.max_len, d),
    )
    params.item_embedding.data[config.pad_id, :] = 0.0
    for _ in range(config.num_blocks):
        params.blocks.append(
            BlockParams(
                wq=u(d, d), wk=u(d, d), wv=u(d, d), wo=u(d, d),
                w1=u(d, config.d_ff), b1=Tensor(np.zeros(config.d_ff)),
                w2=u(config.d_ff, d), b2=Tensor(np.zeros(d)),
                ln1_gain=Tensor(np.ones(d)), ln1_bias=Tensor(np.zeros(d)),
                ln2_gain=Tensor(np.ones(d)), ln2_bias=Tensor(np.zeros(d)),
            )
        )
    params.logits_head = u(d, config.n_items)
    params.q_head = Tensor(np.zeros((d, config.n_items)))
    params.q_bias = Tensor(np.zeros(config.n_items))
    return params


def make_target(params: EncoderParams) -> EncoderParams:
    """Deep copy for bootstrapped targets; never watched, never updated by Adam."""
    return copy.deepcopy(params)


def hard_update_target(target: EncoderParams, params: EncoderParams) -> None:
    """Copy every weight from params into target, in place."""
    for (_, dst), (_, src) in zip(target.named_tensors(), params.named_tensors()):
        dst.data[...] = src.data


def _attention(x: Tensor, blk: BlockParams, blocked: np.ndarray, cfg: EncoderConfig) -> Tensor:
    B, L, d = x.shape
    h = cfg.num_heads
    dh = d // h

    def split(t: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(t, (B, L, h, dh)), (0, 2, 1, 3))

    q = split(ad.matmul(x, blk.wq))
    k = split(ad.matmul(x, blk.wk))
    v = split(ad.matmul(x, blk.wv))
    scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    scores = ad.masked_fill(scores, blocked, MASK_FILL_VALUE)
    attn = ad.softmax(scores, axis=-1)
    ctx = ad.reshape(ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3)), (B, L, d))
    return ad.matmul(ctx, blk.wo)


def encode(
    params: EncoderParams,
    batch: np.ndarray,
    lengths: np.ndarray,
    *,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """States at each row's last valid position.

    batch: int matrix [B, L] of item ids in [0, n], right-padded with pad_id;
    lengths: per-row count of valid leading positions, each in [1, L];
    L must not exceed config.max_len. Position t only ever attends to
    positions <= t, and positions >= length are masked out of attention and
    zeroed between blocks, so padding tails cannot influence the result.
    """
    cfg = params.config
    batch = np.asarray(batch, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    if batch.ndim != 2:
        raise ValueError(f"batch must be 2-D, got shape {batch.shape}")
    B, L = batch.shape
    if L > cfg.max_len:
        raise ValueError(f"sequence length {L} exceeds max_len {cfg.max_len}")
    if lengths.shape != (B,):
        raise ValueError(f"lengths shape {lengths.shape} does not match batch rows {B}")
    if lengths.size and (lengths.min() < 1 or lengths.max() > L):
        raise ValueError("lengths must lie in [1, L]")
    if batch.size and (batch.min() < 0 or batch.max() > cfg.n_items):
        bad = batch[(batch < 0) | (batch > cfg.n_items)].flat[0]
        raise IndexError(f"item id {bad} outside [0, {cfg.n_items}]")
    if train and cfg.dropout > 0.0 and rng is None:
        raise ValueError("training-mode encode with dropout needs an rng")

    if L < cfg.max_len:
        # Fixed-width compute: identical shapes keep BLAS rounding identical,
        # so extending a row with pads can never change its state, bit for bit.
        full = np.full((B, cfg.max_len), cfg.pad_id, dtype=np.int64)
        full[:, :L] = batch
        batch, L = full, cfg.max_len

    positions = np.arange(L)
    valid = (positions[None, :] < lengths[:, None]).astype(np.float64)[:, :, None]
    # blocked[b, 0, i, j]: causal (j > i) or pad key (j >= length_b)
    blocked = (positions[None, None, :] > positions[None, :, None]) | (
        positions[None, None, :] >= lengths[:, None, None]
    )
    blocked = blocked[:, None, :, :]

    d = cfg.hidden_size
    x = ad.reshape(ad.gather_rows(params.item_embedding, batch.ravel()), (B, L, d))
    x = x + ad.slice_axis(params.positional_embedding, 0, 0, L)
    if train and cfg.dropout > 0.0:
        x = ad.dropout(x, cfg.dropout, rng)
    x = x * valid

    for blk in params.blocks:
        a = _attention(x, blk, blocked, cfg)
        if train and cfg.dropout > 0.0:
            a = ad.dropout(a, cfg.dropout, rng)
        x = ad.layer_norm(x + a, blk.ln1_gain, blk.ln1_bias, eps=LAYER_NORM_EPS)
        f = ad.relu(ad.matmul(x, blk.w1) + blk.b1)
        f = ad.matmul(f, blk.w2) + blk.b2
        if train and cfg.dropout > 0.0:
            f = ad.dropout(f, cfg.dropout, rng)
        x = ad.layer_norm(x + f, blk.ln2_gain, blk.ln2_bias, eps=LAYER_NORM_EPS)
        x = x * valid

    flat = ad.reshape(x, (B * L, d))
    last = np.arange(B) * L + (lengths - 1)
    return ad.gather_rows(flat, last)


def logits(params: EncoderParams, states: Tensor) -> Tensor:
    """Next-item scores over the n real items (pad id has no column)."""
    return ad.matmul(states, params.logits_head)


def q_values(params: EncoderParams, states: Tensor) -> Tensor:
    """Action values over the n real items; a zero state yields the bias."""
    return ad.matmul(states, params.q_head) + params.q_bias
