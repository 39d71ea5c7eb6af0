"""Loss terms for the joint training objective.

All loss functions take tape tensors where gradients must flow and plain
numpy arrays where they must not: bootstrapped next-state values enter as
arrays, so no gradient can reach the target network by construction. Every
loss reduces to a scalar tensor with batch-mean normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class LossWeights:
    """Scalar knobs of the combined objective.

    q_loss_weight scales the temporal-difference term, cql_min_q_weight
    scales the conservative penalty; the two conservative knobs (weight and
    logsumexp temperature) are deliberately separate parameters.
    """

    q_loss_weight: float = 0.5
    cql_min_q_weight: float = 0.1
    discount: float = 0.5
    cql_temperature: float = 1.0
    contrastive_temperature: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError(f"discount must be in [0, 1], got {self.discount}")
        if self.cql_temperature <= 0.0 or self.contrastive_temperature <= 0.0:
            raise ValueError("temperatures must be positive")


@dataclass
class LossBreakdown:
    """Unweighted component values plus the weighted total, as floats."""

    ce: float = 0.0
    q: float = 0.0
    contrastive: float = 0.0
    cql: float = 0.0
    total: float = 0.0

    def is_finite(self) -> bool:
        return bool(np.isfinite([self.ce, self.q, self.contrastive, self.cql, self.total]).all())


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-softmax probability of the target column."""
    targets = np.asarray(targets, dtype=np.int64)
    logp = ad.log_softmax(logits, axis=1)
    return -ad.gather_cols(logp, targets).mean()


def _bootstrap(rewards, q_next, done, discount: float) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=np.float64)
    done = np.asarray(done, dtype=np.float64)
    q_next = q_next.data if isinstance(q_next, Tensor) else np.asarray(q_next, dtype=np.float64)
    return rewards + discount * (1.0 - done) * q_next.max(axis=1)


def td_q_loss(q_now: Tensor, actions, rewards, q_next, done, discount: float) -> Tensor:
    """One-step TD error, squared and batch-meaned.

    q_next comes from the target network and is treated as a constant, so
    the gradient only flows through q_now at the taken action.
    """
    target = _bootstrap(rewards, q_next, done, discount)
    diff = ad.gather_cols(q_now, np.asarray(actions, dtype=np.int64)) - target
    return (diff * diff).mean()


def snqn_loss(
    q_now: Tensor,
    actions,
    rewards,
    q_next,
    done,
    negatives,
    negative_reward: float,
    discount: float,
) -> Tensor:
    """TD loss on the positive plus summed TD terms on sampled negatives.

    Each negative action is treated as if taken from the same state, earning
    negative_reward and bootstrapping through the same next state. With zero
    negatives this reduces exactly to td_q_loss.
    """
    negatives = np.asarray(negatives, dtype=np.int64)
    boot = discount * (1.0 - np.asarray(done, dtype=np.float64)) * (
        (q_next.data if isinstance(q_next, Tensor) else np.asarray(q_next, dtype=np.float64)).max(axis=1)
    )
    pos_diff = ad.gather_cols(q_now, np.asarray(actions, dtype=np.int64)) - (
        np.asarray(rewards, dtype=np.float64) + boot
    )
    per_row = pos_diff * pos_diff
    if negatives.size:
        neg_diff = ad.gather_cols(q_now, negatives) - (negative_reward + boot)[:, None]
        per_row = per_row + (neg_diff * neg_diff).sum(axis=1)
    return per_row.mean()


def cql_penalty(q_now: Tensor, actions, negatives, temperature: float = 1.0) -> Tensor:
    """Conservative gap: tau * logsumexp(support / tau) minus the positive's Q.

    The support is the sampled negatives plus the taken action, so the
    logsumexp upper-bounds the positive's Q and the penalty is non-negative.
    """
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    actions = np.asarray(actions, dtype=np.int64)
    negatives = np.asarray(negatives, dtype=np.int64)
    if negatives.ndim != 2 or negatives.shape[0] != actions.shape[0] or negatives.shape[1] < 1:
        raise ValueError(f"negatives must be [B, k>=1], got shape {negatives.shape}")
    support = np.concatenate([negatives, actions[:, None]], axis=1)
    q_support = ad.gather_cols(q_now, support)
    q_pos = ad.reshape(ad.gather_cols(q_now, actions), (actions.shape[0], 1))
    # Shift by the positive's value before the logsumexp: identical math
    # (logsumexp shift invariance), but the positive's shifted entry is
    # exactly 0, so each row's gap is non-negative even in floating point.
    shifted = (q_support - q_pos) * (1.0 / temperature)
    return ad.logsumexp(shifted, axis=1).mean() * temperature


def info_nce(anchor: Tensor, positive: Tensor, temperature: float = 1.0) -> Tensor:
    """Batch-wise InfoNCE over cosine similarities.

    Row j's positive is positive[j]; its negatives are the other rows'
    positives, so the batch must have at least two rows. Zero-norm states
    have no direction and are rejected.
    """
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    B = anchor.shape[0]
    if B < 2:
        raise ValueError(f"info_nce needs a batch of >= 2 rows, got {B}")
    if anchor.shape != positive.shape:
        raise ValueError(f"anchor shape {anchor.shape} != positive shape {positive.shape}")
    for name, t in (("anchor", anchor), ("positive", positive)):
        norms = np.sqrt((t.data * t.data).sum(axis=1))
        if (norms == 0.0).any():
            raise FloatingPointError(f"zero-norm {name} state at row {int(np.argmin(norms))}")
    a = anchor / ad.sqrt((anchor * anchor).sum(axis=1, keepdims=True))
    p = positive / ad.sqrt((positive * positive).sum(axis=1, keepdims=True))
    sim = ad.matmul(a, ad.transpose(p)) * (1.0 / temperature)
    logp = ad.log_softmax(sim, axis=1)
    return -ad.gather_cols(logp, np.arange(B)).mean()


def combined_loss(
    weights: LossWeights,
    ce: Tensor | None = None,
    q: Tensor | None = None,
    contrastive: Tensor | None = None,
    cql: Tensor | None = None,
) -> tuple[Tensor, LossBreakdown]:
    """Weighted total on the tape plus a float breakdown.

    total = ce + q_loss_weight * q + contrastive + cql_min_q_weight * cql,
    with absent components contributing exactly zero (they stay off the tape
    entirely, so disabled losses cannot leak gradients).
    """
    total: Tensor | None = None

    def accumulate(acc, term, weight):
        if term is None:
            return acc
        scaled = term if weight == 1.0 else term * weight
        return scaled if acc is None else acc + scaled

    total = accumulate(total, ce, 1.0)
    total = accumulate(total, q, weights.q_loss_weight)
    total = accumulate(total, contrastive, 1.0)
    total = accumulate(total, cql, weights.cql_min_q_weight)
    if total is None:
        raise ValueError("combined_loss needs at least one component")
    breakdown = LossBreakdown(
        ce=ce.item() if ce is not None else 0.0,
        q=q.item() if q is not None else 0.0,
        contrastive=contrastive.item() if contrastive is not None else 0.0,
        cql=cql.item() if cql is not None else 0.0,
        total=total.item(),
    )
    return total, breakdown
