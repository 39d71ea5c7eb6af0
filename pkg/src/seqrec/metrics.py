"""Ranking metrics, model evaluation, and Q-value diagnostics.

Ranking is full-catalog: every one of the n real items is scored and sorted
(descending score, ties to the lower id). The padding id has no score column,
so it can never appear in a top-k list. Hit rate and NDCG are reported
separately for purchase and click transitions; Reward@k sums the reward of
every hit over the whole evaluated set.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import encoder as enc
from .data import Transition
from .encoder import EncoderParams
from .sampler import sample_negatives

EVAL_KS = (5, 10, 20)


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries per row, ties broken by lower index."""
    order = np.argsort(-scores, axis=-1, kind="stable")
    return order[..., :k]


def hr_at_k(ranked, truth: int) -> float:
    """1.0 when the truth appears in the ranked list, else 0.0."""
    ranked = list(ranked)
    if len(set(ranked)) != len(ranked):
        raise ValueError("ranked list contains duplicate item ids")
    return 1.0 if truth in ranked else 0.0


def ndcg_at_k(ranked, truth: int) -> float:
    """1 / log2(1 + rank) with rank starting at 1, zero on a miss."""
    ranked = list(ranked)
    if len(set(ranked)) != len(ranked):
        raise ValueError("ranked list contains duplicate item ids")
    for pos, item in enumerate(ranked, start=1):
        if item == truth:
            return 1.0 / np.log2(1.0 + pos)
    return 0.0


def reward_at_k(ranked, truth: int, reward: float) -> float:
    """The transition's reward when the truth is ranked, else zero."""
    return reward if hr_at_k(ranked, truth) else 0.0


@dataclass
class SliceMetrics:
    n: int = 0
    hr: dict[int, float] = field(default_factory=dict)
    ndcg: dict[int, float] = field(default_factory=dict)


@dataclass
class MetricsRecord:
    purchase: SliceMetrics
    click: SliceMetrics
    overall: SliceMetrics
    reward_at_20: float = 0.0
    q_mean_pos: float = 0.0
    q_std_pos: float = 0.0
    q_mean_neg: float = 0.0
    q_std_neg: float = 0.0

    def selection(self) -> SliceMetrics:
        """The slice best-checkpoint selection reads: purchases when present."""
        return self.purchase if self.purchase.n > 0 else self.overall


def collate_states(transitions: list[Transition], max_len: int, pad_id: int):
    """Right-pad state sequences to max_len; returns (ids [B, L], lengths [B])."""
    B = len(transitions)
    ids = np.full((B, max_len), pad_id, dtype=np.int64)
    lengths = np.empty(B, dtype=np.int64)
    for i, tr in enumerate(transitions):
        seq = tr.state[-max_len:]
        ids[i, : len(seq)] = seq
        lengths[i] = len(seq)
    return ids, lengths


def score_transitions(
    params: EncoderParams,
    transitions: list[Transition],
    batch_size: int = 512,
    rank_by_q: bool = False,
) -> np.ndarray:
    """Full-catalog scores [N, n_items] in eval mode (no tape, no dropout)."""
    head = enc.q_values if rank_by_q else enc.logits
    rows = []
    for lo in range(0, len(transitions), batch_size):
        chunk = transitions[lo : lo + batch_size]
        ids, lengths = collate_states(chunk, params.config.max_len, params.config.pad_id)
        states = enc.encode(params, ids, lengths, train=False)
        rows.append(head(params, states).data)
    return np.concatenate(rows, axis=0) if rows else np.zeros((0, params.config.n_items))


def _slice_metrics(ranked: np.ndarray, truths: np.ndarray, ks) -> SliceMetrics:
    out = SliceMetrics(n=len(truths))
    for k in ks:
        if len(truths) == 0:
            out.hr[k] = 0.0
            out.ndcg[k] = 0.0
            continue
        hits = ranked[:, :k] == truths[:, None]
        out.hr[k] = float(hits.any(axis=1).mean())
        pos = np.argmax(hits, axis=1) + 1
        gain = np.where(hits.any(axis=1), 1.0 / np.log2(1.0 + pos), 0.0)
        out.ndcg[k] = float(gain.mean())
    return out


def evaluate(
    params: EncoderParams,
    transitions: list[Transition],
    ks=EVAL_KS,
    neg_k: int = 10,
    rng: np.random.Generator | None = None,
    batch_size: int = 512,
    rank_by_q: bool = False,
    q_sample: int | None = None,
) -> MetricsRecord:
    """Rank every transition against the full catalog and aggregate.

    The Q statistics compare the logged action's value against neg_k sampled
    negatives per transition (skipped when rng is None or neg_k is 0);
    q_sample caps how many transitions feed that diagnostic.
    """
    max_k = max(ks)
    scores = score_transitions(params, transitions, batch_size, rank_by_q)
    ranked = top_k(scores, max_k) if len(transitions) else np.zeros((0, max_k), dtype=np.int64)
    truths = np.array([t.action for t in transitions], dtype=np.int64)
    rewards = np.array([t.reward for t in transitions], dtype=np.float64)
    is_buy = np.array([t.is_buy for t in transitions], dtype=bool)

    record = MetricsRecord(
        purchase=_slice_metrics(ranked[is_buy], truths[is_buy], ks),
        click=_slice_metrics(ranked[~is_buy], truths[~is_buy], ks),
        overall=_slice_metrics(ranked, truths, ks),
    )
    if len(transitions):
        hits20 = (ranked[:, :20] == truths[:, None]).any(axis=1)
        record.reward_at_20 = float(np.sum(rewards * hits20))

    if rng is not None and neg_k > 0 and len(transitions):
        subset = transitions if q_sample is None else transitions[:q_sample]
        q_rows = score_transitions(params, subset, batch_size, rank_by_q=True)
        pos_vals = np.take_along_axis(q_rows, truths[: len(subset), None], axis=1)[:, 0]
        neg_vals = _negative_q_values(params.config.n_items, q_rows, subset, neg_k, rng)
        record.q_mean_pos = float(pos_vals.mean())
        record.q_std_pos = float(pos_vals.std())
        if neg_vals.size:
            record.q_mean_neg = float(neg_vals.mean())
            record.q_std_neg = float(neg_vals.std())
    return record


def _negative_q_values(n_items, q_rows, transitions, neg_k, rng) -> np.ndarray:
    """Q at sampled negatives, clamping k to each row's feasible complement."""
    chunks = []
    for i, tr in enumerate(transitions):
        in_range = {j for j in tr.session_items if 0 <= j < n_items}
        k_eff = min(neg_k, n_items - len(in_range))
        if k_eff < 1:
            continue
        negs = sample_negatives(n_items, tr.session_items, k_eff, rng)
        chunks.append(q_rows[i, negs])
    return np.concatenate(chunks) if chunks else np.zeros(0)


@dataclass
class QDistributionReport:
    bin_edges: np.ndarray
    pos_counts: np.ndarray
    neg_counts: np.ndarray
    pos_mean: float
    pos_std: float
    neg_mean: float
    neg_std: float
    n_pos: int
    n_neg: int


def q_distribution_report(
    params: EncoderParams,
    transitions: list[Transition],
    neg_k: int = 10,
    rng: np.random.Generator | None = None,
    bins: int = 40,
    batch_size: int = 512,
) -> QDistributionReport:
    """Histogram Q(s, a) for logged actions against sampled negative actions."""
    if rng is None:
        rng = np.random.default_rng(0)
    if not transitions:
        raise ValueError("q_distribution_report needs at least one transition")
    q_rows = score_transitions(params, transitions, batch_size, rank_by_q=True)
    truths = np.array([t.action for t in transitions], dtype=np.int64)
    pos_vals = np.take_along_axis(q_rows, truths[:, None], axis=1)[:, 0]
    neg_vals = _negative_q_values(params.config.n_items, q_rows, transitions, neg_k, rng)
    if not neg_vals.size:
        raise ValueError("no feasible negative actions to diagnose")
    lo = float(min(pos_vals.min(), neg_vals.min()))
    hi = float(max(pos_vals.max(), neg_vals.max()))
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    return QDistributionReport(
        bin_edges=edges,
        pos_counts=np.histogram(pos_vals, bins=edges)[0],
        neg_counts=np.histogram(neg_vals, bins=edges)[0],
        pos_mean=float(pos_vals.mean()),
        pos_std=float(pos_vals.std()),
        neg_mean=float(neg_vals.mean()),
        neg_std=float(neg_vals.std()),
        n_pos=len(pos_vals),
        n_neg=len(neg_vals),
    )


def write_q_report_csv(path: str | Path, report: QDistributionReport) -> None:
    """Bin rows per group, then one moments row per group.

    Moments rows reuse the schema: bin_low holds the mean, bin_high the
    standard deviation, count the sample size.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "bin_low", "bin_high", "count"])
        for group, counts in (("positive", report.pos_counts), ("negative", report.neg_counts)):
            for b in range(len(counts)):
                writer.writerow(
                    [group, repr(float(report.bin_edges[b])), repr(float(report.bin_edges[b + 1])), int(counts[b])]
                )
        writer.writerow(["positive_moments", repr(report.pos_mean), repr(report.pos_std), report.n_pos])
        writer.writerow(["negative_moments", repr(report.neg_mean), repr(report.neg_std), report.n_neg])


def popularity_ranking(train: list[Transition], n_items: int) -> np.ndarray:
    """Items by descending train-set action frequency, ties to the lower id."""
    counts = np.zeros(n_items, dtype=np.int64)
    for tr in train:
        counts[tr.action] += 1
    return np.argsort(-counts, kind="stable")


def popularity_hr_at_k(train: list[Transition], test: list[Transition], n_items: int, k: int) -> float:
    """HR@k of the frequency baseline: one global top-k list for every query."""
    if not test:
        return 0.0
    top = set(popularity_ranking(train, n_items)[:k].tolist())
    return float(np.mean([1.0 if t.action in top else 0.0 for t in test]))
