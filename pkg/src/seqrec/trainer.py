"""Training loop: Adam over the joint objective, traces, divergence watch.

One gradient tape is rebuilt per step. The bootstrapped target network is a
deep parameter copy refreshed on a hard schedule and never watched, so no
gradient can reach it. A step whose loss comes out non-finite is aborted
before the parameter update and counts as a divergence signal.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import encoder as enc
from . import objectives as obj
from .augmentation import KINDS as AUGMENTATION_KINDS
from .augmentation import AugmentationSpec, make_views
from .checkpoint import save_checkpoint
from .data import DatasetSplits, Transition
from .encoder import EncoderConfig, EncoderParams, hard_update_target, init_params, make_target
from .metrics import collate_states, evaluate, score_transitions
from .objectives import LossBreakdown, LossWeights
from .sampler import sample_negatives_batch

OBJECTIVE_MODES = ("supervised", "ac", "co", "snqn", "ccql")
CONTRASTIVE_LOSSES = ("infonce_cosine",)
THREADS_ENV_VAR = "SEQREC_THREADS"

TRACE_COLUMNS = [
    "step", "loss_total", "loss_ce", "loss_q", "loss_co", "loss_cql",
    "hr5", "ndcg5", "hr10", "ndcg10", "hr20", "ndcg20",
    "reward20", "q_mean_pos", "q_mean_neg", "diverged",
]

# Consecutive evals below half the running-max HR@10 that flag divergence.
_HR_COLLAPSE_PATIENCE = 3
_PROBE_SIZE = 256


class ConfigError(ValueError):
    pass


def _canonical_contrastive(name: str) -> str:
    flat = str(name).replace("_", "").replace("-", "").lower()
    for known in CONTRASTIVE_LOSSES:
        if flat == known.replace("_", ""):
            return known
    raise ConfigError(f"unknown contrastive_loss {name!r}, expected one of {CONTRASTIVE_LOSSES}")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    hidden_size: int = 64
    learning_rate: float = 0.001
    discount: float = 0.5
    contrastive_loss: str = "infonce_cosine"
    augmentation: str = "permutation"
    augmentation_ratio: float = 0.5
    negative_reward: float = -1.0
    negative_samples: int = 10
    cql_temperature: float = 1.0
    cql_min_q_weight: float = 0.1
    q_loss_weight: float = 0.5
    contrastive_temperature: float = 1.0
    objective_mode: str = "ccql"
    max_len: int = 10
    num_blocks: int = 2
    num_heads: int = 1
    dropout: float = 0.1
    r_click: float = 0.2
    r_buy: float = 1.0
    steps: int = 2000
    eval_every: int = 200
    target_update_every: int = 500
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    divergence_q_threshold: float = 50.0
    popularity_negatives: bool = False

    def __post_init__(self):
        if self.objective_mode not in OBJECTIVE_MODES:
            raise ConfigError(
                f"unknown objective_mode {self.objective_mode!r}, expected one of {OBJECTIVE_MODES}"
            )
        if self.augmentation not in AUGMENTATION_KINDS:
            raise ConfigError(
                f"unknown augmentation {self.augmentation!r}, expected one of {AUGMENTATION_KINDS}"
            )
        object.__setattr__(self, "contrastive_loss", _canonical_contrastive(self.contrastive_loss))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.uses_contrastive() and self.batch_size < 2:
            raise ConfigError("contrastive training needs batch_size >= 2")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.target_update_every < 1:
            raise ConfigError(f"target_update_every must be >= 1, got {self.target_update_every}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.discount <= 1.0:
            raise ConfigError(f"discount must be in [0, 1], got {self.discount}")
        if self.negative_samples < 0:
            raise ConfigError(f"negative_samples must be >= 0, got {self.negative_samples}")
        if self.uses_cql() and self.negative_samples < 1:
            raise ConfigError("ccql mode needs negative_samples >= 1")
        if self.cql_temperature <= 0 or self.contrastive_temperature <= 0:
            raise ConfigError("temperatures must be positive")
        if self.divergence_q_threshold <= 0:
            raise ConfigError("divergence_q_threshold must be positive")

    def uses_q(self) -> bool:
        return self.objective_mode in ("ac", "snqn", "ccql")

    def uses_cql(self) -> bool:
        return self.objective_mode == "ccql"

    def uses_contrastive(self) -> bool:
        return self.objective_mode in ("co", "ccql")

    def uses_negatives(self) -> bool:
        return self.objective_mode in ("snqn", "ccql")

    def encoder_config(self, n_items: int) -> EncoderConfig:
        return EncoderConfig(
            n_items=n_items,
            hidden_size=self.hidden_size,
            num_blocks=self.num_blocks,
            num_heads=self.num_heads,
            max_len=self.max_len,
            dropout=self.dropout,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            q_loss_weight=self.q_loss_weight,
            cql_min_q_weight=self.cql_min_q_weight,
            discount=self.discount,
            cql_temperature=self.cql_temperature,
            contrastive_temperature=self.contrastive_temperature,
        )

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        for key in raw:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
        return cls(**raw)

    @classmethod
    def from_json_file(cls, path: str | Path) -> "TrainConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(raw)


class Adam:
    """Adam with bias correction; tensors without a gradient are skipped."""

    def __init__(self, tensors, lr: float = 0.001, betas=(0.9, 0.999), eps: float = 1e-8):
        self.tensors = list(tensors)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(t.data) for t in self.tensors]
        self.v = [np.zeros_like(t.data) for t in self.tensors]

    def step(self) -> None:
        self.t += 1
        correct1 = 1.0 - self.beta1**self.t
        correct2 = 1.0 - self.beta2**self.t
        for i, tensor in enumerate(self.tensors):
            g = tensor.grad
            if g is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            mhat = self.m[i] / correct1
            vhat = self.v[i] / correct2
            tensor.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class Batch:
    states: np.ndarray
    lengths: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    next_lengths: np.ndarray
    done: np.ndarray
    histories: list[frozenset]


def collate_batch(transitions: list[Transition], max_len: int, pad_id: int) -> Batch:
    states, lengths = collate_states(transitions, max_len, pad_id)
    B = len(transitions)
    nxt = np.full((B, max_len), pad_id, dtype=np.int64)
    nxt_len = np.empty(B, dtype=np.int64)
    for i, tr in enumerate(transitions):
        seq = tr.next_state[-max_len:]
        nxt[i, : len(seq)] = seq
        nxt_len[i] = len(seq)
    return Batch(
        states=states,
        lengths=lengths,
        actions=np.array([t.action for t in transitions], dtype=np.int64),
        rewards=np.array([t.reward for t in transitions], dtype=np.float64),
        next_states=nxt,
        next_lengths=nxt_len,
        done=np.array([t.done for t in transitions], dtype=np.float64),
        histories=[t.session_items for t in transitions],
    )


@dataclass
class StepRngs:
    dropout: np.random.Generator
    negatives: np.random.Generator
    augment: np.random.Generator
    batching: np.random.Generator


def make_rngs(seed: int) -> tuple[np.random.Generator, StepRngs]:
    """Philox streams (counter-based) split off one seed: init + 4 step streams."""
    children = np.random.SeedSequence(seed).spawn(5)
    gens = [np.random.Generator(np.random.Philox(c)) for c in children]
    return gens[0], StepRngs(*gens[1:])


def train_step(
    params: EncoderParams,
    target: EncoderParams,
    transitions: list[Transition],
    config: TrainConfig,
    rngs: StepRngs,
    adam: Adam,
    popularity: np.ndarray | None = None,
) -> tuple[LossBreakdown, bool]:
    """One optimization step. Returns the loss breakdown and whether the
    parameter update was applied (False means a non-finite loss aborted it)."""
    cfg = params.config
    batch = collate_batch(transitions, cfg.max_len, cfg.pad_id)
    weights = config.loss_weights()

    q_next = None
    if config.uses_q():
        next_states = enc.encode(target, batch.next_states, batch.next_lengths, train=False)
        q_next = enc.q_values(target, next_states).data
    negatives = None
    if config.uses_negatives():
        negatives = sample_negatives_batch(
            cfg.n_items, batch.histories, config.negative_samples, rngs.negatives,
            popularity=popularity,
        ) if config.negative_samples > 0 else np.zeros((len(transitions), 0), dtype=np.int64)

    tape = ad.GradientTape()
    with tape:
        params.watch_all(tape)
        states = enc.encode(params, batch.states, batch.lengths, train=True, rng=rngs.dropout)
        ce = obj.cross_entropy(enc.logits(params, states), batch.actions)
        q_term = cql_term = co_term = None
        if config.uses_q():
            q_now = enc.q_values(params, states)
            if config.objective_mode == "snqn":
                q_term = obj.snqn_loss(
                    q_now, batch.actions, batch.rewards, q_next, batch.done,
                    negatives, config.negative_reward, config.discount,
                )
            else:
                q_term = obj.td_q_loss(
                    q_now, batch.actions, batch.rewards, q_next, batch.done, config.discount
                )
            if config.uses_cql():
                cql_term = obj.cql_penalty(q_now, batch.actions, negatives, config.cql_temperature)
        if config.uses_contrastive():
            spec = AugmentationSpec(config.augmentation, config.augmentation_ratio)
            views_a, views_b = make_views(
                [list(t.state[-cfg.max_len:]) for t in transitions], spec, cfg.pad_id, rngs.augment
            )
            # one doubled-batch encode, then split: same math, half the tape nodes
            ids, lens = _pad_views(views_a + views_b, cfg.max_len, cfg.pad_id)
            z = enc.encode(params, ids, lens, train=True, rng=rngs.dropout)
            B = len(transitions)
            za = ad.slice_axis(z, 0, 0, B)
            zb = ad.slice_axis(z, 0, B, 2 * B)
            co_term = obj.info_nce(za, zb, config.contrastive_temperature)
        total, breakdown = obj.combined_loss(weights, ce=ce, q=q_term, contrastive=co_term, cql=cql_term)

    if not breakdown.is_finite():
        return breakdown, False
    tape.backward(total)
    adam.step()
    params.zero_pad_row()
    return breakdown, True


def _pad_views(views: list[list[int]], max_len: int, pad_id: int):
    ids = np.full((len(views), max_len), pad_id, dtype=np.int64)
    lengths = np.empty(len(views), dtype=np.int64)
    for i, seq in enumerate(views):
        ids[i, : len(seq)] = seq
        lengths[i] = len(seq)
    return ids, lengths


@dataclass
class TraceRow:
    step: int
    losses: LossBreakdown
    hr: dict[int, float]
    ndcg: dict[int, float]
    reward20: float
    q_mean_pos: float
    q_mean_neg: float
    diverged: int = 0
    probe_q_abs: float = 0.0  # in-memory only, not a trace CSV column


@dataclass
class TrainingTrace:
    seed: int
    rows: list[TraceRow] = field(default_factory=list)
    step_losses: list[LossBreakdown] = field(default_factory=list)
    divergence_step: int | None = None
    best_step: int | None = None
    best_hr10: float = float("-inf")
    top_evals: list[tuple[float, int]] = field(default_factory=list)
    final_params: EncoderParams | None = None

    def top5_mean_hr10(self) -> float:
        """Mean validation HR@10 over the (up to) five best evals of the run."""
        if not self.top_evals:
            return 0.0
        return float(np.mean([hr for hr, _ in self.top_evals]))


def detect_divergence(
    hr10: list[float],
    probe_q_abs: list[float],
    nonfinite: list[bool],
    threshold: float,
) -> int | None:
    """Index of the first diverged eval, or None.

    Fires on: non-finite training loss since the previous eval, probe
    mean |Q| above the threshold, or HR@10 below half its running max for
    three consecutive evals.
    """
    run_max = float("-inf")
    consecutive = 0
    for i, hr in enumerate(hr10):
        if nonfinite[i] or probe_q_abs[i] > threshold:
            return i
        run_max = max(run_max, hr)
        if hr < 0.5 * run_max:
            consecutive += 1
        else:
            consecutive = 0
        if consecutive >= _HR_COLLAPSE_PATIENCE:
            return i
    return None


def _probe_q_abs(params: EncoderParams, probe: list[Transition]) -> float:
    if not probe:
        return 0.0
    q = score_transitions(params, probe, rank_by_q=True)
    return float(np.abs(q).mean())


def run_single_seed(
    splits: DatasetSplits,
    config: TrainConfig,
    seed: int,
    out_dir: str | Path | None = None,
) -> TrainingTrace:
    if not splits.train:
        raise ValueError("training split is empty")
    enc_cfg = config.encoder_config(splits.n_items)
    rng_init, rngs = make_rngs(seed)
    params = init_params(enc_cfg, rng_init)
    target = make_target(params)
    adam = Adam([t for _, t in params.named_tensors()], lr=config.learning_rate)
    popularity = None
    if config.popularity_negatives:
        counts = np.zeros(splits.n_items)
        for tr in splits.train:
            counts[tr.action] += 1
        popularity = counts

    trace = TrainingTrace(seed=seed)
    probe = splits.val[: min(_PROBE_SIZE, len(splits.val))]
    ckpt_path = Path(out_dir) / f"seed{seed}_best.ckpt" if out_dir is not None else None
    if ckpt_path is not None:
        save_checkpoint(ckpt_path, params)

    effective_batch = min(config.batch_size, len(splits.train))
    index_buffer: list[int] = []
    hr10s: list[float] = []
    probes: list[float] = []
    nonfinite_flags: list[bool] = []
    saw_nonfinite = False

    for step in range(1, config.steps + 1):
        while len(index_buffer) < effective_batch:
            index_buffer.extend(rngs.batching.permutation(len(splits.train)).tolist())
        chunk = [splits.train[i] for i in index_buffer[:effective_batch]]
        del index_buffer[:effective_batch]

        breakdown, stepped = train_step(params, target, chunk, config, rngs, adam, popularity)
        trace.step_losses.append(breakdown)
        if not stepped:
            saw_nonfinite = True

        if config.uses_q() and step % config.target_update_every == 0:
            hard_update_target(target, params)

        if step % config.eval_every == 0:
            eval_rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, step, 101])))
            record = evaluate(params, splits.val, neg_k=10, rng=eval_rng, q_sample=512)
            sel = record.selection()
            row = TraceRow(
                step=step,
                losses=breakdown,
                hr=dict(sel.hr),
                ndcg=dict(sel.ndcg),
                reward20=record.reward_at_20,
                q_mean_pos=record.q_mean_pos,
                q_mean_neg=record.q_mean_neg,
                probe_q_abs=_probe_q_abs(params, probe),
            )
            trace.rows.append(row)
            hr10s.append(row.hr.get(10, 0.0))
            probes.append(row.probe_q_abs)
            nonfinite_flags.append(saw_nonfinite)
            saw_nonfinite = False

            hr10 = row.hr.get(10, 0.0)
            trace.top_evals.append((hr10, step))
            trace.top_evals.sort(key=lambda p: (-p[0], p[1]))
            del trace.top_evals[5:]
            if hr10 > trace.best_hr10:
                trace.best_hr10 = hr10
                trace.best_step = step
                if ckpt_path is not None:
                    save_checkpoint(ckpt_path, params)

            flagged = detect_divergence(
                hr10s, probes, nonfinite_flags, config.divergence_q_threshold
            )
            if flagged is not None:
                trace.divergence_step = trace.rows[flagged].step
                for r in trace.rows[flagged:]:
                    r.diverged = 1
                break

    trace.final_params = params
    if out_dir is not None:
        write_trace_csv(Path(out_dir) / f"trace_seed{seed}.csv", trace)
    return trace


def _run_seed_job(args) -> tuple[int, TrainingTrace]:
    splits, config, seed, out_dir = args
    return seed, run_single_seed(splits, config, seed, out_dir)


def run_training(
    splits: DatasetSplits,
    config: TrainConfig,
    out_dir: str | Path | None = None,
    threads: int | None = None,
) -> dict[int, TrainingTrace]:
    """Train every configured seed; SEQREC_THREADS > 1 runs seeds in parallel
    processes (per-seed outputs are independent, so results are unchanged)."""
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV_VAR, "1") or "1")
    jobs = [(splits, config, seed, out_dir) for seed in config.seeds]
    traces: dict[int, TrainingTrace] = {}
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            for seed, trace in pool.map(_run_seed_job, jobs):
                traces[seed] = trace
    else:
        for job in jobs:
            seed, trace = _run_seed_job(job)
            traces[seed] = trace
    return traces


def write_trace_csv(path: str | Path, trace: TrainingTrace) -> None:
    """One row per evaluation; floats via repr so identical runs match bytewise."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for row in trace.rows:
            writer.writerow(
                [
                    row.step,
                    repr(row.losses.total), repr(row.losses.ce), repr(row.losses.q),
                    repr(row.losses.contrastive), repr(row.losses.cql),
                    repr(row.hr.get(5, 0.0)), repr(row.ndcg.get(5, 0.0)),
                    repr(row.hr.get(10, 0.0)), repr(row.ndcg.get(10, 0.0)),
                    repr(row.hr.get(20, 0.0)), repr(row.ndcg.get(20, 0.0)),
                    repr(row.reward20), repr(row.q_mean_pos), repr(row.q_mean_neg),
                    row.diverged,
                ]
            )


def read_trace_csv(path: str | Path) -> list[dict[str, float]]:
    rows: list[dict[str, float]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty trace file") from None
        if header != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected trace columns {header}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(TRACE_COLUMNS):
                raise ValueError(f"{path}: truncated row at line {line}")
            rows.append({c: float(v) for c, v in zip(TRACE_COLUMNS, row)})
    return rows
