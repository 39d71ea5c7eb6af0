"""scikit-learn style facade over the trainer.

``SessionRecommender`` is a BaseEstimator: constructor arguments are stored
verbatim, ``fit`` consumes an event table and trains one seed, ``predict``
returns top-k next items for item-id sequences, and ``score`` is HR@10. The
heavy lifting stays in the trainer; this class is the ecosystem-facing entry
point with input validation.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import SessionEvent, Transition, build_dataset, make_splits
from .metrics import score_transitions, top_k
from .trainer import TrainConfig, run_single_seed


def _as_events(X) -> list[SessionEvent]:
    """Accept SessionEvent lists or array-likes of (session, item, ts, is_buy) rows."""
    if isinstance(X, list) and X and isinstance(X[0], SessionEvent):
        return X
    arr = np.asarray(X)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError(f"X must be [n_events, 4] (session_id, item_id, timestamp, is_buy), got shape {arr.shape}")
    events = []
    for row in arr:
        events.append(SessionEvent(int(row[0]), int(row[1]), float(row[2]), bool(int(row[3]))))
    return events


class SessionRecommender(BaseEstimator):
    """Next-item recommender trained with the joint objective.

    Parameters mirror the flat training-config keys. ``fit(X)`` takes an
    event table of shape [n_events, 4] with columns (session_id, item_id,
    timestamp, is_buy); raw item ids may be arbitrary integers and are
    densified internally.
    """

    def __init__(
        self,
        objective_mode: str = "ccql",
        hidden_size: int = 64,
        num_blocks: int = 2,
        num_heads: int = 1,
        max_len: int = 10,
        dropout: float = 0.1,
        batch_size: int = 64,
        learning_rate: float = 0.001,
        steps: int = 2000,
        eval_every: int = 200,
        discount: float = 0.5,
        q_loss_weight: float = 0.5,
        cql_min_q_weight: float = 0.1,
        cql_temperature: float = 1.0,
        contrastive_temperature: float = 1.0,
        contrastive_loss: str = "infonce_cosine",
        augmentation: str = "permutation",
        augmentation_ratio: float = 0.5,
        negative_samples: int = 10,
        negative_reward: float = -1.0,
        target_update_every: int = 500,
        divergence_q_threshold: float = 50.0,
        r_click: float = 0.2,
        r_buy: float = 1.0,
        seed: int = 1,
    ):
        self.objective_mode = objective_mode
        self.hidden_size = hidden_size
        self.num_blocks = num_blocks
        self.num_heads = num_heads
        self.max_len = max_len
        self.dropout = dropout
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.steps = steps
        self.eval_every = eval_every
        self.discount = discount
        self.q_loss_weight = q_loss_weight
        self.cql_min_q_weight = cql_min_q_weight
        self.cql_temperature = cql_temperature
        self.contrastive_temperature = contrastive_temperature
        self.contrastive_loss = contrastive_loss
        self.augmentation = augmentation
        self.augmentation_ratio = augmentation_ratio
        self.negative_samples = negative_samples
        self.negative_reward = negative_reward
        self.target_update_every = target_update_every
        self.divergence_q_threshold = divergence_q_threshold
        self.r_click = r_click
        self.r_buy = r_buy
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            hidden_size=self.hidden_size,
            learning_rate=self.learning_rate,
            discount=self.discount,
            contrastive_loss=self.contrastive_loss,
            augmentation=self.augmentation,
            augmentation_ratio=self.augmentation_ratio,
            negative_reward=self.negative_reward,
            negative_samples=self.negative_samples,
            cql_temperature=self.cql_temperature,
            cql_min_q_weight=self.cql_min_q_weight,
            q_loss_weight=self.q_loss_weight,
            contrastive_temperature=self.contrastive_temperature,
            objective_mode=self.objective_mode,
            max_len=self.max_len,
            num_blocks=self.num_blocks,
            num_heads=self.num_heads,
            dropout=self.dropout,
            r_click=self.r_click,
            r_buy=self.r_buy,
            steps=self.steps,
            eval_every=self.eval_every,
            target_update_every=self.target_update_every,
            seeds=(self.seed,),
            divergence_q_threshold=self.divergence_q_threshold,
        )

    def fit(self, X, y=None) -> "SessionRecommender":
        """Train on an event table; y is ignored (targets come from the sessions)."""
        events = _as_events(X)
        dataset = build_dataset(events)
        if not dataset.sessions:
            raise ValueError("no usable sessions: every session needs >= 2 events")
        config = self._train_config()
        splits = make_splits(dataset, config.max_len, config.r_click, config.r_buy)
        if not splits.train:
            raise ValueError("training split is empty; provide more sessions")
        trace = run_single_seed(splits, config, self.seed)
        self.trace_ = trace
        self.n_items_ = dataset.n_items
        self.id_map_ = dict(dataset.id_map)
        self.inverse_id_map_ = {v: k for k, v in dataset.id_map.items()}
        self.params_ = trace.final_params
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("this SessionRecommender is not fitted; call fit first")

    def _validate_sequences(self, X) -> list[list[int]]:
        seqs = []
        for i, seq in enumerate(X):
            seq = [int(v) for v in seq]
            if not seq:
                raise ValueError(f"sequence {i} is empty")
            mapped = []
            for v in seq:
                if v in self.id_map_:
                    mapped.append(self.id_map_[v])
                else:
                    raise ValueError(f"sequence {i} contains unseen item id {v}")
            seqs.append(mapped[-self.max_len:])
        return seqs

    def predict_scores(self, X) -> np.ndarray:
        """Full-catalog next-item scores [len(X), n_items] (dense item ids)."""
        self._check_fitted()
        seqs = self._validate_sequences(X)
        transitions = [
            Transition(tuple(s), 0, 0.0, tuple(s), False, False, frozenset(s)) for s in seqs
        ]
        return score_transitions(self.params_, transitions)

    def predict(self, X, k: int = 10) -> np.ndarray:
        """Top-k next raw item ids per sequence, best first."""
        scores = self.predict_scores(X)
        dense = top_k(scores, k)
        to_raw = np.vectorize(self.inverse_id_map_.get)
        return to_raw(dense)

    def score(self, X, y) -> float:
        """HR@10: fraction of sequences whose true next item ranks in the top 10."""
        preds = self.predict(X, k=10)
        y = np.asarray(y)
        return float(np.mean([y[i] in preds[i] for i in range(len(y))]))
