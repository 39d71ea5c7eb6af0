"""Desk-scale sequential recommendation with a joint training objective.

A causal self-attention encoder over session histories is trained with
cross-entropy plus one-step Q-learning, a conservative penalty on sampled
negative actions, and batch-wise contrastive learning over augmented views.
Everything runs on a small hand-rolled float64 autodiff engine.
"""

from .augmentation import AugmentationSpec, crop_subsequence, make_views, mask_items, permute_subsequence
from .autodiff import GradientTape, Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    DatasetSplits,
    SessionDataset,
    SessionEvent,
    Transition,
    build_dataset,
    build_transitions,
    generate_synthetic,
    make_splits,
    parse_sessions,
    split_sessions,
)
from .encoder import EncoderConfig, EncoderParams, encode, hard_update_target, init_params, logits, make_target, q_values
from .estimator import SessionRecommender
from .metrics import (
    MetricsRecord,
    evaluate,
    hr_at_k,
    ndcg_at_k,
    q_distribution_report,
    reward_at_k,
)
from .objectives import (
    LossBreakdown,
    LossWeights,
    combined_loss,
    cql_penalty,
    cross_entropy,
    info_nce,
    snqn_loss,
    td_q_loss,
)
from .sampler import sample_negatives, sample_negatives_batch
from .trainer import Adam, TrainConfig, TrainingTrace, detect_divergence, run_single_seed, run_training, train_step

__version__ = "0.1.0"

__all__ = [
    "AugmentationSpec",
    "Adam",
    "DatasetSplits",
    "EncoderConfig",
    "EncoderParams",
    "GradientTape",
    "LossBreakdown",
    "LossWeights",
    "MetricsRecord",
    "SessionDataset",
    "SessionEvent",
    "SessionRecommender",
    "Tensor",
    "TrainConfig",
    "TrainingTrace",
    "Transition",
    "build_dataset",
    "build_transitions",
    "combined_loss",
    "cql_penalty",
    "cross_entropy",
    "crop_subsequence",
    "detect_divergence",
    "encode",
    "evaluate",
    "generate_synthetic",
    "hard_update_target",
    "hr_at_k",
    "info_nce",
    "init_params",
    "load_checkpoint",
    "logits",
    "make_splits",
    "make_target",
    "make_views",
    "mask_items",
    "ndcg_at_k",
    "parse_sessions",
    "permute_subsequence",
    "q_distribution_report",
    "q_values",
    "reward_at_k",
    "run_single_seed",
    "run_training",
    "sample_negatives",
    "sample_negatives_batch",
    "save_checkpoint",
    "snqn_loss",
    "split_sessions",
    "td_q_loss",
    "train_step",
]
