"""Stochastic sequence augmentations for contrastive view construction.

Each augmentation maps one item-id sequence to a perturbed copy; the
contrastive pair for a state is two independent augmentations of it. Sizes
derive from a ratio via ceiling, so a nonzero ratio always touches at least
one position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KINDS = ("permutation", "mask", "crop", "none")


@dataclass(frozen=True)
class AugmentationSpec:
    kind: str = "permutation"
    ratio: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}, expected one of {KINDS}")
        if self.kind != "none" and not 0.0 < self.ratio <= 1.0:
            raise ValueError(f"augmentation ratio must be in (0, 1], got {self.ratio}")


def _window(n: int, ratio: float, rng: np.random.Generator) -> tuple[int, int]:
    w = math.ceil(ratio * n)
    start = int(rng.integers(0, n - w + 1))
    return start, w


def permute_subsequence(seq, ratio: float, rng: np.random.Generator) -> list[int]:
    """Shuffle one contiguous window of ceil(ratio * len) items in place.

    The window start is uniform over feasible offsets; the shuffle is
    Fisher-Yates, so the item multiset is preserved exactly.
    """
    seq = list(seq)
    if not seq:
        raise ValueError("cannot augment an empty sequence")
    start, w = _window(len(seq), ratio, rng)
    window = np.array(seq[start : start + w], dtype=np.int64)
    rng.shuffle(window)
    seq[start : start + w] = window.tolist()
    return seq


def mask_items(seq, ratio: float, mask_id: int, rng: np.random.Generator) -> list[int]:
    """Replace ceil(ratio * len) distinct positions with mask_id.

    mask_id is the padding id, which embeds to zero; length and unmasked
    positions are untouched.
    """
    seq = list(seq)
    if not seq:
        raise ValueError("cannot augment an empty sequence")
    m = math.ceil(ratio * len(seq))
    for pos in rng.choice(len(seq), size=m, replace=False):
        seq[pos] = mask_id
    return seq


def crop_subsequence(seq, ratio: float, rng: np.random.Generator) -> list[int]:
    """Keep one contiguous window of ceil(ratio * len) items."""
    seq = list(seq)
    if not seq:
        raise ValueError("cannot augment an empty sequence")
    start, w = _window(len(seq), ratio, rng)
    return seq[start : start + w]


def augment(seq, spec: AugmentationSpec, mask_id: int, rng: np.random.Generator) -> list[int]:
    if spec.kind == "permutation":
        return permute_subsequence(seq, spec.ratio, rng)
    if spec.kind == "mask":
        return mask_items(seq, spec.ratio, mask_id, rng)
    if spec.kind == "crop":
        return crop_subsequence(seq, spec.ratio, rng)
    return list(seq)


def make_views(
    sequences, spec: AugmentationSpec, mask_id: int, rng: np.random.Generator
) -> tuple[list[list[int]], list[list[int]]]:
    """Two independently augmented views per sequence, in row order."""
    views_a, views_b = [], []
    for seq in sequences:
        views_a.append(augment(seq, spec, mask_id, rng))
        views_b.append(augment(seq, spec, mask_id, rng))
    return views_a, views_b
