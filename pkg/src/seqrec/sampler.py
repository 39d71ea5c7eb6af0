"""Negative action sampling, disjoint from the user's whole history.

Draws are uniform over the complement of the user's full interaction
sequence (so a sampled "negative" can never be something the user actually
touched, including the current target). A popularity-weighted variant exists
behind a flag and is off by default.
"""

from __future__ import annotations

import numpy as np

# Below this multiple of k, rejection sampling wastes too many draws and we
# enumerate the complement instead.
_ENUMERATE_FACTOR = 4


def sample_negatives(
    n_items: int,
    user_items,
    k: int,
    rng: np.random.Generator,
    popularity: np.ndarray | None = None,
) -> np.ndarray:
    """k distinct item ids from [0, n_items) \\ user_items.

    Raises ValueError when fewer than k ids are available. With a popularity
    vector, draws are weighted by it over the complement instead of uniform.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    user = {i for i in user_items if 0 <= i < n_items}
    complement = n_items - len(user)
    if complement < k:
        raise ValueError(
            f"cannot sample {k} negatives: only {complement} items outside the user history"
        )

    if popularity is not None or complement < _ENUMERATE_FACTOR * k:
        candidates = np.array(sorted(set(range(n_items)) - user), dtype=np.int64)
        if popularity is None:
            return rng.choice(candidates, size=k, replace=False)
        weights = np.asarray(popularity, dtype=np.float64)[candidates]
        if weights.sum() <= 0.0:
            weights = np.ones_like(weights)
        return rng.choice(candidates, size=k, replace=False, p=weights / weights.sum())

    chosen: list[int] = []
    seen = set(user)
    while len(chosen) < k:
        for cand in rng.integers(0, n_items, size=2 * k):
            c = int(cand)
            if c in seen:
                continue
            seen.add(c)
            chosen.append(c)
            if len(chosen) == k:
                break
    return np.array(chosen, dtype=np.int64)


def sample_negatives_batch(
    n_items: int,
    histories,
    k: int,
    rng: np.random.Generator,
    popularity: np.ndarray | None = None,
) -> np.ndarray:
    """Row-stacked negatives, one independent draw per history."""
    rows = [sample_negatives(n_items, h, k, rng, popularity=popularity) for h in histories]
    if not rows:
        return np.zeros((0, k), dtype=np.int64)
    return np.stack(rows)
