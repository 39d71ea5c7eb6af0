"""Sequence augmentation: windows, multiset preservation, statistical uniformity."""

from __future__ import annotations

import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from seqrec.augmentation import (
    KINDS,
    AugmentationSpec,
    augment,
    crop_subsequence,
    make_views,
    mask_items,
    permute_subsequence,
)

MASK = 99


# ---------------------------------------------------------------- permutation


@given(st.lists(st.integers(min_value=0, max_value=50), min_size=1, max_size=12),
       st.floats(min_value=0.1, max_value=1.0), st.integers(min_value=0, max_value=10**6))
@settings(max_examples=300, deadline=None)
def test_permutation_preserves_multiset_and_length(seq, ratio, seed):
    out = permute_subsequence(seq, ratio, np.random.default_rng(seed))
    assert len(out) == len(seq)
    assert Counter(out) == Counter(seq)


def test_permutation_window_is_contiguous():
    seq = list(range(10))
    for seed in range(200):
        out = permute_subsequence(seq, 0.5, np.random.default_rng(seed))
        changed = [i for i in range(10) if out[i] != seq[i]]
        if changed:
            lo, hi = min(changed), max(changed)
            assert hi - lo + 1 <= 5  # all changes inside one ceil(0.5*10)=5 window


def test_permutation_window_start_is_uniform():
    # len 8, ratio 0.25 -> w=2, starts 0..6; a swapped pair reveals its start.
    # Conditioned on swapping (p=1/2 independent of start), starts stay uniform.
    seq = list(range(8))
    rng = np.random.default_rng(42)
    starts = Counter()
    for _ in range(40_000):
        out = permute_subsequence(seq, 0.25, rng)
        changed = [i for i in range(8) if out[i] != seq[i]]
        if changed:
            assert len(changed) == 2 and changed[1] == changed[0] + 1
            starts[changed[0]] += 1
    assert set(starts) == set(range(7))
    chi = stats.chisquare([starts[s] for s in range(7)])
    assert chi.pvalue > 1e-3


def test_permutation_full_window_hits_all_orders():
    # ratio 1.0 over 4 items: every one of the 24 orders appears in 20k draws
    seq = [0, 1, 2, 3]
    rng = np.random.default_rng(7)
    seen = Counter(tuple(permute_subsequence(seq, 1.0, rng)) for _ in range(20_000))
    assert set(seen) == set(itertools.permutations(seq))
    # and roughly uniformly: chi-square p-value not catastrophically small
    chi = stats.chisquare(list(seen.values()))
    assert chi.pvalue > 1e-3


def test_permutation_singleton_is_identity():
    assert permute_subsequence([5], 1.0, np.random.default_rng(0)) == [5]


# ---------------------------------------------------------------- mask


@given(st.lists(st.integers(min_value=0, max_value=50), min_size=1, max_size=12),
       st.floats(min_value=0.1, max_value=1.0), st.integers(min_value=0, max_value=10**6))
@settings(max_examples=300, deadline=None)
def test_mask_replaces_exactly_ceil_ratio_positions(seq, ratio, seed):
    out = mask_items(seq, ratio, MASK, np.random.default_rng(seed))
    assert len(out) == len(seq)
    m = math.ceil(ratio * len(seq))
    changed = sum(1 for a, b in zip(seq, out) if a != b)
    masked = sum(1 for v in out if v == MASK)
    assert masked >= m - seq.count(MASK)  # pre-existing MASK values tolerated
    assert changed <= m
    unmasked = [(a, b) for a, b in zip(seq, out) if b != MASK]
    assert all(a == b for a, b in unmasked)  # untouched positions keep their item


def test_mask_count_examples():
    rng = np.random.default_rng(1)
    assert sum(v == MASK for v in mask_items(list(range(10, 15)), 0.5, MASK, rng)) == 3
    assert sum(v == MASK for v in mask_items(list(range(10, 14)), 0.5, MASK, rng)) == 2
    assert mask_items([7], 0.2, MASK, rng) == [MASK]


def test_mask_positions_are_distinct_and_cover_all():
    seen = set()
    for seed in range(500):
        out = mask_items(list(range(10, 16)), 1 / 3, MASK, np.random.default_rng(seed))
        positions = tuple(i for i, v in enumerate(out) if v == MASK)
        assert len(positions) == 2
        seen.add(positions)
    assert len(seen) == math.comb(6, 2)  # every pair of positions eventually drawn


# ---------------------------------------------------------------- crop


@given(st.lists(st.integers(min_value=0, max_value=50), min_size=1, max_size=12),
       st.floats(min_value=0.1, max_value=1.0), st.integers(min_value=0, max_value=10**6))
@settings(max_examples=300, deadline=None)
def test_crop_returns_contiguous_window_of_ceil_ratio(seq, ratio, seed):
    out = crop_subsequence(seq, ratio, np.random.default_rng(seed))
    w = math.ceil(ratio * len(seq))
    assert len(out) == w
    joined = ",".join(map(str, seq))
    assert ",".join(map(str, out)) in joined  # contiguous slice of the original


def test_crop_ratio_one_is_identity():
    seq = [3, 1, 4, 1, 5]
    assert crop_subsequence(seq, 1.0, np.random.default_rng(0)) == seq


def test_crop_start_is_uniform():
    # len 9, ratio 1/3 -> w=3, starts 0..6
    rng = np.random.default_rng(11)
    counts = Counter(crop_subsequence(list(range(9)), 1 / 3, rng)[0] for _ in range(70_000))
    assert set(counts) == set(range(7))
    chi = stats.chisquare([counts[s] for s in range(7)])
    assert chi.pvalue > 1e-3


# ---------------------------------------------------------------- dispatch & views


def test_augment_dispatch_and_none():
    seq = [1, 2, 3, 4]
    rng = np.random.default_rng(0)
    assert augment(seq, AugmentationSpec(kind="none"), MASK, rng) == seq
    out = augment(seq, AugmentationSpec(kind="crop", ratio=0.5), MASK, rng)
    assert len(out) == 2
    out = augment(seq, AugmentationSpec(kind="mask", ratio=0.5), MASK, rng)
    assert sum(v == MASK for v in out) == 2
    out = augment(seq, AugmentationSpec(kind="permutation", ratio=0.5), MASK, rng)
    assert Counter(out) == Counter(seq)


def test_spec_validation():
    with pytest.raises(ValueError, match="kind"):
        AugmentationSpec(kind="reverse")
    with pytest.raises(ValueError, match="ratio"):
        AugmentationSpec(kind="mask", ratio=0.0)
    with pytest.raises(ValueError, match="ratio"):
        AugmentationSpec(kind="crop", ratio=1.5)
    AugmentationSpec(kind="none", ratio=0.0)  # ratio unused for none


def test_empty_sequence_rejected():
    rng = np.random.default_rng(0)
    for fn in (permute_subsequence, crop_subsequence):
        with pytest.raises(ValueError, match="empty"):
            fn([], 0.5, rng)
    with pytest.raises(ValueError, match="empty"):
        mask_items([], 0.5, MASK, rng)


def test_make_views_returns_two_independent_views_per_row():
    sequences = [[1, 2, 3, 4, 5, 6], [7, 8, 9, 10, 11, 12]]
    spec = AugmentationSpec(kind="permutation", ratio=1.0)
    a, b = make_views(sequences, spec, MASK, np.random.default_rng(3))
    assert len(a) == len(b) == 2
    for row, (va, vb) in enumerate(zip(a, b)):
        assert Counter(va) == Counter(sequences[row])
        assert Counter(vb) == Counter(sequences[row])
    # with full-window shuffles of 6 items, identical views are vanishingly rare
    assert any(va != vb for va, vb in zip(a, b))


def test_make_views_is_seed_deterministic():
    sequences = [[1, 2, 3, 4], [5, 6, 7, 8]]
    spec = AugmentationSpec(kind="mask", ratio=0.5)
    r1 = make_views(sequences, spec, MASK, np.random.default_rng(9))
    r2 = make_views(sequences, spec, MASK, np.random.default_rng(9))
    assert r1 == r2


def test_kinds_constant_is_stable():
    assert KINDS == ("permutation", "mask", "crop", "none")
