"""Encoder tests: reference forward pass, causality, padding neutrality, heads."""

from __future__ import annotations

import numpy as np
import pytest

import seqrec.autodiff as ad
from seqrec.autodiff import GradientTape, Tensor
from seqrec.encoder import (
    EncoderConfig,
    encode,
    hard_update_target,
    init_params,
    logits,
    make_target,
    q_values,
)

from oracles import encoder_reference

RNG = np.random.default_rng(777)


def small_params(n_items=7, hidden=8, blocks=2, heads=2, max_len=6, dropout=0.1, seed=5):
    cfg = EncoderConfig(
        n_items=n_items,
        hidden_size=hidden,
        num_blocks=blocks,
        num_heads=heads,
        max_len=max_len,
        dropout=dropout,
    )
    return init_params(cfg, np.random.default_rng(seed))


def random_batch(rng, n_items, B, L):
    lengths = rng.integers(1, L + 1, size=B)
    batch = np.full((B, L), n_items, dtype=np.int64)
    for i, ln in enumerate(lengths):
        batch[i, :ln] = rng.integers(0, n_items, size=ln)
    return batch, lengths


# ---------------------------------------------------------------- reference


def test_forward_matches_straight_line_reference():
    params = small_params()
    for trial in range(20):
        rng = np.random.default_rng(100 + trial)
        batch, lengths = random_batch(rng, 7, B=5, L=6)
        got = encode(params, batch, lengths).data
        want = encoder_reference(params, batch, lengths)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_forward_single_head_matches_reference():
    params = small_params(heads=1, blocks=1)
    rng = np.random.default_rng(0)
    batch, lengths = random_batch(rng, 7, B=4, L=6)
    np.testing.assert_allclose(
        encode(params, batch, lengths).data,
        encoder_reference(params, batch, lengths),
        rtol=1e-12,
        atol=1e-12,
    )


# ---------------------------------------------------------------- causality


def test_future_items_cannot_affect_state():
    # state at a row's last valid position is invariant to whatever sits
    # beyond that length, whether real items or pads
    params = small_params()
    n, L = 7, 6
    for trial in range(50):
        rng = np.random.default_rng(2000 + trial)
        t = int(rng.integers(1, L))  # observed prefix length
        prefix = rng.integers(0, n, size=t)
        a = np.full((1, L), params.config.pad_id, dtype=np.int64)
        b = np.full((1, L), params.config.pad_id, dtype=np.int64)
        a[0, :t] = prefix
        b[0, :t] = prefix
        b[0, t:] = rng.integers(0, n, size=L - t)  # different future
        lengths = np.array([t])
        sa = encode(params, a, lengths).data
        sb = encode(params, b, lengths).data
        assert np.array_equal(sa, sb)


def test_pad_extension_is_neutral():
    params = small_params()
    n = 7
    for trial in range(50):
        rng = np.random.default_rng(3000 + trial)
        t = int(rng.integers(1, 6))
        prefix = rng.integers(0, n, size=t)
        lengths = np.array([t])
        short = encode(params, prefix[None, :], lengths).data
        for L in range(t + 1, 7):
            padded = np.full((1, L), params.config.pad_id, dtype=np.int64)
            padded[0, :t] = prefix
            wide = encode(params, padded, lengths).data
            assert np.array_equal(short, wide)


def test_rows_are_independent():
    params = small_params()
    rng = np.random.default_rng(4)
    batch, lengths = random_batch(rng, 7, B=6, L=6)
    full = encode(params, batch, lengths).data
    for i in range(6):
        alone = encode(params, batch[i : i + 1], lengths[i : i + 1]).data
        np.testing.assert_allclose(full[i], alone[0], rtol=1e-12, atol=1e-12)


# ---------------------------------------------------------------- init & heads


def test_init_pins_pad_row_and_zero_q_head():
    params = small_params()
    cfg = params.config
    assert np.array_equal(params.item_embedding.data[cfg.pad_id], np.zeros(cfg.hidden_size))
    assert np.array_equal(params.q_head.data, np.zeros((cfg.hidden_size, cfg.n_items)))
    assert np.array_equal(params.q_bias.data, np.zeros(cfg.n_items))


def test_init_is_seed_deterministic():
    a = small_params(seed=9)
    b = small_params(seed=9)
    c = small_params(seed=10)
    for (name, ta), (_, tb) in zip(a.named_tensors(), b.named_tensors()):
        assert np.array_equal(ta.data, tb.data), name
    assert any(
        not np.array_equal(ta.data, tc.data)
        for (_, ta), (_, tc) in zip(a.named_tensors(), c.named_tensors())
    )


def test_heads_on_zero_state():
    params = small_params()
    zero = Tensor(np.zeros((2, params.config.hidden_size)))
    assert np.array_equal(logits(params, zero).data, np.zeros((2, 7)))
    assert np.array_equal(q_values(params, zero).data, np.zeros((2, 7)))


def test_q_values_start_at_zero_for_any_input():
    params = small_params()
    batch, lengths = random_batch(np.random.default_rng(8), 7, B=4, L=6)
    states = encode(params, batch, lengths)
    assert np.array_equal(q_values(params, states).data, np.zeros((4, 7)))


def test_logits_exclude_pad_column():
    params = small_params()
    states = encode(params, np.array([[1, 2]]), np.array([2]))
    assert logits(params, states).data.shape == (1, 7)
    assert q_values(params, states).data.shape == (1, 7)


def test_multi_head_changes_result_but_keeps_shape():
    one = small_params(heads=1, seed=3)
    two = small_params(heads=2, seed=3)
    batch, lengths = random_batch(np.random.default_rng(1), 7, B=3, L=6)
    s1 = encode(one, batch, lengths).data
    s2 = encode(two, batch, lengths).data
    assert s1.shape == s2.shape == (3, 8)
    assert not np.allclose(s1, s2)


# ---------------------------------------------------------------- validation


def test_config_validation():
    with pytest.raises(ValueError, match="divisible"):
        EncoderConfig(n_items=5, hidden_size=6, num_heads=4)
    with pytest.raises(ValueError, match="n_items"):
        EncoderConfig(n_items=0)
    with pytest.raises(ValueError, match="dropout"):
        EncoderConfig(n_items=5, dropout=1.0)


def test_encode_input_validation():
    params = small_params()
    pad = params.config.pad_id
    with pytest.raises(ValueError, match="max_len"):
        encode(params, np.full((1, 9), 0), np.array([9]))
    with pytest.raises(ValueError, match="2-D"):
        encode(params, np.array([1, 2, 3]), np.array([3]))
    with pytest.raises(ValueError, match="lengths"):
        encode(params, np.array([[1, 2]]), np.array([1, 2]))
    with pytest.raises(ValueError, match=r"\[1, L\]"):
        encode(params, np.array([[1, 2]]), np.array([0]))
    with pytest.raises(ValueError, match=r"\[1, L\]"):
        encode(params, np.array([[1, 2]]), np.array([3]))
    with pytest.raises(IndexError, match=str(pad + 1)):
        encode(params, np.array([[pad + 1, 2]]), np.array([2]))
    with pytest.raises(ValueError, match="rng"):
        encode(params, np.array([[1, 2]]), np.array([2]), train=True)


# ---------------------------------------------------------------- dropout


def test_train_mode_dropout_is_seed_deterministic():
    params = small_params(dropout=0.4)
    batch, lengths = random_batch(np.random.default_rng(2), 7, B=4, L=6)
    a = encode(params, batch, lengths, train=True, rng=np.random.default_rng(5)).data
    b = encode(params, batch, lengths, train=True, rng=np.random.default_rng(5)).data
    c = encode(params, batch, lengths, train=True, rng=np.random.default_rng(6)).data
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_eval_mode_ignores_rng_and_dropout():
    params = small_params(dropout=0.4)
    batch, lengths = random_batch(np.random.default_rng(2), 7, B=4, L=6)
    a = encode(params, batch, lengths).data
    b = encode(params, batch, lengths, train=False, rng=np.random.default_rng(5)).data
    assert np.array_equal(a, b)


def test_zero_dropout_train_equals_eval():
    params = small_params(dropout=0.0)
    batch, lengths = random_batch(np.random.default_rng(2), 7, B=4, L=6)
    a = encode(params, batch, lengths, train=True).data
    b = encode(params, batch, lengths).data
    assert np.array_equal(a, b)


# ---------------------------------------------------------------- gradients


def test_backward_reaches_every_parameter():
    params = small_params(dropout=0.0)
    batch, lengths = random_batch(np.random.default_rng(3), 7, B=4, L=6)
    with GradientTape() as tape:
        params.watch_all(tape)
        states = encode(params, batch, lengths)
        loss = logits(params, states).sum() + q_values(params, states).sum()
    tape.backward(loss)
    for name, t in params.named_tensors():
        assert t.grad is not None, name
        assert t.grad.shape == t.data.shape, name
    assert np.abs(params.item_embedding.grad).sum() > 0.0


def test_shared_state_feeds_both_heads_via_one_tape_node():
    params = small_params(dropout=0.0)
    with GradientTape() as tape:
        params.watch_all(tape)
        states = encode(params, np.array([[1, 2, 3]]), np.array([3]))
        lg = logits(params, states)
        qv = q_values(params, states)
    lookup = {t._tape_id: pids for t, pids in tape.nodes}
    assert states._tape_id in lookup[lg._tape_id]
    q_matmul_parents = lookup[qv._tape_id]  # qv = matmul(...) + bias
    matmul_id = next(p for p in q_matmul_parents if p != params.q_bias._tape_id)
    assert states._tape_id in lookup[matmul_id]


# ---------------------------------------------------------------- target network


def test_make_target_is_independent_copy():
    params = small_params()
    target = make_target(params)
    for (name, tp), (_, tt) in zip(params.named_tensors(), target.named_tensors()):
        assert np.array_equal(tp.data, tt.data), name
    params.item_embedding.data[0] += 1.0
    assert not np.array_equal(params.item_embedding.data, target.item_embedding.data)


def test_hard_update_copies_current_values():
    params = small_params(seed=1)
    target = make_target(small_params(seed=2))
    hard_update_target(target, params)
    for (name, tp), (_, tt) in zip(params.named_tensors(), target.named_tensors()):
        assert np.array_equal(tp.data, tt.data), name
    params.q_head.data += 1.0  # still no sharing after the update
    assert not np.array_equal(params.q_head.data, target.q_head.data)


def test_target_forward_records_nothing_on_tape():
    params = small_params(dropout=0.0)
    target = make_target(params)
    batch, lengths = random_batch(np.random.default_rng(4), 7, B=3, L=6)
    with GradientTape() as tape:
        params.watch_all(tape)
        n_before = len(tape.nodes)
        tq = q_values(target, encode(target, batch, lengths))
        assert len(tape.nodes) == n_before  # constant subgraph, never taped
        states = encode(params, batch, lengths)
        loss = (q_values(params, states) * Tensor(tq.data)).sum() + logits(
            params, states
        ).sum()
    tape.backward(loss)
    for name, t in target.named_tensors():
        assert t.grad is None, name


def test_zero_pad_row_restores_invariant():
    params = small_params()
    params.item_embedding.data[params.config.pad_id] = 5.0
    params.zero_pad_row()
    assert np.array_equal(params.item_embedding.data[params.config.pad_id], np.zeros(8))
