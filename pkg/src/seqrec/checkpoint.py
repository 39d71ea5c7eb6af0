"""Flat binary checkpoint format for encoder parameters.

Layout (all integers little-endian, all floats IEEE-754 binary64
little-endian):

    offset  size  field
    0       4     magic bytes "SRQC"
    4       4     format version, u32 (currently 1)
    8       4     n_items, u32
    12      4     hidden_size, u32
    16      4     num_blocks, u32
    20      4     num_heads, u32
    24      4     max_len, u32
    28      8     dropout, f64
    36      4     array count, u32
    40      ...   arrays, each:
                      u16   name length in bytes
                      ...   name, utf-8
                      u8    ndim
                      u32*  dims
                      f64*  row-major data

Arrays appear in parameter declaration order: item_embedding,
positional_embedding, then per block wq, wk, wv, wo, w1, b1, w2, b2,
ln1_gain, ln1_bias, ln2_gain, ln2_bias, then logits_head, q_head, q_bias.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .encoder import BlockParams, EncoderConfig, EncoderParams
from .autodiff import Tensor

MAGIC = b"SRQC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, params: EncoderParams) -> None:
    cfg = params.config
    named = params.named_tensors()
    chunks = [
        MAGIC,
        struct.pack(
            "<IIIIII",
            VERSION,
            cfg.n_items,
            cfg.hidden_size,
            cfg.num_blocks,
            cfg.num_heads,
            cfg.max_len,
        ),
        struct.pack("<d", cfg.dropout),
        struct.pack("<I", len(named)),
    ]
    for name, tensor in named:
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(tensor.data, dtype="<f8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> EncoderParams:
    buf = Path(path).read_bytes()
    if len(buf) < 40 or buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, n_items, hidden, num_blocks, num_heads, max_len = struct.unpack_from("<IIIIII", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (dropout,) = struct.unpack_from("<d", buf, 28)
    (count,) = struct.unpack_from("<I", buf, 36)
    offset = 40

    def need(n: int) -> None:
        if offset + n > len(buf):
            raise CheckpointError(f"{path}: truncated checkpoint")

    arrays: dict[str, np.ndarray] = {}
    order: list[str] = []
    for _ in range(count):
        need(2)
        (name_len,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        need(name_len)
        try:
            name = buf[offset : offset + name_len].decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"{path}: corrupt array name") from None
        offset += name_len
        need(1)
        (ndim,) = struct.unpack_from("<B", buf, offset)
        offset += 1
        need(4 * ndim)
        dims = struct.unpack_from(f"<{ndim}I", buf, offset)
        offset += 4 * ndim
        size = int(np.prod(dims)) if ndim else 1
        need(8 * size)
        data = np.frombuffer(buf, dtype="<f8", count=size, offset=offset).reshape(dims)
        offset += 8 * size
        arrays[name] = np.array(data, dtype=np.float64)
        order.append(name)
    if offset != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - offset} trailing bytes")

    config = EncoderConfig(
        n_items=n_items,
        hidden_size=hidden,
        num_blocks=num_blocks,
        num_heads=num_heads,
        max_len=max_len,
        dropout=dropout,
    )
    try:
        params = EncoderParams(
            config=config,
            item_embedding=Tensor(arrays.pop("item_embedding")),
            positional_embedding=Tensor(arrays.pop("positional_embedding")),
        )
        for i in range(num_blocks):
            fields = {
                f: Tensor(arrays.pop(f"block{i}.{f}"))
                for f in ("wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2",
                          "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias")
            }
            params.blocks.append(BlockParams(**fields))
        params.logits_head = Tensor(arrays.pop("logits_head"))
        params.q_head = Tensor(arrays.pop("q_head"))
        params.q_bias = Tensor(arrays.pop("q_bias"))
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing array {exc.args[0]}") from None
    if arrays:
        raise CheckpointError(f"{path}: unexpected arrays {sorted(arrays)}")

    expected = [n for n, _ in params.named_tensors()]
    if order != expected:
        raise CheckpointError(f"{path}: arrays out of declaration order")
    for name, tensor in params.named_tensors():
        want = _expected_shape(name, config)
        if want is not None and tensor.data.shape != want:
            raise CheckpointError(f"{path}: {name} has shape {tensor.data.shape}, expected {want}")
    return params


def _expected_shape(name: str, cfg: EncoderConfig) -> tuple[int, ...] | None:
    d, dff, n = cfg.hidden_size, cfg.d_ff, cfg.n_items
    base = name.split(".")[-1]
    table = {
        "item_embedding": (n + 1, d),
        "positional_embedding": (cfg.max_len, d),
        "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
        "w1": (d, dff), "b1": (dff,), "w2": (dff, d), "b2": (d,),
        "ln1_gain": (d,), "ln1_bias": (d,), "ln2_gain": (d,), "ln2_bias": (d,),
        "logits_head": (d, n), "q_head": (d, n), "q_bias": (n,),
    }
    return table.get(base)
