"""Session logs: CSV parsing, transition construction, splits, synthesis.

The on-disk event format is a CSV with header ``session_id,item_id,timestamp,
is_buy``. Raw item ids densify to [0, n) by sorted order, and the mapping can
be persisted as a two-column sidecar. Sessions shorter than two events carry
no next-item signal and are dropped (but counted).

The synthetic generator plants a first-order Markov chain with one dominant
successor per item and persists the chain so oracles can score against the
planted structure.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

EVENT_HEADER = ["session_id", "item_id", "timestamp", "is_buy"]
CHAIN_HEADER = ["from_item", "to_item", "prob"]
ID_MAP_HEADER = ["raw_item_id", "dense_id"]

DEFAULT_R_CLICK = 0.2
DEFAULT_R_BUY = 1.0
DEFAULT_SPLIT_FRACTIONS = (0.8, 0.1, 0.1)
# Splits must reconstruct identically across subcommands, so the shuffle seed
# is a constant rather than one of the training seeds.
SPLIT_SEED = 0

_ALTERNATE_SUCCESSORS = 4


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class SessionEvent:
    session_id: int
    item_id: int
    timestamp: float
    is_buy: bool


@dataclass(frozen=True)
class Transition:
    """One next-item decision: the prefix seen so far and what came next.

    state/next_state are unpadded id tuples holding at most max_len most
    recent items; session_items is the full session's item set, carried so
    the negative sampler can stay disjoint from the whole history.
    """

    state: tuple[int, ...]
    action: int
    reward: float
    next_state: tuple[int, ...]
    done: bool
    is_buy: bool
    session_items: frozenset[int]


@dataclass
class SessionDataset:
    sessions: dict[int, list[SessionEvent]]
    n_items: int
    id_map: dict[int, int]
    dropped_sessions: int = 0

    @property
    def n_sessions(self) -> int:
        return len(self.sessions)


@dataclass
class DatasetSplits:
    train: list[Transition]
    val: list[Transition]
    test: list[Transition]
    n_items: int
    dropped_sessions: int = 0
    session_counts: tuple[int, int, int] = (0, 0, 0)


def _parse_int(value: str, line: int, column: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ParseError(f"line {line}: {column} must be an integer, got {value!r}") from None


def parse_events(path: str | Path) -> list[SessionEvent]:
    """Raw events from CSV, ids untouched. Raises ParseError with line numbers."""
    events: list[SessionEvent] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return events
        if header != EVENT_HEADER:
            raise ParseError(f"line 1: expected header {','.join(EVENT_HEADER)}, got {','.join(header)}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"line {line}: expected 4 fields, got {len(row)}")
            sid = _parse_int(row[0], line, "session_id")
            item = _parse_int(row[1], line, "item_id")
            try:
                ts = float(row[2])
            except ValueError:
                raise ParseError(f"line {line}: timestamp must be a number, got {row[2]!r}") from None
            buy = _parse_int(row[3], line, "is_buy")
            if buy not in (0, 1):
                raise ParseError(f"line {line}: is_buy must be 0 or 1, got {buy}")
            events.append(SessionEvent(sid, item, ts, bool(buy)))
    return events


def build_dataset(events: list[SessionEvent], min_session_len: int = 2) -> SessionDataset:
    """Densify item ids (sorted raw order), group and time-sort sessions."""
    raw_ids = sorted({e.item_id for e in events})
    id_map = {raw: dense for dense, raw in enumerate(raw_ids)}
    by_session: dict[int, list[SessionEvent]] = {}
    for e in events:
        by_session.setdefault(e.session_id, []).append(e)
    sessions: dict[int, list[SessionEvent]] = {}
    dropped = 0
    for sid in sorted(by_session):
        evs = sorted(by_session[sid], key=lambda e: e.timestamp)  # ties keep file order
        if len(evs) < min_session_len:
            dropped += 1
            continue
        sessions[sid] = [
            SessionEvent(sid, id_map[e.item_id], e.timestamp, e.is_buy) for e in evs
        ]
    return SessionDataset(sessions=sessions, n_items=len(raw_ids), id_map=id_map, dropped_sessions=dropped)


def parse_sessions(path: str | Path) -> SessionDataset:
    return build_dataset(parse_events(path))


def build_transitions(
    sessions: list[list[SessionEvent]],
    max_len: int,
    r_click: float = DEFAULT_R_CLICK,
    r_buy: float = DEFAULT_R_BUY,
) -> list[Transition]:
    """One transition per predicted position; a session of m events yields m-1."""
    out: list[Transition] = []
    for events in sessions:
        items = [e.item_id for e in events]
        full = frozenset(items)
        for t in range(1, len(items)):
            target = events[t]
            out.append(
                Transition(
                    state=tuple(items[max(0, t - max_len) : t]),
                    action=target.item_id,
                    reward=r_buy if target.is_buy else r_click,
                    next_state=tuple(items[max(0, t + 1 - max_len) : t + 1]),
                    done=t == len(items) - 1,
                    is_buy=target.is_buy,
                    session_items=full,
                )
            )
    return out


def split_sessions(
    dataset: SessionDataset,
    fractions: tuple[float, float, float] = DEFAULT_SPLIT_FRACTIONS,
    seed: int = SPLIT_SEED,
) -> tuple[list[list[SessionEvent]], list[list[SessionEvent]], list[list[SessionEvent]]]:
    """Session-level split: every transition of a session lands in one part."""
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise ValueError(f"split fractions must be non-negative and sum to 1, got {fractions}")
    sids = np.array(sorted(dataset.sessions), dtype=np.int64)
    rng = np.random.default_rng(seed)
    rng.shuffle(sids)
    n = len(sids)
    cut1 = int(round(fractions[0] * n))
    cut2 = int(round((fractions[0] + fractions[1]) * n))
    parts = (sids[:cut1], sids[cut1:cut2], sids[cut2:])
    return tuple([dataset.sessions[int(s)] for s in part] for part in parts)


def make_splits(
    dataset: SessionDataset,
    max_len: int,
    r_click: float = DEFAULT_R_CLICK,
    r_buy: float = DEFAULT_R_BUY,
    fractions: tuple[float, float, float] = DEFAULT_SPLIT_FRACTIONS,
    seed: int = SPLIT_SEED,
) -> DatasetSplits:
    train_s, val_s, test_s = split_sessions(dataset, fractions, seed)
    return DatasetSplits(
        train=build_transitions(train_s, max_len, r_click, r_buy),
        val=build_transitions(val_s, max_len, r_click, r_buy),
        test=build_transitions(test_s, max_len, r_click, r_buy),
        n_items=dataset.n_items,
        dropped_sessions=dataset.dropped_sessions,
        session_counts=(len(train_s), len(val_s), len(test_s)),
    )


def generate_synthetic(
    n_items: int,
    n_sessions: int,
    horizon: int,
    buy_prob: float,
    seed: int,
    dominance: float = 0.6,
) -> tuple[list[SessionEvent], np.ndarray]:
    """Sessions walked from a planted first-order Markov chain.

    Each item's successor row puts `dominance` mass on one dominant item and
    spreads the rest uniformly over four alternates; dominance 1.0 plants a
    deterministic chain. Returns the events and the [n, n] row-stochastic
    transition matrix.
    """
    if n_items < 10:
        raise ValueError(f"synthetic generation needs n_items >= 10, got {n_items}")
    if horizon < 2:
        raise ValueError(f"horizon must be >= 2, got {horizon}")
    if not 0.0 <= buy_prob <= 1.0:
        raise ValueError(f"buy_prob must be in [0, 1], got {buy_prob}")
    if not 0.0 < dominance <= 1.0:
        raise ValueError(f"dominance must be in (0, 1], got {dominance}")

    rng = np.random.default_rng(seed)
    chain = np.zeros((n_items, n_items))
    for i in range(n_items):
        others = np.delete(np.arange(n_items), i)
        dom = int(rng.choice(others))
        chain[i, dom] = dominance
        if dominance < 1.0:
            pool = np.array([j for j in others if j != dom])
            alts = rng.choice(pool, size=_ALTERNATE_SUCCESSORS, replace=False)
            chain[i, alts] = (1.0 - dominance) / _ALTERNATE_SUCCESSORS

    events: list[SessionEvent] = []
    for sid in range(n_sessions):
        cur = int(rng.integers(0, n_items))
        for step in range(horizon):
            events.append(SessionEvent(sid, cur, float(step), bool(rng.random() < buy_prob)))
            cur = int(rng.choice(n_items, p=chain[cur]))
    return events, chain


def write_events_csv(path: str | Path, events: list[SessionEvent]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVENT_HEADER)
        for e in events:
            ts = int(e.timestamp) if float(e.timestamp).is_integer() else e.timestamp
            writer.writerow([e.session_id, e.item_id, ts, int(e.is_buy)])


def write_chain_csv(path: str | Path, chain: np.ndarray) -> None:
    """Sparse row dump of the planted chain (zero entries omitted)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CHAIN_HEADER)
        for i, j in zip(*np.nonzero(chain)):
            writer.writerow([int(i), int(j), repr(float(chain[i, j]))])


def read_chain_csv(path: str | Path) -> np.ndarray:
    rows: list[tuple[int, int, float]] = []
    n = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CHAIN_HEADER:
            raise ParseError(f"line 1: expected header {','.join(CHAIN_HEADER)}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            i = _parse_int(row[0], line, "from_item")
            j = _parse_int(row[1], line, "to_item")
            rows.append((i, j, float(row[2])))
            n = max(n, i + 1, j + 1)
    chain = np.zeros((n, n))
    for i, j, p in rows:
        chain[i, j] = p
    return chain


def write_id_map_csv(path: str | Path, id_map: dict[int, int]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ID_MAP_HEADER)
        for raw in sorted(id_map):
            writer.writerow([raw, id_map[raw]])


def read_id_map_csv(path: str | Path) -> dict[int, int]:
    out: dict[int, int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ID_MAP_HEADER:
            raise ParseError(f"line 1: expected header {','.join(ID_MAP_HEADER)}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            out[_parse_int(row[0], line, "raw_item_id")] = _parse_int(row[1], line, "dense_id")
    return out
