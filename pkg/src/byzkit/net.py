"""Synchronous round engine with KT0 ports, authenticated senders and a
budgeted rushing adversary.

Nodes are addressed internally by index; index order equals ID order, so
sorting by index is sorting by ID. Good traffic comes in two shapes:

* ``PointBatch``: explicit (sender, receiver, payload) rows.
* ``MulticastBatch``: one payload per sender, delivered to a boolean mask
  of receivers (broadcasts and view-wide sends). Accounting charges one
  message per (sender, receiver) edge and per carried copy.

Adversary traffic is always a ``PointBatch`` and is charged against the
bit budget in emission order; the first row that does not fit ends the
adversary's output for that round.
"""

from __future__ import annotations

import copy
import json
import logging
import zlib
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .messages import Field, Message, Tag, check_congest, layout_bits, LAYOUTS
from .params import ConfigError, ProtocolParams

if TYPE_CHECKING:
    from .adversary import AdversaryStrategy

log = logging.getLogger(__name__)


class KT0Violation(RuntimeError):
    """A good node tried to address a node it has not heard from."""


class ForgedSender(RuntimeError):
    """A batch claimed a sender outside its allowed set."""


@dataclass(frozen=True)
class Envelope:
    sender: int
    receiver: int
    via_port: int
    msg: Message
    round: int


@dataclass(frozen=True)
class ReplyHandle:
    holder: int
    target: int


@dataclass
class PointBatch:
    tag: Tag
    src: np.ndarray
    dst: np.ndarray
    payload: np.ndarray
    layout: tuple[Field, ...] | None = None

    def __post_init__(self) -> None:
        self.src = np.asarray(self.src, dtype=np.int64).reshape(-1)
        self.dst = np.asarray(self.dst, dtype=np.int64).reshape(-1)
        nf = len(self.fields)
        self.payload = np.asarray(self.payload, dtype=np.int64).reshape(len(self.src), nf)
        if len(self.src) != len(self.dst):
            raise ValueError("src and dst lengths differ")

    @property
    def fields(self) -> tuple[Field, ...]:
        return LAYOUTS[self.tag] if self.layout is None else self.layout

    def __len__(self) -> int:
        return len(self.src)

    def head(self, m: int) -> "PointBatch":
        return PointBatch(self.tag, self.src[:m], self.dst[:m], self.payload[:m], self.layout)


@dataclass
class MulticastBatch:
    """Sender ``src[i]`` sends ``payload[i, c]`` for each copy c to every
    receiver where ``mask[i]`` is set."""

    tag: Tag
    src: np.ndarray
    mask: np.ndarray
    payload: np.ndarray
    layout: tuple[Field, ...] | None = None

    def __post_init__(self) -> None:
        self.src = np.asarray(self.src, dtype=np.int64).reshape(-1)
        self.mask = np.asarray(self.mask, dtype=bool)
        nf = len(self.fields)
        pl = np.asarray(self.payload, dtype=np.int64)
        if pl.ndim == 2:
            pl = pl[:, None, :]
        if len(self.src):
            self.payload = pl.reshape(len(self.src), -1, nf)
        else:
            self.payload = np.zeros((0, pl.shape[1] if pl.ndim == 3 else 1, nf), dtype=np.int64)
        self.mask[np.arange(len(self.src)), self.src] = False

    @property
    def fields(self) -> tuple[Field, ...]:
        return LAYOUTS[self.tag] if self.layout is None else self.layout

    @property
    def copies(self) -> int:
        return self.payload.shape[1]

    def edge_count(self) -> int:
        return int(self.mask.sum()) * self.copies


Batch = PointBatch | MulticastBatch


@dataclass
class EpochCounters:
    good_bits: int = 0
    good_msgs: int = 0
    bad_bits: int = 0
    bad_msgs: int = 0
    rounds: int = 0


@dataclass
class Metrics:
    good_bits: int = 0
    good_msgs: int = 0
    bad_bits: int = 0
    bad_msgs: int = 0
    rounds: int = 0
    epochs: int = 0
    bad_dropped_msgs: int = 0
    per_epoch_breakdown: list[EpochCounters] = field(default_factory=list)

    def snapshot(self) -> "Metrics":
        return copy.deepcopy(self)

    def _charge(self, good: bool, msgs: int, bits: int) -> None:
        cur = self.per_epoch_breakdown[-1] if self.per_epoch_breakdown else None
        if good:
            self.good_msgs += msgs
            self.good_bits += bits
            if cur is not None:
                cur.good_msgs += msgs
                cur.good_bits += bits
        else:
            self.bad_msgs += msgs
            self.bad_bits += bits
            if cur is not None:
                cur.bad_msgs += msgs
                cur.bad_bits += bits


@dataclass
class RoundContext:
    """What the protocol is doing this round; visible to the adversary."""

    phase: str
    epoch: int = 0
    info: dict = field(default_factory=dict)


def _label_key(label: object) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label)
    return zlib.crc32(str(label).encode())


def assign_ids(params: ProtocolParams) -> np.ndarray:
    """Distinct sorted IDs in [1, n^k], deterministic in the master seed."""
    n, universe = params.n, params.id_universe
    rng = np.random.default_rng(np.random.SeedSequence(params.master_seed, spawn_key=(_label_key("ids"),)))
    if universe == n:
        return np.arange(1, n + 1, dtype=np.int64)
    chosen: set[int] = set()
    while len(chosen) < n:
        draw = rng.integers(1, universe + 1, size=n - len(chosen))
        chosen.update(int(x) for x in draw)
    return np.array(sorted(chosen), dtype=np.int64)


@dataclass
class Delivery:
    round: int
    good: list[Batch]
    bad: list[PointBatch]
    world: "World"

    def point_rows(self, tag: Tag) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All point-to-point rows with ``tag`` (good and bad), ordered by
        (receiver, sender) with emission order kept within a pair."""
        parts = [b for b in [*self.good, *self.bad] if isinstance(b, PointBatch) and b.tag == tag]
        if not parts:
            nf = len(LAYOUTS[tag])
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, np.zeros((0, nf), dtype=np.int64)
        src = np.concatenate([b.src for b in parts])
        dst = np.concatenate([b.dst for b in parts])
        nf = max(len(b.fields) for b in parts)
        pl = np.concatenate([_pad(b.payload, nf) for b in parts])
        order = np.lexsort((src, dst))
        return src[order], dst[order], pl[order]

    def bad_rows(self, tag: Tag) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        parts = [b for b in self.bad if b.tag == tag]
        if not parts:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, np.zeros((0, len(LAYOUTS[tag])), dtype=np.int64)
        src = np.concatenate([b.src for b in parts])
        dst = np.concatenate([b.dst for b in parts])
        nf = max(len(b.fields) for b in parts)
        pl = np.concatenate([_pad(b.payload, nf) for b in parts])
        order = np.lexsort((src, dst))
        return src[order], dst[order], pl[order]

    def multicasts(self, tag: Tag) -> list[MulticastBatch]:
        return [b for b in self.good if isinstance(b, MulticastBatch) and b.tag == tag]

    def heard(self, tag: Tag) -> np.ndarray:
        """Boolean matrix R[receiver, sender]: received at least one ``tag``."""
        n = self.world.n
        heard = np.zeros((n, n), dtype=bool)
        for b in self.multicasts(tag):
            heard[:, b.src] |= b.mask.T
        src, dst, _ = self.point_rows(tag)
        heard[dst, src] = True
        return heard

    def inbox(self, receiver: int) -> list[Envelope]:
        """Envelopes delivered to ``receiver`` this round, ordered by sender ID."""
        w = self.world
        out: list[tuple[int, int, Envelope]] = []
        seq = 0
        for b in [*self.good, *self.bad]:
            if isinstance(b, PointBatch):
                for i in np.nonzero(b.dst == receiver)[0]:
                    s = int(b.src[i])
                    msg = Message(b.tag, tuple(int(x) for x in b.payload[i]), b.layout)
                    out.append((s, seq, Envelope(int(w.ids[s]), int(w.ids[receiver]), w.port_of(receiver, s), msg, self.round)))
                    seq += 1
            else:
                for i in np.nonzero(b.mask[:, receiver])[0]:
                    s = int(b.src[i])
                    for c in range(b.copies):
                        msg = Message(b.tag, tuple(int(x) for x in b.payload[i, c]), b.layout)
                        out.append((s, seq, Envelope(int(w.ids[s]), int(w.ids[receiver]), w.port_of(receiver, s), msg, self.round)))
                        seq += 1
        out.sort(key=lambda e: (e[0], e[1]))
        return [e[2] for e in out]


def _pad(payload: np.ndarray, nf: int) -> np.ndarray:
    if payload.shape[1] == nf:
        return payload
    out = np.zeros((payload.shape[0], nf), dtype=np.int64)
    out[:, : payload.shape[1]] = payload
    return out


class World:
    """Simulated network: node set, ports, static bad set, metrics."""

    def __init__(
        self,
        params: ProtocolParams,
        t_budget: float,
        bad_ids: Iterable[int],
        ids: np.ndarray | None = None,
        trace: bool = False,
    ) -> None:
        self.params = params
        self.n = params.n
        self.ids = assign_ids(params) if ids is None else np.asarray(ids, dtype=np.int64)
        if len(self.ids) != self.n or len(np.unique(self.ids)) != self.n:
            raise ConfigError("node IDs must be n distinct values")
        if self.ids.min() < 1 or self.ids.max() > params.id_universe:
            raise ConfigError("node IDs must lie in [1, n^k]")
        if np.any(np.diff(self.ids) <= 0):
            raise ConfigError("node IDs must be sorted ascending")
        bad_list = list(bad_ids)
        if len(set(bad_list)) != len(bad_list):
            raise ConfigError("bad selection contains duplicates")
        if len(bad_list) != params.t:
            raise ConfigError(f"bad selection has {len(bad_list)} IDs, expected t={params.t}")
        bad_idx = self.index_of(bad_list) if bad_list else np.zeros(0, dtype=np.int64)
        self.bad = np.zeros(self.n, dtype=bool)
        self.bad[bad_idx] = True
        self.bad.setflags(write=False)
        self.bad_set = frozenset(int(x) for x in bad_list)
        self.good_idx = np.nonzero(~self.bad)[0]
        self.bad_idx = np.nonzero(self.bad)[0]
        if t_budget < 0:
            raise ConfigError("adversary budget must be non-negative")
        self.t_budget = t_budget
        self.round = 0
        self.metrics = Metrics()
        self.known = np.zeros((self.n, self.n), dtype=bool)
        self._perm = self._draw_ports()
        self._port_of: np.ndarray | None = None
        self.trace: list[str] | None = [] if trace else None
        self.state = None  # protocol state, readable by the adversary
        self.adv_memory: dict = {}  # per-trial scratch space of the adversary

    # identity and randomness

    def index_of(self, ids: Iterable[int] | int) -> np.ndarray:
        arr = np.atleast_1d(np.asarray(ids, dtype=np.int64))
        pos = np.searchsorted(self.ids, arr)
        if np.any(pos >= self.n) or np.any(self.ids[np.minimum(pos, self.n - 1)] != arr):
            raise ConfigError("unknown node ID")
        return pos

    def rng(self, *labels: object) -> np.random.Generator:
        key = tuple(_label_key(x) for x in labels)
        return np.random.default_rng(np.random.SeedSequence(self.params.master_seed, spawn_key=key))

    # ports

    def _draw_ports(self) -> np.ndarray:
        n = self.n
        rng = self.rng("ports")
        base = np.tile(np.arange(n - 1, dtype=np.int32), (n, 1))
        perm = rng.permuted(base, axis=1)
        perm += perm >= np.arange(n, dtype=np.int32)[:, None]
        return perm

    @property
    def port_permutations(self) -> np.ndarray:
        return self._perm

    def port_target(self, node: np.ndarray | int, port: np.ndarray | int) -> np.ndarray:
        return self._perm[node, port]

    def port_of(self, receiver: int, sender: int) -> int:
        """Port at ``receiver`` through which ``sender`` arrives."""
        if self._port_of is None:
            n = self.n
            inv = np.empty((n, n), dtype=np.int32)
            inv[np.arange(n)[:, None], self._perm] = np.arange(n - 1, dtype=np.int32)[None, :]
            inv[np.arange(n), np.arange(n)] = -1
            self._port_of = inv
        return int(self._port_of[receiver, sender])

    def port_directory(self, node: int) -> dict[int, int]:
        senders = np.nonzero(self.known[node])[0]
        return {self.port_of(node, int(s)): int(self.ids[s]) for s in senders}

    def reply_handle(self, env: Envelope) -> ReplyHandle:
        holder = int(self.index_of(env.receiver)[0])
        target = int(self.index_of(env.sender)[0])
        if not self.known[holder, target]:
            raise KT0Violation("envelope was never delivered to this node")
        return ReplyHandle(holder, target)

    # constructing good sends

    def to_ports(self, tag: Tag, src, ports, payload, layout=None) -> PointBatch:
        src = np.asarray(src, dtype=np.int64)
        ports = np.asarray(ports, dtype=np.int64)
        if np.any(ports < 0) or np.any(ports >= self.n - 1):
            raise ValueError("port index out of range")
        return PointBatch(tag, src, self._perm[src, ports], payload, layout)

    def to_known(self, tag: Tag, src, dst, payload, layout=None) -> PointBatch:
        """Send to IDs learned from earlier receipts (reply capabilities)."""
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        if len(src) and not np.all(self.known[src, dst]):
            raise KT0Violation("good node addressed an ID it never heard from")
        return PointBatch(tag, src, dst, payload, layout)

    def reply(self, handle: ReplyHandle, msg: Message) -> PointBatch:
        if not isinstance(handle, ReplyHandle) or not self.known[handle.holder, handle.target]:
            raise KT0Violation("forged reply handle")
        return PointBatch(msg.tag, [handle.holder], [handle.target], [msg.payload], msg.layout)

    def broadcast(self, tag: Tag, src, payload, layout=None) -> MulticastBatch:
        src = np.asarray(src, dtype=np.int64)
        mask = np.ones((len(src), self.n), dtype=bool)
        return MulticastBatch(tag, src, mask, payload, layout)

    def multicast_known(self, tag: Tag, src, mask, payload, layout=None) -> MulticastBatch:
        src = np.asarray(src, dtype=np.int64)
        mask = np.asarray(mask, dtype=bool).copy()
        mask[np.arange(len(src)), src] = False
        if np.any(mask & ~self.known[src]):
            raise KT0Violation("good node multicast to an ID it never heard from")
        return MulticastBatch(tag, src, mask, payload, layout)

    # the round itself

    def begin_epoch(self) -> None:
        self.metrics.epochs += 1
        self.metrics.per_epoch_breakdown.append(EpochCounters())

    @property
    def budget_left(self) -> float:
        return self.t_budget - self.metrics.bad_bits

    def execute_round(
        self,
        good: Sequence[Batch],
        adversary: "AdversaryStrategy | None" = None,
        ctx: RoundContext | None = None,
    ) -> Delivery:
        ctx = ctx or RoundContext("round")
        good = [b for b in good if (len(b) if isinstance(b, PointBatch) else len(b.src))]
        for b in good:
            if np.any(self.bad[b.src]):
                raise ForgedSender("good batch contains a bad sender")
        planned = adversary.plan_round(self, good, ctx) if adversary is not None else []
        bad: list[PointBatch] = []
        remaining = self.budget_left
        dropped = 0
        exhausted = False
        for b in planned:
            if not len(b):
                continue
            if not np.all(self.bad[b.src]):
                raise ForgedSender("adversary tried to send from a good node")
            if exhausted:
                dropped += len(b)
                continue
            bits = layout_bits(b.fields, self.n, self.params.k)
            check_congest(bits, self.n)
            fit = len(b) if bits == 0 else int(min(len(b), remaining // bits))
            if fit < len(b):
                exhausted = True
                dropped += len(b) - fit
            if fit:
                bad.append(b.head(fit))
                remaining -= fit * bits
        if dropped:
            self.metrics.bad_dropped_msgs += dropped
            log.debug("round %d: dropped %d adversary messages over budget", self.round, dropped)

        for b in good:
            bits = layout_bits(b.fields, self.n, self.params.k)
            check_congest(bits, self.n)
            if isinstance(b, PointBatch):
                self.known[b.dst, b.src] = True
                msgs = len(b)
            else:
                self.known[:, b.src] |= b.mask.T
                msgs = b.edge_count()
            self.metrics._charge(True, msgs, msgs * bits)
        for b in bad:
            bits = layout_bits(b.fields, self.n, self.params.k)
            self.known[b.dst, b.src] = True
            self.metrics._charge(False, len(b), len(b) * bits)

        delivery = Delivery(self.round, good, bad, self)
        if self.trace is not None:
            self._record_trace(delivery)
        self.round += 1
        self.metrics.rounds += 1
        if self.metrics.per_epoch_breakdown:
            self.metrics.per_epoch_breakdown[-1].rounds += 1
        return delivery

    def _record_trace(self, d: Delivery) -> None:
        rows: list[tuple[int, int, int, str, int]] = []
        seq = 0
        for b in [*d.good, *d.bad]:
            bits = layout_bits(b.fields, self.n, self.params.k)
            name = b.tag.name
            if isinstance(b, PointBatch):
                for s, r in zip(b.src.tolist(), b.dst.tolist()):
                    rows.append((r, s, seq, name, bits))
                    seq += 1
            else:
                for i, s in enumerate(b.src.tolist()):
                    for r in np.nonzero(b.mask[i])[0].tolist():
                        for _ in range(b.copies):
                            rows.append((r, s, seq, name, bits))
                            seq += 1
        rows.sort()
        ids = self.ids
        for r, s, _, name, bits in rows:
            self.trace.append(
                json.dumps({"round": d.round, "sender": int(ids[s]), "receiver": int(ids[r]), "tag": name, "bits": bits})
            )

    def snapshot_metrics(self) -> Metrics:
        return self.metrics.snapshot()


def init_world(
    params: ProtocolParams,
    t_budget: float,
    bad_selection: Iterable[int],
    ids: np.ndarray | None = None,
    trace: bool = False,
) -> World:
    return World(params, t_budget, bad_selection, ids=ids, trace=trace)


def execute_round(world: World, good_outboxes: Sequence[Batch], adversary=None, ctx=None) -> Delivery:
    return world.execute_round(good_outboxes, adversary, ctx)


def snapshot_metrics(world: World) -> Metrics:
    return world.snapshot_metrics()


def reply_handle(world: World, received: Envelope) -> ReplyHandle:
    return world.reply_handle(received)


def write_trace(world: World, path) -> None:
    if world.trace is None:
        raise ValueError("world was created without tracing")
    with open(path, "w") as fh:
        for line in world.trace:
            fh.write(line + "\n")
