"""Decision values carried by the last two steps of an epoch.

Plain agreement decides a bit, leader election decides a node ID and
committee election decides a set of IDs. Internally a value is an
integer code: the bit itself, the ID itself, or an index into a table of
sets. On the wire a set travels as one message per member.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .messages import Field


class BitCodec:
    layout = (Field.FLAG, Field.FLAG)

    def copies(self, codes: np.ndarray) -> int:
        return 1

    def wire(self, codes: np.ndarray, copies: int) -> np.ndarray:
        return np.asarray(codes, dtype=np.int64).reshape(-1, 1)

    def valid(self, raw: int) -> bool:
        return raw in (0, 1)

    def decode(self, raws: list[int]) -> int | None:
        v = raws[0]
        return v if self.valid(v) else None


class IdCodec(BitCodec):
    layout = (Field.FLAG, Field.ID)

    def __init__(self, universe: int) -> None:
        self.universe = universe

    def valid(self, raw: int) -> bool:
        return 1 <= raw <= self.universe


@dataclass
class SetCodec:
    """Codes index ``table``; unseen sets get fresh codes on decode."""

    universe: int
    table: list[frozenset[int]] = field(default_factory=list)
    index: dict[frozenset[int], int] = field(default_factory=dict)
    layout = (Field.FLAG, Field.ID)

    def code(self, members) -> int:
        key = frozenset(int(x) for x in members)
        if key not in self.index:
            self.index[key] = len(self.table)
            self.table.append(key)
        return self.index[key]

    def copies(self, codes: np.ndarray) -> int:
        return max([1, *(len(self.table[c]) for c in np.asarray(codes).tolist())])

    def wire(self, codes: np.ndarray, copies: int) -> np.ndarray:
        """One ID per copy; short sets repeat their largest member, an empty
        set is sent as ID 0 (never a member)."""
        out = np.zeros((len(codes), copies), dtype=np.int64)
        for i, c in enumerate(np.asarray(codes).tolist()):
            members = sorted(self.table[c])
            if members:
                out[i, : len(members)] = members
                out[i, len(members):] = members[-1]
        return out

    def valid(self, raw: int) -> bool:
        return 0 <= raw <= self.universe

    def decode(self, raws: list[int]) -> int | None:
        if not all(self.valid(v) for v in raws):
            return None
        return self.code(v for v in raws if v)


def codec_for(mode: str, universe: int):
    if mode == "ba":
        return BitCodec()
    if mode == "leader":
        return IdCodec(universe)
    if mode == "committee":
        return SetCodec(universe)
    raise ValueError(f"unknown mode {mode!r}")


def decision_payload(ready: np.ndarray, codes: np.ndarray, codec) -> np.ndarray:
    """Payload (S, copies, 2) of (ready_out, value piece)."""
    copies = codec.copies(codes)
    out = np.empty((len(codes), copies, 2), dtype=np.int64)
    out[:, :, 0] = np.asarray(ready, dtype=np.int64)[:, None]
    out[:, :, 1] = codec.wire(codes, copies)
    return out


def decode_bad(src: np.ndarray, dst: np.ndarray, pl: np.ndarray, codec):
    """Group bad rows by (receiver, sender). The first row fixes the
    ready bit; all rows of the pair make up the value. Returns arrays
    (dst, src, ready, code) with code -1 for an undecodable value."""
    if not len(src):
        e = np.zeros(0, dtype=np.int64)
        return e, e, e, e
    out_d, out_s, out_r, out_c = [], [], [], []
    key = dst * (int(src.max()) + 1) + src
    order = np.argsort(key, kind="stable")
    key, src, dst, pl = key[order], src[order], dst[order], pl[order]
    starts = np.r_[0, np.nonzero(np.diff(key))[0] + 1]
    ends = np.r_[starts[1:], len(key)]
    for a, b in zip(starts.tolist(), ends.tolist()):
        ready = int(pl[a, 0])
        if ready not in (0, 1):
            continue
        code = codec.decode([int(v) for v in pl[a:b, 1]])
        out_d.append(int(dst[a]))
        out_s.append(int(src[a]))
        out_r.append(ready)
        out_c.append(-1 if code is None else code)
    return (np.array(out_d, dtype=np.int64), np.array(out_s, dtype=np.int64),
            np.array(out_r, dtype=np.int64), np.array(out_c, dtype=np.int64))


def tally(weights: np.ndarray, ready: np.ndarray, codes: np.ndarray,
          bad_rows: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray] | None = None):
    """Weighted vote over decision tuples.

    ``weights`` is (P, S) over good senders with tuples (ready, codes).
    ``bad_rows`` holds extra (listener position, weight, ready, code)
    entries. Returns (ready weight, not-ready weight, plurality code
    among ready tuples with ties to the smallest code, -1 if none)."""
    P = weights.shape[0]
    ready = np.asarray(ready, dtype=np.int64)
    codes = np.asarray(codes, dtype=np.int64)
    if bad_rows is None:
        e = np.zeros(0, dtype=np.int64)
        bad_rows = (e, e, e, e)
    bpos, bw, br, bc = bad_rows
    yes = weights @ (ready == 1).astype(np.int64)
    no = weights @ (ready == 0).astype(np.int64)
    np.add.at(yes, bpos[br == 1], bw[br == 1])
    np.add.at(no, bpos[br == 0], bw[br == 0])
    ok_bad = (br == 1) & (bc >= 0)
    uniq = np.unique(np.concatenate([codes[ready == 1], bc[ok_bad]]))
    best = np.full(P, -1, dtype=np.int64)
    if len(uniq):
        col = np.searchsorted(uniq, codes)
        onehot = np.zeros((len(codes), len(uniq)), dtype=np.int64)
        sel = np.nonzero(ready == 1)[0]
        onehot[sel, col[sel]] = 1
        counts = weights @ onehot
        np.add.at(counts, (bpos[ok_bad], np.searchsorted(uniq, bc[ok_bad])), bw[ok_bad])
        has = counts.max(axis=1) > 0
        best[has] = uniq[counts[has].argmax(axis=1)]
    return yes, no, best
