"""Intra-committee primitives: phase-king Byzantine agreement and
lightest-bin (Feige) election.

Both run over a ``Group``: the good members of one committee, each with
its own local view of who else belongs. Views may differ on bad IDs. A
member only counts messages from senders in its local view; a missing
first-round vote counts as 0.

Phase king (three rounds per phase, tolerates f < m/3 for local size m,
f = ceil(m/3) - 1):

1. vote: send the current bit; propose b if at least m - f votes say b.
2. propose: send the proposal (2 means none); adopt b if more than f
   proposals say b; the value is *strong* if at least m - f do.
3. king: the phase king sends its bit; members whose value is not
   strong take it (0 if the king stays silent).

Kings are the local members ordered by a public hash, one per phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .messages import Tag
from .net import RoundContext, World
from .sampler import CommitteeId, prf

NO_PROPOSAL = 2


@dataclass
class Group:
    """Good members (node indices) and their local member views (P x n)."""

    members: np.ndarray
    local: np.ndarray

    def __post_init__(self) -> None:
        self.members = np.asarray(self.members, dtype=np.int64)
        self.local = np.asarray(self.local, dtype=bool).copy()
        self.local[np.arange(len(self.members)), self.members] = True

    @property
    def size(self) -> np.ndarray:
        return self.local.sum(axis=1)

    @property
    def fault_bound(self) -> np.ndarray:
        return np.ceil(self.size / 3).astype(np.int64) - 1


@dataclass
class RoundLog:
    rounds: int = 0
    sent: np.ndarray | None = None  # per-member message count

    def add(self, counts: np.ndarray) -> None:
        self.rounds += 1
        self.sent = counts.copy() if self.sent is None else self.sent + counts


def _accept_matrix(group: Group, mask: np.ndarray) -> np.ndarray:
    """R[y, x]: member y accepts member x's multicast (x sent to y and y
    counts x as a member)."""
    sent = mask[:, group.members]
    return sent.T & group.local[:, group.members]


def _bad_tally(world: World, delivery, group: Group, step: int, copies: int, values: int):
    """First message per (receiver, sender, copy) from bad senders with the
    right step, restricted to senders in the receiver's local view.

    Returns counts[member, copy, value] for value in range(values)."""
    counts = np.zeros((len(group.members), copies, values), dtype=np.int64)
    src, dst, pl = delivery.bad_rows(Tag.CORE_BA)
    if not len(src):
        return counts
    pos = np.full(world.n, -1, dtype=np.int64)
    pos[group.members] = np.arange(len(group.members))
    coord = pl[:, 0] - 1
    keep = (pl[:, 1] == step) & (pos[dst] >= 0) & (coord >= 0) & (coord < copies)
    keep &= (pl[:, 2] >= 0) & (pl[:, 2] < values)
    src, dst, coord, val = src[keep], dst[keep], coord[keep], pl[keep, 2]
    if not len(src):
        return counts
    ok = group.local[pos[dst], src]
    src, dst, coord, val = src[ok], dst[ok], coord[ok], val[ok]
    key = (pos[dst] * world.n + src) * copies + coord
    _, first = np.unique(key, return_index=True)
    np.add.at(counts, (pos[dst[first]], coord[first], val[first]), 1)
    return counts


def _multicast_payload(coord_count: int, step: int, values: np.ndarray) -> np.ndarray:
    """Payload (P, copies, 3) of (copy + 1, step, value)."""
    p = values.shape[0]
    out = np.empty((p, coord_count, 3), dtype=np.int64)
    out[:, :, 0] = np.arange(1, coord_count + 1)[None, :]
    out[:, :, 1] = step
    out[:, :, 2] = values
    return out


def king_order(world: World, group: Group, seed: int, cid: CommitteeId, phases: int) -> np.ndarray:
    """kings[y, j]: node index of the phase-j king in member y's view."""
    h = prf(seed, cid.layer, cid.index, world.ids)
    rank = np.empty(world.n, dtype=np.int64)
    rank[np.argsort(h, kind="stable")] = np.arange(world.n)
    key = np.where(group.local, rank[None, :], world.n)
    order = np.argsort(key, axis=1, kind="stable")
    sizes = group.size
    j = np.arange(phases)[None, :] % sizes[:, None]
    return np.take_along_axis(order, j, axis=1)


def phase_king(
    world: World,
    group: Group,
    bits: np.ndarray,
    phases: int,
    kings: np.ndarray,
    adversary=None,
    *,
    epoch: int = 0,
    label: str = "committee",
    step0: int = 0,
    log: RoundLog | None = None,
) -> np.ndarray:
    """Run ``phases`` phases; ``bits`` is (P, copies). Returns new bits."""
    bits = np.asarray(bits, dtype=np.int64).copy()
    if bits.ndim == 1:
        bits = bits[:, None]
    P, copies = bits.shape
    m = group.size
    f = group.fault_bound
    members = group.members
    send_mask = group.local & world.known[members]
    send_mask[np.arange(P), members] = False
    R = _accept_matrix(group, send_mask).astype(np.int64)
    for j in range(phases):
        # vote
        step = step0 + 3 * j
        info = {"step": step, "kind": "vote", "group": group, "bits": bits, "label": label}
        batch = world.multicast_known(Tag.CORE_BA, members, send_mask, _multicast_payload(copies, step, bits))
        d = world.execute_round([batch], adversary, RoundContext(f"{label}.vote", epoch, info))
        if log is not None:
            log.add(send_mask.sum(axis=1) * copies)
        ones = bits + R @ bits + _bad_tally(world, d, group, step, copies, 2)[:, :, 1]
        zeros = m[:, None] - ones
        need = (m - f)[:, None]
        prop = np.where(ones >= need, 1, np.where(zeros >= need, 0, NO_PROPOSAL))

        # propose
        step += 1
        info = {"step": step, "kind": "propose", "group": group, "bits": prop, "label": label}
        batch = world.multicast_known(Tag.CORE_BA, members, send_mask, _multicast_payload(copies, step, prop))
        d = world.execute_round([batch], adversary, RoundContext(f"{label}.propose", epoch, info))
        if log is not None:
            log.add(send_mask.sum(axis=1) * copies)
        bad = _bad_tally(world, d, group, step, copies, 3)
        p1 = (prop == 1) + R @ (prop == 1).astype(np.int64) + bad[:, :, 1]
        p0 = (prop == 0) + R @ (prop == 0).astype(np.int64) + bad[:, :, 0]
        fcol = f[:, None]
        take1 = (p1 > fcol) & (p1 > p0)
        take0 = (p0 > fcol) & ~take1
        bits = np.where(take1, 1, np.where(take0, 0, bits))
        strong = (take1 & (p1 >= need)) | (take0 & (p0 >= need))

        # king
        step += 1
        king_j = kings[:, j]
        is_king = king_j == members
        kmask = send_mask[is_king]
        info = {"step": step, "kind": "king", "group": group, "bits": bits, "kings": king_j, "label": label}
        batch = world.multicast_known(
            Tag.CORE_BA, members[is_king], kmask, _multicast_payload(copies, step, bits[is_king])
        )
        d = world.execute_round([batch], adversary, RoundContext(f"{label}.king", epoch, info))
        if log is not None:
            counts = np.zeros(P, dtype=np.int64)
            counts[is_king] = kmask.sum(axis=1) * copies
            log.add(counts)
        king_val = np.zeros((P, copies), dtype=np.int64)
        pos = np.full(world.n, -1, dtype=np.int64)
        pos[members] = np.arange(P)
        kpos = pos[king_j]
        good_king = kpos >= 0
        rows = np.nonzero(good_king)[0]
        if len(rows):
            kp = kpos[rows]
            delivered = is_king[kp] & (send_mask[kp, members[rows]] | (kp == rows))
            king_val[rows[delivered]] = bits[kp[delivered]]
        if (~good_king).any():
            src, dst, pl = d.bad_rows(Tag.CORE_BA)
            if len(src):
                sel = (pl[:, 1] == step) & (pos[dst] >= 0)
                src, dst, pl = src[sel], dst[sel], pl[sel]
                from_king = src == king_j[pos[dst]]
                src, dst, pl = src[from_king], dst[from_king], pl[from_king]
                coord = pl[:, 0] - 1
                ok = (coord >= 0) & (coord < copies) & (pl[:, 2] >= 0) & (pl[:, 2] <= 1)
                src, dst, coord, val = src[ok], dst[ok], coord[ok], pl[ok, 2]
                key = pos[dst] * copies + coord
                _, first = np.unique(key, return_index=True)
                king_val[pos[dst[first]], coord[first]] = val[first]
        bits = np.where(strong, bits, king_val)
    return bits


def default_round_budget(local_sizes: Iterable[int]) -> int:
    m = max(local_sizes)
    return 3 * (math.ceil(m / 3) - 1 + 1)


@dataclass(frozen=True)
class CommitteeCtx:
    self_id: int
    committee: CommitteeId
    local_members: frozenset[int]
    round_budget: int

    def __post_init__(self) -> None:
        if self.self_id not in self.local_members:
            raise ValueError("a member must belong to its own local view")


def deterministic_committee_ba(
    world: World,
    ctxs: Sequence[CommitteeCtx],
    inputs: Mapping[int, int],
    adversary=None,
    seed: int = 0,
) -> dict[int, int]:
    """Run phase king for the good members described by ``ctxs``.

    ``round_budget`` (common to all members) fixes the number of phases as
    round_budget // 3; 3 * (f + 1) rounds guarantee agreement.
    """
    if not ctxs:
        return {}
    budgets = {c.round_budget for c in ctxs}
    if len(budgets) != 1:
        raise ValueError("members must share one round budget")
    cid = ctxs[0].committee
    members = world.index_of([c.self_id for c in ctxs])
    local = np.zeros((len(ctxs), world.n), dtype=bool)
    for i, c in enumerate(ctxs):
        local[i, world.index_of(sorted(c.local_members))] = True
    group = Group(members, local)
    phases = max(1, budgets.pop() // 3)
    kings = king_order(world, group, seed, cid, phases)
    bits = np.array([inputs[c.self_id] for c in ctxs], dtype=np.int64)
    out = phase_king(world, group, bits, phases, kings, adversary, label="committee")
    return {c.self_id: int(b) for c, b in zip(ctxs, out[:, 0])}


def lightest_bin(announcements: Iterable[tuple[int, int]], num_bins: int) -> frozenset[int]:
    """Members of the lightest non-empty bin (ties to the lowest index).

    Only the first announcement of each ID counts; out-of-range bins are
    ignored."""
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    chosen: dict[int, int] = {}
    for node, b in announcements:
        if node not in chosen and 0 <= b < num_bins:
            chosen[node] = b
    if not chosen:
        return frozenset()
    counts = np.bincount(list(chosen.values()), minlength=num_bins)
    occupied = np.nonzero(counts)[0]
    winner = occupied[np.argmin(counts[occupied])]
    return frozenset(node for node, b in chosen.items() if b == winner)


def feige_round(
    world: World,
    announcers: np.ndarray,
    announcer_bins: np.ndarray,
    send_mask: np.ndarray,
    listeners: np.ndarray,
    eligible: np.ndarray,
    num_bins: int,
    coord: int,
    step: int,
    adversary=None,
    *,
    epoch: int = 0,
    label: str = "feige",
    extra_info: dict | None = None,
):
    """One lightest-bin election round.

    ``announcers`` multicast their bin along ``send_mask``; each listener
    (row of ``eligible``, P x n) tallies the first announcement of every
    eligible sender and elects the lightest non-empty bin. Returns
    (elected P x n bool, delivery)."""
    info = {"step": step, "kind": "feige", "coord": coord, "num_bins": num_bins,
            "listeners": listeners, "eligible": eligible, "announcers": announcers,
            "bins": announcer_bins, "label": label}
    if extra_info:
        info.update(extra_info)
    payload = np.stack([np.full(len(announcers), coord), np.full(len(announcers), step), announcer_bins], axis=1)
    batch = world.multicast_known(Tag.CORE_BA, announcers, send_mask, payload)
    d = world.execute_round([batch], adversary, RoundContext(f"{label}.feige", epoch, info))
    return tally_bins(world, d, announcers, announcer_bins, send_mask, listeners, eligible, num_bins, coord, step), d


def tally_bins(world, d, announcers, announcer_bins, send_mask, listeners, eligible, num_bins, coord, step):
    n = world.n
    P = len(listeners)
    chosen = np.full((P, n), -1, dtype=np.int64)
    # good announcements reach listeners along the send mask; own bin is known locally
    heard = send_mask[:, listeners].T  # (P, A)
    chosen[:, announcers] = np.where(heard, announcer_bins[None, :], -1)
    pos_a = np.full(n, -1, dtype=np.int64)
    pos_a[announcers] = np.arange(len(announcers))
    own = pos_a[listeners]
    has_own = own >= 0
    chosen[np.nonzero(has_own)[0], listeners[has_own]] = announcer_bins[own[has_own]]
    src, dst, pl = d.bad_rows(Tag.CORE_BA)
    if len(src):
        pos_l = np.full(n, -1, dtype=np.int64)
        pos_l[listeners] = np.arange(P)
        keep = (pl[:, 0] == coord) & (pl[:, 1] == step) & (pos_l[dst] >= 0)
        src, dst, val = src[keep], dst[keep], pl[keep, 2]
        key = pos_l[dst] * n + src
        _, first = np.unique(key, return_index=True)
        chosen[pos_l[dst[first]], src[first]] = val[first]
    chosen = np.where(eligible & (chosen >= 0) & (chosen < num_bins), chosen, -1)
    elected = np.zeros((P, n), dtype=bool)
    for y in range(P):
        row = chosen[y]
        valid = row >= 0
        if not valid.any():
            continue
        counts = np.bincount(row[valid], minlength=num_bins)
        occupied = np.nonzero(counts)[0]
        winner = occupied[np.argmin(counts[occupied])]
        elected[y] = row == winner
    return elected
