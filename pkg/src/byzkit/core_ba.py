"""Agreement among participants whose views mostly overlap.

Stages, all round-synchronous:

1. elections: for each layer below the top, every candidate announces a
   random bin for each committee it belongs to, to its whole view. Every
   participant tallies all committees, so everyone can tell who was
   elected (lightest non-empty bin) and who may sit in the next layer.
2. top: the single top committee runs phase king.
3. diffusion: going down the layers, elected members send their bit to
   their committee co-members, who take the majority.
4. final: every participant sends its bit to its view and outputs the
   majority of what it holds and hears (ties to 0).

When the committee size target covers the whole population the tower
collapses: the top committee is the whole view and stages 1 and 3 are
empty.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .committee import Group, RoundLog, feige_round, king_order, phase_king
from .messages import Tag
from .net import RoundContext, World
from .sampler import CommitteeId, SamplerConfig

STAGES = ("electing", "top_ba", "diffusing", "finalizing", "done")


@dataclass
class CoreBaRun:
    participant: int
    view: frozenset[int]
    input: int
    cfg: SamplerConfig
    stage: str = "electing"
    decided: int | None = None


@dataclass
class CoreBaResult:
    participants: np.ndarray
    outputs: np.ndarray  # (P, copies)
    pre_final: np.ndarray  # (P, copies), -1 where no tentative bit
    degraded: np.ndarray  # (P,)
    rounds: int
    good_msgs: int
    good_bits: int
    per_node_msgs: np.ndarray
    collapsed: bool
    top_size: int = 0
    runs: list[CoreBaRun] = field(default_factory=list)

    def almost_everywhere_fraction(self, copy: int = 0) -> float:
        """Share of participants whose pre-final bit equals the majority bit."""
        col = self.pre_final[:, copy]
        if not len(col):
            return 1.0
        ones = int((col == 1).sum())
        zeros = int((col == 0).sum())
        maj = 1 if ones > zeros else 0
        return float((col == maj).mean())


def _collapsed(cfg: SamplerConfig) -> bool:
    """A size target covering the whole population makes every committee
    the whole population, so the tower is a single committee."""
    return cfg.committee_size_target >= cfg.s


def _majority(ones: np.ndarray, zeros: np.ndarray) -> np.ndarray:
    return (ones > zeros).astype(np.int64)


def _bit_tally(world: World, d, listeners, eligible, step, copies):
    """Count (ones, zeros) per listener from bad CoreBa rows at ``step``,
    first message per (sender, copy), sender must be eligible."""
    n = world.n
    P = len(listeners)
    ones = np.zeros((P, copies), dtype=np.int64)
    zeros = np.zeros((P, copies), dtype=np.int64)
    src, dst, pl = d.bad_rows(Tag.CORE_BA)
    if not len(src):
        return ones, zeros
    pos = np.full(n, -1, dtype=np.int64)
    pos[listeners] = np.arange(P)
    coord = pl[:, 0] - 1
    keep = (pl[:, 1] == step) & (pos[dst] >= 0) & (coord >= 0) & (coord < copies) & (pl[:, 2] >= 0) & (pl[:, 2] <= 1)
    src, dst, coord, val = src[keep], dst[keep], coord[keep], pl[keep, 2]
    ok = eligible[pos[dst], src]
    src, dst, coord, val = src[ok], dst[ok], coord[ok], val[ok]
    key = (pos[dst] * n + src) * copies + coord
    _, first = np.unique(key, return_index=True)
    np.add.at(ones, (pos[dst[first]], coord[first]), val[first] == 1)
    np.add.at(zeros, (pos[dst[first]], coord[first]), val[first] == 0)
    return ones, zeros


def _spread(world, senders_pos, P, participants, bits, send_mask, accept, copies, step, adversary, ctx, log):
    """Holders (positions ``senders_pos``) multicast their bits; every
    participant tallies bits from senders it accepts (accept: P x n)."""
    src = participants[senders_pos]
    send_mask = send_mask.copy()
    send_mask[np.arange(len(src)), src] = False
    payload = np.empty((len(src), copies, 3), dtype=np.int64)
    payload[:, :, 0] = np.arange(1, copies + 1)[None, :]
    payload[:, :, 1] = step
    payload[:, :, 2] = bits[senders_pos]
    batch = world.multicast_known(Tag.CORE_BA, src, send_mask, payload)
    d = world.execute_round([batch], adversary, ctx)
    counts = np.zeros(P, dtype=np.int64)
    counts[senders_pos] = send_mask.sum(axis=1) * copies
    log.add(counts)
    R = (send_mask[:, participants].T & accept[:, src]).astype(np.int64)  # (P, S)
    held = bits[senders_pos]
    ones = R @ (held == 1).astype(np.int64)
    zeros = R @ (held == 0).astype(np.int64)
    bo, bz = _bit_tally(world, d, participants, accept, step, copies)
    return ones + bo, zeros + bz


def large_core_ba(
    world: World,
    participants: np.ndarray,
    views: np.ndarray,
    inputs: np.ndarray,
    cfg: SamplerConfig,
    adversary=None,
    *,
    king_phases: int = 10,
    epoch: int = 0,
    label: str = "core",
    keep_runs: bool = False,
) -> CoreBaResult:
    """Agreement among good ``participants`` (node indices) with views
    (P x n bool rows over node indices). ``inputs`` is (P,) or (P, copies)
    for several parallel instances sharing one election structure."""
    participants = np.asarray(participants, dtype=np.int64)
    P = len(participants)
    views = np.asarray(views, dtype=bool).copy()
    views[np.arange(P), participants] = True
    inputs = np.asarray(inputs, dtype=np.int64)
    if inputs.ndim == 1:
        inputs = inputs[:, None]
    copies = inputs.shape[1]
    start_round = world.round
    start_msgs, start_bits = world.metrics.good_msgs, world.metrics.good_bits
    log = RoundLog()
    log.sent = np.zeros(P, dtype=np.int64)
    bits = np.full((P, copies), -1, dtype=np.int64)
    degraded = np.zeros(P, dtype=bool)
    collapsed = _collapsed(cfg)
    known = world.known[participants]
    step = 0
    top_size = 0
    pos = np.full(world.n, -1, dtype=np.int64)
    pos[participants] = np.arange(P)

    if P == 0:
        empty = np.zeros((0, copies), dtype=np.int64)
        return CoreBaResult(participants, empty, empty, np.zeros(0, bool), 0, 0, 0, np.zeros(0, np.int64), collapsed)

    top_cid = CommitteeId(cfg.top_layer, 0)
    if collapsed:
        cand = [views]
        top_local = views
        in_top = np.ones(P, dtype=bool)
        layer_members: list[np.ndarray] = []
        elected_from: list[np.ndarray] = []
    else:
        cand = [views]
        layer_members = []
        elected_from = []
        rng = world.rng(label, "bins", epoch, world.round)
        for layer in range(cfg.top_layer):
            M = cfg.member_matrix(world.ids, layer)  # (R, n)
            cur = cand[-1]
            self_cand = cur[np.arange(P), participants]
            nxt = np.zeros((P, world.n), dtype=bool)
            num_bins = cfg.num_bins(layer)
            for c in range(M.shape[0]):
                eligible = cur & M[c][None, :]
                ann_pos = np.nonzero(self_cand & M[c, participants])[0]
                if num_bins == 1:
                    nxt |= eligible
                    continue
                mask = views[ann_pos] & known[ann_pos]
                mask[np.arange(len(ann_pos)), participants[ann_pos]] = False
                ann_bins = rng.integers(0, num_bins, size=len(ann_pos))
                elected, _ = feige_round(
                    world, participants[ann_pos], ann_bins, mask, participants, eligible,
                    num_bins, coord=c + 1, step=step, adversary=adversary, epoch=epoch, label=label,
                    extra_info={"layer": layer, "views": views, "participants": participants},
                )
                counts = np.zeros(P, dtype=np.int64)
                counts[ann_pos] = mask.sum(axis=1)
                log.add(counts)
                nxt |= elected
            layer_members.append(M)
            elected_from.append(nxt)
            cand.append(nxt)
        top_mem = cfg.member_matrix(world.ids, cfg.top_layer)[0]
        top_local = cand[-1] & top_mem[None, :]
        in_top = top_local[np.arange(P), participants]

    # top committee agreement
    members_pos = np.nonzero(in_top)[0]
    if len(members_pos):
        group = Group(participants[members_pos], top_local[members_pos])
        top_size = int(group.size.max())
        kings = king_order(world, group, cfg.seed, top_cid, king_phases)
        out = phase_king(
            world, group, inputs[members_pos], king_phases, kings, adversary,
            epoch=epoch, label=f"{label}.top", step0=0, log=(sub := RoundLog()),
        )
        bits[members_pos] = out
        if sub.sent is not None:
            log.sent[members_pos] += sub.sent
            log.rounds += sub.rounds
    # Only messages of the current round are tallied, so a step only has
    # to separate the kinds of traffic sharing one round.
    step = 1

    # diffusion down the layers
    if not collapsed:
        for layer in range(cfg.top_layer - 1, -1, -1):
            M = layer_members[layer]
            holder = (bits[:, 0] >= 0) & elected_from[layer][np.arange(P), participants]
            hp = np.nonzero(holder)[0]
            # co-members: share a layer committee and are layer candidates
            mem_p = M[:, participants]  # (R, P)
            share = (mem_p[:, hp].T.astype(np.int64) @ M.astype(np.int64)) > 0  # (H, n)
            send_mask = share & cand[layer][hp] & known[hp]
            shared_with = (mem_p.T.astype(np.int64) @ M.astype(np.int64)) > 0  # (P, n)
            accept = elected_from[layer] & shared_with
            ones, zeros = _spread(
                world, hp, P, participants, bits, send_mask, accept, copies, step, adversary,
                RoundContext(f"{label}.diffuse", epoch, {"step": step, "kind": "diffuse", "layer": layer,
                                                         "participants": participants, "views": views, "bits": bits}),
                log,
            )
            lacking = (bits[:, 0] < 0) & cand[layer][np.arange(P), participants]
            heard = (ones + zeros) > 0
            fill = lacking[:, None] & heard
            bits = np.where(fill, _majority(ones, zeros), bits)

    pre_final = bits.copy()
    degraded |= bits[:, 0] < 0

    # final all-to-view majority
    holders = np.nonzero(bits[:, 0] >= 0)[0]
    send_mask = views[holders] & known[holders]
    ones, zeros = _spread(
        world, holders, P, participants, bits, send_mask, views, copies, step, adversary,
        RoundContext(f"{label}.final", epoch, {"step": step, "kind": "final", "participants": participants,
                                               "views": views, "bits": bits}),
        log,
    )
    ones = ones + (bits == 1)
    zeros = zeros + (bits == 0)
    outputs = _majority(ones, zeros)

    result = CoreBaResult(
        participants=participants,
        outputs=outputs,
        pre_final=pre_final,
        degraded=degraded,
        rounds=world.round - start_round,
        good_msgs=world.metrics.good_msgs - start_msgs,
        good_bits=world.metrics.good_bits - start_bits,
        per_node_msgs=log.sent,
        collapsed=collapsed,
        top_size=top_size,
    )
    if keep_runs:
        for i, x in enumerate(participants.tolist()):
            result.runs.append(
                CoreBaRun(
                    participant=int(world.ids[x]),
                    view=frozenset(int(v) for v in world.ids[np.nonzero(views[i])[0]]),
                    input=int(inputs[i, 0]),
                    cfg=cfg,
                    stage="done",
                    decided=int(outputs[i, 0]),
                )
            )
    return result


def core_message_cost(result: CoreBaResult) -> dict:
    return {
        "per_node_msgs": result.per_node_msgs,
        "total_msgs": int(result.per_node_msgs.sum()),
        "rounds": result.rounds,
    }
