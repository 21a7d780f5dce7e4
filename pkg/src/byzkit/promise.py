"""Sampling-based promise agreement.

Every good node asks ceil(c_promise * log2 n) uniformly random ports
(with replacement) for their decision tuple, then sets its own tuple:

* ready_out = 1 if more than a t/n + epsilon share of the samples report
  ready_out = 1; the value becomes the plurality value among those
  ready replies (ties to the smaller value).
* otherwise ready_out = 0 and the value is kept.

A sampled port that stays silent counts as a ready_out = 0 reply. Good
nodes answer every request they receive, including requests from bad
nodes. Two communication rounds, then a local decision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .messages import Tag
from .net import RoundContext, World
from .values import BitCodec, decision_payload, decode_bad, tally


@dataclass
class PromiseLog:
    rounds: int
    good_msgs: int
    good_bits: int
    requests: int
    replies_to_bad: int


@dataclass
class PromiseSample:
    requester: int
    targets: tuple[int, ...]
    replies: list[tuple[tuple[int, int], int]]


def promise_agreement(
    world: World,
    ready_out: np.ndarray,
    value: np.ndarray,
    adversary=None,
    *,
    epoch: int = 0,
    codec=None,
    participants: np.ndarray | None = None,
    samples: list[PromiseSample] | None = None,
):
    """Run one promise agreement over the good nodes.

    ``ready_out`` and ``value`` are length-n arrays (entries of bad nodes
    are ignored). Returns (ready_out, value, PromiseLog) with the new
    tuples of all nodes; only ``participants`` (default: all good nodes)
    send requests and update. Pass a list as ``samples`` to record
    per-requester samples."""
    params = world.params
    codec = codec or BitCodec()
    n = world.n
    ready_out = np.asarray(ready_out, dtype=np.int64).copy()
    value = np.asarray(value, dtype=np.int64).copy()
    req = world.good_idx if participants is None else np.asarray(participants, dtype=np.int64)
    m = params.promise_samples
    start = (world.round, world.metrics.good_msgs, world.metrics.good_bits)

    # round 1: requests
    rng = world.rng("promise", epoch, world.round)
    ports = rng.integers(0, n - 1, size=(len(req), m))
    src = np.repeat(req, m)
    batch = world.to_ports(Tag.PROMISE_REQUEST, src, ports.reshape(-1), np.zeros((len(src), 0)))
    targets = batch.dst.reshape(len(req), m)
    info = {"kind": "request", "requesters": req, "targets": targets, "ready_out": ready_out, "value": value}
    d1 = world.execute_round([batch], adversary, RoundContext("promise.request", epoch, info))

    # round 2: good nodes answer each request row they received
    rs, rd, _ = d1.point_rows(Tag.PROMISE_REQUEST)
    answer = ~world.bad[rd]
    asrc, adst = rd[answer], rs[answer]
    payload = decision_payload(ready_out[asrc], value[asrc], codec)
    copies = payload.shape[1]
    a_src = np.repeat(asrc, copies)
    a_dst = np.repeat(adst, copies)
    reply = world.to_known(Tag.PROMISE_REPLY, a_src, a_dst, payload.reshape(-1, 2), codec.layout)
    info = {"kind": "reply", "requesters": req, "targets": targets, "ready_out": ready_out,
            "value": value, "requests": (rs, rd), "codec": codec}
    d2 = world.execute_round([reply], adversary, RoundContext("promise.reply", epoch, info))

    # decision: weight each sampled good target by its multiplicity
    P = len(req)
    rows = np.repeat(np.arange(P), m)
    flat = targets.reshape(-1)
    good_t = ~world.bad[flat]
    W = np.zeros((P, n), dtype=np.int64)
    np.add.at(W, (rows[good_t], flat[good_t]), 1)
    bad_t = ~good_t
    pos = np.full(n, -1, dtype=np.int64)
    pos[req] = np.arange(P)
    bs, bd, bpl = d2.bad_rows(Tag.PROMISE_REPLY)
    dd, ds, dr, dc = decode_bad(bs, bd, bpl, codec)
    keep = pos[dd] >= 0 if len(dd) else np.zeros(0, dtype=bool)
    dd, ds, dr, dc = dd[keep], ds[keep], dr[keep], dc[keep]
    # multiplicity of each (requester, bad target) sample
    mult = np.zeros((P, n), dtype=np.int64)
    np.add.at(mult, (rows[bad_t], flat[bad_t]), 1)
    bw = mult[pos[dd], ds]
    sampled = bw > 0
    bad = (pos[dd][sampled], bw[sampled], dr[sampled], dc[sampled])
    yes, _, best = tally(W[:, world.good_idx], ready_out[world.good_idx], value[world.good_idx], bad)
    share = yes / m
    threshold = params.t / n + params.epsilon
    decide = share > threshold
    new_ready = ready_out.copy()
    new_value = value.copy()
    new_ready[req] = decide.astype(np.int64)
    # a ready decision with no decodable value keeps the old value
    chosen = np.where(decide & (best >= 0), best, value[req])
    new_value[req] = chosen

    if samples is not None:
        for i, x in enumerate(req.tolist()):
            reps = []
            for tgt in targets[i].tolist():
                if not world.bad[tgt]:
                    reps.append(((int(ready_out[tgt]), int(value[tgt])), int(world.ids[tgt])))
            samples.append(PromiseSample(int(world.ids[x]), tuple(int(world.ids[t]) for t in targets[i]), reps))

    log = PromiseLog(
        rounds=world.round - start[0],
        good_msgs=world.metrics.good_msgs - start[1],
        good_bits=world.metrics.good_bits - start[2],
        requests=int(len(src)),
        replies_to_bad=int(world.bad[adst].sum()) if len(adst) else 0,
    )
    return new_ready, new_value, log
