"""The epoch state machine and its leader/committee election variants.

One epoch, for the sampling probability p of that epoch:

2. every good node turns active with probability p and broadcasts its
   ID; each node collects the announcing IDs in S_x and is light if
   |S_x| <= light_threshold.
3. a. each light node picks a random ID of S_x and sends it to all of S_x.
   b. an active node counts the distinct senders n_x; if n_x >= low - t it
      keeps the IDs named by at least beta senders and queries each kept
      ID at C log2 n random ports.
   c. light nodes confirm a query iff both the ID and the querier are in
      their S_x; IDs with at least delta * (queries per ID) confirmations
      survive.
4. active nodes with n_x >= low - t (the core) agree on ready_in =
   [n_x >= high]; those with n_x >= low adopt the result as ready_out.
5. core nodes with ready_out = 1 agree on their input bits (or elect a
   leader / a committee).
6. active nodes broadcast (ready_out, value); light nodes and core nodes
   take the majority ready_out over senders in S_x and, if it is 1, the
   plurality value among ready senders. Ties go to 0.
7. promise agreement; nodes ending with ready_out = 1 terminate. If no
   node terminates, p doubles while p < 1 / (C log2 n); otherwise every
   node says hello to every port and the whole system runs the core
   agreement.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core_ba import CoreBaResult, large_core_ba
from .messages import Tag
from .net import RoundContext, World
from .params import EpochParams, NodeState, ProtocolParams, derive_epoch_params, id_bits, is_light
from .promise import promise_agreement
from .sampler import SamplerConfig, prf
from .values import codec_for, decision_payload, decode_bad, tally

log = logging.getLogger(__name__)

MODES = ("ba", "leader", "committee")
INPUT_SPECS = ("all0", "all1", "random", "split")
_LEADER_HASH_LAYER = 0xFEED


@dataclass
class ProtocolState:
    """Epoch-scoped protocol state, readable by the (full-information)
    adversary through ``world.state``."""

    epoch: int
    ep: EpochParams
    mode: str
    inputs: np.ndarray
    active: np.ndarray | None = None
    light: np.ndarray | None = None
    s_step2: np.ndarray | None = None
    s_x: np.ndarray | None = None
    n_x: np.ndarray | None = None
    core: np.ndarray | None = None
    ready_in: np.ndarray | None = None
    ready_out: np.ndarray | None = None
    value: np.ndarray | None = None
    step: str = "start"


@dataclass
class StepCounter:
    msgs: int = 0
    bits: int = 0
    rounds: int = 0


@dataclass
class EpochOutcome:
    epoch: int
    terminated: bool
    agreed_value: int | None
    light_count: int
    core_size: int
    active_count: int
    decided_count: int
    step_counters: dict[str, StepCounter] = field(default_factory=dict)
    violations: list[str] = field(default_factory=list)
    fallback: bool = False


@dataclass
class AgreementResult:
    """Outputs per good node (index order), plus the run's bookkeeping."""

    good_idx: np.ndarray
    outputs: np.ndarray
    epochs: list[EpochOutcome]
    violations: list[str]
    world: World
    mode: str
    codec: object

    @property
    def metrics(self):
        return self.world.metrics

    @property
    def agreed(self) -> bool:
        return len(np.unique(self.outputs)) <= 1

    def output_values(self) -> list:
        """Outputs decoded: bits, node IDs, or frozensets of node IDs."""
        if self.mode == "committee":
            return [self.codec.table[c] for c in self.outputs.tolist()]
        return [int(v) for v in self.outputs.tolist()]

    def output_by_id(self) -> dict:
        ids = self.world.ids[self.good_idx].tolist()
        return dict(zip(ids, self.output_values()))


class _Steps:
    """Accumulates per-step message/round deltas."""

    def __init__(self, world: World) -> None:
        self.world = world
        self.counters: dict[str, StepCounter] = {}
        self._mark = self._now()

    def _now(self):
        m = self.world.metrics
        return m.good_msgs, m.good_bits, self.world.round

    def close(self, name: str) -> None:
        now = self._now()
        c = self.counters.setdefault(name, StepCounter())
        c.msgs += now[0] - self._mark[0]
        c.bits += now[1] - self._mark[1]
        c.rounds += now[2] - self._mark[2]
        self._mark = now


def assign_inputs(spec: str, n_good: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Input bits for the good nodes in index order."""
    if spec == "all0":
        return np.zeros(n_good, dtype=np.int64)
    if spec == "all1":
        return np.ones(n_good, dtype=np.int64)
    if spec == "random":
        if rng is None:
            raise ValueError("random inputs need an rng")
        return rng.integers(0, 2, size=n_good).astype(np.int64)
    if spec == "split":
        out = np.zeros(n_good, dtype=np.int64)
        out[n_good // 2:] = 1
        return out
    raise ValueError(f"unknown input spec {spec!r}; expected one of {', '.join(INPUT_SPECS)}")


def core_sampler(params: ProtocolParams, s: float, epoch: int, label: str) -> SamplerConfig:
    seed = int(np.random.SeedSequence(params.master_seed, spawn_key=(epoch, len(label))).generate_state(2, np.uint64)[0])
    return SamplerConfig.build(params.n, max(2.0, s), kappa=params.kappa, seed=seed, k=params.k, rule=params.size_rule)


def _pick_from_rows(mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform column index among the True entries of each (non-empty) row."""
    counts = mask.sum(axis=1)
    r = np.floor(rng.random(len(mask)) * counts).astype(np.int64)
    cums = np.cumsum(mask, axis=1)
    return np.argmax(cums > r[:, None], axis=1)


def _first_rows(src, dst, pl):
    """First row per (receiver, sender) pair, input already sorted by
    (receiver, sender) with emission order kept."""
    if not len(src):
        return src, dst, pl
    key = dst * (int(src.max()) + 1) + src
    first = np.r_[True, key[1:] != key[:-1]]
    return src[first], dst[first], pl[first]


# ---------------------------------------------------------------------------
# elections used in Step 5 of the election variants


def _leader_election(world, participants, views, m0, adversary, *, epoch, label):
    """Iterated lightest-bin election, then bitwise agreement on the
    locally chosen leader ID. Returns the agreed ID per participant."""
    from .committee import feige_round

    P = len(participants)
    known = world.known[participants]
    cand = views.copy()
    m = float(m0)
    rng = world.rng(label, "feige", epoch)
    it = 0
    while m > 1.0 and it < 16:
        bins = max(2, math.ceil(m / max(1.0, math.log2(m))))
        self_cand = cand[np.arange(P), participants]
        ann = np.nonzero(self_cand)[0]
        mask = views[ann] & known[ann]
        choice = rng.integers(0, bins, size=len(ann))
        cand, _ = feige_round(
            world, participants[ann], choice, mask, participants, cand, bins, coord=it + 1, step=0,
            adversary=adversary, epoch=epoch, label=label,
            extra_info={"participants": participants, "views": views},
        )
        m /= bins
        it += 1
    h = prf(world.params.master_seed, _LEADER_HASH_LAYER, epoch, world.ids)
    leader = np.zeros(P, dtype=np.int64)
    for y in range(P):
        c = np.nonzero(cand[y])[0]
        if len(c):
            leader[y] = world.ids[c[np.argmin(h[c])]]
    width = id_bits(world.n, world.params.k)
    bits = (leader[:, None] >> np.arange(width)[None, :]) & 1
    cfg = core_sampler(world.params, len(participants), epoch, label)
    res = large_core_ba(world, participants, views, bits, cfg, adversary,
                        king_phases=world.params.king_phases, epoch=epoch, label=f"{label}.ba")
    return (res.outputs << np.arange(width)[None, :]).sum(axis=1)


def _committee_election(world, participants, views, s, adversary, codec, *, epoch, label):
    """One lightest-bin step over the views, then agreement per ID (of the
    union of views) on membership. Returns set codes per participant."""
    from .committee import feige_round

    P = len(participants)
    known = world.known[participants]
    params = world.params
    bins = max(1, math.ceil(s / (params.C * params.log_n)))
    if bins > 1:
        rng = world.rng(label, "feige", epoch)
        ann = np.nonzero(views[np.arange(P), participants])[0]
        choice = rng.integers(0, bins, size=len(ann))
        elected, _ = feige_round(
            world, participants[ann], choice, views[ann] & known[ann], participants, views, bins,
            coord=1, step=0, adversary=adversary, epoch=epoch, label=label,
            extra_info={"participants": participants, "views": views},
        )
    else:
        elected = views.copy()
    union = np.nonzero(views.any(axis=0))[0]
    inputs = elected[:, union].astype(np.int64)
    cfg = core_sampler(params, len(participants), epoch, label)
    res = large_core_ba(world, participants, views, inputs, cfg, adversary,
                        king_phases=params.king_phases, epoch=epoch, label=f"{label}.ba")
    ids = world.ids[union]
    return np.array([codec.code(ids[row == 1]) for row in res.outputs], dtype=np.int64)


def _decide_values(world, mode, codec, participants, views, inputs, s, adversary, *, epoch, label):
    if mode == "ba":
        cfg = core_sampler(world.params, s, epoch, label)
        res = large_core_ba(world, participants, views, inputs, cfg, adversary,
                            king_phases=world.params.king_phases, epoch=epoch, label=label)
        return res.outputs[:, 0]
    if mode == "leader":
        return _leader_election(world, participants, views, s, adversary, epoch=epoch, label=label)
    return _committee_election(world, participants, views, s, adversary, codec, epoch=epoch, label=label)


# ---------------------------------------------------------------------------
# one epoch


def run_epoch(
    world: World,
    ep: EpochParams,
    inputs: np.ndarray,
    adversary=None,
    *,
    mode: str = "ba",
    codec=None,
    check: bool = True,
) -> tuple[EpochOutcome, np.ndarray, np.ndarray]:
    """Run Steps 2-7 once. ``inputs`` holds length-n input bits (bad
    entries ignored). Returns (outcome, ready_out, value) with the
    post-Step-7 tuples of all nodes."""
    params = world.params
    n, t = params.n, params.t
    e = ep.epoch_index
    codec = codec or codec_for(mode, params.id_universe)
    good = ~world.bad
    ids = world.ids
    state = ProtocolState(epoch=e, ep=ep, mode=mode, inputs=inputs)
    world.state = state
    world.begin_epoch()
    steps = _Steps(world)
    violations: list[str] = []

    # Step 2: activation and announcements
    rng = world.rng("epoch", e, "activate")
    active = np.zeros(n, dtype=bool)
    active[world.good_idx] = rng.random(len(world.good_idx)) < ep.p
    act = np.nonzero(active)[0]
    state.active = active
    state.step = "announce"
    batch = world.broadcast(Tag.ACTIVE_ANNOUNCE, act, ids[act][:, None])
    d = world.execute_round([batch], adversary, RoundContext("announce", e, {"active": active}))
    S = d.heard(Tag.ACTIVE_ANNOUNCE)
    S[act, act] = True
    count = S.sum(axis=1)
    light = good & (count <= ep.light_threshold)
    state.s_step2 = S
    state.light = light
    steps.close("announce")

    # Step 3a: light nodes sample one ID of S_x and send it to S_x
    senders = np.nonzero(light & (count > 0))[0]
    choice = _pick_from_rows(S[senders], world.rng("epoch", e, "sample"))
    state.step = "sample"
    batch = world.multicast_known(Tag.SAMPLE_ID, senders, S[senders], ids[choice][:, None])
    d = world.execute_round([batch], adversary, RoundContext("sample", e, {"senders": senders, "choice": choice}))
    # n_x and per-ID sender counts at active nodes
    delivered = batch.mask[:, act].T.astype(np.float64)  # (A, L)
    onehot = np.zeros((len(senders), n), dtype=np.float64)
    onehot[np.arange(len(senders)), choice] = 1.0
    named = np.rint(delivered @ onehot).astype(np.int64)  # (A, n)
    n_x = np.zeros(n, dtype=np.int64)
    n_x[act] = delivered.sum(axis=1).astype(np.int64)
    # an active light sender is in its own S_x: its choice counts locally
    spos = np.full(n, -1, dtype=np.int64)
    spos[senders] = np.arange(len(senders))
    own = act[spos[act] >= 0]
    n_x[own] += 1
    named[np.searchsorted(act, own), choice[spos[own]]] += 1
    bs, bd, bpl = _first_rows(*d.bad_rows(Tag.SAMPLE_ID))
    apos = np.full(n, -1, dtype=np.int64)
    apos[act] = np.arange(len(act))
    sel = apos[bd] >= 0
    bs, bd, bpl = bs[sel], bd[sel], bpl[sel]
    np.add.at(n_x, bd, 1)
    bidx = np.searchsorted(ids, bpl[:, 0]) if len(bd) else np.zeros(0, dtype=np.int64)
    real = (bidx < n) & (ids[np.minimum(bidx, n - 1)] == bpl[:, 0]) if len(bd) else np.zeros(0, dtype=bool)
    np.add.at(named, (apos[bd[real]], bidx[real]), 1)
    state.n_x = n_x
    steps.close("sample")

    # Step 3b: beta filter and queries
    core_gate = active & (n_x >= ep.low - t)
    cand = np.nonzero(core_gate)[0]
    kept = np.zeros((len(cand), n), dtype=bool)
    kept[:] = named[apos[cand]] >= ep.beta
    q = params.query_count
    qx_pos, qv = np.nonzero(kept)
    not_self = qv != cand[qx_pos]
    qx_pos, qv = qx_pos[not_self], qv[not_self]
    q_src = np.repeat(cand[qx_pos], q)
    q_val = np.repeat(qv, q)
    ports = world.rng("epoch", e, "query").integers(0, n - 1, size=len(q_src))
    state.step = "query"
    qbatch = world.to_ports(Tag.QUERY, q_src, ports, ids[q_val][:, None])
    d = world.execute_round([qbatch], adversary, RoundContext("query", e, {"queries": qbatch, "kept": kept, "core": cand}))

    # Step 3c: light nodes confirm
    rs, rd, rpl = d.point_rows(Tag.QUERY)
    ridx = np.searchsorted(ids, rpl[:, 0]) if len(rs) else np.zeros(0, dtype=np.int64)
    real = (ridx < n) & (ids[np.minimum(ridx, n - 1)] == rpl[:, 0]) if len(rs) else np.zeros(0, dtype=bool)
    ans = real & light[rd]
    ans[ans] = S[rd[ans], ridx[ans]] & S[rd[ans], rs[ans]]
    state.step = "reply"
    rbatch = world.to_known(Tag.QUERY_REPLY, rd[ans], rs[ans], rpl[ans])
    d = world.execute_round([rbatch], adversary, RoundContext("reply", e, {"queries": qbatch}))
    confirmed = light[qbatch.dst] & S[qbatch.dst, q_val] & S[qbatch.dst, q_src]
    bad_target = world.bad[qbatch.dst]
    if bad_target.any():
        bs, bd, bpl = d.bad_rows(Tag.QUERY_REPLY)
        keys = np.unique((bs * n + bd) * (ids.max() + 1) + bpl[:, 0]) if len(bs) else np.zeros(0, dtype=np.int64)
        qk = (qbatch.dst * n + q_src) * (ids.max() + 1) + ids[q_val]
        confirmed |= bad_target & np.isin(qk, keys)
    cpos = np.full(n, -1, dtype=np.int64)
    cpos[cand] = np.arange(len(cand))
    replies = np.zeros((len(cand), n), dtype=np.int64)
    np.add.at(replies, (cpos[q_src[confirmed]], q_val[confirmed]), 1)
    validated = kept & (replies >= ep.delta * q)
    validated[np.arange(len(cand)), cand] = True
    S_cur = S.copy()
    S_cur[cand] = validated
    state.s_x = S_cur
    steps.close("validate")

    # Step 4: agree on ready_in
    ready_in = np.zeros(n, dtype=np.int64)
    ready_in[cand] = (n_x[cand] >= ep.high).astype(np.int64)
    state.ready_in = ready_in
    state.core = core_gate
    state.step = "ready"
    ready_out = np.zeros(n, dtype=np.int64)
    if len(cand):
        cfg = core_sampler(params, ep.p * n, e, "ready")
        res = large_core_ba(world, cand, validated, ready_in[cand], cfg, adversary,
                            king_phases=params.king_phases, epoch=e, label="ready")
        ready_out[cand] = res.outputs[:, 0] * (n_x[cand] >= ep.low)
    state.ready_out = ready_out
    steps.close("ready")

    # Step 5: agree on the value
    default = _default_code(mode, codec)
    value = np.where(good, inputs, 0) if mode == "ba" else np.full(n, default, dtype=np.int64)
    part = np.nonzero(core_gate & (ready_out == 1))[0]
    state.step = "value"
    if len(part):
        value[part] = _decide_values(world, mode, codec, part, S_cur[part], inputs[part],
                                     ep.p * (n - t), adversary, epoch=e, label="value")
    state.value = value
    steps.close("value")

    # Step 6: actives broadcast their tuple
    state.step = "decision"
    payload = decision_payload(ready_out[act], value[act], codec)
    batch = world.broadcast(Tag.DECISION_BROADCAST, act, payload, codec.layout)
    d = world.execute_round([batch], adversary, RoundContext("decision", e, {"codec": codec}))
    gate = good & (light | (n_x >= ep.low - t))
    listeners = np.nonzero(gate)[0]
    W = S_cur[listeners][:, act].astype(np.int64)
    bs, bd, bpl = d.bad_rows(Tag.DECISION_BROADCAST)
    dd, ds, dr, dc = decode_bad(bs, bd, bpl, codec)
    lpos = np.full(n, -1, dtype=np.int64)
    lpos[listeners] = np.arange(len(listeners))
    ok = (lpos[dd] >= 0) if len(dd) else np.zeros(0, dtype=bool)
    ok[ok] = S_cur[dd[ok], ds[ok]]
    bad = (lpos[dd[ok]], np.ones(int(ok.sum()), dtype=np.int64), dr[ok], dc[ok])
    yes, no, best = tally(W, ready_out[act], value[act], bad)
    new_ready = np.zeros(n, dtype=np.int64)
    new_value = value.copy()
    take = (yes > no) & (best >= 0)
    new_ready[listeners] = take.astype(np.int64)
    new_value[listeners] = np.where(take, best, new_value[listeners])
    ready_out, value = new_ready, new_value
    state.ready_out, state.value = ready_out, value
    steps.close("decision")
    if check:
        violations += check_implicit_agreement(world, ready_out, value)
        violations += check_core(world, ep, light, active, core_gate, S_cur)
        violations += check_validation(world, ep, light, S, core_gate, S_cur)

    # Step 7: promise agreement
    state.step = "promise"
    ready_out, value, _ = promise_agreement(world, ready_out, value, adversary, epoch=e, codec=codec)
    state.ready_out, state.value = ready_out, value
    steps.close("promise")
    decided = good & (ready_out == 1)
    n_dec = int(decided.sum())
    if check and 0 < n_dec < len(world.good_idx):
        violations.append(f"epoch {e}: dichotomy broken, {n_dec} of {len(world.good_idx)} good nodes terminated")
    agreed = None
    if n_dec:
        vals = np.unique(value[decided])
        agreed = int(vals[0]) if len(vals) == 1 else None
    outcome = EpochOutcome(
        epoch=e,
        terminated=n_dec > 0,
        agreed_value=agreed,
        light_count=int(light.sum()),
        core_size=len(cand),
        active_count=len(act),
        decided_count=n_dec,
        step_counters=steps.counters,
        violations=violations,
    )
    return outcome, ready_out, value


def _default_code(mode: str, codec) -> int:
    if mode == "committee":
        return codec.code(())
    return 0


# ---------------------------------------------------------------------------
# invariant checks


def check_implicit_agreement(world: World, ready_out: np.ndarray, value: np.ndarray) -> list[str]:
    """Either more than a t/n share of good nodes hold one (1, v) and the
    rest hold ready_out = 0, or no good node holds ready_out = 1."""
    good = world.good_idx
    r = ready_out[good] == 1
    if not r.any():
        return []
    out = []
    vals = np.unique(value[good][r])
    if len(vals) > 1:
        out.append(f"epoch {world.metrics.epochs}: ready good nodes hold {len(vals)} different values")
    share = r.sum() / len(good)
    if share <= world.params.t / world.n:
        out.append(f"epoch {world.metrics.epochs}: only {share:.3f} of good nodes ready, not above t/n")
    return out


def check_core(world: World, ep: EpochParams, light, active, core, views) -> list[str]:
    """When enough nodes are light, every active node is in the core and
    the core lies inside every core member's view."""
    t = world.params.t
    if light.sum() < ep.low - t:
        return []
    out = []
    if (active & ~core).any():
        out.append(f"epoch {ep.epoch_index}: {int((active & ~core).sum())} active nodes missed the core")
    c = np.nonzero(core)[0]
    if len(c) and not views[np.ix_(c, c)].all():
        out.append(f"epoch {ep.epoch_index}: core not contained in every core member's view")
    return out


def validation_bound(params: ProtocolParams, ep: EpochParams) -> float:
    """IDs held by at most this many light nodes must never be validated."""
    return (1 - params.epsilon) * (ep.delta - params.t / params.n) * params.n


def check_validation(world: World, ep: EpochParams, light, s_step2, core, views) -> list[str]:
    bad = world.bad_idx
    c = np.nonzero(core)[0]
    if not len(bad) or not len(c):
        return []
    holders = s_step2[light][:, bad].sum(axis=0)
    rare = bad[holders <= validation_bound(world.params, ep)]
    hit = views[np.ix_(c, rare)].any(axis=0)
    if hit.any():
        return [f"epoch {ep.epoch_index}: {int(hit.sum())} rarely held IDs passed validation"]
    return []


# ---------------------------------------------------------------------------
# fallback and the full protocol


def fallback_full_graph(world: World, inputs: np.ndarray, adversary=None, *, mode: str = "ba", codec=None,
                        epoch: int = 0) -> np.ndarray:
    """Every good node greets every port, then everyone runs the core
    agreement (or election) with the full set of greeters as view.
    Returns the value code of every node (bad entries meaningless)."""
    params = world.params
    codec = codec or codec_for(mode, params.id_universe)
    good = world.good_idx
    batch = world.broadcast(Tag.FULL_GRAPH_HELLO, good, world.ids[good][:, None])
    d = world.execute_round([batch], adversary, RoundContext("hello", epoch, {}))
    views = d.heard(Tag.FULL_GRAPH_HELLO)[good]
    views[np.arange(len(good)), good] = True
    out = np.zeros(world.n, dtype=np.int64)
    out[good] = _decide_values(world, mode, codec, good, views, inputs[good], params.n - params.t,
                               adversary, epoch=epoch, label="fallback")
    return out


def epoch_limit(params: ProtocolParams) -> int:
    """Doubling epochs before the fallback: 1 + ceil(log2(n / (C log2 n)))."""
    return 1 + max(0, math.ceil(math.log2(params.n / (params.C * params.log_n))))


def run_agreement(
    params: ProtocolParams,
    adversary=None,
    inputs: np.ndarray | str = "random",
    *,
    mode: str = "ba",
    bad_ids=None,
    t_budget: float | None = None,
    trace: bool = False,
    check: bool = True,
) -> AgreementResult:
    """Run epochs with doubling p until termination, else the fallback.

    ``inputs`` is an input spec or an array of bits for the good nodes in
    index order. The adversary (if any) picks the bad set and carries the
    budget unless ``bad_ids`` / ``t_budget`` are given."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if bad_ids is None:
        bad_ids = adversary.select_bad_nodes(params, params.master_seed) if adversary is not None else []
    if t_budget is None:
        t_budget = adversary.budget if adversary is not None else 0
    world = World(params, t_budget, bad_ids, trace=trace)
    codec = codec_for(mode, params.id_universe)
    if isinstance(inputs, str):
        bits = assign_inputs(inputs, len(world.good_idx), world.rng("inputs"))
    else:
        bits = np.asarray(inputs, dtype=np.int64)
        if len(bits) != len(world.good_idx):
            raise ValueError("one input bit per good node expected")
    full_inputs = np.zeros(world.n, dtype=np.int64)
    full_inputs[world.good_idx] = bits

    outputs = np.full(world.n, -1, dtype=np.int64)
    done = np.zeros(world.n, dtype=bool)
    outcomes: list[EpochOutcome] = []
    violations: list[str] = []
    i = 1
    while True:
        ep = derive_epoch_params(params, i)
        outcome, ready, value = run_epoch(world, ep, full_inputs, adversary, mode=mode, codec=codec, check=check)
        outcomes.append(outcome)
        violations += outcome.violations
        newly = ~done & ~world.bad & (ready == 1)
        outputs[newly] = value[newly]
        done |= newly
        if done[world.good_idx].all():
            break
        if ep.p < params.doubling_limit and i < epoch_limit(params):
            i += 1
            continue
        world.begin_epoch()
        fb = fallback_full_graph(world, full_inputs, adversary, mode=mode, codec=codec, epoch=i + 1)
        rest = ~done & ~world.bad
        outputs[rest] = fb[rest]
        outcomes.append(EpochOutcome(epoch=i + 1, terminated=True, agreed_value=None, light_count=0,
                                     core_size=len(world.good_idx), active_count=len(world.good_idx),
                                     decided_count=int(rest.sum()), fallback=True))
        break
    good_out = outputs[world.good_idx]
    if check:
        if len(np.unique(good_out)) > 1:
            violations.append("agreement: good nodes output different values")
        if mode == "ba" and not np.isin(good_out, bits).all():
            violations.append("validity: output is not the input of any good node")
    return AgreementResult(world.good_idx, good_out, outcomes, violations, world, mode, codec)


def elect_leader(params: ProtocolParams, adversary=None, **kw) -> AgreementResult:
    return run_agreement(params, adversary, "all0", mode="leader", **kw)


def elect_committee(params: ProtocolParams, adversary=None, **kw) -> AgreementResult:
    return run_agreement(params, adversary, "all0", mode="committee", **kw)


def node_states(result: AgreementResult, with_ports: bool = False) -> list[NodeState]:
    """Per-good-node snapshot of the final epoch's state."""
    world = result.world
    st: ProtocolState = world.state
    out = []
    for pos, x in enumerate(result.good_idx.tolist()):
        s_row = st.s_x[x] if st is not None and st.s_x is not None else np.zeros(world.n, dtype=bool)
        out.append(NodeState(
            id=int(world.ids[x]),
            input_bit=int(st.inputs[x]) if st is not None else 0,
            is_active=bool(st.active[x]) if st is not None and st.active is not None else False,
            is_light=bool(st.light[x]) if st is not None and st.light is not None else False,
            s_x=frozenset(int(v) for v in world.ids[np.nonzero(s_row)[0]]),
            n_x=int(st.n_x[x]) if st is not None and st.n_x is not None else 0,
            ready_in=int(st.ready_in[x]) if st is not None and st.ready_in is not None else 0,
            ready_out=int(st.ready_out[x]) if st is not None and st.ready_out is not None else 0,
            value=int(result.outputs[pos]),
            decided=bool(st.ready_out[x] == 1) if st is not None and st.ready_out is not None else False,
            port_directory=world.port_directory(x) if with_ports else {},
        ))
    return out
