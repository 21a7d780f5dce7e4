"""Static, rushing, full-information adversaries with a bit budget.

Every strategy sees the whole world (including the protocol state in
``world.state``) and the good traffic of the current round before it
speaks. It returns point batches from bad senders; the engine charges
them against the budget in order and truncates the rest.

Strategy strings: ``name[:key=value,...]``, for example
``flooder:T=1e6,frac=0.02``. ``T`` may be a plain number of bits or a
multiple of n log2 n written ``4nlogn``. ``select=uniform|lowest``
chooses how the bad set is drawn. Names and knobs:

=============  ==========================================================
silent         nothing
flooder        frac (share of nodes made heavy, default epsilon), extra
fake-active    hold (share of the validation bound), ids (planted IDs)
query-spam     spammers, share (budget share spent on queries)
equivocator    count (bad nodes joining the active set, default p * t)
dos-replica    r (replicas per good message)
composite      parts=a+b+..., budget split evenly
=============  ==========================================================
"""

from __future__ import annotations

import math
import re
import zlib
from dataclasses import dataclass, field

import numpy as np

from .messages import Field, LAYOUTS, Tag, layout_bits
from .net import MulticastBatch, PointBatch, RoundContext, World, assign_ids
from .params import ConfigError, ProtocolParams


def _rows(tag, src, dst, payload, layout=None) -> PointBatch:
    return PointBatch(tag, src, dst, payload, layout)


def _cap(world: World, tag: Tag, layout=None) -> int:
    """Rows of this shape the remaining budget still pays for."""
    bits = layout_bits(LAYOUTS[tag] if layout is None else layout, world.n, world.params.k)
    return int(max(0.0, world.budget_left) // bits)


@dataclass
class AdversaryStrategy:
    """Base strategy: silent. Subclasses override ``plan_round``."""

    budget: float = 0.0
    selection: str = "uniform"
    name: str = field(default="silent", init=False)

    def select_bad_nodes(self, params: ProtocolParams, seed: int) -> frozenset[int]:
        return select_bad_nodes(params, seed, self.selection)

    def plan_round(self, world: World, good: list, ctx: RoundContext) -> list[PointBatch]:
        return []

    def rng(self, world: World, *labels) -> np.random.Generator:
        return world.rng("adversary", self.name, *labels)


def select_bad_nodes(params: ProtocolParams, seed: int, policy: str = "uniform") -> frozenset[int]:
    """The t bad IDs, fixed before the run starts."""
    ids = assign_ids(params)
    t = params.t
    if policy == "lowest":
        chosen = ids[:t]
    elif policy == "uniform":
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(b"bad"),)))
        chosen = ids[np.sort(rng.choice(params.n, size=t, replace=False))]
    else:
        raise ConfigError(f"unknown bad-node policy {policy!r}")
    out = frozenset(int(x) for x in chosen)
    if len(out) != t:
        raise ConfigError(f"selected {len(out)} bad nodes, expected {t}")
    return out


class Silent(AdversaryStrategy):
    pass


def _split_values(count: int, values: int = 2) -> np.ndarray:
    return np.arange(count) % values


@dataclass
class Flooder(AdversaryStrategy):
    """Makes floor(frac * n) + 1 good nodes heavy with fake announcements,
    spending just enough on each target (plus ``extra``)."""

    frac: float | None = None
    extra: int = 0
    name: str = field(default="flooder", init=False)

    def plan_round(self, world, good, ctx):
        if ctx.phase != "announce" or not len(world.bad_idx):
            return []
        st = world.state
        ep = st.ep
        frac = world.params.epsilon if self.frac is None else self.frac
        k = min(len(world.good_idx), math.floor(frac * world.n) + 1)
        heard = int(st.active.sum())
        need = min(len(world.bad_idx), max(0, math.floor(ep.light_threshold) - heard + 1 + self.extra))
        if need == 0:
            return []
        targets = self.rng(world, ctx.epoch).choice(world.good_idx, size=k, replace=False)
        # senders come from the far end of the bad set so that a composite
        # partner announcing from the near end does not overlap
        src = np.tile(world.bad_idx[::-1][:need], k)
        dst = np.repeat(targets, need)
        return [_rows(Tag.ACTIVE_ANNOUNCE, src, dst, world.ids[src][:, None])]


@dataclass
class FakeActive(AdversaryStrategy):
    """Plants bad IDs: each is announced to about ``hold`` times the
    validation bound of light nodes, echoed by every bad node in the
    sampling round, and confirmed by bad nodes that get queried."""

    hold: float = 0.5
    ids: int = 1
    name: str = field(default="fake-active", init=False)

    def planted(self, world: World) -> np.ndarray:
        return world.bad_idx[: max(0, min(self.ids, len(world.bad_idx)))]

    def plan_round(self, world, good, ctx):
        from .protocol import validation_bound

        planted = self.planted(world)
        if not len(planted):
            return []
        st = world.state
        if ctx.phase == "announce":
            ep = st.ep
            heard = int(st.active.sum()) + len(planted)
            if heard > ep.light_threshold:
                return []
            h = max(0, math.floor(self.hold * validation_bound(world.params, ep)))
            rng = self.rng(world, ctx.epoch, "hold")
            out = []
            for v in planted.tolist():
                holders = rng.choice(world.good_idx, size=min(h, len(world.good_idx)), replace=False)
                out.append(_rows(Tag.ACTIVE_ANNOUNCE, np.full(len(holders), v), holders,
                                 np.full((len(holders), 1), world.ids[v])))
            world.adv_memory.setdefault("planted", {})[ctx.epoch] = planted
            return out
        if ctx.phase == "sample":
            targets = np.nonzero(st.active)[0]
            bad = world.bad_idx
            name = planted[np.arange(len(bad)) % len(planted)]
            src = np.repeat(bad, len(targets))
            dst = np.tile(targets, len(bad))
            return [_rows(Tag.SAMPLE_ID, src, dst, world.ids[np.repeat(name, len(targets))][:, None])]
        if ctx.phase == "reply":
            return _confirm(world, ctx, world.ids[planted])
        return []


def _confirm(world: World, ctx: RoundContext, ids: np.ndarray) -> list[PointBatch]:
    """Bad nodes confirm every query they received about ``ids``."""
    q = ctx.info["queries"]
    hit = world.bad[q.dst] & np.isin(q.payload[:, 0], ids)
    if not hit.any():
        return []
    return [_rows(Tag.QUERY_REPLY, q.dst[hit], q.src[hit], q.payload[hit])]


@dataclass
class QuerySpam(AdversaryStrategy):
    """A few bad nodes announce to everyone, then query light nodes about
    IDs they hold (each confirmation costs the good side) and finally
    spam promise requests with the rest of the budget."""

    spammers: int = 1
    share: float = 0.5
    name: str = field(default="query-spam", init=False)

    def plan_round(self, world, good, ctx):
        sp = world.bad_idx[: self.spammers]
        if not len(sp):
            return []
        st = world.state
        if ctx.phase == "announce":
            targets = world.good_idx
            src = np.repeat(sp, len(targets))
            return [_rows(Tag.ACTIVE_ANNOUNCE, src, np.tile(targets, len(sp)), world.ids[src][:, None])]
        if ctx.phase == "query":
            lights = np.nonzero(st.light & st.s_step2[:, sp].all(axis=1))[0]
            act = np.nonzero(st.active)[0]
            if not len(lights) or not len(act):
                return []
            limit = int(self.share * max(0.0, world.budget_left)) // layout_bits(LAYOUTS[Tag.QUERY], world.n, world.params.k)
            per = len(lights) * len(act)
            rounds = min(len(sp), max(1, limit // per + 1))
            m = min(limit, per * rounds)
            if m <= 0:
                return []
            i = np.arange(m)
            src = sp[(i // per) % len(sp)]
            dst = lights[i % len(lights)]
            val = act[(i // len(lights)) % len(act)]
            return [_rows(Tag.QUERY, src, dst, world.ids[val][:, None])]
        if ctx.phase == "promise.request":
            m = _cap(world, Tag.PROMISE_REQUEST)
            targets = world.good_idx
            m = min(m, len(targets) * len(sp))
            i = np.arange(m)
            return [_rows(Tag.PROMISE_REQUEST, sp[i // len(targets) % len(sp)], targets[i % len(targets)],
                          np.zeros((m, 0)))]
        return []


@dataclass
class Equivocator(AdversaryStrategy):
    """Bad nodes join the active set and then say different things to
    different receivers: split bits in every agreement round, rushed bin
    choices in elections, split tuples in the last two steps."""

    count: int | None = None
    name: str = field(default="equivocator", init=False)

    def members(self, world: World) -> np.ndarray:
        st = world.state
        if self.count is not None:
            c = self.count
        elif st is not None and getattr(st, "ep", None) is not None:
            c = max(1, round(st.ep.p * world.params.t))
        else:
            c = len(world.bad_idx)
        return world.bad_idx[: min(c, len(world.bad_idx))]

    def plan_round(self, world, good, ctx):
        eq = self.members(world)
        if not len(eq):
            return []
        st = world.state
        phase = ctx.phase
        kind = ctx.info.get("kind")
        if phase == "announce":
            targets = world.good_idx
            src = np.repeat(eq, len(targets))
            return [_rows(Tag.ACTIVE_ANNOUNCE, src, np.tile(targets, len(eq)), world.ids[src][:, None])]
        if phase == "sample":
            targets = np.nonzero(st.active)[0]
            src = np.repeat(eq, len(targets))
            return [_rows(Tag.SAMPLE_ID, src, np.tile(targets, len(eq)), world.ids[src][:, None])]
        if phase == "reply":
            return _confirm(world, ctx, world.ids[eq])
        if kind in ("vote", "propose", "king"):
            return self._committee_round(world, ctx, eq)
        if kind in ("diffuse", "final"):
            return self._spread_round(world, ctx, eq)
        if kind == "feige":
            return self._feige_round(world, ctx, eq)
        if phase == "decision":
            return self._decision(world, ctx, eq, Tag.DECISION_BROADCAST, world.good_idx, None)
        if phase == "promise.reply":
            rs, rd = ctx.info["requests"]
            sel = world.bad[rd] & ~world.bad[rs]
            return self._decision(world, ctx, eq, Tag.PROMISE_REPLY, rs[sel], rd[sel])
        return []

    def _committee_round(self, world, ctx, eq):
        group = ctx.info["group"]
        bits = ctx.info["bits"]
        step = ctx.info["step"]
        copies = bits.shape[1]
        members = group.members
        split = _split_values(len(members))
        out_src, out_dst, out_pl = [], [], []
        for b in eq.tolist():
            sees = group.local[:, b].copy()
            if ctx.info["kind"] == "king":
                sees &= ctx.info["kings"] == b
            y = np.nonzero(sees)[0]
            if not len(y):
                continue
            for c in range(copies):
                out_src.append(np.full(len(y), b))
                out_dst.append(members[y])
                out_pl.append(np.stack([np.full(len(y), c + 1), np.full(len(y), step), split[y]], axis=1))
        if not out_src:
            return []
        return [_rows(Tag.CORE_BA, np.concatenate(out_src), np.concatenate(out_dst), np.concatenate(out_pl))]

    def _spread_round(self, world, ctx, eq):
        part = ctx.info["participants"]
        views = ctx.info["views"]
        copies = ctx.info["bits"].shape[1]
        step = ctx.info["step"]
        split = _split_values(len(part))
        out = []
        for b in eq.tolist():
            y = np.nonzero(views[:, b])[0]
            for c in range(copies):
                out.append(_rows(Tag.CORE_BA, np.full(len(y), b), part[y],
                                 np.stack([np.full(len(y), c + 1), np.full(len(y), step), split[y]], axis=1)))
        return out

    def _feige_round(self, world, ctx, eq):
        info = ctx.info
        nb = info["num_bins"]
        listeners = info["listeners"]
        eligible = info["eligible"]
        counts = np.bincount(info["bins"], minlength=nb)
        order = np.argsort(counts, kind="stable")
        target = int(order[0])
        room = int(counts[order[1]] - counts[target] - 1) if nb > 1 else len(eq)
        joiners = eq[: max(0, room)]
        out = []
        for b in joiners.tolist():
            y = np.nonzero(eligible[:, b])[0]
            if len(y):
                out.append(_rows(Tag.CORE_BA, np.full(len(y), b), listeners[y],
                                 np.stack([np.full(len(y), info["coord"]), np.full(len(y), info["step"]),
                                           np.full(len(y), target)], axis=1)))
        return out

    def _decision(self, world, ctx, eq, tag, receivers, senders):
        codec = ctx.info.get("codec")
        layout = codec.layout if codec is not None else None
        if not len(receivers):
            return []
        if senders is None:
            src = np.repeat(eq, len(receivers))
            dst = np.tile(receivers, len(eq))
        else:
            src, dst = senders, receivers
        if layout is None or layout[1] is Field.FLAG:
            val = dst % 2
        else:
            val = world.ids[src]
        return [_rows(tag, src, dst, np.stack([np.ones(len(src), dtype=np.int64), val], axis=1), layout)]


@dataclass
class DosReplica(AdversaryStrategy):
    """For every good message u -> v of the round, ``r`` bad nodes send v
    the identical payload in the same round."""

    r: int = 4
    name: str = field(default="dos-replica", init=False)

    def plan_round(self, world, good, ctx):
        reps = world.bad_idx[: self.r]
        if not len(reps):
            return []
        out = []
        for b in good:
            cap = _cap(world, b.tag, b.layout) // len(reps)
            if cap <= 0:
                break
            if isinstance(b, MulticastBatch):
                rows, cols = np.nonzero(b.mask)
                rows, cols = rows[:cap], cols[:cap]
                dst, pl = cols, b.payload[rows, 0]
            else:
                dst, pl = b.dst[:cap], b.payload[:cap]
            keep = ~world.bad[dst]
            dst, pl = dst[keep], pl[keep]
            src = np.tile(reps, len(dst))
            out.append(_rows(b.tag, src, np.repeat(dst, len(reps)), np.repeat(pl, len(reps), axis=0), b.layout))
        return out


@dataclass
class Composite(AdversaryStrategy):
    """Runs several strategies, each within an equal slice of the budget."""

    parts: tuple[AdversaryStrategy, ...] = ()
    name: str = field(default="composite", init=False)

    def plan_round(self, world, good, ctx):
        if not self.parts:
            return []
        spent = world.adv_memory.setdefault("composite_spent", [0.0] * len(self.parts))
        slice_ = self.budget / len(self.parts)
        out = []
        for i, part in enumerate(self.parts):
            left = slice_ - spent[i]
            if left <= 0:
                continue
            for b in part.plan_round(world, good, ctx):
                bits = layout_bits(b.fields, world.n, world.params.k)
                fit = int(min(len(b), left // bits))
                if fit <= 0:
                    break
                out.append(b.head(fit))
                spent[i] += fit * bits
                left -= fit * bits
        return out


CATALOG: dict[str, type[AdversaryStrategy]] = {
    "silent": Silent,
    "flooder": Flooder,
    "fake-active": FakeActive,
    "query-spam": QuerySpam,
    "equivocator": Equivocator,
    "dos-replica": DosReplica,
    "composite": Composite,
}

_KNOBS = {
    "frac": float, "extra": int, "hold": float, "ids": int, "spammers": int,
    "share": float, "count": int, "r": int,
}
_BUDGET = re.compile(r"^([0-9.eE+-]*)\s*nlogn$")


def parse_budget(text: str, n: int | None) -> float:
    """A bit budget: a number, or a multiple of n log2 n such as ``4nlogn``."""
    text = text.strip()
    m = _BUDGET.match(text)
    if m:
        if n is None:
            raise ConfigError("a budget in units of n log n needs n")
        factor = float(m.group(1)) if m.group(1) else 1.0
        return factor * n * max(1.0, math.log2(n))
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"bad budget {text!r}") from None
    if value < 0:
        raise ConfigError("budget must be non-negative")
    return value


def parse_adversary(spec: str, n: int | None = None) -> AdversaryStrategy:
    """Build a strategy from ``name[:key=value,...]``."""
    name, _, rest = spec.strip().partition(":")
    name = name.strip().lower()
    if name not in CATALOG:
        raise ConfigError(f"unknown adversary {name!r}; known: {', '.join(CATALOG)}")
    kw: dict = {}
    budget = 0.0
    selection = "uniform"
    parts: list[str] = []
    for item in filter(None, (x.strip() for x in rest.split(","))):
        key, eq, val = item.partition("=")
        if not eq:
            raise ConfigError(f"adversary option {item!r} is not key=value")
        key = key.strip()
        if key == "T":
            budget = parse_budget(val, n)
        elif key == "select":
            selection = val.strip()
        elif key == "parts" and name == "composite":
            parts = [p for p in val.split("+") if p]
        elif key in _KNOBS:
            try:
                kw[key] = _KNOBS[key](float(val)) if _KNOBS[key] is int else float(val)
            except ValueError:
                raise ConfigError(f"adversary option {key} needs a number, got {val!r}") from None
        else:
            raise ConfigError(f"unknown adversary option {key!r}")
    cls = CATALOG[name]
    if name == "composite":
        if not parts:
            raise ConfigError("composite needs parts=a+b")
        sub = tuple(parse_adversary(p, n) for p in parts)
        return Composite(budget=budget, selection=selection, parts=sub)
    try:
        return cls(budget=budget, selection=selection, **kw)
    except TypeError:
        raise ConfigError(f"{name} does not take options {sorted(kw)}") from None
