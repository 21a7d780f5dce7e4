"""Pseudorandom committee assignment over the ID universe [1, n^k].

Membership of an ID in committee (layer, r) is decided by a public 64-bit
hash, so every node computes the same answer without communication::

    mix64(x):  x += 0x9E3779B97F4A7C15
               x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9
               x = (x ^ (x >> 27)) * 0x94D049BB133111EB
               return x ^ (x >> 31)            (all arithmetic mod 2^64)

    prf(seed, layer, r, id) = mix64(mix64(mix64(mix64(seed) ^ layer) ^ r) ^ id)

``id`` is a member iff ``prf < floor(prob * 2^64)`` (always when prob = 1).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

_M64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)


def mix64(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = x + _GOLDEN
        x = (x ^ (x >> np.uint64(30))) * _MUL1
        x = (x ^ (x >> np.uint64(27))) * _MUL2
    return x ^ (x >> np.uint64(31))


def prf(seed: int, layer: int, committee, ids) -> np.ndarray:
    """Vectorized over ``committee`` and ``ids`` (broadcasting)."""
    h = mix64(np.uint64(seed & _M64)) ^ np.uint64(layer)
    h = mix64(h) ^ np.asarray(committee, dtype=np.uint64)
    return mix64(mix64(h) ^ np.asarray(ids, dtype=np.uint64))


def _threshold(prob: float) -> int | None:
    """Integer cut for membership; None means everyone is a member."""
    if prob >= 1.0:
        return None
    return int(prob * 2.0**64)


def size_target(n: int, kappa: float, rule: str = "log") -> float:
    """Committee size target: kappa * log2 n, or kappa * ln^6 n."""
    if rule == "log":
        return kappa * max(1.0, math.log2(n))
    if rule == "ln6":
        return kappa * math.log(max(n, 3)) ** 6
    raise ValueError(f"unknown size rule {rule!r}")


@dataclass(frozen=True)
class CommitteeId:
    layer: int
    index: int


@dataclass(frozen=True)
class SamplerConfig:
    """Layered committee structure for an expected population of ``s`` IDs.

    Layer 0 has max(1, floor(s / log2 s)) committees; each further layer
    multiplies the count by ``layer_shrink`` until a single top committee
    remains. A committee at layer l elects about target * layer_shrink
    members, which form the population of layer l + 1.
    """

    n: int
    s: float
    committee_size_target: float
    seed: int = 0
    universe_exponent: int = 2
    layer_shrink: float | None = None
    counts: tuple[int, ...] = field(init=False)

    def __post_init__(self) -> None:
        if self.s <= 0 or self.committee_size_target <= 0:
            raise ValueError("s and committee_size_target must be positive")
        shrink = self.shrink
        if not 0 < shrink < 1:
            raise ValueError("layer_shrink must lie in (0, 1)")
        counts = [max(1, math.floor(self.s / max(1.0, math.log2(self.s))))]
        while counts[-1] > 1:
            nxt = max(1, math.floor(counts[-1] * shrink))
            counts.append(min(nxt, counts[-1] - 1))
        object.__setattr__(self, "counts", tuple(counts))

    @classmethod
    def build(cls, n: int, s: float, kappa: float = 6.0, seed: int = 0, k: int = 2,
              rule: str = "log", layer_shrink: float | None = None) -> "SamplerConfig":
        return cls(n=n, s=s, committee_size_target=size_target(n, kappa, rule), seed=seed,
                   universe_exponent=k, layer_shrink=layer_shrink)

    @property
    def shrink(self) -> float:
        if self.layer_shrink is not None:
            return self.layer_shrink
        return 1.0 / max(2.0, math.log2(max(self.s, 2.0)))

    @property
    def num_committees_layer0(self) -> int:
        return self.counts[0]

    @property
    def num_layers(self) -> int:
        return len(self.counts)

    @property
    def top_layer(self) -> int:
        return len(self.counts) - 1

    def committee_count(self, layer: int) -> int:
        self._check_layer(layer)
        return self.counts[layer]

    @property
    def elected_target(self) -> float:
        return self.committee_size_target * self.shrink

    def population(self, layer: int) -> float:
        """Expected number of candidates entering ``layer``."""
        self._check_layer(layer)
        if layer == 0:
            return float(self.s)
        return self.counts[layer - 1] * self.elected_target

    def membership_probability(self, layer: int) -> float:
        return min(1.0, self.committee_size_target / self.population(layer))

    def num_bins(self, layer: int) -> int:
        """Bins for the lightest-bin election inside a layer committee."""
        expected = min(self.committee_size_target, self.population(layer))
        return max(1, math.ceil(expected / self.elected_target))

    def _check_layer(self, layer: int) -> None:
        if not 0 <= layer < len(self.counts):
            raise ValueError(f"layer {layer} out of range [0, {len(self.counts)})")

    def member_matrix(self, ids, layer: int) -> np.ndarray:
        """Boolean matrix [committee, id] for the given IDs."""
        ids = np.asarray(ids, dtype=np.int64)
        count = self.committee_count(layer)
        cut = _threshold(self.membership_probability(layer))
        if cut is None:
            return np.ones((count, len(ids)), dtype=bool)
        h = prf(self.seed, layer, np.arange(count)[:, None], ids[None, :])
        return h < np.uint64(cut)

    def is_member(self, ids, cid: CommitteeId) -> np.ndarray:
        self._check_layer(cid.layer)
        if not 0 <= cid.index < self.counts[cid.layer]:
            raise ValueError("committee index out of range")
        cut = _threshold(self.membership_probability(cid.layer))
        ids = np.asarray(ids, dtype=np.int64)
        if cut is None:
            return np.ones(ids.shape, dtype=bool)
        return prf(self.seed, cid.layer, cid.index, ids) < np.uint64(cut)


def committees_of(node_id: int, layer: int, cfg: SamplerConfig) -> frozenset[CommitteeId]:
    col = cfg.member_matrix([node_id], layer)[:, 0]
    return frozenset(CommitteeId(layer, int(r)) for r in np.nonzero(col)[0])


def members_known(view: Iterable[int], cid: CommitteeId, cfg: SamplerConfig) -> frozenset[int]:
    ids = np.array(sorted(view), dtype=np.int64)
    if not len(ids):
        return frozenset()
    return frozenset(int(x) for x in ids[cfg.is_member(ids, cid)])


@dataclass
class AuditReport:
    fraction_flagged: float
    fraction_bad_majority: float
    mean_bad_share: float
    max_bad_share: float
    mean_size: float
    rows: list[tuple[int, int, int, int, int, bool]]


def audit_sampler(
    cfg: SamplerConfig,
    f_g: float,
    f_b: float,
    trials: int,
    seed: int = 0,
    size_tolerance: float | None = None,
    share_tolerance: float = 0.1,
    epsilon: float = 0.01,
) -> AuditReport:
    """Monte-Carlo audit of layer-0 committees against random good/bad ID sets.

    Each trial draws disjoint good and bad ID sets of sizes f_g * s and
    f_b * s; a committee is flagged when its size leaves the tolerance
    band or its bad share exceeds f_b / (f_g + f_b) + share_tolerance."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    n_good = round(f_g * cfg.s)
    n_bad = round(f_b * cfg.s)
    universe = cfg.n**cfg.universe_exponent
    if f_g < 0 or f_b < 0 or n_good + n_bad > universe or f_g + f_b > 1 + epsilon:
        raise ValueError("infeasible good/bad set sizes")
    if size_tolerance is None:
        size_tolerance = 1.0 / math.log(max(cfg.n, 3))
    rng = np.random.default_rng(seed)
    expected_size = cfg.committee_size_target * (n_good + n_bad) / cfg.s
    bad_cap = (f_b / (f_g + f_b) if f_g + f_b > 0 else 0.0) + share_tolerance
    rows = []
    shares = []
    sizes = []
    for _ in range(trials):
        picked = _distinct(rng, universe, n_good + n_bad)
        good, bad = picked[:n_good], picked[n_good:]
        mg = cfg.member_matrix(good, 0).sum(axis=1)
        mb = cfg.member_matrix(bad, 0).sum(axis=1)
        for r, (g, b) in enumerate(zip(mg.tolist(), mb.tolist())):
            size = g + b
            share = b / size if size else 0.0
            size_ok = abs(size - expected_size) <= size_tolerance * expected_size
            flagged = not (size_ok and share <= bad_cap)
            rows.append((0, r, size, g, b, flagged))
            shares.append(share)
            sizes.append(size)
    shares_a = np.array(shares)
    return AuditReport(
        fraction_flagged=float(np.mean([r[5] for r in rows])),
        fraction_bad_majority=float(np.mean(shares_a >= 0.5)),
        mean_bad_share=float(shares_a.mean()),
        max_bad_share=float(shares_a.max()),
        mean_size=float(np.mean(sizes)),
        rows=rows,
    )


def _distinct(rng: np.random.Generator, universe: int, count: int) -> np.ndarray:
    chosen: dict[int, None] = {}
    while len(chosen) < count:
        for x in rng.integers(1, universe + 1, size=count - len(chosen)).tolist():
            chosen.setdefault(x)
    return np.array(list(chosen)[:count], dtype=np.int64)


def write_audit_csv(report: AuditReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "committee", "size", "good", "bad", "flagged"])
        for layer, r, size, g, b, flagged in report.rows:
            w.writerow([layer, r, size, g, b, int(flagged)])
