"""Acceptance criteria 1-12 at their stated tolerances.

Each test is named ``test_cNN_*`` and conftest.py prints one PASS/FAIL
line per criterion at the end of the run. Constants marked "pinned" were
fitted once by tests/calibrate.py on seeds 10_000 and up; the tests here
use seeds from 0, so fit and check never share a seed.
"""

import functools
import math

import numpy as np
import pytest

from byzkit.adversary import Equivocator, FakeActive, Flooder, select_bad_nodes
from byzkit.core_ba import large_core_ba
from byzkit.harness import ExperimentConfig, run_trial
from byzkit.net import init_world
from byzkit.params import ProtocolParams, derive_epoch_params
from byzkit.promise import promise_agreement
from byzkit.protocol import run_agreement
from byzkit.sampler import SamplerConfig, audit_sampler

pytestmark = pytest.mark.acceptance

SIZES = (128, 256, 512, 1024)
ADVERSARIES = ("silent", "flooder", "fake-active", "query-spam", "equivocator", "dos-replica")
INPUTS = ("all0", "all1", "random", "split")
GRID_SEEDS = 20

# pinned constants
KAPPA1 = 109.0           # max good_msgs / (n log2 n), silent
KAPPA1_BAND = 0.20
KAPPA2 = 4830.0          # max good_bits / ((T + n log2 n) log2 n), flooder
KAPPA2_BAND = 0.25
KAPPA3 = 0.06            # flooder bits / (p n^2) that force epoch 1 to fail, n = 512
KAPPA4 = 22.0            # good msgs / (|G| (|G| + |B|)), LargeCoreBA

ROUNDS_AT_2048 = 2000
PROMISE_FAILURES_ALLOWED = 0


def log2(n):
    return math.log2(n)


@functools.lru_cache(maxsize=None)
def grid():
    """Criterion 1 sweep: every trial record, in a fixed order."""
    out = []
    for n in SIZES:
        for adv in ADVERSARIES:
            for inputs in INPUTS:
                cfg = ExperimentConfig(n=(n,), t_frac=0.15, adversary=f"{adv}:T=4nlogn", inputs=inputs,
                                       seeds=GRID_SEEDS)
                out += [run_trial(cfg, n, s) for s in range(GRID_SEEDS)]
    return tuple(out)


def notes_with(records, *words):
    return [(r.n, r.adversary, note) for r in records for note in r.notes if any(w in note for w in words)]


# ---------------------------------------------------------------------------
# 1-3: agreement, epoch dichotomy, implicit agreement


def test_c01_agreement_and_validity(record_property):
    recs = grid()
    bad = [r for r in recs if not (r.agreed and r.valid)]
    record_property("detail", f"{len(recs)} trials, {len(bad)} without agreement or validity")
    assert not bad


def test_c02_epoch_dichotomy(record_property):
    hits = notes_with(grid(), "dichotomy")
    record_property("detail", f"{len(hits)} dichotomy violations")
    assert not hits, hits[:5]


def test_c03_implicit_agreement(record_property):
    hits = notes_with(grid(), "ready good nodes hold", "not above t/n")
    record_property("detail", f"{len(hits)} implicit-agreement violations")
    assert not hits, hits[:5]


# ---------------------------------------------------------------------------
# 4: resource competitiveness


def silent_ratios(n, seeds=20):
    cfg = ExperimentConfig(n=(n,), t_frac=0.15, seeds=seeds, assert_invariants=False)
    return [run_trial(cfg, n, s).good_msgs / (n * log2(n)) for s in range(seeds)]


def flooder_ratios(n, v, seeds=3):
    cfg = ExperimentConfig(n=(n,), t_frac=0.15, adversary=f"flooder:T={2**v}nlogn", seeds=seeds,
                           assert_invariants=False)
    out = []
    for s in range(seeds):
        rec = run_trial(cfg, n, s)
        out.append(rec.good_bits / ((rec.T_budget + n * log2(n)) * log2(n)))
    return out


# Both constants are upper bounds, so the refit is the largest ratio seen
# in any trial; it must land inside the band around the pinned value.


def test_c04_silent_messages(record_property):
    worst = {n: max(silent_ratios(n)) for n in (128, 256, 512, 1024, 2048)}
    fitted = max(worst.values())
    record_property("detail", "silent max good_msgs/(n log n) by n: "
                    + ", ".join(f"{n}: {m:.1f}" for n, m in worst.items())
                    + f"; refit {fitted:.1f} vs pinned {KAPPA1}")
    assert abs(fitted - KAPPA1) <= KAPPA1_BAND * KAPPA1


def test_c04_flooder_bits(record_property):
    sizes = (128, 256, 512, 1024, 2048)
    worst = {(n, v): max(flooder_ratios(n, v)) for n in sizes for v in range(1, 6)}
    fitted = max(worst.values())
    trend = ", ".join(f"{n}: {worst[(n, 1)]:.0f}" for n in sizes)
    record_property("detail", f"flooder max ratio at T=2 n log n by n: {trend}; "
                    f"refit {fitted:.0f} vs pinned {KAPPA2:.0f}")
    assert abs(fitted - KAPPA2) <= KAPPA2_BAND * KAPPA2


# ---------------------------------------------------------------------------
# 5: forcing an extra epoch costs about p n^2


def first_epoch_terminates(n, seed, scale):
    p = ProtocolParams(n=n, t=math.floor(0.15 * n), activation_slack=0.5, master_seed=seed)
    pn2 = derive_epoch_params(p, 1).p * n * n
    res = run_agreement(p, Flooder(budget=scale * KAPPA3 * pn2), "random", check=False)
    return res.epochs[0].terminated


def test_c05_below_kappa3_does_not_force(record_property):
    ok = sum(first_epoch_terminates(512, s, 0.99) for s in range(100))
    record_property("detail", f"budget 0.99 k3 p n^2: epoch 1 terminated in {ok}/100")
    assert ok >= 95


def test_c05_above_four_kappa3_forces(record_property):
    forced = sum(not first_epoch_terminates(512, s, 4.01) for s in range(100))
    record_property("detail", f"budget 4.01 k3 p n^2: extra epoch forced in {forced}/100")
    assert forced >= 95


# ---------------------------------------------------------------------------
# 6: latency


def test_c06_rounds_polylog(record_property):
    rounds = {n: 0 for n in SIZES + (2048,)}
    for r in grid():
        rounds[r.n] = max(rounds[r.n], r.rounds)
    for adv in ADVERSARIES:
        cfg = ExperimentConfig(n=(2048,), t_frac=0.15, adversary=f"{adv}:T=4nlogn", seeds=3,
                               assert_invariants=False)
        rounds[2048] = max([rounds[2048]] + [run_trial(cfg, 2048, s).rounds for s in range(3)])
    record_property("detail", "max rounds by n: " + ", ".join(f"{n}: {r}" for n, r in rounds.items()))
    ns = sorted(rounds)
    for a, b in zip(ns, ns[1:]):
        assert rounds[b] <= rounds[a] * (1 + 3 / log2(a)) + 10, (a, b)
    assert rounds[2048] <= ROUNDS_AT_2048


# ---------------------------------------------------------------------------
# 7: promise agreement on crafted states


def promise_world(n, seed, adversary):
    params = ProtocolParams(n=n, t=math.floor(0.15 * n), c_promise=8, master_seed=seed)
    budget = 1e9 if adversary == "equivocator" else 0.0
    w = init_world(params, budget, select_bad_nodes(params, seed))
    return w, (Equivocator(budget=budget) if adversary == "equivocator" else None)


def promise_case(n, seed, adversary, case):
    """True when promise agreement behaves as required on a crafted state."""
    w, adv = promise_world(n, seed, adversary)
    rng = np.random.default_rng(seed)
    ready = np.zeros(n, dtype=np.int64)
    value = rng.integers(0, 2, n)
    v = seed % 2
    if case == 1:
        p = w.params
        k = math.ceil((p.t / n + 2 * p.epsilon) * n)
        chosen = rng.choice(w.good_idx, size=k, replace=False)
        ready[chosen] = 1
        value[w.good_idx] = 0
        value[chosen] = v
    r, out, log = promise_agreement(w, ready, value, adv)
    assert log.rounds == 2
    g = w.good_idx
    if case == 1:
        return bool(np.all(r[g] == 1) and np.all(out[g] == v))
    return not r[g].any()


@pytest.mark.parametrize("case", [1, 2])
@pytest.mark.parametrize("adversary", ["silent", "equivocator"])
@pytest.mark.parametrize("n", [512, 1024])
def test_c07_promise_agreement(n, adversary, case, record_property):
    failures = sum(not promise_case(n, s, adversary, case) for s in range(100))
    record_property("detail", f"n={n} {adversary} case {case}: {failures}/100 seeds failed")
    assert failures <= PROMISE_FAILURES_ALLOWED


def test_c07_two_rounds():
    w, adv = promise_world(512, 0, "equivocator")
    start = w.metrics.rounds
    _, _, log = promise_agreement(w, np.zeros(512, np.int64), np.zeros(512, np.int64), adv)
    assert log.rounds == 2 and w.metrics.rounds - start == 2


# ---------------------------------------------------------------------------
# 8: LargeCoreBA


def core_trial(G, seed):
    """One LargeCoreBA run with |B| = floor(0.3 |G|) equivocating members.

    Returns (result, inputs, messages per |G| (|G| + |B|))."""
    B = math.floor(0.3 * G)
    n = max(G + B, math.ceil(B / 0.15))
    params = ProtocolParams(n=n, t=B, master_seed=seed)
    w = init_world(params, 1e12, select_bad_nodes(params, seed))
    w.known[:] = True
    part = w.good_idx[:G]
    views = np.zeros((G, n), dtype=bool)
    views[:, part] = True
    views[:, w.bad_idx] = True
    inputs = np.random.default_rng(seed).integers(0, 2, G)
    cfg = SamplerConfig.build(n, G + B, kappa=1, rule="ln6", seed=seed)
    res = large_core_ba(w, part, views, inputs, cfg, Equivocator(budget=1e12))
    return res, inputs, res.good_msgs / (G * (G + B))


@pytest.mark.parametrize("G", [64, 128, 256])
def test_c08_large_core_ba(G, record_property):
    disagree = invalid = over = ae_ok = 0
    worst = 0.0
    for s in range(50):
        res, inputs, ratio = core_trial(G, s)
        out = set(res.outputs[:, 0].tolist())
        disagree += len(out) != 1
        invalid += not out <= set(inputs.tolist())
        over += ratio > KAPPA4
        worst = max(worst, ratio)
        ae_ok += res.almost_everywhere_fraction() >= 1 - 2 / log2(G)
    record_property("detail", f"|G|={G}: {disagree} disagreements, {invalid} invalid, max msgs ratio "
                    f"{worst:.2f} (k4 {KAPPA4}), almost everywhere in {ae_ok}/50")
    assert disagree == 0 and invalid == 0
    assert over == 0
    assert ae_ok >= 45


# ---------------------------------------------------------------------------
# 9: sampler audit


def test_c09_sampler_audit(record_property):
    cfg = SamplerConfig.build(512, 512, kappa=6)
    rep = audit_sampler(cfg, 2 / 3, 1 / 4, 50)
    rel = abs(rep.mean_size - cfg.committee_size_target) / cfg.committee_size_target
    record_property("detail", f"bad-majority committees {rep.fraction_bad_majority:.4f}, "
                    f"mean size {rep.mean_size:.2f} vs target {cfg.committee_size_target:.2f}")
    assert rep.fraction_bad_majority < 0.05
    assert rel <= 0.15


# ---------------------------------------------------------------------------
# 10: validation filter


def test_c10_rare_ids_never_validated(record_property):
    hit = []
    for s in range(100):
        p = ProtocolParams(n=1024, t=153, activation_slack=0.5, master_seed=s)
        res = run_agreement(p, FakeActive(budget=1e9, hold=1.0), "random")
        if any("rarely held" in v for v in res.violations):
            hit.append(s)
    record_property("detail", f"planted IDs validated in {len(hit)}/100 seeds")
    assert not hit, hit[:10]


# ---------------------------------------------------------------------------
# 11: determinism


@pytest.mark.parametrize("mode,adv", [("ba", "equivocator:T=4nlogn"), ("ba", "flooder:T=4nlogn"),
                                      ("leader", "dos-replica:T=4nlogn")])
def test_c11_byte_identical(tmp_path, mode, adv):
    recs, traces = [], []
    for i in range(2):
        path = tmp_path / f"run{i}.jsonl"
        cfg = ExperimentConfig(mode=mode, n=(256,), t_frac=0.15, adversary=adv, base_seed=7, trace=str(path),
                               assert_invariants=False)
        recs.append(run_trial(cfg, 256, 0))
        traces.append(path.read_bytes())
    assert traces[0] == traces[1] and len(traces[0]) > 0
    assert recs[0] == recs[1] and recs[0].notes == recs[1].notes


# ---------------------------------------------------------------------------
# 12: leader and committee election


def election(mode, seed):
    cfg = ExperimentConfig(mode=mode, n=(1024,), t=128, adversary="equivocator:T=1e9", base_seed=0)
    params = cfg.params_for(1024, seed)
    adv = Equivocator(budget=1e9)
    res = run_agreement(params, adv, "all0", mode=mode, check=False)
    return res


def test_c12_leader(record_property):
    agree = good = 0
    for s in range(200):
        res = election("leader", s)
        agree += res.agreed
        good += res.output_values()[0] in set(res.world.ids[res.world.good_idx].tolist())
    record_property("detail", f"leader: agreed {agree}/200, good leader {good}/200")
    assert agree == 200
    assert good >= 120


def test_c12_committee(record_property):
    agree = fair = 0
    for s in range(200):
        res = election("committee", s)
        agree += res.agreed
        members = res.output_values()[0]
        bad_ids = set(res.world.ids[res.world.bad_idx].tolist())
        share = len(members & bad_ids) / len(members) if members else 1.0
        fair += share <= 128 / 1024 + 0.05
    record_property("detail", f"committee: agreed {agree}/200, bad share within t/n + 0.05 in {fair}/200")
    assert agree == 200
    assert fair >= 180
