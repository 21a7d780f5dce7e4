import numpy as np
import pytest

from byzkit.adversary import Equivocator, FakeActive, Flooder, parse_adversary, select_bad_nodes
from byzkit.net import World
from byzkit.params import ProtocolParams, derive_epoch_params
from byzkit.protocol import (
    assign_inputs,
    check_implicit_agreement,
    elect_committee,
    elect_leader,
    epoch_limit,
    fallback_full_graph,
    node_states,
    run_agreement,
    run_epoch,
    validation_bound,
)


def params(n=256, t=0, seed=0, **kw):
    kw.setdefault("activation_slack", 0.5)
    return ProtocolParams(n=n, t=t, master_seed=seed, **kw)


def kinds(violations, word):
    return [v for v in violations if word in v]


class TestInputs:
    def test_specs(self):
        assert assign_inputs("all0", 3).tolist() == [0, 0, 0]
        assert assign_inputs("all1", 2).tolist() == [1, 1]
        assert assign_inputs("split", 5).tolist() == [0, 0, 1, 1, 1]
        assert set(assign_inputs("random", 50, np.random.default_rng(0)).tolist()) == {0, 1}

    def test_unknown(self):
        with pytest.raises(ValueError):
            assign_inputs("most", 3)


class TestRunAgreement:
    @pytest.mark.parametrize("seed", range(3))
    def test_all_one_first_epoch(self, seed):
        res = run_agreement(params(seed=seed), inputs="all1")
        assert res.output_values() == [1] * 256
        assert len(res.epochs) == 1 and res.epochs[0].terminated

    @pytest.mark.parametrize("spec,want", [("all0", 0), ("all1", 1)])
    def test_validity_under_equivocation(self, spec, want):
        p = params(n=256, t=38, seed=4)
        res = run_agreement(p, Equivocator(budget=1e6), spec)
        assert set(res.outputs.tolist()) == {want}

    def test_split_inputs_agree(self):
        res = run_agreement(params(n=1024), inputs="split")
        assert res.agreed
        assert set(res.outputs.tolist()) <= {0, 1}

    def test_explicit_input_vector(self):
        p = params(n=128)
        bits = np.zeros(128, dtype=np.int64)
        bits[5] = 1
        res = run_agreement(p, inputs=bits)
        assert res.agreed
        with pytest.raises(ValueError):
            run_agreement(p, inputs=bits[:10])

    def test_flooder_forces_fallback(self):
        p = params(n=256, t=38, seed=1)
        res = run_agreement(p, Flooder(budget=1e6), "random")
        assert not res.epochs[0].terminated
        assert res.epochs[-1].fallback
        assert res.agreed
        assert not kinds(res.violations, "dichotomy")

    def test_epoch_count_bounded(self):
        p = params(n=512, t=76)
        res = run_agreement(p, Flooder(budget=1e9), "random")
        assert len(res.epochs) <= epoch_limit(p) + 1

    def test_epoch_limit_formula(self):
        # 1 + ceil(log2(1024 / 40))
        assert epoch_limit(ProtocolParams(n=1024)) == 1 + 5

    def test_node_states(self):
        res = run_agreement(params(n=64), inputs="all0")
        states = node_states(res, with_ports=True)
        assert len(states) == 64
        assert all(s.value == 0 for s in states)
        last = [e for e in res.epochs if not e.fallback][-1]
        assert sum(s.is_active for s in states) == last.active_count


class TestEpoch:
    def _world(self, p, adv=None):
        bad = select_bad_nodes(p, p.master_seed)
        return World(p, adv.budget if adv else 0, bad)

    def test_all_heavy_enough_means_ready(self):
        # no adversary: every node is light and every core member ends ready
        p = params(n=512, seed=2)
        w = self._world(p)
        inputs = np.ones(512, dtype=np.int64)
        outcome, ready, value = run_epoch(w, derive_epoch_params(p, 1), inputs)
        assert outcome.light_count == 512
        assert w.state.ready_in[w.state.core].all()
        assert outcome.terminated and np.all(value[ready == 1] == 1)

    def test_flooded_epoch_does_not_terminate(self):
        p = params(n=512, t=76, seed=3)
        adv = Flooder(budget=1e9)
        w = self._world(p, adv)
        outcome, ready, _ = run_epoch(w, derive_epoch_params(p, 1), np.zeros(512, np.int64), adv)
        # eps * n + 1 heavy nodes push the light count below high, so no
        # core member starts with ready_in = 1
        assert outcome.light_count < derive_epoch_params(p, 1).high
        assert not w.state.ready_in.any()
        assert not ready[w.good_idx].any()
        assert not outcome.terminated

    def test_step_counters_cover_the_epoch(self):
        p = params(n=256)
        w = self._world(p)
        outcome, _, _ = run_epoch(w, derive_epoch_params(p, 1), np.zeros(256, np.int64))
        names = ["announce", "sample", "validate", "ready", "value", "decision", "promise"]
        assert list(outcome.step_counters) == names
        assert sum(c.msgs for c in outcome.step_counters.values()) == w.metrics.good_msgs
        assert outcome.step_counters["promise"].rounds == 2

    def test_planted_ids_below_bound_rejected_when_rare(self):
        p = params(n=512, t=76, seed=5)
        adv = FakeActive(budget=1e9, hold=0.1)
        res = run_agreement(p, adv, "random")
        assert not kinds(res.violations, "rarely held")
        assert validation_bound(p, derive_epoch_params(p, 1)) > 0


class TestFallback:
    def test_all_zero(self):
        p = ProtocolParams(n=64)
        w = World(p, 0, [])
        out = fallback_full_graph(w, np.zeros(64, np.int64))
        assert np.all(out == 0)
        assert w.metrics.good_msgs >= 64 * 63

    def test_equivocator(self):
        p = ProtocolParams(n=256, t=48, epsilon0=0.05, epsilon=0.0025, master_seed=7)
        adv = Equivocator(budget=1e9)
        w = World(p, adv.budget, select_bad_nodes(p, 7))
        inputs = np.zeros(256, np.int64)
        inputs[w.good_idx[::2]] = 1
        out = fallback_full_graph(w, inputs, adv)
        assert len(set(out[w.good_idx].tolist())) == 1


class TestImplicitAgreementCheck:
    def test_accepts_large_ready_set(self):
        w = World(ProtocolParams(n=100, t=10), 0, select_bad_nodes(ProtocolParams(n=100, t=10), 0))
        ready = np.zeros(100, np.int64)
        ready[w.good_idx[:20]] = 1
        assert check_implicit_agreement(w, ready, np.ones(100, np.int64)) == []

    def test_flags_small_or_split_ready_sets(self):
        w = World(ProtocolParams(n=100, t=10), 0, select_bad_nodes(ProtocolParams(n=100, t=10), 0))
        ready = np.zeros(100, np.int64)
        ready[w.good_idx[:5]] = 1
        assert check_implicit_agreement(w, ready, np.ones(100, np.int64))
        ready[w.good_idx[:20]] = 1
        value = np.zeros(100, np.int64)
        value[w.good_idx[0]] = 1
        assert check_implicit_agreement(w, ready, value)


class TestElections:
    def test_leader_without_bad_nodes(self):
        res = elect_leader(params(n=256, seed=1))
        vals = set(res.output_values())
        assert len(vals) == 1
        assert vals.pop() in set(res.world.ids.tolist())

    def test_committee_without_bad_nodes(self):
        res = elect_committee(params(n=256, seed=2))
        vals = res.output_values()
        assert len(set(vals)) == 1
        assert vals[0] and vals[0] <= set(res.world.ids.tolist())

    def test_leader_under_equivocation_agrees(self):
        p = params(n=512, t=64, seed=3)
        res = elect_leader(p, parse_adversary("equivocator:T=1e9", 512))
        assert len(set(res.output_values())) == 1
