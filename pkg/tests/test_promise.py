import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from byzkit.adversary import Equivocator, QuerySpam, select_bad_nodes
from byzkit.net import init_world
from byzkit.params import ProtocolParams
from byzkit.promise import promise_agreement


def world(n=512, t=0, seed=0, budget=0.0):
    params = ProtocolParams(n=n, t=t, master_seed=seed)
    return init_world(params, budget, select_bad_nodes(params, seed))


def crafted(w, share, v=1, seed=0):
    """Tuples where a ``share`` of good nodes hold (1, v), the rest (0, 0)."""
    ready = np.zeros(w.n, dtype=np.int64)
    value = np.zeros(w.n, dtype=np.int64)
    rng = np.random.default_rng(seed)
    k = int(np.ceil(share * len(w.good_idx)))
    chosen = rng.choice(w.good_idx, size=k, replace=False)
    ready[chosen] = 1
    value[chosen] = v
    return ready, value


class TestCases:
    def test_nobody_ready(self):
        w = world()
        ready = np.zeros(w.n, dtype=np.int64)
        r, v, _ = promise_agreement(w, ready, np.ones(w.n, dtype=np.int64))
        assert not r[w.good_idx].any()
        # values are kept when not ready
        assert np.all(v[w.good_idx] == 1)

    def test_everyone_ready(self):
        w = world(t=76, budget=1e9)
        ready, value = crafted(w, 1.0)
        r, v, _ = promise_agreement(w, ready, value, Equivocator(budget=1e9))
        assert np.all(r[w.good_idx] == 1) and np.all(v[w.good_idx] == 1)

    @pytest.mark.parametrize("seed", range(5))
    def test_large_majority_terminates(self, seed):
        # ready good samples far outnumber bad ones, so equivocating
        # replies can neither block termination nor flip the value
        w = world(n=1024, t=153, seed=seed, budget=1e9)
        ready, value = crafted(w, 0.9, v=0, seed=seed)
        r, v, _ = promise_agreement(w, ready, value, Equivocator(budget=1e9))
        assert np.all(r[w.good_idx] == 1) and np.all(v[w.good_idx] == 0)

    @pytest.mark.parametrize("seed", range(5))
    def test_silent_bad_nodes_count_as_not_ready(self, seed):
        w = world(n=1024, t=153, seed=seed)
        ready = np.zeros(w.n, dtype=np.int64)
        ready[w.bad_idx] = 1  # ignored: bad entries are never read
        r, _, _ = promise_agreement(w, ready, ready.copy())
        assert not r[w.good_idx].any()

    def test_equivocators_see_every_request_they_get(self):
        w = world(n=512, t=76, budget=1e9)
        ready = np.zeros(w.n, dtype=np.int64)
        _, _, log = promise_agreement(w, ready, ready.copy(), Equivocator(budget=1e9))
        assert w.metrics.bad_msgs > 0
        assert log.replies_to_bad == 0


class TestRule:
    @given(share=st.floats(min_value=0, max_value=1), seed=st.integers(0, 2**31))
    @settings(max_examples=25, deadline=None)
    def test_decision_matches_sample_count(self, share, seed):
        # silent bad nodes: yes share is exactly the ready good samples / m
        w = world(n=128, t=19, seed=seed)
        ready, value = crafted(w, share, seed=seed)
        samples = []
        r, _, _ = promise_agreement(w, ready, value, samples=samples)
        m = w.params.promise_samples
        cut = w.params.t / w.n + w.params.epsilon
        for s in samples:
            x = int(w.index_of(s.requester)[0])
            yes = sum(rep[0][0] for rep in s.replies)
            assert len(s.targets) == m
            assert r[x] == int(yes / m > cut)

    def test_two_rounds(self):
        w = world(n=256)
        _, _, log = promise_agreement(w, np.zeros(256, np.int64), np.zeros(256, np.int64))
        assert log.rounds == 2
        assert w.metrics.rounds == 2

    def test_cost_bound(self):
        n = 512
        w = world(n=n, t=76, budget=1e6)
        ready, value = crafted(w, 0.3)
        _, _, log = promise_agreement(w, ready, value, QuerySpam(budget=1e6))
        m = w.params.promise_samples
        assert log.good_msgs <= 2 * n * m + log.replies_to_bad
        assert log.replies_to_bad > 0
        assert log.requests == len(w.good_idx) * m
