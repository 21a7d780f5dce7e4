import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from byzkit.sampler import (
    CommitteeId,
    SamplerConfig,
    audit_sampler,
    committees_of,
    members_known,
    mix64,
    prf,
    write_audit_csv,
)

# Frozen from a pure-Python big-integer evaluation of the hash chain.
PRF_ORACLE = [
    ((0, 0, 0, 1), 3048674281419798293),
    ((0, 0, 0, 2), 5729490520049822839),
    ((12345, 1, 7, 999999), 14037421528912326352),
    ((2**64 - 1, 3, 0, 1048576), 17839766205740216123),
    ((42, 0, 5, 31337), 16554882066754921681),
]


class TestHash:
    def test_mix_reference_values(self):
        # mix64(0) is the first output of the standard splitmix64 stream
        assert int(mix64(0)) == 16294208416658607535
        assert int(mix64(1)) == 10451216379200822465

    @pytest.mark.parametrize("args,want", PRF_ORACLE)
    def test_prf_oracle(self, args, want):
        assert int(prf(*args)) == want

    def test_prf_broadcasts(self):
        h = prf(0, 0, np.arange(3)[:, None], np.array([1, 2])[None, :])
        assert h.shape == (3, 2)
        assert int(h[0, 0]) == PRF_ORACLE[0][1]
        assert int(h[0, 1]) == PRF_ORACLE[1][1]


class TestConfig:
    def test_layer_counts(self):
        cfg = SamplerConfig.build(512, 512, kappa=6)
        assert cfg.counts == (56, 6, 1)
        assert cfg.committee_size_target == pytest.approx(54.0)

    @given(s=st.floats(min_value=1, max_value=1e6), n=st.integers(min_value=4, max_value=10**6))
    @settings(max_examples=100, deadline=None)
    def test_telescoping_to_one(self, s, n):
        cfg = SamplerConfig.build(n, s)
        assert cfg.counts[-1] == 1
        assert all(a > b for a, b in zip(cfg.counts, cfg.counts[1:]))

    @given(s=st.floats(min_value=1, max_value=1e5), kappa=st.floats(min_value=0.1, max_value=20))
    @settings(max_examples=100, deadline=None)
    def test_probability_clamped(self, s, kappa):
        cfg = SamplerConfig.build(1024, s, kappa=kappa)
        p = cfg.membership_probability(0)
        assert 0 < p <= 1
        assert p == pytest.approx(min(1.0, cfg.committee_size_target / s))

    def test_layer_out_of_range(self):
        cfg = SamplerConfig.build(1024, 64)
        with pytest.raises(ValueError):
            committees_of(5, cfg.num_layers, cfg)

    def test_rejects_bad_shrink(self):
        with pytest.raises(ValueError):
            SamplerConfig(n=64, s=64, committee_size_target=6, layer_shrink=1.5)


class TestMembership:
    def test_deterministic(self):
        cfg = SamplerConfig.build(1024, 256, seed=77)
        assert committees_of(4242, 0, cfg) == committees_of(4242, 0, cfg)

    def test_saturated_probability(self):
        cfg = SamplerConfig.build(1024, 10, kappa=6)
        assert cfg.membership_probability(0) == 1.0
        assert committees_of(3, 0, cfg) == {CommitteeId(0, r) for r in range(cfg.counts[0])}

    def test_matches_prf_rule(self):
        cfg = SamplerConfig.build(1024, 500, seed=5)
        cut = int(cfg.membership_probability(0) * 2.0**64)
        for x in (1, 99, 100000):
            want = {CommitteeId(0, r) for r in range(cfg.counts[0]) if int(prf(5, 0, r, x)) < cut}
            assert committees_of(x, 0, cfg) == want

    def test_expected_intersection(self):
        # n=1024, s=64, kappa=4: mean |committee ∩ active| over 100 seeds
        rng = np.random.default_rng(2024)
        means = []
        for seed in range(100):
            cfg = SamplerConfig.build(1024, 64, kappa=4, seed=seed)
            ids = rng.choice(1024**2, size=64, replace=False) + 1
            means.append(cfg.member_matrix(ids, 0).sum(axis=1).mean())
        assert np.mean(means) == pytest.approx(cfg.committee_size_target, rel=0.15)


class TestMembersKnown:
    def test_empty_view(self):
        cfg = SamplerConfig.build(64, 32)
        assert members_known(set(), CommitteeId(0, 0), cfg) == frozenset()

    def test_singleton(self):
        cfg = SamplerConfig.build(1024, 200, seed=3)
        x = 777
        for cid in committees_of(x, 0, cfg):
            assert members_known({x}, cid, cfg) == {x}

    @given(st.sets(st.integers(min_value=1, max_value=4096), max_size=60), st.data())
    @settings(max_examples=60, deadline=None)
    def test_monotone(self, big, data):
        small = data.draw(st.sets(st.sampled_from(sorted(big)), max_size=len(big)) if big else st.just(set()))
        cfg = SamplerConfig.build(64, 200, seed=11)
        for r in range(cfg.counts[0]):
            cid = CommitteeId(0, r)
            assert members_known(small, cid, cfg) <= members_known(big, cid, cfg)


class TestAudit:
    def test_no_bad_ids(self):
        rep = audit_sampler(SamplerConfig.build(512, 512), 0.9, 0.0, trials=5)
        assert rep.max_bad_share == 0.0

    def test_bad_majority_rare(self):
        rep = audit_sampler(SamplerConfig.build(512, 512, kappa=6), 2 / 3, 1 / 4, trials=50)
        assert rep.fraction_bad_majority < 0.05

    def test_size_linear_in_target(self):
        a = audit_sampler(SamplerConfig.build(512, 2048, kappa=3), 0.7, 0.2, trials=20, seed=1)
        b = audit_sampler(SamplerConfig.build(512, 2048, kappa=6), 0.7, 0.2, trials=20, seed=1)
        assert b.mean_size / a.mean_size == pytest.approx(2.0, rel=0.1)

    def test_infeasible(self):
        with pytest.raises(ValueError):
            audit_sampler(SamplerConfig.build(512, 512), 0.8, 0.3, trials=1)
        with pytest.raises(ValueError):
            audit_sampler(SamplerConfig.build(512, 512), 0.5, 0.2, trials=0)

    def test_csv(self, tmp_path):
        rep = audit_sampler(SamplerConfig.build(256, 256), 0.6, 0.2, trials=2)
        path = tmp_path / "audit.csv"
        write_audit_csv(rep, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "layer,committee,size,good,bad,flagged"
        assert len(lines) == 1 + len(rep.rows)
