"""Leader and committee election against an equivocating adversary.

    python demos/elections.py [n] [seeds]
"""

import sys
from collections import Counter

from byzkit.adversary import Equivocator
from byzkit.params import ProtocolParams
from byzkit.protocol import elect_committee, elect_leader

n = int(sys.argv[1]) if len(sys.argv) > 1 else 512
seeds = int(sys.argv[2]) if len(sys.argv) > 2 else 10
t = n // 8

good_leaders = 0
for s in range(seeds):
    params = ProtocolParams(n=n, t=t, activation_slack=0.5, master_seed=s)
    res = elect_leader(params, Equivocator(budget=1e9))
    leader = res.output_values()[0]
    is_good = leader in set(res.world.ids[res.world.good_idx].tolist())
    good_leaders += is_good
    print(f"seed {s}: leader {leader} ({'good' if is_good else 'bad'}), agreed={res.agreed}")
print(f"good leader in {good_leaders}/{seeds} runs (bad share of nodes {t / n:.3f})\n")

shares = Counter()
for s in range(seeds):
    params = ProtocolParams(n=n, t=t, activation_slack=0.5, master_seed=s)
    res = elect_committee(params, Equivocator(budget=1e9))
    members = res.output_values()[0]
    bad = set(res.world.ids[res.world.bad_idx].tolist())
    share = len(members & bad) / len(members) if members else 1.0
    shares[round(share, 2)] += 1
    print(f"seed {s}: committee of {len(members)}, bad share {share:.3f}, agreed={res.agreed}")
print("bad share histogram:", dict(sorted(shares.items())))
