"""Walk through a single agreement run and look at what each step cost.

    python demos/one_run.py [n] [t]
"""

import sys

from byzkit.adversary import Equivocator
from byzkit.params import ProtocolParams, derive_epoch_params
from byzkit.protocol import run_agreement

n = int(sys.argv[1]) if len(sys.argv) > 1 else 512
t = int(sys.argv[2]) if len(sys.argv) > 2 else n * 15 // 100

# activation_slack widens the [min_a, max_a] window; with the analysis slack
# alone the window is narrower than the natural spread of the active count
params = ProtocolParams(n=n, t=t, activation_slack=0.5, master_seed=2024)
ep = derive_epoch_params(params, 1)
print(f"n={n} t={t}: p={ep.p:.4f}, expect about {ep.p * (n - t):.1f} active good nodes")
print(f"  light threshold {ep.light_threshold:.2f}, low {ep.low:.0f}, high {ep.high:.0f}, beta {ep.beta:.2f}")

res = run_agreement(params, Equivocator(budget=1e7), inputs="random")

for out in res.epochs:
    if out.fallback:
        print(f"epoch {out.epoch}: fallback over the full graph, {out.decided_count} nodes decided there")
        continue
    print(f"epoch {out.epoch}: {out.active_count} active, {out.light_count} light, core of {out.core_size}, "
          f"{out.decided_count} decided, terminated={out.terminated}")
    for step, c in out.step_counters.items():
        print(f"    {step:<9} {c.rounds:>4} rounds {c.msgs:>10} msgs {c.bits:>12} bits")

m = res.metrics
print(f"output {sorted(set(res.output_values()))}, agreed={res.agreed}")
print(f"good nodes sent {m.good_msgs} messages ({m.good_bits} bits) in {m.rounds} rounds; "
      f"the adversary spent {m.bad_bits} bits")
if res.violations:
    print("invariant reports:")
    for v in res.violations:
        print("   ", v)
