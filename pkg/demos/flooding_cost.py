"""How much does the adversary have to pay to stall the first epoch?

The flooder makes enough good nodes heavy (too many announcements) that
the light count drops below High and nobody becomes ready. We sweep its
budget in units of p n^2 and watch the first epoch flip from terminating
to failing, and what that failure costs the good nodes.

    python demos/flooding_cost.py [n] [seeds]
"""

import math
import sys

import numpy as np

from byzkit.adversary import Flooder
from byzkit.params import ProtocolParams, derive_epoch_params
from byzkit.protocol import run_agreement

n = int(sys.argv[1]) if len(sys.argv) > 1 else 512
seeds = int(sys.argv[2]) if len(sys.argv) > 2 else 20
t = math.floor(0.15 * n)

pn2 = derive_epoch_params(ProtocolParams(n=n, t=t), 1).p * n * n
print(f"n={n}, t={t}, p n^2 = {pn2:.0f}")
print(f"{'budget/(p n^2)':>15} {'epoch 1 stalled':>16} {'mean spent':>11} {'mean good msgs':>15}")

for scale in (0.0, 0.02, 0.05, 0.1, 0.2, 0.4):
    stalled, spent, msgs = 0, [], []
    for s in range(seeds):
        p = ProtocolParams(n=n, t=t, activation_slack=0.5, master_seed=s)
        res = run_agreement(p, Flooder(budget=scale * pn2), "random", check=False)
        stalled += not res.epochs[0].terminated
        spent.append(res.metrics.bad_bits)
        msgs.append(res.metrics.good_msgs)
    print(f"{scale:>15.2f} {stalled:>10}/{seeds:<5} {np.mean(spent):>11.0f} {np.mean(msgs):>15.0f}")

# At these sizes the doubling limit 1/(C log n) is below the first p, so a
# stalled epoch goes straight to the full-graph fallback: the good nodes'
# bill jumps to order n^2 once the flooder can afford the first epoch.
