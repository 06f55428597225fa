"""
Empirical outage of robust and naive allocations
================================================

The robust allocation sizes powers from the CNR outage threshold; the naive
one pretends the estimate is exact.  Monte Carlo draws of the true channel
show which of the two keeps its outage targets.
"""

# %%
import sys

import numpy as np

from mcnoma.channel import SystemConfig, sample_links
from mcnoma.dc import solve_dc
from mcnoma.outage import monte_carlo_outage, naive_allocation

TRIALS = int(sys.argv[1]) if len(sys.argv) > 1 else 100_000

sc = sample_links(SystemConfig(8, 12, seed=0, err_var=0.1))
robust, _ = solve_dc(sc)
naive = naive_allocation(sc)
print(f"robust power {robust.total_power:.3f} W, naive power {naive.total_power:.3f} W")

# %%
for name, alloc in (("robust", robust), ("naive", naive)):
    res = monte_carlo_outage(alloc, sc, TRIALS, np.random.default_rng(0))
    ratio = res.freq[res.scheduled] / res.delta[res.scheduled]
    print(f"{name:7s} violations={int(res.violations().sum()):3d}  "
          f"worst freq/target={ratio.max():10.2f}  median={np.median(ratio):8.2f}")

# %% [markdown]
# Per-link detail for the robust allocation.

# %%
res = monte_carlo_outage(robust, sc, TRIALS, np.random.default_rng(0))
print(res.to_csv())
