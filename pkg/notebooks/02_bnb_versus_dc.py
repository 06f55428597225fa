"""
Global search against the D.C. heuristic on a small instance
============================================================

Runs the branch-and-bound solver with a time budget, the D.C. solver and the
equal-rate baseline on one 4x7 scenario, and prints the bound trace.
"""

# %%
import sys
import time

import numpy as np

from mcnoma.baselines import solve_equal_rate
from mcnoma.bnb import solve_bnb
from mcnoma.channel import SystemConfig, sample_links
from mcnoma.dc import solve_dc

SEED = 2
TIME_LIMIT = float(sys.argv[1]) if len(sys.argv) > 1 else 60.0

sc = sample_links(SystemConfig(4, 7, seed=SEED))

# %%
t = time.perf_counter()
dc_alloc, dc_rep = solve_dc(sc)
print(f"dc: {dc_rep.objective:.4f} W in {dc_rep.iterations} iterations, "
      f"{time.perf_counter() - t:.1f} s, eta={dc_rep.notes['eta']:.3g}")

er_alloc, er_rep = solve_equal_rate(sc)
print(f"equal rate: {er_rep.objective:.4f} W")

# %%
t = time.perf_counter()
alloc, rep = solve_bnb(sc, time_limit=TIME_LIMIT)
print(f"bnb: {rep.status}, {rep.objective:.4f} W after {rep.iterations} nodes, "
      f"{time.perf_counter() - t:.1f} s")
print(f"bounds: lbd={rep.notes['lbd']:.4f} ubd={rep.notes['ubd']:.4f}")

# %% [markdown]
# Bound trace, thinned.

# %%
tr = np.array(rep.trace)
for k in np.unique(np.linspace(0, len(tr) - 1, 12).astype(int)):
    print(f"{k:6d}  lbd={tr[k, 0]:10.4f}  ubd={tr[k, 1]:10.4f}")

# %%
print("schedule (users per subcarrier):")
for i, row in enumerate(alloc.s):
    users = np.flatnonzero(row)
    sic = np.flatnonzero(alloc.u[i])
    print(f"  subcarrier {i}: users {users.tolist()} SIC {sic.tolist()} "
          f"rates {np.round(alloc.r[i, users], 2).tolist()}")
