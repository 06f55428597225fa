"""
Power against target rate
=========================

Mean total power of the D.C. solver and the baselines as the common target
rate grows.  The defaults give a quick look; the full protocol is
N_F=8, M=12, rates 1..10 and 50 trials per point.
"""

# %%
import sys

from mcnoma.channel import SystemConfig
from mcnoma.experiments import SweepSpec, run_sweep, summarize, summary_csv

TRIALS = int(sys.argv[1]) if len(sys.argv) > 1 else 3
RATES = [1, 3, 5, 7]

spec = SweepSpec("rate", RATES, TRIALS, ("dc", "oma", "random", "equal_rate"),
                 SystemConfig(8, 12), seed=0)
rows = run_sweep(spec)
print(summary_csv(summarize(rows)))

# %% [markdown]
# Same sweep over the estimation-error variance at a fixed demand range.

# %%
spec = SweepSpec("kappa2", [0.0, 0.1, 0.3, 0.5], TRIALS, ("dc",), SystemConfig(8, 12), seed=0)
print(summary_csv(summarize(run_sweep(spec))))
