"""
CNR outage thresholds and per-subcarrier power
==============================================

How the estimation error turns into a threshold beta, and how beta fixes
the decoding order and the powers of a user pair.
"""

# %%
import numpy as np

from mcnoma.channel import SystemConfig, cnr_outage_threshold, sample_links, w_to_dbm
from mcnoma.sic import PairSpec, case_power, optimal_sic_order, pair_powers

# %% [markdown]
# A unit-variance estimate with growing error: the threshold shrinks as the
# conditional distribution of |h|^2 widens.

# %%
h_hat = 1.0 + 0j
for err in (0.0, 0.01, 0.1, 0.5):
    b = cnr_outage_threshold(h_hat, err, 1.0, 0.01)
    print(f"err_var={err:<5} beta={b:.4f}")

# %% [markdown]
# A sampled 4x7 scenario.

# %%
sc = sample_links(SystemConfig(4, 7, seed=2))
print("demands (bit/s/Hz):", np.round(sc.rate_total, 2))
print("beta (dB):")
print(np.round(10 * np.log10(sc.beta), 1))

# %% [markdown]
# One example pair: the larger beta decodes first, and the
# four decoding configurations compare as follows.

# %%
spec = PairSpec(9.59, 1349.80, 2 ** 3 - 1, 2 ** 4 - 1)
print("SIC flags:", optimal_sic_order(spec.beta_m, spec.beta_n))
print("powers (dBm):", np.round(w_to_dbm(np.array(pair_powers(spec))), 2))
for case in ("I", "II", "III", "IV"):
    print(case, case_power(case, spec))
