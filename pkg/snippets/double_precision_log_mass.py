# %%
import numpy as np
from mpmath import mp

from phi_cascade.cascade import child_at, root
from phi_cascade.weight import make_phi_config

"""
Masses along the leftmost chain of the cascade fall like exp(-2^k): the
first child of a generation-k family gets the phi-mass of [-1, -1 + 2^-k).
Multiplying those shares as doubles underflows to 0 within a few generations,
while LogPositive keeps the exact logarithm.

Run the cells and compare the two columns.
"""

cfg = make_phi_config(1e-12)

node = root()
naive = 1.0
for generation in range(0, 12):
    child = child_at(node, 0, cfg)
    share = child.ln_mass / node.ln_mass
    naive *= float(share)
    node = child
    print(
        f"gen {generation:2d}  ln mu = {mp.nstr(node.ln_mass.ln_value, 12):>22}"
        f"  float64 product = {naive:.3e}"
    )

# %%
# The first generation whose share alone underflows a double
smallest_normal = np.finfo(np.float64).tiny
print(f"{smallest_normal=}")  # 2.2250738585072014e-308
for k in range(0, 12):
    width = mp.mpf(2) ** -k
    ln_share = mp.log(cfg.c) + mp.log(width) + mp.log(mp.expint(2, 1 / width))
    if mp.exp(ln_share) < smallest_normal:
        print(f"generation {k}: ln share = {mp.nstr(ln_share, 8)}")  # k = 10
        break
