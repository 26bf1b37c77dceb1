"""Assemble du from restrictions to a cover and compare with the direct route.

The cover has two incomparable proper subsets and the whole space.  Each
set contributes a local map built from the pullback's universal property;
the family is glued through inverse limits and the adjoint of the glued
map is compared with du.
"""

import numpy as np

from metdiff import instances as inst
from metdiff.differential import LocalDifferential, build_du

rng = np.random.default_rng(3)
u = inst.random_map(rng, n_x=(8, 8), n_y=(4, 4))
cover = inst.random_cover(rng, u.source)
for s in cover:
    print("set:", sorted(s))

loc = LocalDifferential(u, cover)
du = build_du(u)
print("inverse system size   :", len(loc.system_A.index))
print("max |du_loc - du|     :", loc.du_loc.max_abs_diff(du.map))
rep = loc.report(du)
for c in rep.checks:
    print(f"{c.name:22s}: {c.max_residual:.2e}")
