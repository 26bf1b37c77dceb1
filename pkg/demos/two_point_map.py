"""Slope, pushforward and differential of a map between two-point spaces.

Run with ``python3 demos/two_point_map.py``.
"""

import numpy as np

from metdiff.differential import build_du, norm_identity
from metdiff.metricmap import MetricValuedMap, mdug_oracle
from metdiff.mmspace import build_space

# X has two points at distance 1, Y two points at distance 2
X = build_space(["a", "b"], [[0, 1], [1, 0]], [1, 1], epsilon=1.0)
Y = build_space(["p", "q"], [[0, 2], [2, 0]], [1, 1], epsilon=1.0)
u = MetricValuedMap(X, Y, {"a": "p", "b": "q"})

print("slope |Du|            :", u.slope)
print("oracle over 1-Lip f   :", mdug_oracle(u))
print("pushforward mass      :", u.pushforward.mass)
print("target scale eps_Y    :", u.eps_y)

du = build_du(u)
for pid in X.point_ids:
    print(f"du block at {pid:10s}:", du.block(pid).tolist())
print("|du| (op norm)        :", du.op_norm())

rep = norm_identity(u, du)
print("norm identity passed  :", rep.passed)
assert np.array_equal(du.op_norm(), u.slope)
