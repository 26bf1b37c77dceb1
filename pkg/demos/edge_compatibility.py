"""What goes wrong when the target scale is too small.

Four points on a line map to three target points.  With target scale 1 the
image of the edge c-d (length 2) is not a neighbour pair, so du cannot see
it: the operator norm drops below the slope at c and d.  With the
automatic scale every image edge is kept and the norm identity is exact.
"""

import numpy as np

from metdiff import instances as inst
from metdiff.differential import BoundedDeformation, build_du
from metdiff.metricmap import MetricValuedMap

u = inst.incompatible_example()
du = build_du(u)
print("forced eps_Y          :", u.eps_y)
print("violations            :", u.compatibility.violations)
print("slope                 :", u.slope)
print("|du|                  :", du.op_norm())
print("slope - |du|          :", u.slope - du.op_norm())

# same assignment, automatic scale
auto = MetricValuedMap(u.source, u.target, u.u)
print("\nautomatic eps_Y       :", auto.eps_y)
print("compatible            :", auto.compatibility.compatible)
print("|du|                  :", build_du(auto).op_norm())

# against a larger target measure the differential does not change here:
# every dropped edge is dropped for the same reason in both fibers
bd = BoundedDeformation(u, np.ones(u.target.n))
rep = bd.report()
print("\nbd max gap            :", rep.extra["max_gap"])
print("bd checks             :", {c.name: c.passed for c in rep.checks})
