"""Two coordinates of a lookup-table policy on a coarse grid.

The other coordinates stay at 1 (the plain lookahead).  Prints the
improvement over the plain lookahead as a small table; the ridge of
zeros along which nothing changes is typical.
"""
import numpy as np

from pcfa.policy import LookupTable
from pcfa.simulator import SimConfig, TEST_SEED_BASE, scan_objective

cfg = SimConfig.build(T=24, H=8)
axis = np.round(np.linspace(0.5, 1.5, 6), 2)
res = scan_objective(LookupTable.ones(8), [(0, axis), (1, axis)], cfg,
                     range(TEST_SEED_BASE, TEST_SEED_BASE + 40))

table = res.delta.reshape(axis.size, axis.size) * 1e4
print("improvement x 1e4; rows theta_0, columns theta_1")
print("       " + " ".join(f"{v:6.2f}" for v in axis))
for v, row in zip(axis, table):
    print(f"{v:6.2f} " + " ".join(f"{x:6.2f}" for x in row))
best = np.argmax(res.delta)
print("\nbest point", res.points[best], "improvement", res.delta[best])
