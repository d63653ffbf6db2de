"""Static planning: one LP for the whole day, wind rhs theta0 + theta1 * forecast.

The optimal LP value is convex in theta and its subgradient comes straight
from the duals of the wind rows.  Since wind is free in the plan, the value
only falls as theta grows, so the tuned point sits on the box edge.  The
cost of executing that plan against the real wind tells a different story.
"""
import numpy as np

from pcfa.optimizer import StaticObjective, run_static_cfa
from pcfa.simulator import SimConfig

obj = StaticObjective(SimConfig.build(T=24, H=24))
paths = range(3000, 3020)
print("theta1   plan value   realized cost")
for t1 in (0.0, 0.5, 1.0, 1.5, 2.0, 3.0):
    plan = np.mean([obj.values([0.0, t1], w)[0] for w in paths])
    real = np.mean([obj.plan_cost([0.0, t1], w) for w in paths])
    print(f"{t1:6.1f}  {plan:11.1f}  {real:14.1f}")

pt = obj.point([0.0, 1.0], 3000)
print("\nsubgradient at (0, 1):", np.round(pt.subgradient, 2))
run = run_static_cfa(obj, [0.0, 0.5], 100, coords=[1], box=((0, 0), (0, 3)))
print("averaged SA iterate:", np.round(run.output, 3))
