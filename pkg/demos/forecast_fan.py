"""How far the wind forecasts stray from what actually blows.

Draws one sample path and prints, for a few lead times, the spread of
forecast errors across the horizon.  Errors grow with the lead time and
flatten once the noise correlation has decayed.
"""
import numpy as np

from pcfa.forecast import ForecastConfig, ForecastGenerator

cfg = ForecastConfig(T=48, H=23)
gen = ForecastGenerator(cfg)

errs = {lead: [] for lead in (1, 3, 6, 12, 23)}
for seed in range(200):
    fs = gen.sample(seed)
    E, D, P = fs.realized()
    for lead in errs:
        for t in range(fs.T + 1 - lead):
            errs[lead].append(fs.energy[t, t + lead] - E[t + lead])

print("lead  mean error  std error")
for lead, e in errs.items():
    e = np.array(e)
    print(f"{lead:4d}  {e.mean():10.3f}  {e.std():9.3f}")

fs = gen.sample(0)
E, D, P = fs.realized()
print("\nrealized path of seed 0 (first 12 periods)")
print("wind  ", np.round(E[:12], 1))
print("demand", D[:12])
print("price ", np.round(P[:12], 2))
