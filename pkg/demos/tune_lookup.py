"""Tune a lookup-table policy with both stochastic search methods.

A scaled-down version of the noisy-forecast experiment: short horizon,
few iterations, so it finishes in under a minute.  The full-size run is
``pcfa optimize --config demos/noisy.ini``.
"""
import numpy as np

from pcfa.optimizer import (PolicyObjective, RMSProp, SmoothingSchedule, evaluate_output, run_sgf_cfa,
                            run_sng_cfa)
from pcfa.policy import LookupTable
from pcfa.simulator import SimConfig, Simulator

cfg = SimConfig.build(T=24, H=8)
sim = Simulator(cfg, cache_paths=0)
template = LookupTable.ones(8)
theta0 = np.random.default_rng(1).uniform(0.2, 2.0, 8)
obj = PolicyObjective(sim, template)

sng = run_sng_cfa(obj, theta0, 150, RMSProp(0.05), h=0.05, train_seed=10_000_000)
sgf = run_sgf_cfa(obj, theta0, 150, SmoothingSchedule(0.005, 8), batch=12, rule=RMSProp(0.2),
                  train_seed=20_000_000)

for name, th in (("start", theta0), ("SNG-CFA", sng.output), ("SGF-CFA", sgf.output)):
    ev = evaluate_output(sim, template, th, n_test=300)
    print(f"{name:8s} theta {np.round(th, 2)}")
    print(f"{'':8s} improvement {ev['delta_f']:+.2e} (stderr {ev['delta_f_stderr']:.1e})")
print("SGF output index", sgf.output_index, "of", sgf.N)
