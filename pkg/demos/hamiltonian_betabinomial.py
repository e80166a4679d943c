"""Hamiltonian transitions on the cancer-mortality overdispersion posterior.

A diagonal Gaussian cannot follow the banana-shaped posterior. One Hamiltonian
transition with a few leapfrog steps bends it. KL and R^2 come from grid
quadrature, with the momentum integrated out.

    python3 demos/hamiltonian_betabinomial.py [iterations]
"""

import sys

from mcvi.experiments import betabinom_model
from mcvi.optimize import TrainConfig, mcvi_optimize

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
print(f"{'steps':>5} {'KL':>8} {'R^2':>8}")
for k in (0, 1, 2):
    model = betabinom_model(k, seed=1)
    cfg = TrainConfig(iterations=iterations, draws=16, seed=1, step_size=0.01, final_step_size=0.0005)
    params = mcvi_optimize(model.estimate, model.initial_params(), cfg).params
    ev = model.evaluate(params)
    print(f"{k:>5} {ev['exact_kl']:8.4f} {ev['r2']:8.4f}")
