"""How much of the gap to log p(x) do extra leapfrog steps close?

A single latent variable feeds a small Bernoulli decoder. Quadrature gives
log p(x) exactly, and importance sampling with the chain's auxiliary weights
recovers it. Each bound is evaluated on the same noise, so the differences
between step counts are paired. Takes several minutes on one core.

    python3 demos/bias_reduction.py [iterations]
"""

import sys

from mcvi import autodiff as ad
from mcvi import exact
from mcvi.bound import importance_sampling_log_marginal
from mcvi.experiments import TOY_GRID, leapfrog_sweep, toy_decoder_problem
from mcvi.noise import NoiseSource
from mcvi.optimize import TrainConfig, constant

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
target = toy_decoder_problem()
log_z = exact.log_normalizer(target, TOY_GRID)
cfg = TrainConfig(iterations=iterations, draws=16, seed=1, step_size=0.01, final_step_size=0.0005)
trained = leapfrog_sweep(target, range(5), cfg, grid=TOY_GRID)

model, params = trained[-1]
cp = constant(params)
is_logp = importance_sampling_log_marginal(target, lambda noise: model.estimate(cp, noise), 100_000, rng=10)
print(f"log p(x): quadrature {log_z:.4f}, importance sampling {is_logp:.4f}")
for k, (model, params) in enumerate(trained):
    with ad.Tape():
        v = model.estimate(constant(params), NoiseSource(11, 100_000)).numeric()
    print(f"  {k} leapfrog steps: bound {v.mean():.4f}, gap {is_logp - v.mean():.4f}")
