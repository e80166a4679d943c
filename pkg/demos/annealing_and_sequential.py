"""Two ways to use a chain without learning much about it.

An annealed chain climbs from q0 to the posterior through tempered targets, and
its bound beats the plain ELBO of q0 with no parameters beyond q0 itself.

Sequential growth trains one transition at a time, freezing the earlier
ones. The bound telescopes: the T=0 ELBO plus each step's gain.

    python3 demos/annealing_and_sequential.py
"""

import math

import numpy as np

from mcvi import autodiff as ad
from mcvi.bound import AnnealingSchedule, annealed_bound
from mcvi.distributions import DiagGaussian
from mcvi.experiments import sequential_gaussian_factory
from mcvi.noise import NoiseSource
from mcvi.optimize import TrainConfig, sequential_mcvi
from mcvi.targets import bivariate_gaussian_target

target = bivariate_gaussian_target(1.0, 10.0)
print(f"log Z = {math.log(10 * math.pi):.4f}")

q0 = DiagGaussian([0.0, 0.0], [0.0, 0.0])
for T in (1, 3, 10, 30):
    est = annealed_bound(target, q0, AnnealingSchedule.linear(T), NoiseSource(0, 20_000))
    z0 = est.states[0]
    elbo = ad.value_of(target.log_joint(z0)) - ad.value_of(q0.log_pdf(z0))
    print(f"annealed, {T:>2} temperatures: bound {est.numeric().mean():.4f} (ELBO of q0 {np.mean(elbo):.4f})")

start = DiagGaussian([-10.0, -10.0], [0.5 * math.log(1e-10)] * 2)
res = sequential_mcvi(target, start, sequential_gaussian_factory(target), 5,
                      TrainConfig(iterations=200, draws=16, seed=9, step_size=0.01, frozen=("r.",)), n_eval=20_000)
print(f"sequential growth: T=0 bound {res.initial[0]:.4f}")
total = res.initial[0]
for t, (gain, se) in enumerate(res.gains, 1):
    total += gain
    print(f"  step {t}: gain {gain:.4f} +/- {se:.4f}, running bound {total:.4f}")
