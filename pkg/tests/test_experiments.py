import math

import numpy as np
import pytest

from mcvi.experiments import HamiltonianChain, leapfrog_sweep, toy_decoder_problem, toy_model
from mcvi.noise import NoiseSource
from mcvi.optimize import TrainConfig, constant


def test_net_momentum_parameters_and_zero_start():
    model = toy_model(2, target=toy_decoder_problem())
    p = model.initial_params()
    hidden = [k for k in p if k.endswith(".H")]
    assert hidden and all(p[k].shape == (8, 2) for k in hidden)
    # output layer starts at zero, so the net starts as the linear model
    lin = HamiltonianChain(model.target, 1, 2, "linear", model.mode, model.mode_log_std)
    lp = {k: v for k, v in p.items() if k in lin.initial_params()}
    a = model.estimate(constant(p), NoiseSource(0, 64)).numeric()
    b = lin.estimate(constant(lp), NoiseSource(0, 64)).numeric()
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_unknown_momentum_rejected():
    with pytest.raises(ValueError):
        toy_model(1, target=toy_decoder_problem(), momentum="deep")


def test_leapfrog_sweep_warm_start_keeps_trajectory_length():
    target = toy_decoder_problem()
    cfg = TrainConfig(iterations=1, draws=4, seed=0, frozen=("log_eps",))
    out = leapfrog_sweep(target, [0, 1, 2, 4], cfg)
    assert [m.n_steps for m, _ in out] == [0, 1, 2, 4]
    eps = [math.exp(float(p["log_eps"])) for _, p in out]
    assert eps[1] == pytest.approx(eps[0])
    assert eps[2] * 2 == pytest.approx(eps[1])
    assert eps[3] * 4 == pytest.approx(eps[1])
