"""Desk-scale experiment models: parameters, bound estimators and exact evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from . import autodiff as ad
from . import exact
from .bound import (
    AnnealingSchedule,
    BoundEstimate,
    annealed_bound,
    hvi_lower_bound,
    mcmc_lower_bound,
    mixture_iterates_bound,
)
from .distributions import DiagGaussian, linear_gaussian_from, softplus_gaussian_from
from .markov import (
    AxiswiseInverse,
    HMCParams,
    HMCTransition,
    LinearInverse,
    MomentumInverse,
    SweepTransition,
    fit_axiswise_inverse,
    fit_linear_inverse,
)
from .noise import FixedNoise, NoiseSource
from .optimize import StepSpec, TrainConfig, constant, mcvi_optimize
from .targets import (
    QuadraticTarget,
    TargetDensity,
    ToyDecoder,
    beta_binomial_target,
    bivariate_gaussian_target,
    toy_decoder_target,
)


def _stack(z) -> np.ndarray:
    return np.stack([np.asarray(ad.value_of(c), dtype=float) for c in z], axis=1)


def _q0(p) -> DiagGaussian:
    return DiagGaussian(p["q0.mean"], p["q0.log_std"])


# -- linear-Gaussian sweeps on the bivariate Gaussian ------------------------------------


@dataclass
class GaussianChain:
    """Gibbs or over-relaxed sweeps from a (nearly) point-mass start.

    Over-relaxation uses one alpha = tanh(alpha_raw) shared by all steps.
    Inverse models are refitted in closed form (``refit``), which is the
    exact maximizer of the bound over those parameters given the draws.
    """

    T: int = 10
    kind: str = "overrelax"
    sigmas: tuple = (1.0, 10.0)
    init_mean: tuple = (-10.0, -10.0)
    init_var: float = 1e-10
    inverse: str = "axiswise"
    tied_inverse: bool = False
    mixture_k: int = 1
    refit_draws: int = 8192
    axis_order: tuple = (0, 1)
    seed: int = 0
    _rng: Optional[np.random.Generator] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("gibbs", "overrelax"):
            raise ValueError(f"unknown sweep kind {self.kind!r}")
        if self.inverse not in ("axiswise", "linear"):
            raise ValueError(f"unknown inverse parameterization {self.inverse!r}")
        if self.T < 0:
            raise ValueError("T must be >= 0")
        if not 1 <= self.mixture_k <= self.T + 1:
            raise ValueError("mixture_k must lie in 1 .. T+1")
        self.target = bivariate_gaussian_target(*self.sigmas)
        self._rng = np.random.default_rng(self.seed + 7919)

    @property
    def frozen(self) -> tuple:
        # inverse models are set by the closed-form refit, not by gradient steps
        return ("q0.", "r")

    def _inv_keys(self, t):
        return "r" if self.tied_inverse else f"r{t}"

    def initial_params(self) -> dict:
        p = {"q0.mean": np.array(self.init_mean, dtype=float),
             "q0.log_std": np.full(2, 0.5 * math.log(self.init_var))}
        if self.kind == "overrelax":
            p["alpha_raw"] = np.array(0.0)
        blocks = ["r"] if self.tied_inverse else [f"r{t}" for t in range(1, self.T + 1)]
        for key in blocks:
            if self.inverse == "axiswise":
                for k in range(2):
                    p[f"{key}.{k}.W0"] = np.zeros((1, 2))
                    p[f"{key}.{k}.b"] = np.zeros(1)
                    p[f"{key}.{k}.log_std"] = np.zeros(1)
            else:
                p[f"{key}.W0"] = np.zeros((2, 2))
                p[f"{key}.b"] = np.zeros(2)
                p[f"{key}.log_std"] = np.zeros(2)
        return p

    def alpha(self, p):
        return ad.tanh(p["alpha_raw"]) if self.kind == "overrelax" else 0.0

    def chain(self, p):
        a = self.alpha(p)
        transitions, inverses = [], []
        for t in range(1, self.T + 1):
            key = self._inv_keys(t)
            transitions.append(SweepTransition(a, self.axis_order))
            if self.inverse == "axiswise":
                inverses.append(AxiswiseInverse([linear_gaussian_from(p, f"{key}.{k}.", 1) for k in range(2)],
                                                self.axis_order))
            else:
                inverses.append(LinearInverse(linear_gaussian_from(p, f"{key}.", 1)))
        return transitions, inverses

    def estimate(self, p, noise) -> BoundEstimate:
        transitions, inverses = self.chain(p)
        est = mcmc_lower_bound(self.target, _q0(p), transitions, inverses, noise)
        if self.mixture_k > 1:
            est.value = mixture_iterates_bound(est.prefix_bounds(), self.mixture_k)
        return est

    def refit(self, params: dict, est=None) -> dict:
        """Replace every inverse model by its maximum-likelihood fit."""
        if self.T == 0:
            return params
        with ad.Tape():
            sim = self.estimate(constant(params), NoiseSource(self._rng, self.refit_draws))
        states = [_stack(z) for z in sim.states]
        new = dict(params)
        if self.tied_inverse:
            prev = np.concatenate(states[:-1])
            nxt = np.concatenate(states[1:])
            self._write(new, "r", prev, nxt)
        else:
            for t in range(1, self.T + 1):
                self._write(new, f"r{t}", states[t - 1], states[t])
        return new

    def _write(self, new, key, prev, nxt):
        if self.inverse == "axiswise":
            for k, fit in enumerate(fit_axiswise_inverse(prev, nxt, self.axis_order)):
                for name, val in fit.items():
                    new[f"{key}.{k}.{name}"] = val
        else:
            for name, val in fit_linear_inverse(prev, nxt).items():
                new[f"{key}.{name}"] = val

    @property
    def noise_dim(self) -> int:
        return 2 + 2 * self.T

    def exact_bound(self, params) -> float:
        """E[L] with the current parameters, exact (the estimate is quadratic in the noise)."""
        cp = constant(params)
        return exact.quadratic_expectation(lambda u: self.estimate(cp, FixedNoise(u)).numeric(), self.noise_dim)

    def marginal(self, params):
        a = float(np.tanh(params["alpha_raw"])) if self.kind == "overrelax" else 0.0
        P = np.array(self.target.P, dtype=float)
        return exact.sweep_moments(P, np.zeros(2), params["q0.mean"], np.diag(np.exp(2 * params["q0.log_std"])),
                                   [a] * self.T, self.axis_order)

    def evaluate(self, params) -> dict:
        P = np.array(self.target.P, dtype=float)
        m, S = self.marginal(params)
        log_z = self.target.known_log_normalizer
        out = {"exact_bound": self.exact_bound(params),
               "exact_kl": log_z - exact.gaussian_elbo(m, S, P, np.zeros(2)), "log_z": log_z}
        if self.T >= 1 and self.mixture_k == 1:
            grid = exact.Grid2D([(-45, 45), (-45, 45)], (121, 121))
            out["r2"] = exact.r_squared_accuracy(exact.gaussian_table(m, S, grid),
                                                 exact.posterior_table(self.target, grid), grid)
        return out

    def summary(self, params) -> dict:
        return {"alpha": float(np.tanh(params["alpha_raw"])) if self.kind == "overrelax" else 0.0}


# -- annealed bound on the bivariate Gaussian ----------------------------------------------


@dataclass
class AnnealedGaussian:
    """Tempered Gibbs chain from a diagonal Gaussian q0; q0 is the only parameter."""

    T: int = 10
    sigmas: tuple = (1.0, 10.0)
    q0_mean: tuple = (0.0, 0.0)
    q0_log_std: tuple = (0.0, 0.0)

    def __post_init__(self):
        self.target = bivariate_gaussian_target(*self.sigmas)
        self.schedule = AnnealingSchedule.linear(self.T)

    frozen: tuple = ()

    def initial_params(self) -> dict:
        return {"q0.mean": np.array(self.q0_mean, dtype=float), "q0.log_std": np.array(self.q0_log_std, dtype=float)}

    def estimate(self, p, noise) -> BoundEstimate:
        return annealed_bound(self.target, _q0(p), self.schedule, noise)

    def elbo(self, p, noise) -> BoundEstimate:
        return mcmc_lower_bound(self.target, _q0(p), [], [], noise)

    refit = None

    def evaluate(self, params) -> dict:
        cp = constant(params)
        # transitions keep the chain Gaussian, so the bound is quadratic in the noise
        eb = exact.quadratic_expectation(lambda u: self.estimate(cp, FixedNoise(u)).numeric(), 2 + 2 * self.T)
        return {"exact_bound": eb, "log_z": self.target.known_log_normalizer}

    def summary(self, params) -> dict:
        return {}


# -- Hamiltonian variational inference ---------------------------------------------------------


def laplace_fit(target: TargetDensity, start) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mode and per-axis curvature scales (log std), from numeric optimization."""
    d = target.dim

    def f(z):
        return -float(target.log_joint(list(z)))

    def g(z):
        return -np.array(target.grad_log_joint(list(z)), dtype=float)

    res = minimize(f, np.asarray(start, dtype=float), jac=g, method="BFGS", options={"gtol": 1e-9})
    mode = res.x
    log_std = np.empty(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1e-4
        curv = -(g(mode + e)[i] - g(mode - e)[i]) / 2e-4
        log_std[i] = -0.5 * math.log(max(-curv, 1e-12))
    return mode, log_std


@dataclass
class HamiltonianChain:
    """T HMC transitions with learned step size, mass, momentum and inverse models."""

    target: TargetDensity
    T: int = 1
    n_steps: int = 1
    momentum: str = "linear"  # "linear", "simple" or "net"
    mode: Optional[np.ndarray] = None
    mode_log_std: Optional[np.ndarray] = None
    init_eps: float = 0.25
    weight_scale: float = 0.01
    seed: int = 0
    grid: Optional[exact.Grid] = None
    hidden: int = 8

    frozen: tuple = ()
    refit = None

    def __post_init__(self):
        if self.momentum not in ("linear", "simple", "net"):
            raise ValueError(f"unknown momentum parameterization {self.momentum!r}")
        if self.T < 1:
            raise ValueError("HVI needs T >= 1")
        if self.mode is None or self.mode_log_std is None:
            self.mode, self.mode_log_std = laplace_fit(self.target, np.zeros(self.target.dim))

    @property
    def d(self) -> int:
        return self.target.dim

    @property
    def n_inputs(self) -> int:
        return 0 if self.momentum == "simple" else 2

    def initial_params(self) -> dict:
        rng = np.random.default_rng(self.seed)
        d = self.d
        p = {"q0.mean": np.array(self.mode, dtype=float), "q0.log_std": np.array(self.mode_log_std, dtype=float),
             "log_eps": np.array(math.log(self.init_eps)), "log_mass": -2.0 * np.array(self.mode_log_std)}
        for t in range(1, self.T + 1):
            for key in (f"q{t}", f"r{t}"):
                for k in range(self.n_inputs):
                    p[f"{key}.W{k}"] = rng.normal(0, self.weight_scale, (d, d))
                p[f"{key}.b"] = np.zeros(d)
                p[f"{key}.log_std"] = -np.array(self.mode_log_std, dtype=float)
                if self.momentum == "net":
                    # random hidden layer, zero read-out: starts out equal to the linear model
                    p[f"{key}.H"] = rng.normal(0, 1.0, (self.hidden, 2 * d))
                    p[f"{key}.c"] = rng.normal(0, 1.0, self.hidden)
                    p[f"{key}.V"] = np.zeros((d, self.hidden))
        return p

    def hmc_params(self, p) -> HMCParams:
        return HMCParams(p["log_eps"], p["log_mass"], self.n_steps)

    def models(self, p):
        build = softplus_gaussian_from if self.momentum == "net" else linear_gaussian_from
        qs = [build(p, f"q{t}.", self.n_inputs) for t in range(1, self.T + 1)]
        rs = [build(p, f"r{t}.", self.n_inputs) for t in range(1, self.T + 1)]
        return qs, rs

    def estimate(self, p, noise) -> BoundEstimate:
        qs, rs = self.models(p)
        return hvi_lower_bound(self.target, _q0(p), qs, rs, self.hmc_params(p), noise)

    def estimate_generic(self, p, noise) -> BoundEstimate:
        """Same estimator through the generic transition/inverse interface."""
        qs, rs = self.models(p)
        hp = self.hmc_params(p)
        return mcmc_lower_bound(self.target, _q0(p), [HMCTransition(q, hp) for q in qs],
                                [MomentumInverse(r) for r in rs], noise)

    def samples(self, params, n: int, seed: int = 0):
        with ad.Tape():
            est = self.estimate(constant(params), NoiseSource(np.random.default_rng(seed), n))
        return est

    def log_marginal_table(self, params, grid: exact.Grid, momentum_counts: int = 40, seed: int = 0):
        """log q(z_1) on ``grid`` by momentum marginalization (T = 1 only)."""
        if self.T != 1:
            raise ValueError("exact marginalization is implemented for a single transition")
        cp = constant(params)
        qs, _ = self.models(cp)
        est = self.samples(params, 20_000, seed)
        # momentum box from forward draws of v_1, padded
        v1 = np.stack([np.asarray(c, dtype=float) for c in est.diagnostics["v_final"]], axis=1)
        lo, hi = v1.min(axis=0), v1.max(axis=0)
        pad = 0.15 * (hi - lo)
        mgrid = exact.Grid(tuple((float(a - b), float(c + b)) for a, c, b in zip(lo, hi, pad)),
                           (momentum_counts,) * self.d)
        return exact.log_marginal_q_density(self.target, _q0(cp), qs[0], self.hmc_params(cp), grid, mgrid)

    def evaluate(self, params, grid: Optional[exact.Grid] = None) -> dict:
        grid = grid or self.grid
        if grid is None or self.T != 1:
            return {}
        log_q = self.log_marginal_table(params, grid)
        log_p = exact.log_posterior_table(self.target, grid)
        log_z = exact.log_normalizer(self.target, grid)
        mass = float(np.exp(logsumexp(log_q, b=grid.weights())))
        kl = exact.exact_kl_log(log_q - math.log(mass), log_p, grid)
        out = {"exact_kl": kl, "log_z": log_z, "q_mass": mass, "marginal_elbo": log_z - kl}
        try:
            out["r2"] = exact.r_squared_log(log_q, log_p, grid)
        except exact.UndefinedMeasureError:
            pass
        return out

    def summary(self, params) -> dict:
        return {"eps": float(np.exp(params["log_eps"])), "mass": np.exp(params["log_mass"]).tolist()}


BETABINOM_GRID = exact.Grid2D([(-8.8, -3.4), (1.0, 22.0)], (64, 96))


def betabinom_model(n_steps: int, momentum: str = "linear", seed: int = 0) -> HamiltonianChain:
    target = beta_binomial_target()
    return HamiltonianChain(target, 1, n_steps, momentum, *laplace_fit(target, [-7.0, 6.0]), seed=seed,
                            grid=BETABINOM_GRID)


def toy_decoder_problem(seed: int = 3, d_x: int = 12, hidden: int = 8, scale: float = 2.0):
    """A fixed one-dimensional toy generative model and one observation."""
    rng = np.random.default_rng(seed)
    dec = ToyDecoder.random(rng, d_z=1, d_x=d_x, hidden=hidden, scale=scale)
    x = dec.sample(rng, rng.normal())
    return toy_decoder_target(dec, x)


TOY_GRID = exact.Grid(((-8.0, 8.0),), (4001,))


def toy_model(n_steps: int, seed: int = 0, target=None, momentum: str = "net", hidden: int = 8) -> HamiltonianChain:
    target = target or toy_decoder_problem()
    mode, ls = laplace_fit(target, [0.0])
    return HamiltonianChain(target, 1, n_steps, momentum, mode, ls, seed=seed, grid=TOY_GRID, hidden=hidden)


def leapfrog_sweep(target, steps, config: TrainConfig, momentum: str = "net", warm_start: bool = True, seed: int = 0,
                   grid: Optional[exact.Grid] = None):
    """Train one single-transition Hamiltonian chain per leapfrog count in ``steps``.

    With ``warm_start`` each model starts from the previous one's parameters,
    its step size scaled so the trajectory length is unchanged.
    Returns a list of ``(model, params)``.
    """
    mode, ls = laplace_fit(target, np.zeros(target.dim))
    out, prev, prev_k = [], None, None
    for i, k in enumerate(steps):
        model = HamiltonianChain(target, 1, k, momentum, mode, ls, seed=seed, grid=grid)
        params = model.initial_params()
        if warm_start and prev is not None:
            params = dict(prev)
            if prev_k and k:
                params["log_eps"] = prev["log_eps"] + math.log(prev_k / k)
        cfg = replace(config, seed=config.seed + i)
        params = mcvi_optimize(model.estimate, params, cfg).params
        out.append((model, params))
        prev, prev_k = params, k
    return out


# -- sequential over-relaxation ---------------------------------------------------------


def sequential_gaussian_factory(target: QuadraticTarget, axis_order=(0, 1)):
    """Step specs for sequential MCVI: fresh alpha_t and axis-wise inverse r_t."""

    def make(t: int) -> StepSpec:
        params = {"alpha_raw": np.array(0.0)}
        for k in range(2):
            params[f"r.{k}.W0"] = np.zeros((1, 2))
            params[f"r.{k}.b"] = np.zeros(1)
            params[f"r.{k}.log_std"] = np.zeros(1)

        def build(p):
            inv = AxiswiseInverse([linear_gaussian_from(p, f"r.{k}.", 1) for k in range(2)], axis_order)
            return SweepTransition(ad.tanh(p["alpha_raw"]), axis_order), inv

        def refit(p, z_prev, z_new):
            new = dict(p)
            for k, fit in enumerate(fit_axiswise_inverse(z_prev, z_new, axis_order)):
                for name, val in fit.items():
                    new[f"r.{k}.{name}"] = val
            return new

        return StepSpec(params, build, refit)

    return make
