"""Stochastic maximization of bound estimates: Adam, MCVI and sequential MCVI."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .markov import DynamicsDivergenceError
from .noise import NoiseSource

log = logging.getLogger(__name__)

Params = dict  # name -> np.ndarray


class OptimizerError(RuntimeError):
    def __init__(self, iteration: int, message: str):
        self.iteration = iteration
        super().__init__(f"iteration {iteration}: {message}")


# -- parameters on the tape -----------------------------------------------------


def _nest(flat: list, shape: tuple):
    if not shape:
        return flat[0]
    if len(shape) == 1:
        return list(flat)
    step = int(np.prod(shape[1:]))
    return [_nest(flat[i * step:(i + 1) * step], shape[1:]) for i in range(shape[0])]


def is_frozen(name: str, frozen: Sequence[str]) -> bool:
    return any(name == f or name.startswith(f) for f in frozen)


def lift(params: Params, tape: ad.Tape, frozen: Sequence[str] = ()):
    """Nested-list view of ``params`` with trainable entries as tape variables.

    Returns ``(lifted, leaves)``; ``leaves`` maps names to flat lists of Vars.
    """
    lifted, leaves = {}, {}
    for name, arr in params.items():
        arr = np.asarray(arr, dtype=float)
        flat = [float(v) for v in arr.ravel()]
        if not is_frozen(name, frozen):
            flat = [tape.var(v) for v in flat]
            leaves[name] = flat
        lifted[name] = _nest(flat, arr.shape)
    return lifted, leaves


def constant(params: Params) -> dict:
    """Nested-list view of ``params`` with plain floats (no tape)."""
    return {k: _nest([float(v) for v in np.asarray(a, dtype=float).ravel()], np.shape(a)) for k, a in params.items()}


def value_and_grad(estimator: Callable, params: Params, noise, frozen: Sequence[str] = ()):
    """Mean bound over the noise lanes and its gradient w.r.t. trainable params."""
    with ad.Tape() as tape:
        lifted, leaves = lift(params, tape, frozen)
        est = estimator(lifted, noise)
        obj = ad.mean(est.value)
        names = list(leaves)
        flat = [v for n in names for v in leaves[n]]
        if not ad.is_var(obj):
            grads = [0.0] * len(flat)
        else:
            grads = ad.gradient(obj, flat)
    out, i = {}, 0
    for n in names:
        k = len(leaves[n])
        out[n] = np.asarray(grads[i:i + k], dtype=float).reshape(np.shape(params[n]))
        i += k
    return float(ad.value_of(obj)), out, est


# -- Adam -----------------------------------------------------------------------------


@dataclass
class AdamState:
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: Params, grad: dict) -> Params:
    """Bias-corrected Adam *ascent* step on the entries present in ``grad``."""
    state.t += 1
    new = dict(params)
    for name, g in grad.items():
        g = np.asarray(g, dtype=float)
        if np.shape(g) != np.shape(params[name]):
            raise ValueError(f"gradient for {name} has shape {np.shape(g)}, parameter {np.shape(params[name])}")
        if not np.all(np.isfinite(g)):
            raise OptimizerError(state.t, f"non-finite gradient for {name}")
        m = state.m.get(name, np.zeros_like(g))
        v = state.v.get(name, np.zeros_like(g))
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - state.beta1**state.t)
        v_hat = v / (1 - state.beta2**state.t)
        new[name] = np.asarray(params[name], dtype=float) + state.step_size * m_hat / (np.sqrt(v_hat) + state.eps)
    return new


# -- MCVI ---------------------------------------------------------------------------------


@dataclass
class TrainConfig:
    iterations: int = 1000
    draws: int = 16
    seed: int = 0
    eval_every: int = 100
    step_size: float = 1e-3
    frozen: tuple = ()
    divergence_window: int = 20
    final_step_size: Optional[float] = None  # geometric decay towards this value; None keeps it constant

    def __post_init__(self):
        if self.iterations < 1 or self.draws < 1:
            raise ValueError("iterations and draws must be >= 1")
        if self.final_step_size is not None and not 0 < self.final_step_size:
            raise ValueError("final_step_size must be positive")

    def step_size_at(self, it: int) -> float:
        if self.final_step_size is None or self.iterations == 1:
            return self.step_size
        frac = it / (self.iterations - 1)
        return self.step_size * (self.final_step_size / self.step_size) ** frac


@dataclass
class OptimizeResult:
    params: Params
    trace: list
    failures: int
    state: AdamState

    def smoothed(self, window: int = 50) -> np.ndarray:
        tr = np.asarray(self.trace, dtype=float)
        if tr.size == 0:
            return tr
        c = np.cumsum(np.insert(tr, 0, 0.0))
        out = np.empty_like(tr)
        for i in range(tr.size):
            lo = max(0, i + 1 - window)
            out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
        return out


def mcvi_optimize(estimator: Callable, params: Params, config: TrainConfig,
                  refit: Optional[Callable] = None, callback: Optional[Callable] = None) -> OptimizeResult:
    """Maximize the expected bound by stochastic gradient ascent.

    ``estimator(lifted_params, noise) -> BoundEstimate``. ``refit(params,
    estimate) -> params`` may replace parameter blocks by their exact
    maximizers given the latest draws. ``callback(iteration, params, trace)``
    runs every ``config.eval_every`` iterations and after the last one.
    """
    rng = np.random.default_rng(config.seed)
    state = AdamState(step_size=config.step_size)
    params = {k: np.array(v, dtype=float) for k, v in params.items()}
    if refit is not None:
        with ad.Tape():
            est = estimator(constant(params), NoiseSource(rng, max(config.draws, 64)))
        params = refit(params, est)
    trace = []
    recent = deque(maxlen=config.divergence_window)
    failures = 0
    it = 0
    attempts = 0
    while it < config.iterations:
        attempts += 1
        noise = NoiseSource(rng, config.draws)
        try:
            value, grad, est = value_and_grad(estimator, params, noise, config.frozen)
        except (DynamicsDivergenceError, ad.DifferentiationError) as exc:
            failures += 1
            recent.append(1)
            log.debug("failed draw at iteration %d: %s", it, exc)
            if len(recent) == recent.maxlen and sum(recent) > recent.maxlen // 2:
                raise OptimizerError(it, f"{sum(recent)} of the last {len(recent)} draws diverged") from exc
            continue
        recent.append(0)
        state.step_size = config.step_size_at(it)
        try:
            params = adam_step(state, params, grad)
        except OptimizerError as exc:
            raise OptimizerError(it, str(exc)) from exc
        if refit is not None:
            params = refit(params, est)
        trace.append(value)
        it += 1
        if callback is not None and (it % config.eval_every == 0 or it == config.iterations):
            callback(it, params, trace)
    return OptimizeResult(params, trace, failures, state)


# -- sequential MCVI -------------------------------------------------------------------------


@dataclass
class StepSpec:
    """A transition/inverse pair to append: initial params, builder, optional refit."""

    params: Params
    build: Callable  # lifted params -> (transition, inverse)
    refit: Optional[Callable] = None  # (params, z_prev (n,d), z_new (n,d)) -> params


@dataclass
class SequentialResult:
    step_params: list
    gains: list  # (mean, standard error) of the local log alpha_t
    initial: tuple  # (mean, standard error) of the T = 0 bound
    traces: list


def _mean_se(x) -> tuple:
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))


def run_chain(target, q0, specs: Sequence[StepSpec], step_params: Sequence[Params], noise, lifted_last=None):
    """Evaluate the full chain; earlier steps use constant parameters."""
    from .bound import mcmc_lower_bound

    transitions, inverses = [], []
    for k, (spec, p) in enumerate(zip(specs, step_params)):
        lp = lifted_last if (lifted_last is not None and k == len(specs) - 1) else constant(p)
        q_t, r_t = spec.build(lp)
        transitions.append(q_t)
        inverses.append(r_t)
    return mcmc_lower_bound(target, q0, transitions, inverses, noise)


def _step_refit(target, q0, specs, step_params, rng, n):
    """Closed-form refit of the newest step from a fresh simulation of the chain."""
    specs, prev = tuple(specs), tuple(step_params)

    def refit(params, est):
        sim = run_chain(target, q0, specs, list(prev) + [params], NoiseSource(rng, n))
        return specs[-1].refit(params, _stack(sim.states[-2]), _stack(sim.states[-1]))

    return refit


def sequential_mcvi(target, q0, operator_factory: Callable[[int], StepSpec], T: int, config: TrainConfig,
                    n_eval: int = 4096, refit_draws: int = 4096) -> SequentialResult:
    """Grow the chain one step at a time, maximizing only E[log alpha_t] of the new step."""
    rng = np.random.default_rng(config.seed)
    init = run_chain(target, q0, [], [], NoiseSource(rng, n_eval))
    specs, step_params, gains, traces = [], [], [], []
    for t in range(1, T + 1):
        spec = operator_factory(t)
        specs.append(spec)

        def local(lifted, noise, _specs=tuple(specs), _prev=tuple(step_params)):
            est = run_chain(target, q0, _specs, list(_prev) + [spec.params], noise, lifted_last=lifted)
            est.value = est.per_step_terms[-1]
            return est

        refit = _step_refit(target, q0, specs, step_params, rng, refit_draws) if spec.refit is not None else None

        cfg = TrainConfig(config.iterations, config.draws, int(rng.integers(2**31)), config.eval_every,
                          config.step_size, config.frozen, config.divergence_window, config.final_step_size)
        res = mcvi_optimize(local, spec.params, cfg, refit=refit)
        spec.params = res.params
        step_params.append(res.params)
        traces.append(res.trace)
        est = run_chain(target, q0, specs, step_params, NoiseSource(rng, n_eval))
        gains.append(_mean_se(ad.value_of(est.per_step_terms[-1])))
        log.info("sequential step %d: local gain %.4f +/- %.4f", t, *gains[-1])
    return SequentialResult(step_params, gains, _mean_se(init.numeric()), traces)


def _stack(z) -> np.ndarray:
    return np.stack([np.asarray(ad.value_of(c), dtype=float) for c in z], axis=1)
