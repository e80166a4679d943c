"""Single-sample unbiased estimators of auxiliary variational lower bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from . import autodiff as ad
from .distributions import ConditionalLinearGaussian, DiagGaussian
from .markov import (
    GibbsTransition,
    MHInverse,
    MomentumInverse,
    Step,
    hmc_transition,
    mh_rao_blackwell_term,
)
from .targets import QuadraticTarget, TargetDensity, tempered_target


@dataclass
class BoundEstimate:
    """L = log p(x, z_0) - log q(z_0 | x) + sum_t log alpha_t, per lane."""

    value: object
    initial: object
    per_step_terms: list
    z_T: list
    states: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def prefix_bounds(self) -> list:
        """Running estimates after 0, 1, ..., T transitions."""
        out = [self.initial]
        for term in self.per_step_terms:
            out.append(out[-1] + term)
        return out

    def numeric(self) -> np.ndarray:
        return np.atleast_1d(np.asarray(ad.value_of(self.value), dtype=float))


def _check_steps(transitions, inverses):
    if len(transitions) != len(inverses):
        raise ValueError(f"{len(transitions)} transitions but {len(inverses)} inverse models")


def mcmc_lower_bound(target: TargetDensity, q0: DiagGaussian, transitions: Sequence, inverses: Sequence,
                     noise) -> BoundEstimate:
    """Run the chain and accumulate log alpha_t = log[p(z_t) r_t(z_{t-1}|z_t) / (p(z_{t-1}) q_t(z_t|z_{t-1}))]."""
    _check_steps(transitions, inverses)
    z = q0.sample(noise.normal(q0.dim))
    lp = target.log_joint(z)
    initial = lp - q0.log_pdf(z)
    states = [z]
    terms = []
    for t, (q_t, r_t) in enumerate(zip(transitions, inverses), start=1):
        step: Step = q_t.step(target, z, noise)
        lp_new = target.log_joint(step.z)
        terms.append(lp_new + r_t.log_prob(z, step) - lp - step.log_q)
        z, lp = step.z, lp_new
        states.append(z)
    value = initial + ad.total(terms) if terms else initial
    return BoundEstimate(value, initial, terms, z, states)


def hvi_lower_bound(target: TargetDensity, q0: DiagGaussian, momentum_models: Sequence[ConditionalLinearGaussian],
                    inverse_momentum_models: Sequence[ConditionalLinearGaussian], hmc_params, noise) -> BoundEstimate:
    """Hamiltonian variational inference estimate, without a Metropolis-Hastings correction."""
    T = len(momentum_models)
    if T < 1:
        raise ValueError("HVI needs at least one transition")
    if len(inverse_momentum_models) != T:
        raise ValueError("one inverse momentum model per transition is required")
    params = hmc_params if isinstance(hmc_params, (list, tuple)) else [hmc_params] * T
    z = q0.sample(noise.normal(q0.dim))
    lp = target.log_joint(z)
    initial = lp - q0.log_pdf(z)
    states = [z]
    terms = []
    grad = None
    v_t = None
    for q_t, r_t, hp in zip(momentum_models, inverse_momentum_models, params):
        z_t, v_t, log_q, _, grad = hmc_transition(target, z, q_t, hp, noise.normal(len(z)), grad)
        lp_t = target.log_joint(z_t)
        log_r = MomentumInverse(r_t).log_prob(z, Step(z_t, log_q, {"v": v_t, "grad": grad}))
        terms.append(lp_t + log_r - lp - log_q)
        z, lp = z_t, lp_t
        states.append(z)
    return BoundEstimate(initial + ad.total(terms), initial, terms, z, states,
                         {"v_final": [ad.value_of(c) for c in v_t]})


def mh_lower_bound(target: TargetDensity, q0: DiagGaussian, proposal: ConditionalLinearGaussian,
                   inverse: MHInverse, noise) -> BoundEstimate:
    """T = 1 chain with a Rao-Blackwellized Metropolis-Hastings step."""
    z = q0.sample(noise.normal(q0.dim))
    initial = target.log_joint(z) - q0.log_pdf(z)
    term, rho, z_prop = mh_rao_blackwell_term(target, z, proposal, inverse, noise.normal(q0.dim))
    return BoundEstimate(initial + term, initial, [term], z, [z, z_prop], {"rho": ad.value_of(rho)})


# -- annealing ---------------------------------------------------------------------


@dataclass(frozen=True)
class AnnealingSchedule:
    betas: tuple

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=float)
        if b.size < 2 or b[0] != 0.0 or b[-1] != 1.0 or np.any(np.diff(b) < 0):
            raise ValueError("schedule must be nondecreasing from beta_0 = 0 to beta_T = 1")

    @classmethod
    def linear(cls, T: int) -> "AnnealingSchedule":
        return cls(tuple(np.linspace(0.0, 1.0, T + 1)))

    @property
    def T(self) -> int:
        return len(self.betas) - 1


def tempered_gibbs(q0: DiagGaussian, target: QuadraticTarget, beta, axis_order=(0, 1)):
    """A Gibbs sweep leaving q0^(1-beta) p^beta invariant, with that tempered target."""
    return GibbsTransition(axis_order), tempered_target(q0, target, beta)


def annealed_bound(target: QuadraticTarget, q0: DiagGaussian, schedule: AnnealingSchedule, noise,
                   transition_factory: Callable = tempered_gibbs) -> BoundEstimate:
    """sum_t (beta_t - beta_{t-1}) log[p(x, z_t) / q0(z_t)] along a tempered chain.

    Transition t is in detailed balance with the density at temperature
    beta_{t-1}, which makes the sum a lower bound on log p(x).
    """
    if not isinstance(schedule, AnnealingSchedule):
        schedule = AnnealingSchedule(tuple(schedule))
    betas = schedule.betas
    z = q0.sample(noise.normal(q0.dim))
    states = [z]
    terms = []
    for t in range(1, len(betas)):
        op, tempered = transition_factory(q0, target, betas[t - 1])
        z = op.step(tempered, z, noise).z
        states.append(z)
        terms.append((betas[t] - betas[t - 1]) * (target.log_joint(z) - q0.log_pdf(z)))
    value = ad.total(terms)
    return BoundEstimate(value, 0.0, terms, z, states)


@dataclass
class AnnealedInverse:
    """r(z_{t-1} | z_t) = q_t(z_t | z_{t-1}) p_{t-1}(z_{t-1}) / p_{t-1}(z_t) for a balanced sweep."""

    transition: object
    tempered: QuadraticTarget

    def log_prob(self, z_prev, step: Step):
        return (self.transition.log_density(self.tempered, z_prev, step.z)
                + self.tempered.log_joint(z_prev) - self.tempered.log_joint(step.z))


@dataclass
class _OnTarget:
    """Runs a transition against a fixed (tempered) density regardless of the chain target."""

    transition: object
    tempered: QuadraticTarget

    def step(self, target, z, noise) -> Step:
        return self.transition.step(self.tempered, z, noise)


def annealed_chain(q0: DiagGaussian, target: QuadraticTarget, schedule: AnnealingSchedule,
                   transition_factory: Callable = tempered_gibbs):
    """Transitions and explicit reverse models equivalent to :func:`annealed_bound`."""
    transitions, inverses = [], []
    for t in range(1, len(schedule.betas)):
        op, tempered = transition_factory(q0, target, schedule.betas[t - 1])
        transitions.append(_OnTarget(op, tempered))
        inverses.append(AnnealedInverse(op, tempered))
    return transitions, inverses


# -- multiple iterates and evaluation -------------------------------------------------


def mixture_iterates_bound(per_step_bounds: Sequence, K: int):
    """Average of the last K running bounds (uniform mixture with r(w) = q(w))."""
    n = len(per_step_bounds)
    if not 1 <= K <= n:
        raise ValueError(f"cannot average the last {K} of {n} iterates")
    tail = list(per_step_bounds)[n - K:]
    return ad.total(tail) * (1.0 / K)


def log_mean_exp(log_w) -> float:
    log_w = np.asarray(log_w, dtype=float).ravel()
    return float(logsumexp(log_w) - math.log(log_w.size))


def importance_sampling_log_marginal(target: TargetDensity, q, n_samples: int, rng=0,
                                     batch: int = 4096) -> float:
    """log (1/n) sum_i p(x, z_i) / q(z_i | x).

    ``q`` is either a :class:`DiagGaussian` with numeric parameters or a
    callable ``noise -> BoundEstimate`` for a chain approximation, in which
    case the auxiliary ratio exp(L) serves as the importance weight.
    """
    from .noise import NoiseSource

    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    chunks = []
    left = n_samples
    while left > 0:
        b = min(batch, left)
        noise = NoiseSource(rng, b)
        if isinstance(q, DiagGaussian):
            z = q.sample(noise.normal(q.dim))
            lw = np.asarray(target.log_joint(z), dtype=float) - np.asarray(q.log_pdf(z), dtype=float)
        else:
            lw = q(noise).numeric()
        chunks.append(np.broadcast_to(lw, (b,)))
        left -= b
    return log_mean_exp(np.concatenate(chunks))
