"""Transition operators q_t(z_t | x, z_{t-1}) and inverse models r_t.

Coordinate sweeps (Gibbs, over-relaxation) update one axis at a time. Their
inverse models work axis by axis in reverse sweep order: each factor predicts
the previous value of one coordinate from the state reached at that point of
the reversed sweep. For Gaussian targets this family contains the exact
reverse conditional.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .distributions import HALF_LOG_2PI, ConditionalLinearGaussian
from .targets import TargetDensity


class DynamicsDivergenceError(FloatingPointError):
    """Non-finite gradient during leapfrog integration."""

    def __init__(self, step: int, reason: str = ""):
        self.step = step
        super().__init__(f"leapfrog diverged at step {step}" + (f": {reason}" if reason else ""))


@dataclass
class Step:
    """Outcome of one transition: new state, log q_t of the realized draw, extras."""

    z: list
    log_q: object
    aux: dict = field(default_factory=dict)


def _normal_logpdf(x, mean, log_std):
    return -0.5 * ad.square((x - mean) * ad.exp(-log_std)) - log_std - HALF_LOG_2PI


# -- coordinate sweeps -------------------------------------------------------------


def _check_alpha(alpha):
    a = np.asarray(ad.value_of(alpha))
    if np.any(np.abs(a) >= 1.0):
        raise ValueError(f"over-relaxation requires |alpha| < 1, got {a}")


def _is_zero(alpha) -> bool:
    return not ad.is_var(alpha) and np.ndim(alpha) == 0 and alpha == 0.0


def _axis_kernel(target: TargetDensity, state, i: int, alpha):
    """Mean and log std of the over-relaxed update of axis ``i`` from ``state``."""
    cond = target.full_conditional(i, state)
    mu, ls = cond.mean[0], cond.log_std[0]
    if _is_zero(alpha):
        return mu, ls
    return mu + alpha * (state[i] - mu), ls + 0.5 * ad.log(1.0 - ad.square(alpha))


def overrelax_step(target: TargetDensity, z: Sequence, alpha, u: Sequence, axis_order=(0, 1)):
    """One sweep of Adler's over-relaxation; alpha = 0 is Gibbs sampling.

    Returns the new state and the summed log-densities of the realized draws.
    """
    _check_alpha(alpha)
    if len(u) != len(axis_order):
        raise ValueError("one noise value per updated axis is required")
    state = list(z)
    terms = []
    for i, ui in zip(axis_order, u):
        mean, ls = _axis_kernel(target, state, i, alpha)
        new = mean + ad.exp(ls) * ui
        terms.append(_normal_logpdf(new, mean, ls))
        state[i] = new
    return state, ad.total(terms)


def gibbs_step(target: TargetDensity, z: Sequence, axis_order=(0, 1), u: Sequence = ()):
    return overrelax_step(target, z, 0.0, u, axis_order)


def sweep_log_density(target, z_prev, z_new, alpha=0.0, axis_order=(0, 1)):
    """log q(z_new | z_prev) for a sweep (the intermediate states are implied)."""
    state = list(z_prev)
    terms = []
    for i in axis_order:
        mean, ls = _axis_kernel(target, state, i, alpha)
        terms.append(_normal_logpdf(z_new[i], mean, ls))
        state[i] = z_new[i]
    return ad.total(terms)


def reverse_sweep_log_density(target, z_prev, z_new, alpha=0.0, axis_order=(0, 1)):
    """log q~(z_prev | z_new): the kernel run backwards, axes in reverse order.

    Each single-axis update is reversible, so
    p(z_new) q~(z_prev | z_new) = p(z_prev) q(z_new | z_prev).
    """
    return sweep_log_density(target, z_new, z_prev, alpha, tuple(reversed(axis_order)))


@dataclass
class SweepTransition:
    """Over-relaxation sweep with parameter alpha (0 gives Gibbs)."""

    alpha: object = 0.0
    axis_order: tuple = (0, 1)

    @property
    def kind(self) -> str:
        return "gibbs" if _is_zero(self.alpha) else "overrelax"

    def step(self, target, z, noise) -> Step:
        z_new, log_q = overrelax_step(target, z, self.alpha, noise.normal(len(self.axis_order)), self.axis_order)
        return Step(z_new, log_q)

    def log_density(self, target, z_prev, z_new):
        return sweep_log_density(target, z_prev, z_new, self.alpha, self.axis_order)

    def reverse_log_density(self, target, z_prev, z_new):
        return reverse_sweep_log_density(target, z_prev, z_new, self.alpha, self.axis_order)


def GibbsTransition(axis_order=(0, 1)) -> SweepTransition:
    return SweepTransition(0.0, tuple(axis_order))


# -- inverse models ----------------------------------------------------------------


@dataclass
class AxiswiseInverse:
    """r(z_prev | z_new) as a product of univariate linear-Gaussian factors.

    ``models[k]`` predicts coordinate ``reversed(axis_order)[k]`` of the
    previous state from the current partially-reversed state.
    """

    models: Sequence[ConditionalLinearGaussian]
    axis_order: tuple = (0, 1)

    def log_prob(self, z_prev, step: Step):
        state = list(step.z)
        terms = []
        for model, i in zip(self.models, reversed(self.axis_order)):
            terms.append(model.condition([state]).log_pdf([z_prev[i]]))
            state[i] = z_prev[i]
        return ad.total(terms)


@dataclass
class LinearInverse:
    """r(z_prev | z_new) = N(W z_new + b, diag exp(2 log_std))."""

    model: ConditionalLinearGaussian

    def log_prob(self, z_prev, step: Step):
        return self.model.condition([step.z]).log_pdf(z_prev)


def _ols_gaussian(X: np.ndarray, y: np.ndarray):
    """Maximum-likelihood linear-Gaussian regression of y on X (with intercept)."""
    mx = X.mean(axis=0)
    my = y.mean()
    coef, *_ = np.linalg.lstsq(X - mx, y - my, rcond=None)
    resid = (y - my) - (X - mx) @ coef
    var = max(float(np.mean(resid**2)), 1e-300)
    return coef, my - mx @ coef, 0.5 * math.log(var)


def fit_axiswise_inverse(z_prev: np.ndarray, z_new: np.ndarray, axis_order=(0, 1)) -> list[dict]:
    """Closed-form maximizer of the mean log r over paired draws ``(n, dim)``.

    Returns one parameter dict (``W0``, ``b``, ``log_std``) per factor, in the
    order used by :class:`AxiswiseInverse`.
    """
    state = np.array(z_new, dtype=float, copy=True)
    out = []
    for i in reversed(axis_order):
        coef, b, ls = _ols_gaussian(state, z_prev[:, i])
        out.append({"W0": coef[None, :], "b": np.array([b]), "log_std": np.array([ls])})
        state[:, i] = z_prev[:, i]
    return out


def fit_linear_inverse(z_prev: np.ndarray, z_new: np.ndarray) -> dict:
    W, b, ls = [], [], []
    for i in range(z_prev.shape[1]):
        c, bi, si = _ols_gaussian(z_new, z_prev[:, i])
        W.append(c)
        b.append(bi)
        ls.append(si)
    return {"W0": np.array(W), "b": np.array(b), "log_std": np.array(ls)}


# -- Hamiltonian dynamics ----------------------------------------------------------


@dataclass
class HMCParams:
    """Step size and diagonal mass, both stored as logs; K leapfrog steps."""

    log_eps: object
    log_mass: Sequence
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 0:
            raise ValueError("number of leapfrog steps must be >= 0")


def _grad(target, z, k):
    try:
        g = target.grad_log_joint(z)
    except ad.DifferentiationError as exc:
        raise DynamicsDivergenceError(k, str(exc)) from exc
    for gi in g:
        if not np.all(np.isfinite(ad.value_of(gi))):
            raise DynamicsDivergenceError(k, "non-finite gradient")
    return g


def _leapfrog(target, z, v, params: HMCParams, grad=None):
    eps = ad.exp(params.log_eps)
    half = 0.5 * eps
    step_scale = [eps * ad.exp(-lm) for lm in params.log_mass]
    z = list(z)
    v = list(v)
    g = _grad(target, z, 0) if grad is None else grad
    for k in range(params.n_steps):
        v = [vi + half * gi for vi, gi in zip(v, g)]
        z = [zi + si * vi for zi, si, vi in zip(z, step_scale, v)]
        g = _grad(target, z, k + 1)
        v = [vi + half * gi for vi, gi in zip(v, g)]
    return z, v, g


def leapfrog(target: TargetDensity, z: Sequence, v: Sequence, params: HMCParams):
    """K leapfrog steps of H(z, v) = v'M^-1 v / 2 - log p(x, z)."""
    if len(z) != len(v):
        raise ValueError("position and momentum dimensions differ")
    z, v, _ = _leapfrog(target, z, v, params)
    return z, v


def _features(model: ConditionalLinearGaussian, z, g):
    return [[], [z], [z, g]][len(model.weights)]


def hmc_transition(target, z_prev, momentum_model: ConditionalLinearGaussian, params: HMCParams, u,
                   grad_prev=None):
    """Draw v' ~ q(v' | z_prev), integrate, and return (z_t, v_t, log q(v')).

    The dynamics are deterministic and volume preserving, so the density of
    the transition equals the density of the initial momentum.
    """
    if momentum_model.dim != len(z_prev):
        raise ValueError("momentum model dimension must equal the latent dimension")
    if grad_prev is None and len(momentum_model.weights) >= 2:
        grad_prev = _grad(target, list(z_prev), 0)
    q_v = momentum_model.condition(_features(momentum_model, list(z_prev), grad_prev))
    v0 = q_v.sample(u)
    log_q = q_v.log_pdf(v0)
    z_t, v_t, g_t = _leapfrog(target, z_prev, v0, params, grad_prev)
    return z_t, v_t, log_q, v0, g_t


@dataclass
class HMCTransition:
    momentum_model: ConditionalLinearGaussian
    params: HMCParams
    kind: str = "hmc"

    def step(self, target, z, noise) -> Step:
        z_t, v_t, log_q, v0, g_t = hmc_transition(target, z, self.momentum_model, self.params,
                                                   noise.normal(len(z)))
        return Step(z_t, log_q, {"v": v_t, "v0": v0, "grad": g_t})


@dataclass
class MomentumInverse:
    """r_t(v_t | x, z_t), linear in z_t and its score (or constant)."""

    model: ConditionalLinearGaussian

    def log_prob(self, z_prev, step: Step):
        return self.model.condition(_features(self.model, step.z, step.aux["grad"])).log_pdf(step.aux["v"])


# -- Metropolis-Hastings, Rao-Blackwellized over the accept decision ---------------


@dataclass
class MHInverse:
    """Reverse models for one MH step: r(a = 1 | z_t) and r(other point | z_t)."""

    accept_weights: Sequence
    accept_bias: object
    point_model: ConditionalLinearGaussian

    def log_accept(self, z_t, a: int):
        logit = ad.dot(self.accept_weights, z_t) + self.accept_bias
        return ad.log_sigmoid(logit) if a == 1 else ad.log_sigmoid(-logit)

    def log_point(self, point, z_t):
        return self.point_model.condition([z_t]).log_pdf(point)


def mh_log_alpha(target, z_prev, z_prop, proposal: ConditionalLinearGaussian, inverse: MHInverse, a: int, rho):
    """log alpha_t for an explicit accept decision ``a``."""
    log_phi = proposal.condition([z_prev]).log_pdf(z_prop)
    if a == 1:
        return (target.log_joint(z_prop) - target.log_joint(z_prev) + inverse.log_accept(z_prop, 1)
                + inverse.log_point(z_prev, z_prop) - log_phi - ad.log(rho))
    return inverse.log_accept(z_prev, 0) + inverse.log_point(z_prop, z_prev) - log_phi - ad.log(1.0 - rho)


def mh_rao_blackwell_term(target, z_prev, proposal: ConditionalLinearGaussian, inverse: MHInverse, u):
    """Expected log alpha_t over the binary accept variable, for a single MH step.

    Returns ``(expected_log_alpha, rho, z_prop)``.
    """
    z_prev = list(z_prev)
    phi_fwd = proposal.condition([z_prev])
    z_prop = phi_fwd.sample(u)
    log_phi = phi_fwd.log_pdf(z_prop)
    log_phi_rev = proposal.condition([z_prop]).log_pdf(z_prev)
    lp_prev = target.log_joint(z_prev)
    lp_prop = target.log_joint(z_prop)
    log_rho = ad.minimum(lp_prop + log_phi_rev - lp_prev - log_phi, 0.0)
    rho = ad.exp(log_rho)
    accept = lp_prop - lp_prev + inverse.log_accept(z_prop, 1) + inverse.log_point(z_prev, z_prop) - log_phi
    reject = inverse.log_accept(z_prev, 0) + inverse.log_point(z_prop, z_prev) - log_phi
    # rho log rho and (1 - rho) log(1 - rho) are the entropy of the accept variable
    expected = rho * accept + (1.0 - rho) * reject - rho * log_rho - ad.xlogx(1.0 - rho)
    return expected, rho, z_prop
