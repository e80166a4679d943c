"""Reparameterizable distributions with differentiable log-densities.

Vectors are plain Python lists whose entries are tape scalars (or floats /
lane arrays); see :mod:`mcvi.autodiff`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class DiagGaussian:
    """Gaussian with diagonal covariance, scale stored as log standard deviation."""

    mean: Sequence
    log_std: Sequence

    def __post_init__(self):
        if len(self.mean) != len(self.log_std) or len(self.mean) < 1:
            raise ValueError(
                f"mean and log_std must share a dimension >= 1, got {len(self.mean)} and {len(self.log_std)}"
            )

    @property
    def dim(self) -> int:
        return len(self.mean)

    def std(self) -> list:
        return [ad.exp(s) for s in self.log_std]

    def log_pdf(self, x: Sequence):
        return log_pdf(self, x)

    def sample(self, u: Sequence) -> list:
        return sample_reparam(self, u)


def log_pdf(dist: DiagGaussian, x: Sequence):
    """Sum over coordinates of the univariate normal log-density."""
    if len(x) != dist.dim:
        raise ValueError(f"log_pdf: point has dimension {len(x)}, distribution {dist.dim}")
    terms = []
    for xi, m, s in zip(x, dist.mean, dist.log_std):
        z = (xi - m) * ad.exp(-s)
        terms.append(-0.5 * ad.square(z) - s)
    return ad.total(terms) - dist.dim * HALF_LOG_2PI


def sample_reparam(dist: DiagGaussian, u: Sequence) -> list:
    """mean + exp(log_std) * u, differentiable in mean and log_std."""
    if len(u) != dist.dim:
        raise ValueError(f"sample_reparam: noise has dimension {len(u)}, distribution {dist.dim}")
    return [m + ad.exp(s) * ui for m, s, ui in zip(dist.mean, dist.log_std, u)]


@dataclass(frozen=True)
class ConditionalLinearGaussian:
    """Diagonal Gaussian whose mean is affine in a list of input vectors.

    ``weights[k]`` is a ``d_out x len(inputs[k])`` matrix (list of rows). The
    log standard deviation does not depend on the inputs.
    """

    weights: Sequence[Sequence[Sequence]]
    bias: Sequence
    log_std: Sequence

    @property
    def dim(self) -> int:
        return len(self.bias)

    def condition(self, inputs: Sequence[Sequence]) -> DiagGaussian:
        return condition(self, inputs)


def condition(clg: ConditionalLinearGaussian, inputs: Sequence[Sequence]) -> DiagGaussian:
    if len(inputs) != len(clg.weights):
        raise ValueError(f"condition: expected {len(clg.weights)} inputs, got {len(inputs)}")
    flat_in: list = []
    for w, x in zip(clg.weights, inputs):
        if len(w) != clg.dim or any(len(row) != len(x) for row in w):
            raise ValueError("condition: weight shape does not match input")
        flat_in.extend(x)
    flat_in.append(1.0)
    mean = []
    for i in range(clg.dim):
        coeffs: list = []
        for w in clg.weights:
            coeffs.extend(w[i])
        coeffs.append(clg.bias[i])
        mean.append(ad.dot(coeffs, flat_in))
    return DiagGaussian(mean, list(clg.log_std))


@dataclass(frozen=True)
class ConditionalSoftplusGaussian:
    """A ConditionalLinearGaussian plus a one-hidden-layer softplus term in the mean.

    mean = linear part + out_weights @ softplus(hidden_weights @ [inputs..] + hidden_bias).
    """

    linear: ConditionalLinearGaussian
    hidden_weights: Sequence[Sequence]  # H x (total input size)
    hidden_bias: Sequence
    out_weights: Sequence[Sequence]  # d_out x H

    @property
    def dim(self) -> int:
        return self.linear.dim

    @property
    def weights(self):
        return self.linear.weights

    @property
    def log_std(self):
        return self.linear.log_std

    def condition(self, inputs: Sequence[Sequence]) -> DiagGaussian:
        base = condition(self.linear, inputs)
        flat_in = [x for block in inputs for x in block] + [1.0]
        if any(len(row) + 1 != len(flat_in) for row in self.hidden_weights):
            raise ValueError("condition: hidden weight shape does not match input")
        h = [ad.softplus(ad.dot(list(row) + [c], flat_in)) for row, c in zip(self.hidden_weights, self.hidden_bias)]
        mean = [m + ad.dot(list(w), h) for m, w in zip(base.mean, self.out_weights)]
        return DiagGaussian(mean, list(base.log_std))


def init_linear_gaussian(rng: np.random.Generator, d_out: int, input_dims: Sequence[int], weight_scale=0.01):
    """Parameter arrays for a ConditionalLinearGaussian.

    Weights ~ N(0, weight_scale^2), bias 0, log_std 0.
    """
    params = {f"W{k}": rng.normal(0.0, weight_scale, size=(d_out, d)) for k, d in enumerate(input_dims)}
    params["b"] = np.zeros(d_out)
    params["log_std"] = np.zeros(d_out)
    return params


def linear_gaussian_from(p: dict, prefix: str, n_inputs: int) -> ConditionalLinearGaussian:
    """Assemble a ConditionalLinearGaussian from a (lifted) parameter mapping."""
    return ConditionalLinearGaussian(
        [p[f"{prefix}W{k}"] for k in range(n_inputs)], p[f"{prefix}b"], p[f"{prefix}log_std"]
    )


@dataclass(frozen=True)
class BernoulliVector:
    logits: Sequence

    def probabilities(self) -> np.ndarray:
        return np.array([1.0 / (1.0 + np.exp(-np.asarray(ad.value_of(l)))) for l in self.logits])


def bernoulli_log_pmf(dist: BernoulliVector, x: Sequence) -> object:
    """sum_i x_i log s(l_i) + (1 - x_i) log s(-l_i), in log-sigmoid form."""
    if len(x) != len(dist.logits):
        raise ValueError(f"bernoulli_log_pmf: {len(x)} observations for {len(dist.logits)} logits")
    terms = []
    for xi, l in zip(x, dist.logits):
        if xi not in (0, 1):
            raise ValueError(f"bernoulli_log_pmf: observation {xi!r} is not binary")
        terms.append(ad.log_sigmoid(l) if xi == 1 else ad.log_sigmoid(-l))
    return ad.total(terms)


@dataclass(frozen=True)
class MixtureIndicator:
    """Uniform categorical over the last K iterates T+1-K .. T of a chain."""

    T: int
    K: int

    def __post_init__(self):
        if not 1 <= self.K <= self.T + 1:
            raise ValueError(f"mixture over {self.K} iterates needs 1 <= K <= T+1 = {self.T + 1}")

    @property
    def support(self) -> range:
        return range(self.T + 1 - self.K, self.T + 1)

    @property
    def probabilities(self) -> np.ndarray:
        return np.full(self.K, 1.0 / self.K)

    def log_prob(self, t: int) -> float:
        if t not in self.support:
            return -math.inf
        return -math.log(self.K)


def softplus_gaussian_from(p: dict, prefix: str, n_inputs: int) -> ConditionalSoftplusGaussian:
    """Like :func:`linear_gaussian_from`, with ``H``, ``c`` and ``V`` hidden-layer arrays."""
    return ConditionalSoftplusGaussian(linear_gaussian_from(p, prefix, n_inputs), p[f"{prefix}H"], p[f"{prefix}c"],
                                       p[f"{prefix}V"])
