"""Unnormalized log joint densities log p(x, z) with differentiable gradients.

Each target exposes ``log_joint(z)`` and ``grad_log_joint(z)``; both are
written in :mod:`mcvi.autodiff` operations so that leapfrog dynamics built on
the gradient can itself be differentiated (first order only).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import special

from . import autodiff as ad
from .distributions import HALF_LOG_2PI, DiagGaussian, bernoulli_log_pmf, BernoulliVector


class UnsupportedOperatorError(TypeError):
    """The target does not provide what a transition operator needs."""


class TargetDensity:
    dim: int
    known_log_normalizer: Optional[float] = None

    def log_joint(self, z: Sequence):
        raise NotImplementedError

    def grad_log_joint(self, z: Sequence) -> list:
        raise NotImplementedError

    def full_conditional(self, i: int, z: Sequence) -> DiagGaussian:
        raise UnsupportedOperatorError(f"{type(self).__name__} has no analytic full conditionals")

    def log_joint_grid(self, points: np.ndarray) -> np.ndarray:
        """Evaluate on an ``(n, dim)`` array of points."""
        return np.asarray(self.log_joint([points[:, i] for i in range(self.dim)]), dtype=float)


# -- Gaussian targets ---------------------------------------------------------


class QuadraticTarget(TargetDensity):
    """log p(z) = -1/2 z'Pz + h'z + const, with analytic full conditionals.

    Entries of ``precision``, ``shift`` and ``const`` may be tape scalars.
    """

    def __init__(self, precision, shift=None, const=0.0, known_log_normalizer=None):
        self.P = [list(row) for row in precision]
        self.dim = len(self.P)
        self.h = list(shift) if shift is not None else [0.0] * self.dim
        self.const = const
        self.known_log_normalizer = known_log_normalizer

    def log_joint(self, z):
        quad = []
        for i in range(self.dim):
            quad.append(ad.dot(self.P[i], z) * z[i])
        return -0.5 * ad.total(quad) + ad.dot(self.h, z) + self.const

    def grad_log_joint(self, z):
        return [self.h[i] - ad.dot(self.P[i], z) for i in range(self.dim)]

    def full_conditional(self, i, z):
        pii = self.P[i][i]
        rest = [self.P[i][j] for j in range(self.dim) if j != i]
        others = [z[j] for j in range(self.dim) if j != i]
        num = self.h[i] - ad.dot(rest, others) if rest else self.h[i]
        log_std = -0.5 * ad.log(pii)
        return DiagGaussian([num / pii], [log_std])


def bivariate_gaussian_target(sigma1: float, sigma2: float) -> QuadraticTarget:
    """exp[-(z1 - z2)^2 / (2 s1^2) - (z1 + z2)^2 / (2 s2^2)], normalizer pi s1 s2."""
    if not (sigma1 > 0 and sigma2 > 0):
        raise ValueError(f"scales must be positive, got {sigma1}, {sigma2}")
    a = 1.0 / sigma1**2
    b = 1.0 / sigma2**2
    P = [[a + b, b - a], [b - a, a + b]]
    t = QuadraticTarget(P, known_log_normalizer=math.log(math.pi * sigma1 * sigma2))
    t.sigmas = (sigma1, sigma2)
    return t


def gaussian_full_conditional(target: TargetDensity, i: int, z_other) -> DiagGaussian:
    """Full conditional of coordinate ``i`` of a 2-D target given the other one."""
    if target.dim != 2 or i not in (0, 1):
        raise ValueError("gaussian_full_conditional expects a 2-D target and axis 0 or 1")
    z = [0.0, 0.0]
    z[1 - i] = z_other
    return target.full_conditional(i, z)


def standard_normal_target(dim: int = 1) -> QuadraticTarget:
    """Unnormalized exp(-|z|^2 / 2); log normalizer dim/2 log 2 pi."""
    P = [[1.0 if i == j else 0.0 for j in range(dim)] for i in range(dim)]
    return QuadraticTarget(P, known_log_normalizer=dim * HALF_LOG_2PI)


def tempered_target(q0: DiagGaussian, target: QuadraticTarget, beta) -> QuadraticTarget:
    """(1 - beta) log q0(z) + beta log p(x, z) for a Gaussian target."""
    w = 1.0 - beta
    prec_q = [ad.exp(-2.0 * s) for s in q0.log_std]
    P = [[beta * target.P[i][j] + (w * prec_q[i] if i == j else 0.0) for j in range(target.dim)]
         for i in range(target.dim)]
    h = [beta * target.h[i] + w * q0.mean[i] * prec_q[i] for i in range(target.dim)]
    c_q = -ad.total(q0.log_std) - target.dim * HALF_LOG_2PI - 0.5 * ad.total(
        [ad.square(m) * pq for m, pq in zip(q0.mean, prec_q)])
    return QuadraticTarget(P, h, w * c_q + beta * target.const)


# -- beta-binomial overdispersion model -----------------------------------------


@dataclass(frozen=True)
class OverdispersionData:
    n: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        if len(self.n) != len(self.x) or len(self.n) == 0:
            raise ValueError("need one death count per population, and at least one pair")
        if np.any(self.x < 0) or np.any(self.x > self.n):
            raise ValueError("death counts must satisfy 0 <= x <= n")


def load_overdispersion(path: str | Path | None = None, expected_rows: int | None = 20) -> OverdispersionData:
    """Read two integer columns ``n x``; '#' starts a comment."""
    if path is None:
        text = resources.files("mcvi").joinpath("data/cancermortality.txt").read_text()
    else:
        text = Path(path).read_text()
    rows = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            n, x = line.split()
            rows.append((int(n), int(x)))
    if expected_rows is not None and len(rows) != expected_rows:
        raise ValueError(f"expected {expected_rows} (n, x) pairs, got {len(rows)}")
    arr = np.array(rows, dtype=float).reshape(-1, 2)
    return OverdispersionData(arr[:, 0], arr[:, 1])


def _lanes(a):
    return np.asarray(a, dtype=float)[..., None]


def _finish(v):
    return float(v) if np.ndim(v) == 0 else v


class BetaBinomialTarget(TargetDensity):
    """Beta-binomial posterior over z = (logit eta, log K).

    Prior p(eta, K) proportional to 1 / (eta (1 - eta)) / (1 + K)^2; the
    Jacobian of the (logit, log) transform is included.
    """

    dim = 2

    def __init__(self, data: OverdispersionData):
        self.data = data
        self.y = data.x
        self.n = data.n
        self.const = float(np.sum(special.gammaln(self.n + 1) - special.gammaln(self.y + 1)
                                  - special.gammaln(self.n - self.y + 1)))
        self.known_log_normalizer = None

    def _loglik(self, a, b):
        va, vb = _lanes(ad.value_of(a)), _lanes(ad.value_of(b))
        y, n = self.y, self.n
        f = (special.betaln(va + y, vb + n - y) - special.betaln(va, vb)).sum(-1)
        if not (ad.is_var(a) or ad.is_var(b)):
            return _finish(f)
        fa, fb = self._score_values(va, vb)
        return ad.record("betabinom_loglik", [a, b], _finish(f), [_finish(fa), _finish(fb)])

    def _score_values(self, va, vb):
        y, n = self.y, self.n
        d_ab = special.digamma(va + vb) - special.digamma(va + vb + n)
        fa = (special.digamma(va + y) - special.digamma(va) + d_ab).sum(-1)
        fb = (special.digamma(vb + n - y) - special.digamma(vb) + d_ab).sum(-1)
        return fa, fb

    def _score(self, a, b):
        va, vb = _lanes(ad.value_of(a)), _lanes(ad.value_of(b))
        y, n = self.y, self.n
        fa, fb = self._score_values(va, vb)
        if not (ad.is_var(a) or ad.is_var(b)):
            return _finish(fa), _finish(fb)
        t_ab = special.polygamma(1, va + vb) - special.polygamma(1, va + vb + n)
        faa = (special.polygamma(1, va + y) - special.polygamma(1, va) + t_ab).sum(-1)
        fbb = (special.polygamma(1, vb + n - y) - special.polygamma(1, vb) + t_ab).sum(-1)
        fab = t_ab.sum(-1)
        sa = ad.record("betabinom_score_a", [a, b], _finish(fa), [_finish(faa), _finish(fab)])
        sb = ad.record("betabinom_score_b", [a, b], _finish(fb), [_finish(fab), _finish(fbb)])
        return sa, sb

    def _ab(self, z):
        ls1, ls0 = ad.log_sigmoid(z[0]), ad.log_sigmoid(-z[0])
        return ad.exp(z[1] + ls1), ad.exp(z[1] + ls0), ls1, ls0

    def log_joint(self, z):
        a, b, _, _ = self._ab(z)
        return self._loglik(a, b) + z[1] - 2.0 * ad.softplus(z[1]) + self.const

    def grad_log_joint(self, z):
        a, b, ls1, ls0 = self._ab(z)
        fa, fb = self._score(a, b)
        k_eta_1m = ad.exp(z[1] + ls1 + ls0)
        g0 = k_eta_1m * (fa - fb)
        g1 = a * fa + b * fb + 1.0 - 2.0 * ad.sigmoid(z[1])
        return [g0, g1]


def beta_binomial_target(data: OverdispersionData | None = None) -> BetaBinomialTarget:
    return BetaBinomialTarget(data if data is not None else load_overdispersion())


# -- toy generative model -----------------------------------------------------------


@dataclass
class ToyDecoder:
    """One hidden softplus layer mapping z to Bernoulli logits."""

    W1: np.ndarray  # hidden x d_z
    c1: np.ndarray
    W2: np.ndarray  # d_x x hidden
    c2: np.ndarray

    def __post_init__(self):
        self.W1 = np.atleast_2d(np.asarray(self.W1, dtype=float))
        self.W2 = np.atleast_2d(np.asarray(self.W2, dtype=float))
        self.c1 = np.asarray(self.c1, dtype=float)
        self.c2 = np.asarray(self.c2, dtype=float)
        if self.W1.shape[0] != self.c1.size or self.W2.shape != (self.c2.size, self.c1.size):
            raise ValueError("inconsistent decoder weight shapes")

    @property
    def d_z(self) -> int:
        return self.W1.shape[1]

    @property
    def d_x(self) -> int:
        return self.W2.shape[0]

    @classmethod
    def random(cls, rng: np.random.Generator, d_z=1, d_x=12, hidden=8, scale=2.0) -> "ToyDecoder":
        return cls(rng.normal(0, scale, (hidden, d_z)), rng.normal(0, scale, hidden),
                   rng.normal(0, scale, (d_x, hidden)) / math.sqrt(hidden), rng.normal(0, 1.0, d_x))

    @classmethod
    def zeros(cls, d_z=1, d_x=4, hidden=2) -> "ToyDecoder":
        return cls(np.zeros((hidden, d_z)), np.zeros(hidden), np.zeros((d_x, hidden)), np.zeros(d_x))

    def _pre(self, z):
        return [ad.dot(list(self.W1[k]) + [self.c1[k]], list(z) + [1.0]) for k in range(self.c1.size)]

    def logits(self, z) -> list:
        h = [ad.softplus(s) for s in self._pre(z)]
        return [ad.dot(list(self.W2[j]) + [self.c2[j]], h + [1.0]) for j in range(self.d_x)]

    def sample(self, rng: np.random.Generator, z) -> np.ndarray:
        p = special.expit(np.asarray(self.logits(list(np.atleast_1d(z))), dtype=float))
        return (rng.random(self.d_x) < p).astype(int)


class ToyDecoderTarget(TargetDensity):
    """log N(z | 0, I) + log Bernoulli(x | decoder(z))."""

    def __init__(self, decoder: ToyDecoder, x: Sequence[int]):
        x = [int(v) for v in x]
        if len(x) != decoder.d_x:
            raise ValueError(f"observation has {len(x)} pixels, decoder emits {decoder.d_x}")
        self.decoder = decoder
        self.x = x
        self.dim = decoder.d_z
        self.known_log_normalizer = None

    def log_joint(self, z):
        prior = -0.5 * ad.total([ad.square(zi) for zi in z]) - self.dim * HALF_LOG_2PI
        return prior + bernoulli_log_pmf(BernoulliVector(self.decoder.logits(z)), self.x)

    def grad_log_joint(self, z):
        dec = self.decoder
        pre = dec._pre(z)
        h = [ad.softplus(s) for s in pre]
        logits = [ad.dot(list(dec.W2[j]) + [dec.c2[j]], h + [1.0]) for j in range(dec.d_x)]
        resid = [xj - ad.sigmoid(l) for xj, l in zip(self.x, logits)]
        back = [ad.sigmoid(s) * ad.dot(list(dec.W2[:, k]), resid) for k, s in enumerate(pre)]
        return [ad.dot(list(dec.W1[:, i]), back) - z[i] for i in range(self.dim)]


def toy_decoder_target(decoder: ToyDecoder, x: Sequence[int]) -> ToyDecoderTarget:
    return ToyDecoderTarget(decoder, x)
