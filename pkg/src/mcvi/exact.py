"""Ground-truth oracles for problems with at most two latent dimensions.

Densities are tabulated on uniform trapezoid grids. The marginal of a
one-step Hamiltonian approximation is obtained by mapping every output
(z_1, v_1) node back through the reversed dynamics (unit Jacobian) and
integrating the momentum out on a second grid.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import logsumexp

from .distributions import ConditionalLinearGaussian, DiagGaussian
from .markov import DynamicsDivergenceError, HMCParams, _features, _leapfrog


class GridTooSmallError(ValueError):
    pass


class UndefinedMeasureError(ValueError):
    pass


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class Grid:
    """Tensor-product uniform grid with trapezoid weights (1 or 2 axes)."""

    ranges: tuple
    counts: tuple

    def __post_init__(self):
        if len(self.ranges) != len(self.counts) or not 1 <= len(self.counts) <= 2:
            raise ValueError("grids have one or two axes")
        if min(self.counts) < 32:
            raise ValueError("each axis needs at least 32 points")

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.ranges, self.counts)]

    @property
    def shape(self) -> tuple:
        return tuple(self.counts)

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def weights(self) -> np.ndarray:
        ws = []
        for (lo, hi), n in zip(self.ranges, self.counts):
            w = np.full(n, (hi - lo) / (n - 1))
            w[0] *= 0.5
            w[-1] *= 0.5
            ws.append(w)
        out = ws[0]
        for w in ws[1:]:
            out = np.outer(out, w)
        return out.ravel()

    def boundary(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for ax in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[ax] = 0
            mask[tuple(idx)] = True
            idx[ax] = -1
            mask[tuple(idx)] = True
        return mask.ravel()

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.ranges, tuple((n - 1) * factor + 1 for n in self.counts))


def Grid2D(ranges, counts) -> Grid:
    return Grid(tuple(map(tuple, ranges)), tuple(counts))


def _check_boundary(log_f: np.ndarray, grid: Grid, tol: float):
    peak = np.max(log_f)
    edge = np.max(log_f[grid.boundary()])
    if edge - peak > math.log(tol):
        raise GridTooSmallError(
            f"boundary density is {math.exp(edge - peak):.2e} of the peak (limit {tol:.0e}); widen the grid")


def log_normalizer(target, grid: Grid, boundary_tol: float = 1e-4) -> float:
    """log of the trapezoid-rule integral of exp(log_joint)."""
    if target.dim != grid.dim:
        raise ValueError("grid dimension does not match the target")
    log_f = target.log_joint_grid(grid.points())
    _check_boundary(log_f, grid, boundary_tol)
    return float(logsumexp(log_f, b=grid.weights()))


def log_posterior_table(target, grid: Grid, boundary_tol: float = 1e-4) -> np.ndarray:
    """Log of the normalized posterior density at the grid points."""
    log_f = target.log_joint_grid(grid.points())
    _check_boundary(log_f, grid, boundary_tol)
    return log_f - logsumexp(log_f, b=grid.weights())


def posterior_table(target, grid: Grid, boundary_tol: float = 1e-4) -> np.ndarray:
    """Normalized posterior density at the grid points."""
    return np.exp(log_posterior_table(target, grid, boundary_tol))


def log_gaussian_table(mean, cov, grid: Grid) -> np.ndarray:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = grid.points() - mean
    sol = np.linalg.solve(cov, d.T).T
    logdet = np.linalg.slogdet(cov)[1]
    return -0.5 * np.sum(d * sol, axis=1) - 0.5 * logdet - 0.5 * mean.size * math.log(2 * math.pi)


def gaussian_table(mean, cov, grid: Grid) -> np.ndarray:
    return np.exp(log_gaussian_table(mean, cov, grid))


def table_mass(table: np.ndarray, grid: Grid) -> float:
    return float(np.sum(table * grid.weights()))


def marginal_q_density(target, q0: DiagGaussian, momentum_model: ConditionalLinearGaussian, params: HMCParams,
                       grid: Grid, momentum_grid: Grid, chunk: int = 200_000) -> np.ndarray:
    return np.exp(log_marginal_q_density(target, q0, momentum_model, params, grid, momentum_grid, chunk))


def log_marginal_q_density(target, q0: DiagGaussian, momentum_model: ConditionalLinearGaussian, params: HMCParams,
                           grid: Grid, momentum_grid: Grid, chunk: int = 200_000) -> np.ndarray:
    """Log density of z_1 for a one-step Hamiltonian approximation, on ``grid``.

    Parameters must be plain numbers. Each (z_1, v_1) node is mapped back by
    the time-reversed leapfrog to (z_0, v'), where the joint density is
    q0(z_0) q(v' | z_0); the momentum is then integrated out on
    ``momentum_grid``.
    """
    d = target.dim
    if grid.dim != d or momentum_grid.dim != d or q0.dim != d:
        raise ValueError("latent grid, momentum grid and target must share a dimension")
    zs = grid.points()
    vs = momentum_grid.points()
    log_vw = np.log(momentum_grid.weights())
    nz, nv = zs.shape[0], vs.shape[0]
    out = np.empty(nz)
    per = max(1, chunk // nv)
    for start in range(0, nz, per):
        zc = zs[start:start + per]
        m = zc.shape[0]
        z1 = [np.repeat(zc[:, i], nv) for i in range(d)]
        v1 = [-np.tile(vs[:, i], m) for i in range(d)]
        try:
            with np.errstate(all="ignore"):
                z0, vneg, g0 = _leapfrog(target, z1, v1, params)
        except DynamicsDivergenceError as exc:
            raise OracleError(f"dynamics diverged while marginalizing momentum: {exc}") from exc
        v0 = [-v for v in vneg]
        if not all(np.all(np.isfinite(c)) for c in list(z0) + v0):
            raise OracleError("dynamics produced non-finite states")
        log_q = np.asarray(q0.log_pdf(z0), dtype=float)
        log_q = log_q + np.asarray(momentum_model.condition(_features(momentum_model, z0, g0)).log_pdf(v0),
                                   dtype=float)
        out[start:start + m] = logsumexp(log_q.reshape(m, nv) + log_vw, axis=1)
    return out


def _logs(table) -> np.ndarray:
    t = np.asarray(table, dtype=float)
    if np.any(t < 0):
        raise ValueError("density tables must be nonnegative")
    with np.errstate(divide="ignore"):
        return np.log(t)


def exact_kl(q_table: np.ndarray, p_table: np.ndarray, grid: Grid) -> float:
    """sum_i w_i q_i (log q_i - log p_i), with 0 log 0 = 0."""
    return exact_kl_log(_logs(q_table), _logs(p_table), grid)


def exact_kl_log(log_q: np.ndarray, log_p: np.ndarray, grid: Grid) -> float:
    """KL(q || p) from log-density tables; avoids underflow of p in the tails."""
    log_q = np.asarray(log_q, dtype=float)
    log_p = np.asarray(log_p, dtype=float)
    if log_q.shape != log_p.shape:
        raise ValueError("tables must be on the same grid")
    w = grid.weights()
    pos = np.isfinite(log_q)
    if np.any(pos & ~np.isfinite(log_p)):
        return math.inf
    kl = np.sum(w[pos] * np.exp(log_q[pos]) * (log_q[pos] - log_p[pos]))
    return float(max(kl, 0.0))


def r_squared_accuracy(q_table: np.ndarray, p_table: np.ndarray, grid: Grid) -> float:
    return r_squared_log(_logs(q_table), _logs(p_table), grid)


def r_squared_log(log_q: np.ndarray, log_p: np.ndarray, grid: Grid) -> float:
    """Weighted R^2 of the affine least-squares fit of log q on log p.

    Points are weighted by the quadrature weight times q. Returns a value in
    [0, 1]; 1 means log q is an affine function of log p.
    """
    log_q = np.asarray(log_q, dtype=float)
    log_p = np.asarray(log_p, dtype=float)
    keep = np.isfinite(log_q) & np.isfinite(log_p)
    lq, lp = log_q[keep], log_p[keep]
    w = grid.weights()[keep] * np.exp(lq - lq.max())
    w = w / w.sum()
    mq, mp = w @ lq, w @ lp
    var_p = w @ (lp - mp) ** 2
    var_q = w @ (lq - mq) ** 2
    scale = max(1.0, abs(mq), abs(mp)) ** 2
    if var_p <= 1e-14 * scale or var_q <= 1e-14 * scale:
        raise UndefinedMeasureError("log-density has no variance over the grid; R^2 is undefined")
    cov = w @ ((lp - mp) * (lq - mq))
    return float(min(1.0, max(0.0, cov * cov / (var_p * var_q))))


def export_table_csv(path: str | Path, grid: Grid, table: np.ndarray) -> None:
    pts = grid.points()
    names = ["z1", "z2"][: grid.dim] + ["density"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row, val in zip(pts, table):
            w.writerow([f"{x:.10g}" for x in row] + [f"{val:.10g}"])


# -- expectations over primitive noise ---------------------------------------------


def gauss_hermite_expectation(fn: Callable[[np.ndarray], np.ndarray], dim: int, nodes: int = 3) -> float:
    """E[fn(u)] for u ~ N(0, I_dim) by tensor-product Gauss-Hermite quadrature.

    ``fn`` receives a ``(dim, n_points)`` matrix and returns one value per column.
    """
    x, w = hermegauss(nodes)
    w = w / math.sqrt(2 * math.pi)
    pts = np.array(list(itertools.product(x, repeat=dim))).T
    wts = np.prod(np.array(list(itertools.product(w, repeat=dim))), axis=1)
    return float(np.asarray(fn(pts), dtype=float) @ wts)


def quadratic_expectation(fn: Callable[[np.ndarray], np.ndarray], dim: int) -> float:
    """E[fn(u)], u ~ N(0, I), exact when fn is a quadratic polynomial in u.

    Uses f(0) + 1/2 sum_k [f(e_k) + f(-e_k) - 2 f(0)] = f(0) + trace of the quadratic part.
    """
    pts = np.concatenate([np.zeros((dim, 1)), np.eye(dim), -np.eye(dim)], axis=1)
    f = np.asarray(fn(pts), dtype=float)
    f0 = f[0]
    return float(f0 + 0.5 * np.sum(f[1:dim + 1] + f[dim + 1:] - 2 * f0))


# -- linear-Gaussian chains -------------------------------------------------------------


def sweep_moments(P: np.ndarray, h: np.ndarray, mean0, cov0, alphas: Sequence[float], axis_order=(0, 1)):
    """Mean and covariance of z_T for over-relaxed sweeps on exp(-z'Pz/2 + h'z)."""
    m = np.array(mean0, dtype=float)
    S = np.array(cov0, dtype=float)
    d = m.size
    for a in alphas:
        for i in axis_order:
            A = np.eye(d)
            A[i, :] = -(1 - a) * P[i] / P[i, i]
            A[i, i] = a
            c = np.zeros(d)
            c[i] = (1 - a) * h[i] / P[i, i]
            m = A @ m + c
            S = A @ S @ A.T
            S[i, i] += (1 - a * a) / P[i, i]
    return m, S


def gaussian_elbo(mean, cov, P: np.ndarray, h: np.ndarray, const: float = 0.0) -> float:
    """E_q[log p] + H[q] for q = N(mean, cov) and log p = -z'Pz/2 + h'z + const."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    e_logp = -0.5 * (np.trace(P @ cov) + mean @ P @ mean) + h @ mean + const
    ent = 0.5 * np.linalg.slogdet(2 * math.pi * math.e * cov)[1]
    return float(e_logp + ent)
