"""Acceptance criteria 1-10. Run with ``pytest tests/test_acceptance.py -s`` to see the report lines."""

import math
import time

import numpy as np
import pytest

from mcvi import autodiff as ad
from mcvi import exact
from mcvi.bound import (
    AnnealingSchedule,
    annealed_bound,
    hvi_lower_bound,
    importance_sampling_log_marginal,
    mcmc_lower_bound,
    mh_lower_bound,
)
from mcvi.distributions import ConditionalLinearGaussian, DiagGaussian, linear_gaussian_from
from mcvi.experiments import (
    TOY_GRID,
    GaussianChain,
    betabinom_model,
    leapfrog_sweep,
    sequential_gaussian_factory,
    toy_decoder_problem,
)
from mcvi.markov import (
    HMCParams,
    MHInverse,
    leapfrog,
    overrelax_step,
    reverse_sweep_log_density,
)
from mcvi.noise import FixedNoise, NoiseSource
from mcvi.optimize import TrainConfig, constant, mcvi_optimize, run_chain, sequential_mcvi, value_and_grad
from mcvi.targets import bivariate_gaussian_target, standard_normal_target

TARGET = bivariate_gaussian_target(1.0, 10.0)
LOG_Z = math.log(10 * math.pi)


def report(n, ok, detail):
    print(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    assert ok, f"criterion {n}: {detail}"


def mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def train_gauss(T, kind, seed=1, iterations=None):
    model = GaussianChain(T=T, kind=kind, seed=seed)
    iters = iterations or (600 if kind == "overrelax" else 50)
    cfg = TrainConfig(iterations=iters, draws=16, seed=seed, step_size=0.01, frozen=model.frozen)
    res = mcvi_optimize(model.estimate, model.initial_params(), cfg, refit=model.refit)
    return model, res.params


# -- 1 ---------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_1_overrelaxation_optimum():
    t0 = time.perf_counter()
    model, params = train_gauss(10, "overrelax")
    elapsed = time.perf_counter() - t0
    alpha = float(np.tanh(params["alpha_raw"]))
    report(1, -0.81 <= alpha <= -0.71 and elapsed < 300,
           f"optimized alpha = {alpha:.4f} (target [-0.81, -0.71]), {elapsed:.1f} s")


# -- 2 ---------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_2_overrelaxation_beats_gibbs():
    rows = {}
    for T in (2, 5, 10):
        rows[T] = {}
        for kind in ("overrelax", "gibbs"):
            model, params = train_gauss(T, kind, seed=10 + T)
            rows[T][kind] = model.exact_bound(params)
    better = all(rows[T]["overrelax"] > rows[T]["gibbs"] for T in rows)
    rising = all(rows[2][k] < rows[5][k] < rows[10][k] < LOG_Z for k in ("overrelax", "gibbs"))
    close = LOG_Z - rows[10]["overrelax"] < 0.1
    detail = "; ".join(f"T={T}: overrelax {r['overrelax']:.4f} vs gibbs {r['gibbs']:.4f}" for T, r in rows.items())
    report(2, better and rising and close, f"{detail}; log Z = {LOG_Z:.4f}, T=10 gap {LOG_Z - rows[10]['overrelax']:.4f}")


# -- 3 ---------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_3_betabinomial_leapfrog_sweep():
    t0 = time.perf_counter()
    kl, r2 = [], []
    for k in (0, 1, 2):
        model = betabinom_model(k, seed=1)
        cfg = TrainConfig(iterations=2000, draws=16, seed=1, step_size=0.01, final_step_size=0.0005)
        params = mcvi_optimize(model.estimate, model.initial_params(), cfg).params
        ev = model.evaluate(params)
        kl.append(ev["exact_kl"])
        r2.append(ev["r2"])
    elapsed = time.perf_counter() - t0
    ok = kl[1] < kl[0] and kl[2] < kl[1] and r2[0] <= r2[1] <= r2[2] and elapsed < 900
    report(3, ok, "KL " + ", ".join(f"{v:.4f}" for v in kl) + "; R^2 " + ", ".join(f"{v:.4f}" for v in r2)
           + f" for 0, 1, 2 leapfrog steps; {elapsed:.0f} s")


# -- 4 ---------------------------------------------------------------------------------


def test_criterion_4_unbiasedness():
    model = GaussianChain(T=10, kind="overrelax", seed=4)
    params = model.initial_params()
    params["alpha_raw"] = np.array(np.arctanh(-0.76))
    params = model.refit(params)
    exact_value = model.exact_bound(params)
    with ad.Tape():
        v = model.estimate(constant(params), NoiseSource(44, 100_000)).numeric()
    m, se = mean_se(v)
    report(4, abs(m - exact_value) < 3 * se,
           f"sample mean {m:.5f} vs exact {exact_value:.5f}, |diff| = {abs(m - exact_value) / se:.2f} SE")


# -- 5 ---------------------------------------------------------------------------------


def _mh_parts(d=2):
    prop = ConditionalLinearGaussian([np.eye(d).tolist()], [0.0] * d, [math.log(1.5)] * d)
    inv = MHInverse([0.1] * d, 0.2, ConditionalLinearGaussian([np.eye(d).tolist()], [0.0] * d, [math.log(1.5)] * d))
    return prop, inv


def _bound_samples():
    """(name, samples, log Z) for every estimator variant on known-normalizer targets."""
    n = 50_000
    out = []
    for kind, inverse, tied, mix in [("gibbs", "axiswise", False, 1), ("overrelax", "axiswise", False, 1),
                                     ("overrelax", "linear", False, 1), ("overrelax", "axiswise", True, 1),
                                     ("overrelax", "axiswise", False, 3)]:
        model = GaussianChain(T=4, kind=kind, inverse=inverse, tied_inverse=tied, mixture_k=mix,
                              init_mean=(1.0, -1.0), init_var=2.0, seed=5)
        p = model.initial_params()
        if kind == "overrelax":
            p["alpha_raw"] = np.array(-0.8)
        p = model.refit(p)
        with ad.Tape():
            v = model.estimate(constant(p), NoiseSource(50, n)).numeric()
        out.append((f"{kind} chain, {inverse}{' tied' if tied else ''} inverse, K={mix}", v, LOG_Z))
    rng = np.random.default_rng(0)
    q = ConditionalLinearGaussian([rng.normal(0, 0.2, (2, 2)).tolist(), rng.normal(0, 0.2, (2, 2)).tolist()],
                                  [0.0, 0.0], [0.0, 0.0])
    r = ConditionalLinearGaussian([rng.normal(0, 0.2, (2, 2)).tolist(), rng.normal(0, 0.2, (2, 2)).tolist()],
                                  [0.0, 0.0], [0.5, 0.5])
    v = hvi_lower_bound(TARGET, DiagGaussian([0.0, 0.0], [1.0, 1.0]), [q, q], [r, r],
                        HMCParams(math.log(0.3), [0.0, 0.0], 3), NoiseSource(51, n)).numeric()
    out.append(("hamiltonian chain", v, LOG_Z))
    prop, inv = _mh_parts()
    v = mh_lower_bound(TARGET, DiagGaussian([0.0, 0.0], [1.0, 1.5]), prop, inv, NoiseSource(52, n)).numeric()
    out.append(("Metropolis-Hastings step", v, LOG_Z))
    v = annealed_bound(TARGET, DiagGaussian([0.0, 0.0], [0.5, 0.5]), AnnealingSchedule.linear(10),
                       NoiseSource(53, n)).numeric()
    out.append(("annealed", v, LOG_Z))
    sn = standard_normal_target(2)
    v = mcmc_lower_bound(sn, DiagGaussian([0.3, 0.0], [0.2, -0.2]), [], [], NoiseSource(54, n)).numeric()
    out.append(("plain ELBO, standard normal", v, sn.known_log_normalizer))
    factory = sequential_gaussian_factory(TARGET)
    specs = [factory(t) for t in (1, 2)]
    step_params = [dict(s.params, alpha_raw=np.array(-0.7)) for s in specs]
    v = run_chain(TARGET, DiagGaussian([0.0, 0.0], [1.0, 1.0]), specs, step_params, NoiseSource(55, n)).numeric()
    out.append(("sequentially built chain", v, LOG_Z))
    is_runs = [importance_sampling_log_marginal(TARGET, DiagGaussian([0.0, 0.0], [1.0, 1.0]), 50, rng=i)
               for i in range(400)]
    out.append(("importance sampling, n=50", np.array(is_runs), LOG_Z))
    return out


def test_criterion_5_bounds_never_exceed_log_z():
    lines, ok = [], True
    for name, v, log_z in _bound_samples():
        m, se = mean_se(v)
        good = m <= log_z + 3 * se
        ok &= good
        lines.append(f"{name}: {m:.4f} <= {log_z:.4f} + 3*{se:.4f}" + ("" if good else " VIOLATED"))
    report(5, ok, f"{len(lines)} estimators; " + "; ".join(lines))


# -- 6 ---------------------------------------------------------------------------------


def test_criterion_6_detailed_balance_and_leapfrog():
    rng = np.random.default_rng(6)
    worst_db = 0.0
    for alpha in (0.0, -0.76, 0.5):
        for order in ((0, 1), (1, 0)):
            z = list(rng.normal(0, 6, (2, 1000)))
            z_new, log_q = overrelax_step(TARGET, z, alpha, list(rng.standard_normal((2, 1000))), order)
            ratio = (TARGET.log_joint(z_new) + reverse_sweep_log_density(TARGET, z, z_new, alpha, order)
                     - TARGET.log_joint(z) - log_q)
            worst_db = max(worst_db, float(np.max(np.abs(ratio))))
    t = toy_decoder_problem()
    worst_rev, worst_det = 0.0, 0.0
    for target, d in ((TARGET, 2), (t, 1)):
        p = HMCParams(math.log(0.2), [0.3] * d, 6)
        for _ in range(10):
            z, v = list(rng.normal(size=d)), list(rng.normal(size=d))
            z1, v1 = leapfrog(target, z, v, p)
            zb, vb = leapfrog(target, z1, [-x for x in v1], p)
            worst_rev = max(worst_rev, float(np.max(np.abs(np.array(zb) - z))),
                            float(np.max(np.abs(np.array(vb) + v))))
            x0, h = np.array(z + v, dtype=float), 1e-6
            J = np.empty((2 * d, 2 * d))
            for k in range(2 * d):
                e = np.zeros(2 * d)
                e[k] = h
                a = np.concatenate(leapfrog(target, list((x0 + e)[:d]), list((x0 + e)[d:]), p))
                b = np.concatenate(leapfrog(target, list((x0 - e)[:d]), list((x0 - e)[d:]), p))
                J[:, k] = (a - b) / (2 * h)
            worst_det = max(worst_det, abs(abs(np.linalg.det(J)) - 1.0))
    ok = worst_db < 1e-10 and worst_rev < 1e-8 and worst_det < 1e-6
    report(6, ok, f"max detailed-balance residual {worst_db:.2e}; leapfrog reversal error {worst_rev:.2e}; "
                  f"max ||det J| - 1| {worst_det:.2e}")


# -- 7 ---------------------------------------------------------------------------------


def _perturb(params, rng, scale=0.3):
    return {k: np.asarray(v, dtype=float) + rng.normal(0, scale, np.shape(v)) for k, v in params.items()}


def _gauss_estimators():
    out = []
    for kind, mix, inverse in [("overrelax", 1, "axiswise"), ("gibbs", 1, "axiswise"), ("overrelax", 2, "axiswise"),
                               ("overrelax", 1, "linear")]:
        model = GaussianChain(T=3, kind=kind, mixture_k=mix, inverse=inverse, init_mean=(0.5, -0.5),
                              init_var=1.0, seed=7)
        base = model.refit(model.initial_params())
        if kind == "overrelax":
            base["alpha_raw"] = np.array(-0.6)
        out.append((f"{kind} chain ({inverse} inverse, K={mix})", model.estimate, base))
    return out


def _hvi_estimators():
    rng = np.random.default_rng(1)

    def bivariate(p, noise):
        q = linear_gaussian_from(p, "q.", 2)
        r = linear_gaussian_from(p, "r.", 2)
        return hvi_lower_bound(TARGET, DiagGaussian(p["m"], p["s"]), [q], [r],
                               HMCParams(p["log_eps"], p["log_mass"], 3), noise)

    base = {"m": np.zeros(2), "s": np.ones(2) * 0.5, "log_eps": np.array(math.log(0.3)), "log_mass": np.zeros(2)}
    for key in ("q.", "r."):
        base[key + "W0"] = rng.normal(0, 0.2, (2, 2))
        base[key + "W1"] = rng.normal(0, 0.2, (2, 2))
        base[key + "b"] = np.zeros(2)
        base[key + "log_std"] = np.zeros(2)
    from mcvi.experiments import toy_model

    toy = toy_model(2, target=toy_decoder_problem())
    return [("hamiltonian chain, bivariate", bivariate, base),
            ("hamiltonian chain, toy decoder with softplus momentum nets", toy.estimate, toy.initial_params())]


def _other_estimators():
    def mh(p, noise):
        prop = linear_gaussian_from(p, "prop.", 1)
        inv = MHInverse(p["acc_w"], p["acc_b"], linear_gaussian_from(p, "pt.", 1))
        return mh_lower_bound(TARGET, DiagGaussian(p["m"], p["s"]), prop, inv, noise)

    mh_base = {"m": np.zeros(2), "s": np.array([1.0, 1.5]), "prop.W0": np.eye(2), "prop.b": np.zeros(2),
               "prop.log_std": np.full(2, 0.4), "acc_w": np.array([0.1, -0.1]), "acc_b": np.array(0.3),
               "pt.W0": np.eye(2), "pt.b": np.zeros(2), "pt.log_std": np.full(2, 0.4)}

    def annealed(p, noise):
        return annealed_bound(TARGET, DiagGaussian(p["m"], p["s"]), AnnealingSchedule.linear(4), noise)

    factory = sequential_gaussian_factory(TARGET)
    specs = [factory(1), factory(2)]
    first = dict(specs[0].params, alpha_raw=np.array(-0.5))
    q0 = DiagGaussian([0.0, 0.0], [0.5, 0.5])

    def sequential_local(p, noise):
        est = run_chain(TARGET, q0, specs, [first, specs[1].params], noise, lifted_last=p)
        est.value = est.per_step_terms[-1]
        return est

    seq_base = dict(specs[1].params, alpha_raw=np.array(-0.3))
    return [("Metropolis-Hastings step", mh, mh_base),
            ("annealed", annealed, {"m": np.array([0.2, -0.1]), "s": np.array([0.4, 0.6])}),
            ("sequential local term", sequential_local, seq_base)]


def _fd_check(estimator, params, U, h=1e-5):
    value, grad, _ = value_and_grad(estimator, params, FixedNoise(U))
    worst = 0.0
    for name, arr in params.items():
        for idx in np.ndindex(np.shape(arr)):
            up, dn = dict(params), dict(params)
            a, b = np.array(arr, dtype=float), np.array(arr, dtype=float)
            a[idx] += h
            b[idx] -= h
            up[name], dn[name] = a, b
            with ad.Tape():
                fu = float(np.mean(estimator(constant(up), FixedNoise(U)).numeric()))
                fd_ = float(np.mean(estimator(constant(dn), FixedNoise(U)).numeric()))
            fd = (fu - fd_) / (2 * h)
            g = float(np.asarray(grad[name])[idx])
            worst = max(worst, abs(g - fd) / max(abs(fd), 1e-3))
    return worst


def test_criterion_7_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    U = rng.standard_normal((64, 8))
    lines, ok = [], True
    for name, est, base in _gauss_estimators() + _hvi_estimators() + _other_estimators():
        worst = 0.0
        for _ in range(20):
            worst = max(worst, _fd_check(est, _perturb(base, rng, 0.2), U))
        ok &= worst < 1e-4
        lines.append(f"{name}: max rel err {worst:.1e}")
    report(7, ok, "20 parameter points each; " + "; ".join(lines))


# -- 8 ---------------------------------------------------------------------------------


def test_criterion_8_annealed_beats_elbo():
    lines, ok = [], True
    # a fixed broad q0 and the best mean-field Gaussian (variances 1 / P_ii)
    P = np.array(TARGET.P, dtype=float)
    for label, q0 in (("q0 = N(0, I)", DiagGaussian([0.0, 0.0], [0.0, 0.0])),
                      ("q0 = mean-field optimum", DiagGaussian([0.0, 0.0], list(-0.5 * np.log(np.diag(P)))))):
        est = annealed_bound(TARGET, q0, AnnealingSchedule.linear(10), NoiseSource(8, 50_000))
        # paired T=0 ELBO, evaluated at the chain's own starting draw z_0
        z0 = est.states[0]
        elbo = ad.value_of(TARGET.log_joint(z0)) - ad.value_of(q0.log_pdf(z0))
        diff = est.numeric() - np.asarray(elbo, dtype=float)
        m, se = mean_se(diff)
        ok &= m >= 3 * se
        lines.append(f"{label}: annealed - ELBO = {m:.4f} ({m / se:.1f} paired SE)")
    report(8, ok, "; ".join(lines))


# -- 9 ---------------------------------------------------------------------------------


def test_criterion_9_sequential_telescoping():
    q0 = DiagGaussian([-10.0, -10.0], [0.5 * math.log(1e-10)] * 2)
    factory = sequential_gaussian_factory(TARGET)
    T = 5
    res = sequential_mcvi(TARGET, q0, factory, T, TrainConfig(iterations=200, draws=16, seed=9, step_size=0.01,
                                                               frozen=("r.",)), n_eval=20_000)
    specs = [factory(t) for t in range(1, T + 1)]
    full = run_chain(TARGET, q0, specs, res.step_params, NoiseSource(99, 20_000)).numeric()
    fm, fse = mean_se(full)
    parts = res.initial[0] + sum(g for g, _ in res.gains)
    se = math.sqrt(res.initial[1] ** 2 + sum(s * s for _, s in res.gains) + fse**2)
    telescopes = abs(fm - parts) < 3 * se
    gains_ok = all(g >= -2 * s for g, s in res.gains)
    gains = ", ".join(f"{g:.3f}+/-{s:.3f}" for g, s in res.gains)
    report(9, telescopes and gains_ok,
           f"T=0 bound + gains = {parts:.4f}, joint chain = {fm:.4f} (|diff| {abs(fm - parts) / se:.2f} SE); "
           f"gains {gains}")


# -- 10 --------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_10_toy_decoder_bias_reduction():
    t0 = time.perf_counter()
    target = toy_decoder_problem()
    log_z = exact.log_normalizer(target, TOY_GRID)
    cfg = TrainConfig(iterations=3000, draws=16, seed=1, step_size=0.01, final_step_size=0.0005)
    trained = leapfrog_sweep(target, range(5), cfg, momentum="net", grid=TOY_GRID)
    # one importance-sampled reference, checked against quadrature
    best_model, best_params = trained[-1]
    cp = constant(best_params)
    is_logp = importance_sampling_log_marginal(target, lambda noise: best_model.estimate(cp, noise), 100_000, rng=10)
    vals = []
    for model, params in trained:
        with ad.Tape():
            vals.append(model.estimate(constant(params), NoiseSource(11, 100_000)).numeric())
    gaps = [is_logp - v.mean() for v in vals]
    steps = [mean_se(vals[k + 1] - vals[k]) for k in range(4)]
    verified = abs(is_logp - log_z) < 0.05
    monotone = all(gaps[k + 1] < gaps[k] for k in range(4))
    elapsed = time.perf_counter() - t0
    report(10, verified and monotone,
           f"IS log p(x) {is_logp:.4f} (quadrature {log_z:.4f}); gaps "
           + ", ".join(f"{g:.4f}" for g in gaps) + " for 0..4 leapfrog steps; paired decreases "
           + ", ".join(f"{m:.4f}+/-{s:.4f}" for m, s in steps) + f"; {elapsed:.0f} s")
