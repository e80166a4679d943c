"""Experiment runner: ``mcvi run`` and ``mcvi sweep``.

Configs are flat ``key = value`` text files (``#`` starts a comment).
Command-line ``--set key=value`` pairs override file entries. The seed is
mandatory. Every run writes

* ``results.csv``: iteration, smoothed_bound, exact_bound, exact_kl, r2
  (blank where no oracle exists), one row per evaluation tick;
* ``timing.csv``: wall-clock seconds per tick (kept apart so that
  ``results.csv`` is byte-identical across reruns);
* ``params.txt``: final parameters and summary quantities;
* ``chart.svg``: a line chart drawn from ``results.csv``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import exact
from .bound import importance_sampling_log_marginal
from .distributions import DiagGaussian
from .experiments import (
    AnnealedGaussian,
    GaussianChain,
    betabinom_model,
    sequential_gaussian_factory,
    toy_decoder_problem,
    toy_model,
)
from .noise import FixedNoise, NoiseSource
from .optimize import OptimizeResult, TrainConfig, constant, mcvi_optimize, run_chain, sequential_mcvi
from .targets import bivariate_gaussian_target

log = logging.getLogger("mcvi")

EXPERIMENTS = ("gauss-gibbs", "gauss-overrelax", "betabinom-hvi", "toy-decoder-hvi", "annealed-gauss",
               "sequential-gauss")
SWEEP_AXES = {"T": "T", "leapfrog_steps": "leapfrog_steps", "leapfrog": "leapfrog_steps",
              "mixture_k": "mixture_k", "K": "mixture_k"}
COLUMNS = ("iteration", "smoothed_bound", "exact_bound", "exact_kl", "r2")


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# name -> (parser, check, default)
FIELDS = {
    "experiment": (str, lambda v: v in EXPERIMENTS, None),
    "seed": (int, lambda v: v >= 0, None),
    "T": (int, lambda v: 0 <= v <= 200, 10),
    "leapfrog_steps": (int, lambda v: 0 <= v <= 100, 1),
    "momentum": (str, lambda v: v in ("linear", "simple", "net"), None),
    "inverse": (str, lambda v: v in ("axiswise", "linear"), "axiswise"),
    "tied_inverse": (_bool, lambda v: True, False),
    "mixture_k": (int, lambda v: v >= 1, 1),
    "iterations": (int, lambda v: v >= 1, None),
    "draws": (int, lambda v: v >= 1, 16),
    "step_size": (float, lambda v: 0 < v < 10, None),
    "final_step_size": (float, lambda v: 0 < v < 10, None),
    "eval_every": (int, lambda v: v >= 1, None),
    "smooth_window": (int, lambda v: v >= 1, 50),
    "sigma1": (float, lambda v: v > 0, 1.0),
    "sigma2": (float, lambda v: v > 0, 10.0),
    "toy_seed": (int, lambda v: v >= 0, 3),
    "n_eval": (int, lambda v: v >= 2, 20000),
}

# per-experiment defaults for fields left as None above
DEFAULTS = {
    "gauss-gibbs": {"iterations": 200, "step_size": 0.01, "eval_every": 50},
    "gauss-overrelax": {"iterations": 600, "step_size": 0.01, "eval_every": 100},
    "betabinom-hvi": {"iterations": 2000, "step_size": 0.01, "eval_every": 2000, "momentum": "linear"},
    "toy-decoder-hvi": {"iterations": 3000, "step_size": 0.01, "eval_every": 1000, "momentum": "net",
                        "final_step_size": 0.0005},
    "annealed-gauss": {"iterations": 500, "step_size": 0.01, "eval_every": 100},
    "sequential-gauss": {"iterations": 200, "step_size": 0.01, "eval_every": 200},
}


def parse_config_text(text: str) -> dict:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        raw[key] = val
    return raw


def build_config(raw: dict) -> dict:
    """Validate and type a raw key/value mapping; fills defaults."""
    unknown = sorted(set(raw) - set(FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = {}
    for key, (parse, check, default) in FIELDS.items():
        if key in raw:
            try:
                val = parse(raw[key]) if isinstance(raw[key], str) else raw[key]
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
            if not check(val):
                raise ConfigError(f"{key}: invalid value {raw[key]!r}")
            cfg[key] = val
        else:
            cfg[key] = default
    if cfg["experiment"] is None:
        raise ConfigError("experiment is required (one of: " + ", ".join(EXPERIMENTS) + ")")
    if cfg["seed"] is None:
        raise ConfigError("seed is required (in the config or via --seed)")
    for key, val in DEFAULTS[cfg["experiment"]].items():
        if cfg[key] is None:
            cfg[key] = val
    exp = cfg["experiment"]
    if exp.startswith("gauss-") and not 1 <= cfg["mixture_k"] <= cfg["T"] + 1:
        raise ConfigError("mixture_k must lie in 1 .. T+1")
    if exp in ("betabinom-hvi", "toy-decoder-hvi") and "T" in raw and cfg["T"] != 1:
        raise ConfigError("the Hamiltonian experiments use a single transition (T = 1)")
    if exp in ("annealed-gauss", "sequential-gauss") and cfg["T"] < 1:
        raise ConfigError(f"{exp} needs T >= 1")
    return cfg


def load_config(path, overrides: dict | None = None) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    raw = parse_config_text(text)
    raw.update(overrides or {})
    return build_config(raw)


# -- experiments --------------------------------------------------------------------


@dataclass
class RunResult:
    rows: list  # dicts keyed by COLUMNS
    timing: list  # (iteration, seconds)
    params: dict
    summary: dict


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else f"{v:.10g}"


def _train(model, cfg, evaluate) -> RunResult:
    rows, timing = [], []
    t0 = time.perf_counter()
    train = TrainConfig(iterations=cfg["iterations"], draws=cfg["draws"], seed=cfg["seed"],
                        eval_every=cfg["eval_every"], step_size=cfg["step_size"], frozen=model.frozen,
                        final_step_size=cfg["final_step_size"])

    def tick(it, params, trace):
        smoothed = float(np.mean(trace[-cfg["smooth_window"]:]))
        row = {"iteration": it, "smoothed_bound": smoothed}
        row.update(evaluate(params))
        rows.append(row)
        timing.append((it, time.perf_counter() - t0))
        log.info("iteration %d: smoothed bound %.5f", it, smoothed)

    res: OptimizeResult = mcvi_optimize(model.estimate, model.initial_params(), train, refit=model.refit,
                                        callback=tick)
    summary = dict(model.summary(res.params))
    summary["failed_draws"] = res.failures
    return RunResult(rows, timing, res.params, summary)


def _gauss(cfg) -> RunResult:
    kind = "gibbs" if cfg["experiment"] == "gauss-gibbs" else "overrelax"
    model = GaussianChain(T=cfg["T"], kind=kind, sigmas=(cfg["sigma1"], cfg["sigma2"]), inverse=cfg["inverse"],
                          tied_inverse=cfg["tied_inverse"], mixture_k=cfg["mixture_k"], seed=cfg["seed"])

    def evaluate(params):
        ev = model.evaluate(params)
        return {"exact_bound": ev["exact_bound"], "exact_kl": ev["exact_kl"], "r2": ev.get("r2")}

    out = _train(model, cfg, evaluate)
    out.summary["log_normalizer"] = model.target.known_log_normalizer
    return out


def _hamiltonian(cfg, model, n_eval) -> RunResult:
    def evaluate(params):
        ev = model.evaluate(params)
        return {"exact_bound": None, "exact_kl": ev["exact_kl"], "r2": ev.get("r2")}

    out = _train(model, cfg, evaluate)
    cp = constant(out.params)
    ev = model.evaluate(out.params)
    with ad.Tape():
        vals = model.estimate(cp, NoiseSource(np.random.default_rng([cfg["seed"], 1]), n_eval)).numeric()
    out.summary.update({"log_normalizer": ev["log_z"], "bound_mean": float(vals.mean()),
                        "bound_se": float(vals.std(ddof=1) / math.sqrt(vals.size)),
                        "marginal_elbo": ev["marginal_elbo"]})
    out.summary["is_log_marginal"] = importance_sampling_log_marginal(
        model.target, lambda noise: model.estimate(cp, noise), n_eval, rng=np.random.default_rng([cfg["seed"], 2]))
    return out


def _betabinom(cfg) -> RunResult:
    return _hamiltonian(cfg, betabinom_model(cfg["leapfrog_steps"], cfg["momentum"], seed=cfg["seed"]), cfg["n_eval"])


def _toy(cfg) -> RunResult:
    model = toy_model(cfg["leapfrog_steps"], seed=cfg["seed"], target=toy_decoder_problem(cfg["toy_seed"]),
                      momentum=cfg["momentum"])
    return _hamiltonian(cfg, model, cfg["n_eval"])


def _annealed(cfg) -> RunResult:
    model = AnnealedGaussian(T=cfg["T"], sigmas=(cfg["sigma1"], cfg["sigma2"]))

    def evaluate(params):
        return {"exact_bound": model.evaluate(params)["exact_bound"], "exact_kl": None, "r2": None}

    out = _train(model, cfg, evaluate)
    cp = constant(out.params)
    elbo = exact.quadratic_expectation(lambda u: model.elbo(cp, FixedNoise(u)).numeric(), 2)
    out.summary.update({"log_normalizer": model.target.known_log_normalizer, "q0_elbo": elbo})
    return out


def _sequential(cfg) -> RunResult:
    target = bivariate_gaussian_target(cfg["sigma1"], cfg["sigma2"])
    q0 = DiagGaussian([-10.0, -10.0], [0.5 * math.log(1e-10)] * 2)
    factory = sequential_gaussian_factory(target)
    train = TrainConfig(iterations=cfg["iterations"], draws=cfg["draws"], seed=cfg["seed"],
                        eval_every=cfg["iterations"], step_size=cfg["step_size"], frozen=("r.",),
                        final_step_size=cfg["final_step_size"])
    t0 = time.perf_counter()
    res = sequential_mcvi(target, q0, factory, cfg["T"], train, n_eval=cfg["n_eval"])
    specs = [factory(t) for t in range(1, cfg["T"] + 1)]
    rows, timing = [], []
    running = res.initial[0]
    for t, (gain, _) in enumerate(res.gains, start=1):
        running += gain
        step_params = [constant(p) for p in res.step_params[:t]]

        def chain_value(u, _t=t, _sp=step_params):
            noise = FixedNoise(u)
            return run_chain(target, q0, specs[:_t], _sp, noise).numeric()

        eb = exact.quadratic_expectation(chain_value, 2 + 2 * t)
        rows.append({"iteration": t * cfg["iterations"], "smoothed_bound": running, "exact_bound": eb,
                     "exact_kl": None, "r2": None})
        timing.append((t * cfg["iterations"], time.perf_counter() - t0))
    params = {f"step{t}.{k}": v for t, p in enumerate(res.step_params, start=1) for k, v in p.items()}
    summary = {"initial_bound": res.initial[0], "gains": [g for g, _ in res.gains],
               "gain_se": [s for _, s in res.gains], "alphas": [float(np.tanh(p["alpha_raw"])) for p in res.step_params],
               "log_normalizer": target.known_log_normalizer}
    return RunResult(rows, timing, params, summary)


RUNNERS = {"gauss-gibbs": _gauss, "gauss-overrelax": _gauss, "betabinom-hvi": _betabinom,
           "toy-decoder-hvi": _toy, "annealed-gauss": _annealed, "sequential-gauss": _sequential}


def execute(cfg: dict) -> RunResult:
    return RUNNERS[cfg["experiment"]](cfg)


# -- output ---------------------------------------------------------------------------


def write_rows(path: Path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def read_rows(path: Path) -> tuple[list, list]:
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [dict(zip(header, line)) for line in r]


def _value_text(v) -> str:
    if isinstance(v, np.ndarray) or isinstance(v, (list, tuple)):
        return "[" + ", ".join(_value_text(x) for x in np.asarray(v, dtype=float).ravel()) + "]" + (
            f"  # shape {tuple(np.shape(v))}" if np.ndim(v) > 1 else "")
    if isinstance(v, (float, np.floating)):
        return _fmt(v)
    return str(v)


def write_params(path: Path, cfg: dict, result: RunResult) -> None:
    lines = ["[config]"]
    lines += [f"{k} = {cfg[k]}" for k in FIELDS if cfg.get(k) is not None]
    lines += ["", "[summary]"]
    lines += [f"{k} = {_value_text(v)}" for k, v in result.summary.items()]
    lines += ["", "[params]"]
    lines += [f"{k} = {_value_text(np.asarray(v, dtype=float))}" for k, v in sorted(result.params.items())]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def svg_chart(series: dict, xlabel: str, ylabel: str, title: str = "", width: int = 640, height: int = 400) -> str:
    """Minimal line chart; ``series`` maps a label to (xs, ys). Non-finite points are skipped."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    pts = {k: [(float(x), float(y)) for x, y in zip(xs, ys) if math.isfinite(float(x)) and math.isfinite(float(y))]
           for k, (xs, ys) in series.items()}
    allp = [p for v in pts.values() for p in v]
    ml, mr, mt, mb = 70, 20, 30, 50
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="18" text-anchor="middle">{title}</text>')
    if allp:
        x0, x1 = min(p[0] for p in allp), max(p[0] for p in allp)
        y0, y1 = min(p[1] for p in allp), max(p[1] for p in allp)
        x1 = x1 if x1 > x0 else x0 + 1.0
        if y1 <= y0:
            y0, y1 = y0 - 0.5, y1 + 0.5
        pw, ph = width - ml - mr, height - mt - mb

        def sx(x):
            return ml + (x - x0) / (x1 - x0) * pw

        def sy(y):
            return mt + (1 - (y - y0) / (y1 - y0)) * ph

        out.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
        for k in range(5):
            xv, yv = x0 + k * (x1 - x0) / 4, y0 + k * (y1 - y0) / 4
            out.append(f'<text x="{sx(xv):.1f}" y="{mt + ph + 16}" text-anchor="middle">{xv:.4g}</text>')
            out.append(f'<text x="{ml - 6}" y="{sy(yv) + 4:.1f}" text-anchor="end">{yv:.4g}</text>')
        for i, (label, p) in enumerate(pts.items()):
            c = colors[i % len(colors)]
            if len(p) > 1:
                path = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in p)
                out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{path}"/>')
            for x, y in p if len(p) <= 30 else []:
                out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2.5" fill="{c}"/>')
            out.append(f'<text x="{ml + 10}" y="{mt + 16 + 15 * i}" fill="{c}">{label}</text>')
    out.append(f'<text x="{width / 2:.1f}" y="{height - 10}" text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="16" y="{height / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {height / 2:.1f})">{ylabel}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _column(rows, key):
    return [float(r[key]) if r.get(key) not in (None, "") else math.nan for r in rows]


def chart_from_csv(csv_path: Path, x: str, ys: list, title: str) -> str:
    _, rows = read_rows(csv_path)
    series = {y: (_column(rows, x), _column(rows, y)) for y in ys}
    return svg_chart(series, x, "nats", title)


def run_to_dir(cfg: dict, out: Path) -> RunResult:
    out.mkdir(parents=True, exist_ok=True)
    result = execute(cfg)
    write_rows(out / "results.csv", COLUMNS, result.rows)
    write_rows(out / "timing.csv", ("iteration", "seconds"),
               [{"iteration": it, "seconds": s} for it, s in result.timing])
    write_params(out / "params.txt", cfg, result)
    (out / "chart.svg").write_text(
        chart_from_csv(out / "results.csv", "iteration", ["smoothed_bound", "exact_bound"], cfg["experiment"]),
        encoding="utf-8")
    return result


# -- sweep ------------------------------------------------------------------------------


def point_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _sweep_point(args):
    cfg, out = args
    result = run_to_dir(cfg, Path(out))
    last = result.rows[-1] if result.rows else {}
    return {k: last.get(k) for k in COLUMNS[1:]}


def sweep(cfg: dict, axis: str, values: list, out: Path, jobs: int = 1) -> list:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"cannot sweep {axis!r}; choose one of T, leapfrog_steps, mixture_k")
    if not values:
        raise ConfigError("sweep needs at least one value")
    key = SWEEP_AXES[axis]
    tasks = []
    for i, v in enumerate(values):
        raw = {k: val for k, val in cfg.items() if val is not None}
        raw[key] = v
        raw["seed"] = point_seed(cfg["seed"], i)
        tasks.append((build_config(raw), str(out / f"point_{i:03d}")))
    out.mkdir(parents=True, exist_ok=True)
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            finals = list(pool.map(_sweep_point, tasks))
    else:
        finals = [_sweep_point(t) for t in tasks]
    rows = [{key: v, "seed": t[0]["seed"], **f} for v, t, f in zip(values, tasks, finals)]
    write_rows(out / "sweep.csv", (key, "seed") + COLUMNS[1:], rows)
    ys = ["smoothed_bound", "exact_bound"] if cfg["experiment"] not in ("betabinom-hvi",) else ["exact_kl", "r2"]
    (out / "chart.svg").write_text(chart_from_csv(out / "sweep.csv", key, ys, f"{cfg['experiment']} vs {key}"),
                                   encoding="utf-8")
    return rows


def _parse_values(text: str) -> list:
    vals = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if ".." in tok:
            lo, hi = tok.split("..", 1)
            vals.extend(range(int(lo), int(hi) + 1))
        else:
            vals.append(int(tok))
    return vals


# -- entry point ------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mcvi", description="Markov chain variational inference experiments")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="key = value config file")
        sp.add_argument("--seed", type=int, help="random seed (overrides the config)")
        sp.add_argument("--out", default="mcvi-out", help="output directory")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config entry")
        sp.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("run", help="run one experiment"))
    sw = sub.add_parser("sweep", help="run one experiment over a list of values")
    common(sw)
    sw.add_argument("--axis", required=True, help="T, leapfrog_steps or mixture_k")
    sw.add_argument("--values", required=True, help="comma-separated integers, a..b ranges allowed")
    sw.add_argument("--jobs", type=int, default=1, help="parallel sweep points")
    return p


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            overrides[k.strip()] = v.strip()
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        cfg = load_config(args.config, overrides)
        out = Path(args.out)
        if args.command == "run":
            result = run_to_dir(cfg, out)
            last = result.rows[-1] if result.rows else {}
            print(f"{cfg['experiment']}: final smoothed bound {_fmt(last.get('smoothed_bound'))}; wrote {out}")
        else:
            try:
                values = _parse_values(args.values)
            except ValueError:
                raise ConfigError(f"--values must be integers, got {args.values!r}") from None
            if args.jobs < 1:
                raise ConfigError("--jobs must be >= 1")
            rows = sweep(cfg, args.axis, values, out, args.jobs)
            print(f"{cfg['experiment']}: {len(rows)} sweep points; wrote {out / 'sweep.csv'}")
    except ConfigError as exc:
        print(f"mcvi: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: report and exit 1
        print(f"mcvi: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
