"""Command-line orchestration: config parsing, model construction, run/emit.

Config files are flat `key = value` lines (dotted keys for sections, `#`
comments).  Outputs are plain CSV/JSON so any plotting stack can consume
them.  Subcommands: fit, compare, meanfield, unilab, recursion, gradvar,
sweep.
"""
from __future__ import annotations

import argparse
import csv
import importlib.resources
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import datasets, diagnostics, meanfield, optimizers, unilab
from .linalg import CholFactor, SparsityPattern
from .targets import GaussianTarget, GlmmModel, LogisticModel, SvModel


class ConfigError(ValueError):
    pass


def parse_config_text(text: str) -> dict:
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def load_config(path) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        cfg = parse_config_text(fh.read())
    cfg["_dir"] = os.path.dirname(os.path.abspath(path))
    return cfg


def _get(cfg, key, default=None, cast=str):
    if key not in cfg:
        if default is None and cast is not str:
            return None
        return default
    v = cfg[key]
    if cast is bool:
        return v.lower() in ("1", "true", "yes")
    return cast(v)


def _path(cfg, key, required=False):
    raw = cfg.get(key)
    if raw is None:
        if required:
            raise ConfigError(f"missing required config key {key}")
        return None
    p = raw if os.path.isabs(raw) else os.path.join(cfg.get("_dir", "."), raw)
    if not os.path.exists(p):
        raise ConfigError(f"file not found: {p} (config key {key})")
    return p


def build_model(cfg: dict):
    kind = _get(cfg, "model.kind")
    if kind is None:
        raise ConfigError("missing required config key model.kind")
    if kind == "gaussian":
        nu = np.loadtxt(_path(cfg, "model.nu_csv", required=True), delimiter=",", ndmin=1)
        lamb = np.loadtxt(_path(cfg, "model.lambda_csv", required=True),
                          delimiter=",", ndmin=2)
        return GaussianTarget(nu, lamb)
    if kind == "logistic":
        sigma0 = _get(cfg, "model.sigma0_sq", 100.0, float)
        if "model.data_libsvm" in cfg:
            x, y = datasets.load_libsvm(_path(cfg, "model.data_libsvm", required=True))
            if _get(cfg, "model.intercept", True, bool):
                import scipy.sparse
                x = scipy.sparse.hstack(
                    [scipy.sparse.csr_matrix(np.ones((x.shape[0], 1))), x]).tocsr()
            return LogisticModel(x, y, sigma0)
        design = datasets.load_csv_design(
            _path(cfg, "model.data_csv", required=True),
            response=_get(cfg, "model.response", "y"),
            intercept=_get(cfg, "model.intercept", True, bool),
        )
        return LogisticModel(design.X, design.y, sigma0)
    if kind == "glmm":
        dataset = _get(cfg, "model.dataset")
        path = _path(cfg, "model.data_csv", required=True)
        if dataset == "epilepsy":
            d = datasets.load_epilepsy(path, _get(cfg, "model.variant", "epi1"))
        elif dataset == "toenail":
            d = datasets.load_toenail(path)
        elif dataset == "polypharmacy":
            d = datasets.load_polypharmacy(path)
        else:
            raise ConfigError(f"unknown glmm dataset {dataset!r}")
        return GlmmModel(d.family, d.X_blocks, d.Z_blocks, d.y_blocks,
                         _get(cfg, "model.sigma_beta_sq", 100.0, float),
                         _get(cfg, "model.sigma_zeta_sq", 100.0, float))
    if kind == "sv":
        y = datasets.load_returns(_path(cfg, "model.rates_csv", required=True))
        return SvModel(y, _get(cfg, "model.sigma0_sq", 10.0, float))
    raise ConfigError(f"unknown model kind {kind!r}")


def fit_config_from(cfg: dict, seed: int) -> optimizers.FitConfig:
    divergence = _get(cfg, "divergence")
    if divergence not in optimizers.DIVERGENCES:
        raise ConfigError(f"divergence must be one of {optimizers.DIVERGENCES}")
    batch = cfg.get("optimizer.batch_size")
    return optimizers.FitConfig(
        divergence=divergence,
        seed=seed,
        max_iter=_get(cfg, "optimizer.max_iter", 60_000, int),
        window=_get(cfg, "optimizer.window", 1000, int),
        batch_size=int(batch) if batch is not None else None,
        adadelta_rho=_get(cfg, "optimizer.adadelta_rho", 0.95, float),
        adadelta_eps=_get(cfg, "optimizer.adadelta_eps", 1e-6, float),
        init_t_scale=_get(cfg, "init.t_scale", 1.0, float),
    )


def run(cfg: dict, seed: int, out_dir: str) -> dict:
    """Fit per the config, write fitresult.json + lb_trace.csv (+ comparison)."""
    model = build_model(cfg)
    fc = fit_config_from(cfg, seed)
    if fc.batch_size is None and fc.divergence in optimizers.ALG2_DIVERGENCES:
        fc.batch_size = optimizers.default_batch_size(model, fc.divergence)
    result = optimizers.fit(model, fc)
    # full config echo so the output alone reproduces the run
    result.config_echo["source"] = {k: v for k, v in cfg.items()
                                    if not k.startswith("_")}

    os.makedirs(out_dir, exist_ok=True)
    fit_path = os.path.join(out_dir, "fitresult.json")
    with open(fit_path, "w") as fh:
        fh.write(result.to_json())
    with open(os.path.join(out_dir, "lb_trace.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window", "lower_bound_mean"])
        for i, v in enumerate(result.lb_trace):
            writer.writerow([i + 1, v])

    ref_key = _path(cfg, "compare.ref_csv")
    if ref_key is not None:
        ref = diagnostics.load_reference_csv(ref_key)
        report = diagnostics.compare(result.state.mu, result.state.factor, ref,
                                     seed=seed,
                                     replicates=_get(cfg, "compare.replicates", 50, int))
        with open(os.path.join(out_dir, "comparison.json"), "w") as fh:
            fh.write(report.to_json())
        report.write_csv(os.path.join(out_dir, "comparison.csv"))
    return {"fitresult": fit_path, "stop_reason": result.stop_reason,
            "iterations": result.iterations}


def load_reference_precision():
    """Stored d=49 logistic-posterior-style precision and mean for experiments."""
    base = importlib.resources.files("fishervi") / "_refdata"
    lamb = np.loadtxt(str(base / "ref_precision_d49.csv"), delimiter=",")
    nu = np.loadtxt(str(base / "ref_mean_d49.csv"), delimiter=",")
    return nu, lamb


# ---------------------------------------------------------------------------
# subcommands


def _cmd_fit(args) -> int:
    cfg = load_config(args.config)
    out_dir = args.out or _get(cfg, "output_dir", "out")
    info = run(cfg, args.seed, out_dir)
    print(f"wrote {info['fitresult']} (stop: {info['stop_reason']}, "
          f"iterations: {info['iterations']})")
    return 0


def _cmd_compare(args) -> int:
    with open(args.fit) as fh:
        doc = json.load(fh)
    mu, factor = optimizers.FitResult.factor_from_json(doc)
    ref = diagnostics.load_reference_csv(args.ref)
    report = diagnostics.compare(mu, factor, ref, seed=args.seed,
                                 replicates=args.replicates)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "comparison.json"), "w") as fh:
        fh.write(report.to_json())
    report.write_csv(os.path.join(args.out, "comparison.csv"))
    print(json.dumps(report.summary(), indent=1, sort_keys=True))
    return 0


def _cmd_meanfield(args) -> int:
    lamb = np.loadtxt(args.lambda_csv, delimiter=",", ndmin=2)
    os.makedirs(args.out, exist_ok=True)
    kl = meanfield.meanfield_kl(lamb)
    fd = meanfield.meanfield_fd(lamb)
    sd = meanfield.meanfield_sd_nqp(lamb)
    with open(os.path.join(args.out, "meanfield.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["divergence", "coordinate", "sigma", "kkt_case"])
        for sol in (kl, fd, sd):
            for i, s in enumerate(sol.sigma_diag):
                writer.writerow([sol.divergence, i, s, sol.kkt_cases[i]])
    if args.region_sweep:
        meanfield.sd_fd_region_sweep(step=args.region_step,
                                    path=os.path.join(args.out, "sd_fd_regions.csv"))
    print(f"wrote {args.out}/meanfield.csv")
    return 0


def _cmd_unilab(args) -> int:
    params = {}
    for kv in args.param or []:
        k, v = kv.split("=", 1)
        params[k] = float(v)
    target = unilab.make_target(args.target, **params)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "unilab.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["target", "params", "divergence", "metric", "value"])
        for div in unilab.DIVERGENCES:
            fit = unilab.uni_fit(target, div)
            for metric, value in fit.metrics.items():
                writer.writerow([args.target, json.dumps(params, sort_keys=True),
                                 div, metric, value])
    print(f"wrote {args.out}/unilab.csv")
    return 0


def _cmd_recursion(args) -> int:
    rng = np.random.default_rng(args.seed)
    a = rng.standard_normal((args.dim, args.dim))
    j0 = a @ a.T / args.dim + np.eye(args.dim)
    eps0 = rng.standard_normal(args.dim)
    trace = meanfield.natural_gradient_recursion(j0, eps0, args.beta, args.t_max)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "recursion.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "eps_norm", "delta_norm", "eps_bound", "delta_bound"])
        for t in range(trace.eps_norms.size):
            writer.writerow([t, trace.eps_norms[t], trace.delta_norms[t],
                             trace.eps_bounds[t], trace.delta_bounds[t]])
    print(f"wrote {args.out}/recursion.csv (final eps {trace.eps_norms[-1]:.3e})")
    return 0


def _cmd_gradvar(args) -> int:
    nu, lamb = load_reference_precision()
    spreads = optimizers.gradient_sd_experiment(lamb, nu, t_scale=args.t_scale,
                                                n_draws=args.draws, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "gradient_sd.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["divergence", "coordinate", "sd_mu", "sd_t_diag"])
        for div, (sd_mu, sd_t) in spreads.items():
            for i in range(sd_mu.size):
                writer.writerow([div, i, sd_mu[i], sd_t[i]])
    medians = {div: (float(np.median(v[0])), float(np.median(v[1])))
               for div, v in spreads.items()}
    print(json.dumps(medians, indent=1, sort_keys=True))
    return 0


def _cmd_sweep(args) -> int:
    def one(path):
        cfg = load_config(path)
        seed = _get(cfg, "seed", 0, int)
        out = _get(cfg, "output_dir", os.path.splitext(path)[0] + "_out")
        return path, run(cfg, seed, out)

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        for path, info in pool.map(one, args.configs):
            print(f"{path}: stop={info['stop_reason']} iters={info['iterations']}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fishervi",
                                description="Gaussian VI with Fisher/score divergences")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="run one optimization from a config file")
    f.add_argument("--config", required=True)
    f.add_argument("--seed", required=True, type=int)
    f.add_argument("--out", default=None)
    f.set_defaults(func=_cmd_fit)

    c = sub.add_parser("compare", help="score a fit against reference samples")
    c.add_argument("--fit", required=True)
    c.add_argument("--ref", required=True)
    c.add_argument("--seed", required=True, type=int)
    c.add_argument("--replicates", type=int, default=50)
    c.add_argument("--out", required=True)
    c.set_defaults(func=_cmd_compare)

    m = sub.add_parser("meanfield", help="closed-form mean-field solutions")
    m.add_argument("--lambda-csv", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--region-sweep", action="store_true")
    m.add_argument("--region-step", type=float, default=0.02)
    m.set_defaults(func=_cmd_meanfield)

    u = sub.add_parser("unilab", help="univariate target metric grid")
    u.add_argument("--target", required=True,
                   choices=["student_t", "log_inv_gamma", "skew_normal"])
    u.add_argument("--param", action="append", metavar="key=value")
    u.add_argument("--out", required=True)
    u.set_defaults(func=_cmd_unilab)

    r = sub.add_parser("recursion", help="natural-gradient error recursion trace")
    r.add_argument("--dim", type=int, default=3)
    r.add_argument("--beta", type=float, default=0.8)
    r.add_argument("--t-max", type=int, default=500)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.set_defaults(func=_cmd_recursion)

    g = sub.add_parser("gradvar", help="gradient-spread experiment on the stored precision")
    g.add_argument("--draws", type=int, default=1000)
    g.add_argument("--t-scale", type=float, default=10.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gradvar)

    s = sub.add_parser("sweep", help="run several fit configs across worker threads")
    s.add_argument("configs", nargs="+")
    s.add_argument("--workers", type=int, default=4)
    s.set_defaults(func=_cmd_sweep)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
