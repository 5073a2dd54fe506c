"""Command-line front end: fit a CSV, run a Monte Carlo design, merge reports.

Configs are flat ``key=value`` text files (``#`` starts a comment); command
line ``--set key=value`` overrides win. Exit codes: 0 success, 2 config or
data error, 3 numerical or experiment failure.
"""

import argparse
import json
import os
import sys
import time

from .data import Dataset, IndicatorDirection
from .losses import LossSpec
from .pipeline import FitConfig, fit_full, resolve_tau_range
from .simulation import (ExperimentConfig, read_replications_csv, run_experiment,
                         summaries_to_markdown, summarize, write_replications_csv,
                         write_timings_csv, ExperimentError)
from .solvers import NumericalError, SolverOptions


class ConfigError(ValueError):
    """A config problem; the message names the offending key."""


def _parse_bool(v, key):
    s = v.strip().lower()
    if s in ("1", "true", "on", "yes"):
        return True
    if s in ("0", "false", "off", "no"):
        return False
    raise ConfigError(f"key '{key}': cannot parse boolean from {v!r}")


def _parse_choice(choices):
    def conv(v, key):
        s = v.strip().lower()
        if s not in choices:
            raise ConfigError(f"key '{key}': expected one of {choices}, got {v!r}")
        return s
    return conv


def _parse_float(v, key):
    try:
        return float(v)
    except ValueError:
        raise ConfigError(f"key '{key}': cannot parse number from {v!r}") from None


def _parse_int(v, key):
    try:
        return int(v)
    except ValueError:
        raise ConfigError(f"key '{key}': cannot parse integer from {v!r}") from None


def _parse_mu(v, key):
    if v.strip().lower() == "auto":
        return None
    return _parse_float(v, key)


_KEYS = {
    "loss": _parse_choice(("quantile", "logistic")),
    "gamma": _parse_float,
    "lambda": _parse_float,
    "mu": _parse_mu,
    "scad_a": _parse_float,
    "tau_low": _parse_float,
    "tau_high": _parse_float,
    "grid_mode": _parse_choice(("observed", "quantile", "equispaced")),
    "grid_n": _parse_int,
    "direction": _parse_choice(("greater", "less")),
    "active_tol": _parse_float,
    "seed": _parse_int,
    "replications": _parse_int,
    "n": _parse_int,
    "p": _parse_int,
    "design": _parse_choice(("median61", "logit62")),
    "risk_method": _parse_choice(("closed_form", "fresh_sample")),
    "n_val": _parse_int,
    "solver.max_iter": _parse_int,
    "solver.tol_primal": _parse_float,
    "solver.tol_dual": _parse_float,
    "solver.admm_rho": _parse_float,
    "solver.adaptive_rho": _parse_bool,
    "solver.fista_tol": _parse_float,
    "solver.box_bound": _parse_float,
    "solver.cd_sweeps": _parse_int,
    "solver.power_iters": _parse_int,
}

_DESIGN_LOSS = {"median61": "quantile", "logit62": "logistic"}


def _read_pairs(path):
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            k, v = line.split("=", 1)
            pairs.append((k.strip(), v.strip()))
    return pairs


def parse_config(path, overrides=()):
    """Parse a flat key=value config plus overrides.

    Returns an ExperimentConfig when the ``design`` key is present,
    otherwise a FitConfig. Unknown keys, bad values and missing required
    keys raise ConfigError naming the key.
    """
    pairs = _read_pairs(path)
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} is not key=value")
        k, v = ov.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    values = {}
    for k, v in pairs:
        if k not in _KEYS:
            raise ConfigError(f"unknown config key '{k}'")
        values[k] = _KEYS[k](v, k)
    try:
        if "design" in values:
            return _experiment_config(values)
        return _fit_config(values)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _solver_options(values):
    kw = {}
    for k, v in values.items():
        if k.startswith("solver."):
            kw[k.split(".", 1)[1]] = v
    return SolverOptions(**kw)


def _fit_config(values, default_loss=None):
    loss = values.get("loss", default_loss)
    if loss is None:
        raise ConfigError("missing required key 'loss'")
    if "lambda" not in values:
        raise ConfigError("missing required key 'lambda'")
    spec = LossSpec.quantile(values.get("gamma", 0.5)) if loss == "quantile" \
        else LossSpec.logistic()
    tau_range = None
    if ("tau_low" in values) != ("tau_high" in values):
        raise ConfigError("keys 'tau_low' and 'tau_high' must be given together")
    if "tau_low" in values:
        tau_range = (values["tau_low"], values["tau_high"])
    return FitConfig(
        spec=spec,
        lam=values["lambda"],
        mu=values.get("mu"),
        scad_a=values.get("scad_a", 3.7),
        tau_range=tau_range,
        grid_mode=values.get("grid_mode", "observed"),
        grid_size=values.get("grid_n"),
        direction=IndicatorDirection(values.get("direction", "greater")),
        solver=_solver_options(values),
        active_tol=values.get("active_tol", 1e-8),
    )


def _experiment_config(values):
    design = values["design"]
    for key in ("n", "p", "replications"):
        if key not in values:
            raise ConfigError(f"missing required key '{key}'")
    fit_values = dict(values)
    # the named designs pin the convention of the generated truth
    fit_values.setdefault("direction", "less")
    fit_values.setdefault("tau_low", 0.15)
    fit_values.setdefault("tau_high", 0.85)
    fit_values.setdefault("lambda", 0.03)
    fit = _fit_config(fit_values, default_loss=_DESIGN_LOSS[design])
    return ExperimentConfig(
        design=design,
        n=values["n"],
        p=values["p"],
        replications=values["replications"],
        master_seed=values.get("seed", 0),
        fit=fit,
        risk_method=values.get("risk_method", "closed_form"),
        n_val=values.get("n_val", 100_000),
    )


def _resolve_threads(threads):
    if threads is None:
        env = os.environ.get("THRESHOLD_SPARSE_THREADS", "").strip()
        try:
            threads = int(env) if env else 0
        except ValueError:
            raise ConfigError(
                f"THRESHOLD_SPARSE_THREADS must be an integer, got {env!r}") from None
    if threads == 0:
        threads = os.cpu_count() or 1
    if threads < 1:
        raise ConfigError(f"threads must be >= 0, got {threads}")
    return threads


def _active_names(indices, names, prefix):
    return [f"{prefix}:{names[j]}" for j in indices]


def cmd_fit(args):
    config = parse_config(args.config, args.set)
    if not isinstance(config, FitConfig):
        raise ConfigError("'fit' expects a fit config (no 'design' key)")
    dataset = Dataset.from_csv(args.csv)
    os.makedirs(args.output_dir, exist_ok=True)
    t0 = time.perf_counter()
    fit = fit_full(dataset, config, workers=_resolve_threads(args.threads))
    elapsed_ms = int(round(1000 * (time.perf_counter() - t0)))
    names = dataset.feature_names or [f"x{j + 1}" for j in range(dataset.p)]
    profile = fit.lasso.profile
    out = {
        "n": dataset.n,
        "p": dataset.p,
        "loss": config.spec.kind.value,
        "gamma": config.spec.gamma,
        "lambda": config.lam,
        "mu": config.resolve_mu(dataset.p),
        "scad_a": config.scad_a,
        "direction": config.direction.value,
        "tau_range": list(resolve_tau_range(config, dataset)),
        "grid_points": len(profile),
        "tau_hat": fit.tau_hat,
        "tau_tilde": fit.tau_tilde,
        "alpha_hat": {"beta": fit.lasso.alpha_hat.beta.tolist(),
                      "delta": fit.lasso.alpha_hat.delta.tolist()},
        "alpha_tilde": {"beta": fit.alpha_tilde.beta.tolist(),
                        "delta": fit.alpha_tilde.delta.tolist()},
        "active_beta": _active_names(fit.active_beta.indices, names, "beta"),
        "active_delta": _active_names(fit.active_delta.indices, names, "delta"),
        "lasso_objective": fit.lasso.objective,
        "scad_objective": fit.scad_objective,
        "kkt_violation_lasso": float(profile.kkt_violations[profile.argmin_index]),
        "kkt_violation_scad": fit.scad_kkt_violation,
        "grid_nonconverged": profile.n_nonconverged,
        "runtime_ms": elapsed_ms,
        "profile": [[float(t), float(o)] for t, o in zip(profile.taus, profile.objectives)],
    }
    fit_path = os.path.join(args.output_dir, "fit.json")
    with open(fit_path, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2)
        fh.write("\n")
    _write_profile_csv(profile, os.path.join(args.output_dir, "profile.csv"))
    if args.verbosity > 0:
        print(f"tau_hat={fit.tau_hat:.6g} tau_tilde={fit.tau_tilde:.6g} "
              f"active: {len(fit.active_beta)} beta, {len(fit.active_delta)} delta")
    print(f"wrote {fit_path}")
    return 0


def _write_profile_csv(profile, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("tau,objective,converged,kkt_violation\n")
        for k in range(len(profile)):
            fh.write(f"{float(profile.taus[k])!r},{float(profile.objectives[k])!r},"
                     f"{int(profile.converged[k])},{float(profile.kkt_violations[k])!r}\n")


def cmd_simulate(args):
    config = parse_config(args.config, args.set)
    if not isinstance(config, ExperimentConfig):
        raise ConfigError("'simulate' expects an experiment config ('design' key)")
    workers = _resolve_threads(args.threads)
    os.makedirs(args.output_dir, exist_ok=True)
    records, summary = run_experiment(config, workers=workers)
    write_replications_csv(records, os.path.join(args.output_dir, "replications.csv"))
    write_timings_csv(records, os.path.join(args.output_dir, "timings.csv"))
    md = summaries_to_markdown([summary])
    with open(os.path.join(args.output_dir, "summary.md"), "w", encoding="utf-8") as fh:
        fh.write(md)
    _write_summary_csv([summary], os.path.join(args.output_dir, "summary.csv"))
    print(md, end="")
    return 0


def cmd_report(args):
    groups = []
    for path in args.replications_csv:
        records = read_replications_csv(path)
        label = os.path.splitext(os.path.basename(path))[0]
        groups.append((label, records))
    rows = [summarize(records, label=label) for label, records in groups]
    if len(groups) > 1:
        pooled = [r for _, records in groups for r in records]
        rows.append(summarize(pooled, label="pooled"))
    os.makedirs(args.output_dir, exist_ok=True)
    md = summaries_to_markdown(rows)
    with open(os.path.join(args.output_dir, "report.md"), "w", encoding="utf-8") as fh:
        fh.write(md)
    _write_summary_csv(rows, os.path.join(args.output_dir, "report.csv"))
    if args.profile_from:
        with open(args.profile_from, encoding="utf-8") as fh:
            fit = json.load(fh)
        if "profile" not in fit:
            print("fit.json carries no profile trace; skipping profile.csv", file=sys.stderr)
        else:
            with open(os.path.join(args.output_dir, "profile.csv"), "w", encoding="utf-8") as fh:
                fh.write("tau,objective\n")
                for tau, obj in fit["profile"]:
                    fh.write(f"{tau!r},{obj!r}\n")
    print(md, end="")
    return 0


def _write_summary_csv(rows, path):
    import dataclasses

    fields = [f.name for f in dataclasses.fields(rows[0])]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(fields) + "\n")
        for row in rows:
            vals = []
            for name in fields:
                v = getattr(row, name)
                if isinstance(v, tuple):
                    vals.append("/".join(repr(float(x)) for x in v))
                elif isinstance(v, float):
                    vals.append(repr(v))
                else:
                    vals.append(str(v))
            fh.write(",".join(vals) + "\n")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="threshold-sparse",
        description="Two-step penalized M-estimation with an unknown sparsity change point.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--output-dir", "-o", default=".", help="where outputs are written")
        p.add_argument("--threads", type=int, default=None,
                       help="worker count; 0 = all cores (env THRESHOLD_SPARSE_THREADS)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="config override, repeatable")
        p.add_argument("--verbosity", "-v", action="count", default=0)

    p_fit = sub.add_parser("fit", help="fit the two-step estimator to a CSV dataset")
    p_fit.add_argument("csv", help="CSV with columns y, q and the regressors")
    p_fit.add_argument("--config", "-c", required=True)
    common(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo design")
    p_sim.add_argument("--config", "-c", required=True)
    common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_rep = sub.add_parser("report", help="merge replication CSVs into one table")
    p_rep.add_argument("replications_csv", nargs="+")
    p_rep.add_argument("--profile-from", default=None,
                       help="a fit.json whose tau-objective curve to emit as profile.csv")
    common(p_rep)
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, ExperimentError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
