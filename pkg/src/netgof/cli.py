"""Command-line front end: fit, gof, residual, simulate."""
import argparse
import json
import logging
import math
import os
import sys
import warnings

import numpy as np

from . import __version__
from .graph_core import NetworkFormatError, read_network, write_edge_covariates, write_edge_list
from .graphon import DEFAULT_MC_SAMPLES, DEFAULT_RESOLUTION, export_grid
from .model_select import FitResult, summarize
from .simulate import SimConfig, simulate_network, sweep, write_sweep_csv
from .vbem import FitError, Hyperparameters, fit_model

logger = logging.getLogger("netgof")

FIT_FILE = "fit.json"
REJECT_THRESHOLD = 0.5


class CliError(Exception):
    pass


def _write_manifest(out_dir, command, args, artifacts, runtimes=None, seed=None):
    name = f"{command}.manifest.json"
    config = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": config,
        "master_seed": seed,
        "version": f"netgof {__version__}",
        "artifacts": [os.path.basename(a) for a in artifacts],
        "runtimes_s": runtimes or {},
    }
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, default=str)
    return name


def _hyper(args):
    return Hyperparameters(args.a0, args.b0, args.c0, args.d0, args.e0, k_max=args.kmax)


def _load_network(inputs, no_covariates=False):
    for key in ("edges", "covariates", "nodes"):
        path = inputs.get(key)
        if path is not None and not os.path.exists(path):
            raise CliError(f"{key} file not found: {path}")
    net = read_network(inputs["edges"], inputs.get("covariates"), inputs.get("nodes"),
                       n_nodes=inputs.get("n_nodes"), standardize=inputs.get("standardize", False),
                       impute_mean=inputs.get("impute_mean", False))
    return net.without_covariates() if no_covariates else net


def _run_fit(net, options):
    hyper = Hyperparameters(**{k: options[k] for k in ("a0", "b0", "c0", "d0", "e0")},
                            k_max=options["kmax"])
    fit = fit_model(net, hyper, n_restarts=options["restarts"], seed=options["seed"],
                    tol=options["tol"], max_iter=options["max_iter"], threads=options["threads"],
                    strict=False)
    return fit, summarize(fit)


def _fit_options(args):
    return {"kmax": args.kmax, "restarts": args.restarts, "tol": args.tol,
            "max_iter": args.max_iter, "seed": args.seed, "threads": args.threads,
            "a0": args.a0, "b0": args.b0, "c0": args.c0, "d0": args.d0, "e0": args.e0}


def cmd_fit(args):
    inputs = {"edges": os.path.abspath(args.edges),
              "covariates": os.path.abspath(args.covariates) if args.covariates else None,
              "nodes": os.path.abspath(args.nodes) if args.nodes else None,
              "n_nodes": args.n_nodes, "standardize": args.standardize,
              "impute_mean": args.impute_mean}
    net = _load_network(inputs, args.no_covariates)
    options = _fit_options(args)
    fit, res = _run_fit(net, options)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, FIT_FILE)
    runtimes = {f"K={K},restart={r}": t for (K, r), t in fit.runtimes.items()}
    manifest = _write_manifest(args.out, "fit", args, [path], runtimes, args.seed)
    res.save(path, manifest=manifest, inputs=inputs, options=options,
             no_covariates=args.no_covariates, node_ids=list(net.node_ids),
             covariate_names=list(net.covariate_names),
             network={"n": net.n, "d": net.d, "density": net.density},
             failed_K=fit.failed)
    print(f"p(H0|Y) = {res.p_H0:.6g}")
    print(f"wrote {path}")
    return 0


def format_report(res: FitResult) -> str:
    net = res.extra.get("network", {})
    lines = []
    lines.append(f"{'size (n)':>10} {'nb. covariates (d)':>20} {'density':>10} {'p(H0|Y)':>12}")
    lines.append(f"{net.get('n', '?'):>10} {net.get('d', '?'):>20} "
                 f"{net.get('density', float('nan')):>10.3g} {res.p_H0:>12.3g}")
    lines.append("")
    bf = "inf" if math.isinf(res.bayes_factor_01) else f"{res.bayes_factor_01:.4g}"
    lines.append(f"Bayes factor B01 (H0 vs H1'): {bf}")
    lines.append("")
    lines.append(f"{'K':>4} {'lower bound':>16} {'p(M_K|Y)':>12}")
    for K in sorted(res.bounds):
        b = res.bounds[K]
        bs = "failed" if b is None else f"{b:.6f}"
        lines.append(f"{K:>4} {bs:>16} {res.posterior.get(K, 0.0):>12.4g}")
    lines.append("")
    if res.p_H0 < REJECT_THRESHOLD:
        verdict = "H0 rejected: residual structure beyond the covariates"
    else:
        verdict = "no residual structure detected: the logistic regression fits"
    lines.append(f"{verdict} (threshold p(H0|Y) < {REJECT_THRESHOLD:g} rejects H0)")
    return "\n".join(lines)


def cmd_gof(args):
    try:
        res = FitResult.load(args.result)
    except OSError as exc:
        raise CliError(f"cannot read {args.result}: {exc}") from exc
    print(format_report(res))
    return 0


def cmd_residual(args):
    try:
        res = FitResult.load(args.result)
    except OSError as exc:
        raise CliError(f"cannot read {args.result}: {exc}") from exc
    out = args.out or os.path.dirname(os.path.abspath(args.result))
    os.makedirs(out, exist_ok=True)
    label = "residual"
    if not args.with_covariates:
        inputs = res.extra.get("inputs")
        options = res.extra.get("options")
        if not inputs or not options:
            raise CliError(f"{args.result}: no stored inputs, cannot refit without covariates")
        net = _load_network(inputs, no_covariates=True)
        _, res = _run_fit(net, options)
        label = "residual_nocov"
    if not res.states:
        raise CliError(f"{args.result}: fit result carries no variational states")
    prior_e = res.hyper.e0 if args.prior_e else None
    grid = export_grid(res, args.grid, args.mc_samples, args.seed, prior_e=prior_e)
    csv_path = os.path.join(out, f"{label}.csv")
    json_path = os.path.join(out, f"{label}.json")
    artifacts = [csv_path, json_path]
    grid.write_csv(csv_path)
    manifest = f"{label}.manifest.json"
    grid.write_json(json_path, manifest=manifest, p_H0=res.p_H0)
    if not args.no_plot:
        from .plotting import plot_residual
        png = os.path.join(out, f"{label}.png")
        plot_residual(grid, png, title=f"p(H0|Y) = {res.p_H0:.3g}")
        artifacts.append(png)
    _write_manifest(out, label, args, artifacts, seed=args.seed)
    print(f"g(phi) range: [{grid.g_phi_hat.min():.4g}, {grid.g_phi_hat.max():.4g}]")
    for a in artifacts:
        print(f"wrote {a}")
    return 0


def cmd_simulate(args):
    os.makedirs(args.out, exist_ok=True)
    if args.sweep:
        design = [(n, rho, lam) for n in args.n for rho in args.rho for lam in args.lam]
        hyper = _hyper(args)
        rows = sweep(design, args.replicates, hyper, n_restarts=args.restarts, seed=args.seed,
                     d=args.d, tol=args.tol, max_iter=args.max_iter, threads=args.threads)
        csv_path = os.path.join(args.out, "sweep.csv")
        write_sweep_csv(rows, csv_path)
        artifacts = [csv_path]
        if not args.no_plot:
            from .plotting import plot_sweep
            png = os.path.join(args.out, "sweep.png")
            plot_sweep(rows, png)
            artifacts.append(png)
        _write_manifest(args.out, "sweep", args, artifacts, seed=args.seed)
        n_fail = sum(1 for r in rows if "error" in r)
        for a in artifacts:
            print(f"wrote {a}")
        if n_fail:
            print(f"{n_fail} replicate(s) failed; see the log", file=sys.stderr)
        return 0
    if len(args.n) != 1 or len(args.rho) != 1 or len(args.lam) != 1:
        raise CliError("multiple --n/--rho/--lambda values require --sweep")
    if args.replicates < 1:
        raise CliError("--replicates must be >= 1")
    from .vbem import seed_for
    artifacts = []
    for rep in range(args.replicates):
        seed = args.seed if args.replicates == 1 else seed_for(args.seed, rep)
        cfg = SimConfig(args.n[0], args.rho[0], args.lam[0], d=args.d, beta=args.beta, seed=seed)
        net, U = simulate_network(cfg)
        stem = os.path.join(args.out, f"sim_{rep:03d}")
        write_edge_list(net, stem + ".edges")
        artifacts.append(stem + ".edges")
        if net.d:
            write_edge_covariates(net, stem + ".covariates.csv")
            artifacts.append(stem + ".covariates.csv")
        np.savetxt(stem + ".latent.csv", np.c_[np.arange(net.n), U], delimiter=",",
                   header="node,u", comments="", fmt=["%d", "%.17g"])
        artifacts.append(stem + ".latent.csv")
        print(f"replicate {rep}: n={net.n}, density={net.density:.4f}")
    _write_manifest(args.out, "simulate", args, artifacts, seed=args.seed)
    return 0


def _add_fit_options(p):
    p.add_argument("--kmax", type=int, default=10, help="largest number of blocks (default 10)")
    p.add_argument("--restarts", type=int, default=2, help="runs per K, best kept (default 2)")
    p.add_argument("--tol", type=float, default=1e-6, help="relative bound tolerance")
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    for name in ("a0", "b0", "c0", "d0", "e0"):
        p.add_argument(f"--{name}", type=float, default=1.0)


def build_parser():
    parser = argparse.ArgumentParser(prog="netgof", description=(
        "Goodness of fit of logistic regression models for binary networks"))
    parser.add_argument("--version", action="version", version=f"netgof {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit M_1..M_kmax and compute p(H0|Y)")
    p.add_argument("--edges", required=True, help="edge list, one 'i j' per line")
    p.add_argument("--covariates", help="edge covariate CSV (i, j, v1..vd)")
    p.add_argument("--nodes", help="node descriptor CSV with name:kind[:levels] header")
    p.add_argument("--n-nodes", type=int, help="pad to this many nodes")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--standardize", action="store_true", help="standardize covariates")
    p.add_argument("--impute-mean", action="store_true",
                   help="impute missing quantitative node values by column means")
    p.add_argument("--no-covariates", action="store_true", help="ignore covariates (d = 0)")
    _add_fit_options(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("gof", help="print the goodness-of-fit report of a fit")
    p.add_argument("result", help="fit.json written by 'fit'")
    p.set_defaults(func=cmd_gof)

    p = sub.add_parser("residual", help="export the estimated residual surface")
    p.add_argument("result", help="fit.json written by 'fit'")
    p.add_argument("--out", help="output directory (default: next to the result)")
    p.add_argument("--grid", type=int, default=DEFAULT_RESOLUTION, help="grid resolution")
    p.add_argument("--mc-samples", type=int, default=DEFAULT_MC_SAMPLES)
    p.add_argument("--seed", type=int, default=0)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--with-covariates", dest="with_covariates", action="store_true", default=True)
    g.add_argument("--no-covariates", dest="with_covariates", action="store_false",
                   help="refit with d = 0 and export that surface")
    p.add_argument("--prior-e", action="store_true",
                   help="use the prior concentration e0 in the Dirichlet cdf instead of e_n")
    p.add_argument("--no-plot", action="store_true", help="skip the PNG figure")
    p.set_defaults(func=cmd_residual)

    p = sub.add_parser("simulate", help="simulate W-graph networks, or run a calibration sweep")
    p.add_argument("--n", type=int, nargs="+", default=[100])
    p.add_argument("--rho", type=float, nargs="+", default=[0.1])
    p.add_argument("--lambda", dest="lam", type=float, nargs="+", default=[1.0])
    p.add_argument("--d", type=int, default=2, help="covariate dimension")
    p.add_argument("--beta", type=float, nargs="*", help="regression coefficients (default 0)")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--out", default=".")
    p.add_argument("--sweep", action="store_true", help="fit every replicate and tabulate p(H0|Y)")
    p.add_argument("--no-plot", action="store_true")
    _add_fit_options(p)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("default")
    try:
        return args.func(args)
    except (CliError, NetworkFormatError, FitError, ValueError, OSError) as exc:
        print(f"netgof {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
