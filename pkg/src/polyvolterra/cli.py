"""Command line interface: ``polyvolterra <subcommand> --config exp.toml ...``.

Exit codes: 0 when everything passes, 2 when any check or method fails,
3 for configuration and usage errors.
"""

import argparse
import json
import os
import sys

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 2, 3
_THREAD_VARS = ("NUMBA_NUM_THREADS", "OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _int_list(text):
    return [int(float(v)) for v in text.replace(";", ",").split(",") if v.strip()]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment TOML file")
    common.add_argument("--out-dir", default=None, help="directory for reports")
    common.add_argument("--seed", type=int, default=None, help="base seed for random streams")
    common.add_argument("--threads", type=int, default=None, help="thread count for BLAS/numba")
    common.add_argument("--no-plots", action="store_true", help="skip PNG figures")

    p = _Parser(prog="polyvolterra", description="Moments of polynomial Volterra processes.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("moments", parents=[common], help="deterministic moment solve")
    s.add_argument("--N", type=int, default=None, help="highest moment order")
    s.add_argument("--M", type=int, default=None, help="grid steps")
    s.add_argument("--T", type=float, default=None, help="horizon")
    s.add_argument("--method", default="step",
                   choices=["step", "picard", "voc", "affine", "classical"])
    s.add_argument("--out", default=None, help="output CSV (t, alpha, value, method, M, N)")

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo simulation")
    s.add_argument("--paths", type=int, default=None)
    s.add_argument("--M", type=int, default=None)
    s.add_argument("--N", type=int, default=2, help="moment order when no targets are set")
    s.add_argument("--out", default=None, help="summary CSV (t, alpha, estimate, stderr)")
    s.add_argument("--dump-paths", type=int, default=0, metavar="K",
                   help="also write the first K paths (path_id, t, x_1..x_d)")

    s = sub.add_parser("jump-dual", parents=[common], help="killed jump dual estimator")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--k", type=int, help="moment order (d = 1)")
    g.add_argument("--kvec", type=_int_list, help="comma separated multi-index")
    s.add_argument("--samples", type=int, default=None)
    s.add_argument("--T", type=float, default=None)
    s.add_argument("--signed-mode", action="store_true")
    s.add_argument("--out", default=None, help="summary CSV (k, estimate, stderr, n, mode)")

    for name, helptext in (("compare", "pairwise estimator comparison"),
                           ("run", "run all methods and write reports")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--parallel-methods", action="store_true")

    s = sub.add_parser("converge", parents=[common], help="convergence study")
    s.add_argument("--param", choices=["M", "paths"], default="M")
    s.add_argument("--values", type=_int_list, required=True)
    s.add_argument("--method", default=None)
    s.add_argument("--reference", choices=["auto", "closed", "finest"], default="auto")
    s.add_argument("--out", default=None, help="output CSV (param, error_vs_reference, "
                                               "rate_estimate)")

    sub.add_parser("validate", parents=[common], help="check model and method applicability")
    return p


def _set_threads(n):
    if n is None:
        return
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def _out_path(args, default_name):
    if args.out:
        return args.out
    base = args.out_dir or "."
    os.makedirs(base, exist_ok=True)
    return os.path.join(base, default_name)


def _cmd_moments(args, cfg):
    import csv

    from .grid import Grid
    from .harness import FMT, format_alpha
    from .model import multi_indices

    T = args.T if args.T is not None else cfg.grid.T
    M = args.M if args.M is not None else (32 if args.method == "picard" else cfg.grid.M)
    N = args.N if args.N is not None else cfg.N
    grid = Grid(T, M)
    model, kernel = cfg.model_for(args.method), cfg.kernel_for(args.method)
    if args.method == "classical":
        from .harness import _run_classical
        from .config import ExperimentConfig
        alphas = [a for a in multi_indices(N, model.d) if sum(a) > 0]
        sub = ExperimentConfig(cfg.model, cfg.kernel, grid,
                               [(float(t), a) for t in grid.times for a in alphas],
                               ["classical"], overrides=cfg.overrides)
        try:
            rows = [(e.t, e.alpha, e.value) for e in
                    _run_classical(sub, model, kernel, grid, {})]
        except Exception as exc:
            print(f"classical: {exc}", file=sys.stderr)
            return EXIT_FAIL
        table = None
    else:
        from .moments import (affine_moments_recursive, solve_moments,
                              solve_moments_picard, voc_moments)
        try:
            if args.method == "step":
                table = solve_moments(model, kernel, N, grid)
            elif args.method == "picard":
                table = solve_moments_picard(model, kernel, N, grid)
            elif args.method == "voc":
                table = voc_moments(model, kernel, grid)
            else:
                table = affine_moments_recursive(model, kernel, N, grid)
        except Exception as exc:
            print(f"{args.method}: {type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_FAIL
        alphas = [a for a in table.alphas if sum(a) > 0]
        rows = [(t, a, table.diag[j, table.alpha_index(a)])
                for j, t in enumerate(grid.times) for a in alphas]
    out = _out_path(args, f"moments_{args.method}.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "alpha", "value", "method", "M", "N"])
        for t, a, v in rows:
            w.writerow([FMT % t, format_alpha(a), FMT % v, args.method, M, N])
    if table is not None and not args.no_plots:
        from .plotting import plot_moment_series
        plot_moment_series(table, alphas, os.path.splitext(out)[0] + ".png")
    print(f"wrote {out} ({len(rows)} rows)")
    return EXIT_OK


def _cmd_simulate(args, cfg):
    import csv

    import numpy as np

    from .grid import Grid
    from .harness import FMT, format_alpha
    from .model import UnitBall, multi_indices
    from .simulation import invariance_report, mc_moment, simulate_ball, simulate_paths

    paths = args.paths or int(cfg.mc.get("paths", 10_000))
    M = args.M or int(cfg.mc.get("M", cfg.grid.M))
    seed = args.seed if args.seed is not None else int(cfg.mc.get("seed", 0))
    grid = Grid(cfg.grid.T, M)
    model, kernel = cfg.model_for("mc"), cfg.kernel_for("mc")
    if cfg.targets:
        times = sorted({t for t, _ in cfg.targets})
        pairs = cfg.targets
    else:
        times = list(grid.times[::max(1, M // 20)])
        if times[-1] != grid.T:
            times.append(grid.T)
        alphas = [a for a in multi_indices(args.N, model.d) if sum(a) > 0]
        pairs = [(t, a) for t in times for a in alphas]
    record = sorted(set(times) | ({float(t) for t in grid.times} if args.dump_paths else set()))
    if isinstance(model.state_space, UnitBall):
        ens = simulate_ball(model, kernel, grid, paths, seed, record_times=record,
                            assume_kernel=bool(cfg.mc.get("assume_kernel", False)))
    else:
        ens = simulate_paths(model, kernel, grid, paths, seed, record_times=record)
    out = _out_path(args, "simulate_summary.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "alpha", "estimate", "stderr"])
        for t, a in pairs:
            mean, se = mc_moment(ens, t, a)
            w.writerow([FMT % t, format_alpha(a), FMT % mean, FMT % se])
    base = os.path.splitext(out)[0]
    if args.dump_paths:
        with open(base + "_paths.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "t"] + [f"x_{i + 1}" for i in range(model.d)])
            for p in range(min(args.dump_paths, paths)):
                for n, t in enumerate(ens.times):
                    w.writerow([p, FMT % t] + [FMT % v for v in ens.states[p, n]])
        if not args.no_plots:
            from .plotting import plot_paths
            plot_paths(ens, base + "_paths.png", n_show=args.dump_paths)
    rep = invariance_report(ens)
    rep["n_aborted"] = ens.n_aborted
    rep["seed"], rep["paths"], rep["M"] = seed, paths, M
    print(json.dumps(rep, default=lambda x: np.asarray(x).tolist()))
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_jump(args, cfg):
    import csv

    from .harness import FMT, format_alpha
    from .jump_dual import IneligibleKernel, jump_dual_moment_multi

    kvec = [args.k] if args.k is not None else args.kvec
    model, kernel = cfg.model_for("jump"), cfg.kernel_for("jump")
    if len(kvec) != model.d:
        print(f"multi-index needs {model.d} entries", file=sys.stderr)
        return EXIT_CONFIG
    n = args.samples or int(cfg.jump.get("samples", 100_000))
    seed = args.seed if args.seed is not None else int(cfg.jump.get("seed", 0))
    T = args.T if args.T is not None else cfg.grid.T
    signed = args.signed_mode or cfg.jump.get("mode", "unsigned") == "signed"
    try:
        mean, se = jump_dual_moment_multi(model, kernel, kvec, T, n, seed, signed=signed)
    except (IneligibleKernel, ValueError) as exc:
        print(f"jump-dual: {exc}", file=sys.stderr)
        return EXIT_FAIL
    out = _out_path(args, "jump_dual.csv")
    mode = "signed" if signed else "unsigned"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "estimate", "stderr", "n", "mode"])
        w.writerow([format_alpha(kvec), FMT % mean, FMT % se, n, mode])
    print(f"E[X_T^{tuple(kvec)}] = {mean:.10g} +- {se:.3g} ({mode}, n={n}); wrote {out}")
    return EXIT_OK


def _cmd_compare(args, cfg):
    from .harness import compare_estimators

    table = compare_estimators(cfg, args.out_dir, args.seed,
                               plots=False if args.no_plots else None,
                               parallel=args.parallel_methods)
    for m, st in table.run.status.items():
        if st != "ok":
            print(f"{m}: {st}")
    for r in table.rows:
        print(f"{'PASS' if r.passed else 'FAIL'} t={r.t:g} alpha={r.alpha} "
              f"{r.method_a}={r.value_a:.8g} {r.method_b}={r.value_b:.8g} "
              f"|diff|={r.abs_diff:.3g} thr={r.threshold:.3g}")
    return EXIT_OK if table.passed else EXIT_FAIL


def _cmd_run(args, cfg):
    from .harness import run_experiment

    run = run_experiment(cfg, args.out_dir, args.seed, plots=False if args.no_plots else None,
                         parallel=args.parallel_methods)
    for m, st in run.status.items():
        print(f"{m}: {st} ({run.timings[m]:.2f} s)")
    return EXIT_FAIL if any(st.startswith("error") for st in run.status.values()) else EXIT_OK


def _cmd_converge(args, cfg):
    from .harness import emit_convergence_study

    out = _out_path(args, f"converge_{args.param}.csv")
    study = emit_convergence_study(cfg, args.values, args.param, args.method, args.reference,
                                   out, args.seed, plots=False if args.no_plots else None)
    for v, e, r in zip(study.params, study.errors, study.rates):
        print(f"{args.param}={v} error={e:.6e} rate={r:.4g}")
    print(f"fitted slope {study.slope:.4g} (reference: {study.reference}); wrote {out}")
    return EXIT_OK


def _cmd_validate(args, cfg):
    from .harness import validate_config

    report, notes = validate_config(cfg)
    print(report.summary())
    for m, st in notes.items():
        print(f"{m}: {st}")
    return EXIT_OK if report.ok else EXIT_CONFIG


COMMANDS = {"moments": _cmd_moments, "simulate": _cmd_simulate, "jump-dual": _cmd_jump,
            "compare": _cmd_compare, "run": _cmd_run, "converge": _cmd_converge,
            "validate": _cmd_validate}


def main(argv=None):
    args = build_parser().parse_args(argv)
    _set_threads(args.threads)
    from .config import ConfigError, load_config
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
