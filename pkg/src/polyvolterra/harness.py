"""Experiment orchestration: run estimators, compare them, study convergence.

Every method writes ``<method>.csv`` with columns
``t, alpha, value, stderr, method, M, N`` (stderr is 0 for deterministic
methods, M is 0 for the grid-free jump dual).  A ``manifest.json`` records
versions, seeds, grids, timings and the per-method status.
"""

import csv
import json
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .config import STOCHASTIC, ConfigError
from .grid import Grid
from .kernels import Constant, is_jump_dual_eligible
from .jump_dual import channels_from_model, jump_dual_moment_multi
from .model import UnitBall, validate_model
from .moments.classical import classical_moments_ode
from .moments.picard import solve_moments_picard
from .moments.stepping import solve_moments
from .moments.voc import affine_moments_recursive, voc_moments
from .simulation import mc_moment, simulate_ball, simulate_paths

FMT = "%.17e"
RESULT_COLUMNS = ["t", "alpha", "value", "stderr", "method", "M", "N"]
COMPARE_COLUMNS = ["t", "alpha", "method_a", "method_b", "value_a", "value_b",
                   "abs_diff", "threshold", "status"]
CONVERGENCE_COLUMNS = ["param", "error_vs_reference", "rate_estimate"]
PICARD_MAX_M = 32
MC_MAX_M = 400


class Inapplicable(Exception):
    """A method cannot run on this configuration."""


@dataclass
class Estimate:
    t: float
    alpha: tuple
    value: float
    stderr: float
    method: str
    M: int
    N: int


@dataclass
class ExperimentRun:
    results: dict                       # method -> [Estimate]
    status: dict                        # method -> "ok" | "inapplicable: ..." | "error: ..."
    timings: dict
    seeds: dict
    grids: dict
    files: list = field(default_factory=list)
    out_dir: Path = None

    @property
    def succeeded(self):
        return [m for m in self.results if self.status[m] == "ok"]


def format_alpha(alpha):
    return ";".join(str(a) for a in alpha)


def parse_alpha(text):
    return tuple(int(v) for v in str(text).split(";"))


def _num(x):
    return FMT % x


def versions():
    import matplotlib
    import numba
    import scipy
    try:
        from importlib.metadata import version
        pkg = version("artifact")
    except Exception:
        pkg = "unknown"
    return {"artifact": pkg, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__,
            "matplotlib": matplotlib.__version__}


def _sub_grid(grid, cap, times):
    """Coarsest divisor grid of ``grid`` with at most ``cap`` steps holding ``times``."""
    for f in range(1, grid.M + 1):
        if grid.M % f or grid.M // f > cap:
            continue
        g = Grid(grid.T, grid.M // f)
        if all(g.on_grid(t) for t in times):
            return g
    return grid


def _method_grid(cfg, method):
    times = [t for t, _ in cfg.targets]
    if method == "picard":
        if "M" in cfg.picard:
            return Grid(cfg.grid.T, int(cfg.picard["M"]))
        return _sub_grid(cfg.grid, PICARD_MAX_M, times)
    if method == "mc":
        if "M" in cfg.mc:
            return Grid(cfg.grid.T, int(cfg.mc["M"]))
        return _sub_grid(cfg.grid, MC_MAX_M, times)
    return cfg.grid


def _check_times(grid, targets, method):
    off = [t for t, _ in targets if not grid.on_grid(t)]
    if off:
        raise Inapplicable(f"{method} grid (M={grid.M}) misses target times {off}")


def _from_table(table, targets, method, N):
    return [Estimate(t, a, table.moment(t, a), 0.0, method, table.grid.M, N)
            for t, a in targets]


def _run_step(cfg, model, kernel, grid, seeds):
    table = solve_moments(model, kernel, cfg.N, grid)
    return _from_table(table, cfg.targets, "step", cfg.N)


def _run_picard(cfg, model, kernel, grid, seeds):
    _check_times(grid, cfg.targets, "picard")
    table = solve_moments_picard(model, kernel, cfg.N, grid,
                                 tol=float(cfg.picard.get("tol", 1e-10)))
    return _from_table(table, cfg.targets, "picard", cfg.N)


def _run_voc(cfg, model, kernel, grid, seeds):
    targets = [(t, a) for t, a in cfg.targets if sum(a) <= 2]
    if not targets:
        raise Inapplicable("variation of constants covers first and second moments only")
    table = voc_moments(model, kernel, grid)
    return _from_table(table, targets, "voc", 2)


def _run_affine(cfg, model, kernel, grid, seeds):
    if not model.is_affine:
        raise Inapplicable("affine recursion needs A_jk = 0")
    table = affine_moments_recursive(model, kernel, cfg.N, grid)
    return _from_table(table, cfg.targets, "affine", cfg.N)


def _run_classical(cfg, model, kernel, grid, seeds):
    if not isinstance(kernel, Constant):
        raise Inapplicable("classical moment ODE needs a constant kernel")
    if not model.constant_g0:
        raise Inapplicable("classical moment ODE needs a constant initial value")
    c = kernel.c
    # K = c turns the equation into an Ito SDE with drift c b and diffusion c^2 a
    m = model.replace(b0=c * model.b0, B=c * model.B, A0=c * c * model.A0,
                      A1=c * c * model.A1, A2=c * c * model.A2)
    out = []
    cache = {}
    for t, a in cfg.targets:
        if t not in cache:
            cache[t] = classical_moments_ode(m, model.x0, cfg.N, t)
        out.append(Estimate(t, a, float(cache[t][a]), 0.0, "classical", 0, cfg.N))
    return out


def _run_mc(cfg, model, kernel, grid, seeds):
    _check_times(grid, cfg.targets, "mc")
    paths = int(cfg.mc.get("paths", 10_000))
    times = sorted({t for t, _ in cfg.targets})
    if isinstance(model.state_space, UnitBall):
        ens = simulate_ball(model, kernel, grid, paths, seeds["mc"], record_times=times,
                            assume_kernel=bool(cfg.mc.get("assume_kernel", False)))
    else:
        ens = simulate_paths(model, kernel, grid, paths, seeds["mc"], record_times=times)
    out = []
    for t, a in cfg.targets:
        mean, se = mc_moment(ens, t, a)
        out.append(Estimate(t, a, mean, se, "mc", grid.M, cfg.N))
    return out


def _run_jump(cfg, model, kernel, grid, seeds):
    ok, why = is_jump_dual_eligible(kernel, grid.T)
    if not ok:
        raise Inapplicable(why)
    if not model.constant_g0:
        raise Inapplicable("jump dual needs a constant initial value")
    signed = cfg.jump.get("mode", "unsigned") == "signed"
    if channels_from_model(model).signed and not signed:
        raise Inapplicable("negative channel weights need jump.mode = 'signed'")
    n = int(cfg.jump.get("samples", 100_000))
    out = []
    for t, a in cfg.targets:
        if t == 0:
            out.append(Estimate(t, a, float(np.prod(model.x0 ** np.array(a))), 0.0,
                                "jump", 0, cfg.N))
            continue
        mean, se = jump_dual_moment_multi(model, kernel, a, t, n, seeds["jump"],
                                          signed=signed)
        out.append(Estimate(t, a, mean, se, "jump", 0, cfg.N))
    return out


RUNNERS = {"step": _run_step, "picard": _run_picard, "voc": _run_voc,
           "affine": _run_affine, "classical": _run_classical, "mc": _run_mc,
           "jump": _run_jump}


def _seeds(cfg, seed):
    base = 0 if seed is None else int(seed)
    return {"mc": int(cfg.mc.get("seed", base)) if seed is None else base,
            "jump": int(cfg.jump.get("seed", base)) if seed is None else base}


def _run_one(cfg, method, seeds):
    t0 = time.perf_counter()
    try:
        model = cfg.model_for(method)
        kernel = cfg.kernel_for(method)
        grid = _method_grid(cfg, method)
        rows = RUNNERS[method](cfg, model, kernel, grid, seeds)
        status = "ok"
    except Inapplicable as exc:
        rows, status = [], f"inapplicable: {exc}"
    except ConfigError:
        raise
    except Exception as exc:
        rows, status = [], f"error: {type(exc).__name__}: {exc}"
    return rows, status, time.perf_counter() - t0


def write_results_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([_num(r.t), format_alpha(r.alpha), _num(r.value), _num(r.stderr),
                        r.method, r.M, r.N])


def read_results_csv(path):
    with open(path, newline="") as fh:
        return [Estimate(float(r["t"]), parse_alpha(r["alpha"]), float(r["value"]),
                         float(r["stderr"]), r["method"], int(r["M"]), int(r["N"]))
                for r in csv.DictReader(fh)]


def _manifest(cfg, run, extra=None):
    man = {"versions": versions(), "config": cfg.raw, "methods": cfg.methods,
           "status": run.status, "timings_s": run.timings, "seeds": run.seeds,
           "grids": run.grids, "files": [str(Path(f).name) for f in run.files],
           "jump_assume_moment_bounds": bool(cfg.jump.get("assume_moment_bounds", True)),
           "created": time.strftime("%Y-%m-%dT%H:%M:%S")}
    if extra:
        man.update(extra)
    return man


def _out_dir(cfg, out_dir):
    if out_dir is None:
        out_dir = cfg.output.get("dir")
    if out_dir is None:
        return None
    p = Path(out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def run_experiment(cfg, out_dir=None, seed=None, plots=None, parallel=False):
    """Run every requested method, then write CSVs, PNG figures and a manifest.

    Failures of individual methods are recorded in ``status`` and the run
    continues.  With no targets only the manifest is written.
    """
    seeds = _seeds(cfg, seed)
    run = ExperimentRun({}, {}, {}, seeds, {})
    for m in cfg.methods:
        g = _method_grid(cfg, m)
        run.grids[m] = {"T": g.T, "M": 0 if m in ("jump", "classical") else g.M}
    if cfg.targets:
        if parallel and len(cfg.methods) > 1:
            with ThreadPoolExecutor(max_workers=len(cfg.methods)) as ex:
                futs = {m: ex.submit(_run_one, cfg, m, seeds) for m in cfg.methods}
                outs = {m: f.result() for m, f in futs.items()}
        else:
            outs = {m: _run_one(cfg, m, seeds) for m in cfg.methods}
        for m in cfg.methods:
            run.results[m], run.status[m], run.timings[m] = outs[m]
    else:
        for m in cfg.methods:
            run.status[m], run.timings[m] = "skipped: no targets", 0.0
    out = _out_dir(cfg, out_dir)
    run.out_dir = out
    if out is not None:
        for m, rows in run.results.items():
            if rows:
                p = out / f"{m}.csv"
                write_results_csv(p, rows)
                run.files.append(p)
        if plots is None:
            plots = bool(cfg.output.get("plots", True))
        if plots and any(run.results.values()):
            from .plotting import plot_estimates
            p = out / "estimates.png"
            plot_estimates(run.results, p)
            run.files.append(p)
        with open(out / "manifest.json", "w") as fh:
            json.dump(_manifest(cfg, run), fh, indent=2, default=str)
    return run


@dataclass
class Comparison:
    t: float
    alpha: tuple
    method_a: str
    method_b: str
    value_a: float
    value_b: float
    abs_diff: float
    threshold: float
    passed: bool


@dataclass
class ComparisonTable:
    rows: list
    run: ExperimentRun

    @property
    def passed(self):
        return all(r.passed for r in self.rows)

    def failing_methods(self):
        """Methods that fail against every other method they were compared with."""
        seen, bad = {}, {}
        for r in self.rows:
            for m in (r.method_a, r.method_b):
                seen[m] = seen.get(m, 0) + 1
                bad[m] = bad.get(m, 0) + (not r.passed)
        return sorted(m for m in seen if bad[m] == seen[m])


def _threshold(cfg, a, b):
    ref = max(abs(a.value), abs(b.value))
    det = [cfg.rel_tol(e.method) for e in (a, b) if e.method not in STOCHASTIC]
    slack = max(det) * ref if det else 0.0
    if a.method in STOCHASTIC or b.method in STOCHASTIC:
        return cfg.n_sigma * math.hypot(a.stderr, b.stderr) + slack
    return slack + 1e-14 * ref


def compare_estimators(cfg, out_dir=None, seed=None, plots=None, parallel=False):
    """Pairwise PASS/FAIL table over all methods sharing a target.

    Two deterministic values must agree to the larger relative tolerance of
    the pair; when a stochastic estimate is involved the threshold is
    n_sigma combined standard errors plus the deterministic tolerance.
    """
    if len(cfg.methods) < 2:
        raise ConfigError("need ≥ 2 methods")
    run = run_experiment(cfg, out_dir, seed, plots, parallel)
    if len(run.succeeded) < 2:
        raise ConfigError(f"need ≥ 2 methods; only {run.succeeded} produced results "
                          f"({run.status})")
    by_target = {}
    for m in run.succeeded:
        for e in run.results[m]:
            by_target.setdefault((e.t, e.alpha), []).append(e)
    rows = []
    for (t, alpha), ests in by_target.items():
        for a, b in combinations(ests, 2):
            diff = abs(a.value - b.value)
            thr = _threshold(cfg, a, b)
            rows.append(Comparison(t, alpha, a.method, b.method, a.value, b.value, diff,
                                   thr, bool(diff <= thr)))
    table = ComparisonTable(rows, run)
    if run.out_dir is not None:
        p = run.out_dir / "comparison.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(COMPARE_COLUMNS)
            for r in rows:
                w.writerow([_num(r.t), format_alpha(r.alpha), r.method_a, r.method_b,
                            _num(r.value_a), _num(r.value_b), _num(r.abs_diff),
                            _num(r.threshold), "PASS" if r.passed else "FAIL"])
        run.files.append(p)
        man = _manifest(cfg, run, {"comparison": {"passed": table.passed,
                                                  "n_pairs": len(rows),
                                                  "n_fail": sum(not r.passed for r in rows)}})
        with open(run.out_dir / "manifest.json", "w") as fh:
            json.dump(man, fh, indent=2, default=str)
    return table


@dataclass
class ConvergenceStudy:
    param: str
    method: str
    params: list
    errors: list
    rates: list
    slope: float
    reference: str


def _fit_slope(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = (x > 0) & (y > 0)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def _closed_reference(cfg, model, kernel):
    if not isinstance(kernel, Constant) or not model.constant_g0:
        return None
    est = _run_classical(cfg, model, kernel, cfg.grid, {})
    return {(e.t, e.alpha): e.value for e in est}


def emit_convergence_study(cfg, values, param="M", method=None, reference="auto",
                           out=None, seed=None, plots=None):
    """Rerun one method over a list of grid sizes or path counts.

    For ``param = "M"`` the error is the largest absolute deviation over the
    targets from the reference (the classical closed form for constant
    kernels, otherwise the finest run) and the rate is the local slope of
    log error against log step size.  For ``param = "paths"`` the error is
    the largest Monte Carlo standard error and the rate is its slope against
    log paths (about -1/2).
    """
    if not cfg.targets:
        raise ConfigError("convergence study needs targets")
    values = sorted(int(v) for v in values)
    method = method or ("mc" if param == "paths" else "step")
    seeds = _seeds(cfg, seed)
    model, kernel = cfg.model_for(method), cfg.kernel_for(method)
    times = [t for t, _ in cfg.targets]
    runs = []
    for v in values:
        if param == "M":
            g = Grid(cfg.grid.T, v)
            if not all(g.on_grid(t) for t in times):
                raise ConfigError(f"M={v} does not contain the target times")
            if method == "mc":
                rows = _run_mc(cfg, model, kernel, g, seeds)
            else:
                rows = RUNNERS[method](cfg, model, kernel, g, seeds)
        elif param == "paths":
            if method != "mc":
                raise ConfigError("a paths study needs method 'mc'")
            cfg_v = _with(cfg, mc={**cfg.mc, "paths": v})
            rows = _run_mc(cfg_v, model, kernel, _method_grid(cfg, "mc"), seeds)
        else:
            raise ConfigError(f"unknown study parameter {param!r}")
        runs.append({(e.t, e.alpha): e for e in rows})
    if param == "paths":
        errors = [max(e.stderr for e in r.values()) for r in runs]
        xs = values
        ref_name = "standard error"
    else:
        ref = _closed_reference(cfg, model, kernel) if reference in ("auto", "closed") else None
        if ref is None and reference == "closed":
            raise ConfigError("no closed form for this configuration")
        if ref is None:
            ref = {k: e.value for k, e in runs[-1].items()}
            runs, values = runs[:-1], values[:-1]
            ref_name = f"finest run M={values[-1] if values else None}"
        else:
            ref_name = "closed form"
        errors = [max(abs(e.value - ref[k]) for k, e in r.items()) for r in runs]
        xs = [cfg.grid.T / v for v in values]
    rates = [float("nan")]
    for i in range(1, len(values)):
        if errors[i] > 0 and errors[i - 1] > 0:
            rates.append(math.log(errors[i] / errors[i - 1]) / math.log(xs[i] / xs[i - 1]))
        else:
            rates.append(float("nan"))
    study = ConvergenceStudy(param, method, values, errors, rates, _fit_slope(xs, errors),
                             ref_name)
    if out is not None:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CONVERGENCE_COLUMNS)
            for v, e, r in zip(values, errors, rates):
                w.writerow([v, _num(e), _num(r)])
        if plots is None:
            plots = bool(cfg.output.get("plots", True))
        if plots:
            from .plotting import plot_convergence
            plot_convergence(study, out.with_suffix(".png"))
    return study


def _with(cfg, **kw):
    import dataclasses
    return dataclasses.replace(cfg, **kw)


def validate_config(cfg):
    """Model validation report plus the applicability of each requested method."""
    model, kernel = cfg.model_for(), cfg.kernel_for()
    report = validate_model(model)
    notes = {}
    for m in cfg.methods:
        why = None
        if m == "affine" and not model.is_affine:
            why = "needs A_jk = 0"
        elif m == "classical" and not (isinstance(kernel, Constant) and model.constant_g0):
            why = "needs a constant kernel and constant initial value"
        elif m == "jump":
            ok, reason = is_jump_dual_eligible(kernel, cfg.grid.T)
            if not ok:
                why = reason
            elif (channels_from_model(model).signed
                  and cfg.jump.get("mode", "unsigned") != "signed"):
                why = "negative channel weights need jump.mode = 'signed'"
        elif m == "voc" and cfg.targets and all(sum(a) > 2 for _, a in cfg.targets):
            why = "first and second moments only"
        elif m == "mc" and isinstance(model.state_space, UnitBall) \
                and not kernel.completely_monotone and not cfg.mc.get("assume_kernel"):
            why = "ball simulation needs a completely monotone kernel"
        notes[m] = "applicable" if why is None else f"inapplicable: {why}"
    return report, notes
