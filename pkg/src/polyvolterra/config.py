"""Experiment configuration files.

An experiment is one TOML file with dotted sections::

    methods = ["step", "classical", "mc"]

    [model]
    d = 1
    B = [0.1]
    Aij = [{i = 1, j = 1, A = [0.04]}]
    x0 = [1.0]

    [kernel]
    family = "constant"

    [grid]
    T = 1.0
    M = 2000

    [targets]
    times = [1.0]
    alphas = [[1], [2], [3]]

Optional sections: ``mc`` (paths, seed, M), ``jump`` (samples, seed, mode,
assume_moment_bounds), ``picard`` (M, tol), ``compare`` (n_sigma and
per-method relative tolerances), ``output`` (dir, plots) and
``overrides.<method>`` holding partial ``model`` or ``kernel`` blocks merged
into the inputs of that method only.
"""

import copy
import sys
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid
from .kernels import kernel_from_config
from .model import model_from_config

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

METHODS = ("step", "picard", "voc", "affine", "classical", "mc", "jump")
STOCHASTIC = ("mc", "jump")

DEFAULT_REL_TOL = {"step": 5e-3, "picard": 5e-3, "voc": 1e-2, "affine": 1e-2,
                   "classical": 1e-8, "mc": 0.0, "jump": 0.0}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    model: dict
    kernel: dict
    grid: Grid
    targets: list                       # [(t, alpha tuple)]
    methods: list
    mc: dict = field(default_factory=dict)
    jump: dict = field(default_factory=dict)
    picard: dict = field(default_factory=dict)
    compare: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @property
    def d(self):
        return int(self.model.get("d", 1))

    @property
    def N(self):
        """Highest target order, at least 1."""
        return max([1] + [sum(a) for _, a in self.targets])

    def model_for(self, method=None):
        block = copy.deepcopy(self.model)
        block.update(self.overrides.get(method, {}).get("model", {}))
        try:
            return model_from_config(block)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"model block: {exc}") from exc

    def kernel_for(self, method=None):
        block = copy.deepcopy(self.kernel)
        block.update(self.overrides.get(method, {}).get("kernel", {}))
        try:
            return kernel_from_config(block, self.grid.T)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"kernel block: {exc}") from exc

    def rel_tol(self, method):
        tol = self.compare.get("rel_tol", {})
        return float(tol.get(method, DEFAULT_REL_TOL[method]))

    @property
    def n_sigma(self):
        return float(self.compare.get("n_sigma", 3.0))


def _parse_alpha(a, d):
    alpha = tuple(int(v) for v in np.atleast_1d(a))
    if len(alpha) != d or min(alpha) < 0:
        raise ConfigError(f"target multi-index {a} needs {d} nonnegative entries")
    return alpha


def _targets(raw, d, grid):
    tg = raw.get("targets", {})
    out = []
    if isinstance(tg, list):
        for entry in tg:
            out.append((float(entry["t"]), _parse_alpha(entry["alpha"], d)))
    else:
        times = tg.get("times", [grid.T] if tg.get("alphas") else [])
        for t in times:
            for a in tg.get("alphas", []):
                out.append((float(t), _parse_alpha(a, d)))
    for t, _ in out:
        if not grid.on_grid(t):
            raise ConfigError(f"target time {t} is not a point of the grid")
    return out


def config_from_dict(raw):
    """Validate a parsed mapping and build an ExperimentConfig."""
    raw = copy.deepcopy(raw)
    for key in ("model", "kernel", "grid"):
        if key not in raw:
            raise ConfigError(f"missing [{key}] section")
    g = raw["grid"]
    try:
        grid = Grid(float(g["T"]), int(g["M"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"grid block: {exc}") from exc
    d = int(raw["model"].get("d", 1))
    methods = list(raw.get("methods", ["step"]))
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
    mode = raw.get("jump", {}).get("mode", "unsigned")
    if mode not in ("unsigned", "signed"):
        raise ConfigError(f"jump.mode must be 'unsigned' or 'signed', got {mode!r}")
    cfg = ExperimentConfig(model=raw["model"], kernel=raw["kernel"], grid=grid,
                           targets=_targets(raw, d, grid), methods=methods,
                           mc=raw.get("mc", {}), jump=raw.get("jump", {}),
                           picard=raw.get("picard", {}), compare=raw.get("compare", {}),
                           output=raw.get("output", {}), overrides=raw.get("overrides", {}),
                           raw=raw)
    cfg.model_for()
    cfg.kernel_for()
    for m in cfg.overrides:
        if m not in METHODS:
            raise ConfigError(f"override for unknown method {m!r}")
        cfg.model_for(m)
        cfg.kernel_for(m)
    return cfg


def load_config(path):
    """Read and validate a TOML experiment file."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw)
