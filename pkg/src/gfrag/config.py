"""Experiment configuration files.

A config is a TOML file with the tables ``kernel``, ``scaling``, ``triplet``,
``model``, ``grids`` and ``run``::

    [kernel]
    type = "random_walk"     # random_walk | levy_disc | table | descent
    p = 0.25                 # random_walk only
    # path = "rows.csv"      # table only: CSV with header n,m,prob

    [scaling]
    gamma = 1.0
    c_scale = 1.0

    [triplet]                # optional for random_walk, descent and table
    drift = -0.5
    jumps = [[-0.3, 2.0]]    # (y, rate) atoms
    killing = 0.0

    [model]
    omega = 2.0
    p_bar = 2.0
    eps = 0.1
    freezing = "auto"        # or an integer B

    [grids]
    n = [100, 1000]
    t = [0.5, 1.0]
    q = [0.5, 1.0, 1.5, 2.0]
    h = [1, 2, 4, 8]

    [run]
    reps = 1000
    seed = 0

Relative paths are resolved against the directory of the config file.
Every validation error names the offending field, e.g. ``scaling.gamma``.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .exponents import LevyTriplet, ScalingSequence, ThresholdError, choose_freezing_threshold
from .kernels import (ConfigurationError, DescentKernel, FrozenKernel, LevyDiscretizationKernel,
                      RandomWalkKernel, TableKernel)

KERNEL_TYPES = ("random_walk", "levy_disc", "table", "descent")
TOP_K = 64


class ConfigError(ValueError):
    """Schema violation; ``field`` is the dotted path of the offending entry."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field = field_path


@dataclass
class ExperimentConfig:
    kernel_type: str
    kernel_params: dict
    scaling: ScalingSequence
    triplet: LevyTriplet | None
    omega: float
    p_bar: float
    eps: float
    freezing: int
    freezing_auto: bool
    n_grid: list[int]
    t_grid: list[float]
    q_grid: list[float]
    h_grid: list[int]
    reps: int
    seed: int
    workers: int = 1
    step_cap: int = 10**6
    particle_budget: int = 10**7
    enum_budget: int = 10**7
    out: str = "out"
    top_k: int = TOP_K
    source: str | None = None
    _base: object = field(default=None, repr=False)

    @property
    def base_kernel(self):
        return self._base

    @property
    def kernel(self) -> FrozenKernel:
        return FrozenKernel(self._base, self.freezing)

    def resolved(self) -> dict:
        """JSON-ready echo of the validated config (the worker count is left out,
        since it never changes any output)."""
        t = self.triplet
        return {
            "kernel": {"type": self.kernel_type, **self.kernel_params},
            "scaling": {"gamma": self.scaling.gamma, "c_scale": self.scaling.c_scale,
                        "table": None if self.scaling.table is None else list(self.scaling.table)},
            "triplet": None if t is None else {"drift": t.drift_b, "jumps": [list(j) for j in t.jumps],
                                               "killing": t.killing},
            "model": {"omega": self.omega, "p_bar": self.p_bar, "eps": self.eps,
                      "freezing": self.freezing, "freezing_auto": self.freezing_auto},
            "grids": {"n": self.n_grid, "t": self.t_grid, "q": self.q_grid, "h": self.h_grid},
            "run": {"reps": self.reps, "seed": self.seed, "step_cap": self.step_cap,
                    "particle_budget": self.particle_budget, "enum_budget": self.enum_budget,
                    "top_k": self.top_k},
        }


def _table(doc, name, required=True) -> dict:
    t = doc.get(name)
    if t is None:
        if required:
            raise ConfigError(name, "missing table")
        return {}
    if not isinstance(t, dict):
        raise ConfigError(name, "must be a table")
    return t


def _num(tab, prefix, key, default=None, positive=False, integer=False):
    path = f"{prefix}.{key}"
    if key not in tab:
        if default is None:
            raise ConfigError(path, "missing")
        return default
    v = tab[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if integer and (not isinstance(v, int)):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(path, "must be finite")
    if positive and v <= 0:
        raise ConfigError(path, f"must be positive, got {v!r}")
    return v


def _grid(tab, key, default, integer=False):
    path = f"grids.{key}"
    v = tab.get(key, default)
    if not isinstance(v, list) or not v:
        raise ConfigError(path, "must be a non-empty list")
    for x in v:
        if isinstance(x, bool) or not isinstance(x, (int, float)) or (integer and not isinstance(x, int)):
            raise ConfigError(path, f"bad entry {x!r}")
    if integer and min(v) < 1:
        raise ConfigError(path, "entries must be positive")
    return sorted(int(x) for x in v) if integer else [float(x) for x in v]


def _triplet(doc) -> LevyTriplet | None:
    t = _table(doc, "triplet", required=False)
    if not t:
        return None
    b = _num(t, "triplet", "drift")
    jumps = t.get("jumps", [])
    if not isinstance(jumps, list):
        raise ConfigError("triplet.jumps", "must be a list of [y, rate] pairs")
    for i, j in enumerate(jumps):
        if not (isinstance(j, list) and len(j) == 2 and all(isinstance(x, (int, float)) for x in j)):
            raise ConfigError(f"triplet.jumps[{i}]", f"expected [y, rate], got {j!r}")
    try:
        return LevyTriplet(float(b), 0.0, tuple((float(y), float(r)) for y, r in jumps),
                           float(_num(t, "triplet", "killing", 0.0)))
    except ValueError as exc:
        raise ConfigError("triplet", str(exc)) from exc


def _kernel(doc, scaling, triplet, root: Path):
    k = _table(doc, "kernel")
    kind = k.get("type")
    if kind not in KERNEL_TYPES:
        raise ConfigError("kernel.type", f"must be one of {', '.join(KERNEL_TYPES)}, got {kind!r}")
    try:
        if kind == "random_walk":
            p = _num(k, "kernel", "p")
            return RandomWalkKernel(p), {"p": p}
        if kind == "descent":
            return DescentKernel(), {}
        if kind == "table":
            if not isinstance(k.get("path"), str):
                raise ConfigError("kernel.path", "missing CSV path for the table kernel")
            path = (root / k["path"]).resolve()
            if not path.is_file():
                raise ConfigError("kernel.path", f"no such file {path}")
            return TableKernel.from_csv(path), {"path": str(path)}
        if triplet is None:
            raise ConfigError("triplet", "levy_disc kernel needs a [triplet] table")
        ms = k.get("min_state")
        if ms is not None:
            ms = _num(k, "kernel", "min_state", integer=True, positive=True)
        kern = LevyDiscretizationKernel(triplet, scaling.gamma, scaling.c_scale, ms)
        return kern, {"min_state": kern.min_state}
    except ConfigurationError as exc:
        raise ConfigError("kernel", str(exc)) from exc


def _scaling(doc, root: Path) -> ScalingSequence:
    s = _table(doc, "scaling")
    gamma = _num(s, "scaling", "gamma", positive=True)
    c = _num(s, "scaling", "c_scale", 1.0, positive=True)
    table = None
    if "table" in s:
        path = (root / str(s["table"])).resolve()
        if not path.is_file():
            raise ConfigError("scaling.table", f"no such file {path}")
        try:
            table = tuple(float(x) for x in path.read_text(encoding="utf-8").split())
        except ValueError as exc:
            raise ConfigError("scaling.table", "entries must be numbers, one a_n per line") from exc
    try:
        return ScalingSequence(float(gamma), float(c), table)
    except ValueError as exc:
        raise ConfigError("scaling.table" if table else "scaling", str(exc)) from exc


def parse_config(doc: dict, root: Path = Path("."), source: str | None = None) -> ExperimentConfig:
    scaling = _scaling(doc, root)
    triplet = _triplet(doc)
    base, kparams = _kernel(doc, scaling, triplet, root)

    m = _table(doc, "model")
    omega = float(_num(m, "model", "omega", 2.0, positive=True))
    p_bar = float(_num(m, "model", "p_bar", positive=True))
    eps = float(_num(m, "model", "eps", 0.1, positive=True))
    if not eps < 1:
        raise ConfigError("model.eps", "must lie in (0, 1)")

    g = _table(doc, "grids", required=False)
    n_grid = _grid(g, "n", [100, 1000], integer=True)
    t_grid = _grid(g, "t", [0.5, 1.0])
    q_grid = _grid(g, "q", [omega / 4, omega / 2, 3 * omega / 4, omega])
    h_grid = _grid(g, "h", [1, 2, 4, 8], integer=True)
    if min(q_grid) <= 0:
        raise ConfigError("grids.q", "entries must be positive")

    r = _table(doc, "run", required=False)
    reps = int(_num(r, "run", "reps", 1000, positive=True, integer=True))
    seed = int(_num(r, "run", "seed", 0, integer=True))
    if seed < 0:
        raise ConfigError("run.seed", "must be non-negative")
    kw = {key: int(_num(r, "run", key, default, positive=True, integer=True))
          for key, default in (("workers", 1), ("step_cap", 10**6), ("particle_budget", 10**7),
                               ("enum_budget", 10**7), ("top_k", TOP_K))}
    out = r.get("out", "out")
    if not isinstance(out, str):
        raise ConfigError("run.out", "must be a path string")

    fz = m.get("freezing", "auto")
    if fz == "auto":
        try:
            B = choose_freezing_threshold(base, scaling, p_bar, max(n_grid))
        except ThresholdError as exc:
            raise ConfigError("model.freezing", f"auto selection failed: {exc}") from exc
        auto = True
    elif isinstance(fz, int) and not isinstance(fz, bool):
        B, auto = fz, False
        if B < base.min_state - 1:
            raise ConfigError("model.freezing",
                              f"B={B} is below min_state-1={base.min_state - 1} of the kernel")
    else:
        raise ConfigError("model.freezing", f"expected \"auto\" or an integer, got {fz!r}")

    return ExperimentConfig(
        kernel_type=doc["kernel"]["type"], kernel_params=kparams, scaling=scaling, triplet=triplet,
        omega=omega, p_bar=p_bar, eps=eps, freezing=int(B), freezing_auto=auto,
        n_grid=n_grid, t_grid=t_grid, q_grid=q_grid, h_grid=h_grid, reps=reps, seed=seed,
        out=out, source=source, _base=base, **kw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from exc
    except UnicodeDecodeError as exc:
        raise ConfigError("<file>", f"{path} is not UTF-8") from exc
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"TOML syntax error: {exc}") from exc
    return parse_config(doc, path.parent, str(path))
