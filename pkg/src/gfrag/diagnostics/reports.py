"""Report records shared by every diagnostic."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


@dataclass
class VerificationReport:
    name: str
    exact: bool
    lhs: object
    rhs: object
    tolerance: float
    passed: bool
    n_samples: int | None = None
    seed: int | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = _plain(asdict(self))
        d["pass"] = d.pop("passed")
        return d


@dataclass
class ConvergenceSeries:
    name: str
    n_grid: list
    values: list
    errors: list | None
    verdict: str  # "decreasing", "bounded", "agree", ... or "fail:<reason>"
    passed: bool
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if list(self.n_grid) != sorted(self.n_grid):
            raise ValueError("n_grid must be sorted ascending")

    def to_dict(self) -> dict:
        return _plain(asdict(self))


def mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()) if x.size else math.nan, math.nan
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    ph = successes / trials
    den = 1 + z * z / trials
    centre = (ph + z * z / (2 * trials)) / den
    half = z * math.sqrt(ph * (1 - ph) / trials + z * z / (4 * trials * trials)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


def strictly_decreasing(xs) -> bool:
    return bool(np.all(np.diff(np.asarray(xs, dtype=float)) < 0))


def non_increasing(xs) -> bool:
    return bool(np.all(np.diff(np.asarray(xs, dtype=float)) <= 0))
