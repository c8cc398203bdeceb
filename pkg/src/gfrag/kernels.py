"""Transition kernels of the driving (locally largest) chain.

A kernel maps a size ``n`` to a finite law on outcomes ``m``:

* ``m > n``: the particle grows to size ``m``;
* ``ceil(n/2) <= m <= n-1``: the particle splits into ``(m, n-m)``; the chain
  follows the larger fragment ``m`` and ``n-m`` is a newborn particle;
* ``m == n``: only for frozen states (see :class:`FrozenKernel`).

Kernels expose their full support so that exponent sums and exhaustive
enumeration oracles can iterate over it; sampling is built on top of it.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exponents import LevyTriplet, ScalingSequence

SUM_TOL = 1e-12


class ConfigurationError(ValueError):
    """Invalid kernel, threshold or experiment configuration."""


def ceil_half(n: int) -> int:
    return (n + 1) // 2


def check_row(n: int, ms, ps, allow_stay: bool = False) -> None:
    """Validate one kernel row against the outcome semantics."""
    if len(ms) == 0:
        raise ConfigurationError(f"kernel support is empty at n={n}")
    total = math.fsum(float(p) for p in ps)
    if abs(total - 1.0) > SUM_TOL:
        raise ConfigurationError(f"kernel row n={n} sums to {total!r}, not 1")
    for m, p in zip(ms, ps):
        if p < 0:
            raise ConfigurationError(f"negative mass {p} at n={n}, m={m}")
        if m < ceil_half(n):
            raise ConfigurationError(
                f"outcome m={m} at n={n} is below ceil(n/2)={ceil_half(n)}")
        if m == n and not allow_stay:
            raise ConfigurationError(f"outcome m=n={n} is only legal for frozen states")


class OutcomeKind(enum.Enum):
    GROWTH = "growth"
    SPLIT = "split"
    FROZEN = "frozen"


@dataclass(frozen=True)
class KernelOutcome:
    kind: OutcomeKind
    larger: int
    smaller: int = 0

    @classmethod
    def from_target(cls, n: int, m: int) -> "KernelOutcome":
        if m > n:
            return cls(OutcomeKind.GROWTH, m, 0)
        if m < n:
            return cls(OutcomeKind.SPLIT, m, n - m)
        return cls(OutcomeKind.FROZEN, n, 0)


class TransitionKernel:
    """Base class: subclasses implement ``_row(n) -> (ms, ps)``."""

    min_state: int = 1
    name: str = "kernel"

    def __init__(self):
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _row(self, n: int):
        raise NotImplementedError

    def support(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Sorted outcomes and their masses at size ``n``."""
        n = int(n)
        row = self._cache.get(n)
        if row is None:
            if n < self.min_state:
                raise ConfigurationError(
                    f"{self.name}: n={n} is below min_state={self.min_state}")
            ms, ps = self._row(n)
            ms = np.asarray(ms, dtype=np.int64)
            ps = np.asarray(ps, dtype=np.float64)
            order = np.argsort(ms, kind="stable")
            ms, ps = ms[order], ps[order]
            check_row(n, ms, ps)
            ms.setflags(write=False)
            ps.setflags(write=False)
            row = (ms, ps)
            self._cache[n] = row
        return row

    def pmf(self, n: int, m: int) -> float:
        ms, ps = self.support(n)
        i = np.searchsorted(ms, m)
        if i < len(ms) and ms[i] == m:
            return float(ps[i])
        return 0.0

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_cache"] = {}
        return state


class RandomWalkKernel(TransitionKernel):
    """Grow by one with probability ``p``, otherwise shed a unit particle.

    At size 1 a split is impossible; the unfrozen walk is reflected to 2 so
    that an unfrozen system started from 1 keeps producing unit particles.
    """

    name = "random_walk"

    def __init__(self, p: float):
        super().__init__()
        if not 0.0 < p < 0.5:
            raise ConfigurationError(f"random walk probability p={p} must lie in (0, 1/2)")
        self.p = float(p)
        self.min_state = 1

    def _row(self, n):
        if n == 1:
            return [2], [1.0]
        return [n - 1, n + 1], [1.0 - self.p, self.p]

    def __repr__(self):
        return f"RandomWalkKernel(p={self.p})"


def make_random_walk_kernel(p: float) -> RandomWalkKernel:
    return RandomWalkKernel(p)


class DescentKernel(TransitionKernel):
    """Deterministic descent: every particle of size n>=2 splits into (n-1, 1)."""

    name = "descent"
    min_state = 2

    def _row(self, n):
        return [n - 1], [1.0]

    def __repr__(self):
        return "DescentKernel()"


class TableKernel(TransitionKernel):
    """Kernel given by explicit rows ``{n: {m: prob}}``."""

    name = "table"

    def __init__(self, rows: dict[int, dict[int, float]], source: str | None = None):
        super().__init__()
        if not rows:
            raise ConfigurationError("table kernel has no rows")
        self.rows = {int(n): {int(m): float(p) for m, p in r.items()} for n, r in rows.items()}
        for n, r in self.rows.items():
            ms = sorted(r)
            check_row(n, ms, [r[m] for m in ms])
        self.min_state = min(self.rows)
        self.max_state = max(self.rows)
        self.source = source

    def _row(self, n):
        r = self.rows.get(n)
        if r is None:
            raise ConfigurationError(f"table kernel has no row for n={n}")
        ms = sorted(r)
        return ms, [r[m] for m in ms]

    @classmethod
    def from_csv(cls, path) -> "TableKernel":
        rows: dict[int, dict[int, float]] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["n", "m", "prob"]:
                raise ConfigurationError(f"{path}: header must be 'n,m,prob'")
            for line, rec in enumerate(reader, start=2):
                try:
                    n, m, p = int(rec["n"]), int(rec["m"]), float(rec["prob"])
                except (TypeError, ValueError) as exc:
                    raise ConfigurationError(f"{path}:{line}: bad row {rec}") from exc
                row = rows.setdefault(n, {})
                row[m] = row.get(m, 0.0) + p
        return cls(rows, source=str(path))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "m", "prob"])
            for n in sorted(self.rows):
                for m in sorted(self.rows[n]):
                    w.writerow([n, m, repr(self.rows[n][m])])

    def __repr__(self):
        return f"TableKernel({len(self.rows)} rows, n in [{self.min_state}, {self.max_state}])"


@dataclass
class Distortion:
    """How far a discretized atom landed from its ideal position ``n e^y``."""

    n: int
    y: float
    ideal: float
    target: int
    clamped: bool


class LevyDiscretizationKernel(TransitionKernel):
    """Finite-activity Levy triplet turned into a transition kernel.

    For ``a_n = c_scale * n**gamma`` and each atom ``(y, rate)`` the chain jumps
    to ``round(n e^y)`` with probability ``rate / a_n``; split targets are
    clamped into ``[ceil(n/2), n-1]`` and growth targets are at least ``n+1``.
    The residual mass ``r`` carries the drift: it moves to
    ``round(n exp(b / (a_n r)))`` rounded away from ``n`` in the direction of
    ``b``. For ``b == 0`` it is split evenly between ``n-1`` and ``n+1``.
    """

    name = "levy_disc"

    def __init__(self, triplet: LevyTriplet, gamma: float, c_scale: float = 1.0,
                 min_state: int | None = None):
        super().__init__()
        if triplet.gaussian != 0:
            raise ConfigurationError("Gaussian component must be 0 for the discretization kernel")
        if triplet.killing != 0:
            raise ConfigurationError("killed triplets cannot be discretized (no cemetery outcome)")
        if gamma <= 0 or c_scale <= 0:
            raise ConfigurationError("gamma and c_scale must be positive")
        for y, rate in triplet.jumps:
            if y <= -math.log(2.0):
                raise ConfigurationError(
                    f"atom y={y} at or below -log 2: split fragments cannot undershoot half")
        self.triplet = triplet
        self.scaling = ScalingSequence(gamma, c_scale)
        self.total_rate = math.fsum(r for _, r in triplet.jumps)
        smallest = self._smallest_valid_state()
        if min_state is None:
            min_state = smallest
        elif min_state < smallest:
            raise ConfigurationError(
                f"min_state={min_state} leaves insufficient residual mass; need >= {smallest}")
        self.min_state = int(min_state)

    def _valid_at(self, n: int) -> bool:
        a = self.scaling.a(n)
        resid = 1.0 - self.total_rate / a
        if resid <= 0:
            return False
        b = self.triplet.drift_b
        if b < 0:
            return round(n * math.exp(b / (a * resid))) >= ceil_half(n) and n >= 2
        return n >= 2

    def _smallest_valid_state(self) -> int:
        n = 2
        while not self._valid_at(n):
            n += 1
            if n > 10**9:
                raise ConfigurationError("no valid min_state below 1e9")
        # every condition is monotone in n because a_n increases
        return n

    def _atoms(self, n: int):
        a = self.scaling.a(n)
        out = []
        for y, rate in self.triplet.jumps:
            ideal = n * math.exp(y)
            if y < 0:
                m = min(max(round(ideal), ceil_half(n)), n - 1)
            else:
                m = max(n + 1, round(ideal))
            out.append((y, ideal, m, rate / a))
        return a, out

    def _row(self, n):
        if not self._valid_at(n):
            raise ConfigurationError(f"levy_disc: insufficient residual mass at n={n}")
        a, atoms = self._atoms(n)
        masses: dict[int, float] = {}
        for _, _, m, p in atoms:
            masses[m] = masses.get(m, 0.0) + p
        resid = 1.0 - math.fsum(p for *_, p in atoms)
        b = self.triplet.drift_b
        if b == 0:
            for m in (n - 1, n + 1):
                masses[m] = masses.get(m, 0.0) + resid / 2
        else:
            x = round(n * math.exp(b / (a * resid)))
            m = max(n + 1, x) if b > 0 else min(n - 1, x)
            masses[m] = masses.get(m, 0.0) + resid
        ms = sorted(masses)
        return ms, [masses[m] for m in ms]

    def distortion(self, n: int) -> list[Distortion]:
        _, atoms = self._atoms(n)
        return [Distortion(n, y, ideal, m, m != round(ideal)) for y, ideal, m, _ in atoms]

    def distortion_report(self, n_grid) -> dict:
        """Per-n worst relative displacement of atoms and clamping counts."""
        rep = {"n": [], "max_rel_displacement": [], "clamped": []}
        for n in n_grid:
            d = self.distortion(int(n))
            rep["n"].append(int(n))
            rep["max_rel_displacement"].append(
                max((abs(x.target - x.ideal) / n for x in d), default=0.0))
            rep["clamped"].append(sum(x.clamped for x in d))
        return rep

    def __repr__(self):
        return (f"LevyDiscretizationKernel({self.triplet}, gamma={self.scaling.gamma}, "
                f"c_scale={self.scaling.c_scale}, min_state={self.min_state})")


def make_levy_discretization_kernel(triplet: LevyTriplet, gamma: float, c_scale: float = 1.0,
                                    min_state: int | None = None) -> LevyDiscretizationKernel:
    return LevyDiscretizationKernel(triplet, gamma, c_scale, min_state)


class FrozenKernel(TransitionKernel):
    """``inner`` above ``threshold``; absorbing at and below it."""

    def __init__(self, inner: TransitionKernel, threshold: int):
        super().__init__()
        if threshold < 0:
            raise ConfigurationError("freezing threshold must be non-negative")
        if threshold < inner.min_state - 1:
            raise ConfigurationError(
                f"freezing threshold B={threshold} leaves states {threshold + 1}.."
                f"{inner.min_state - 1} where {inner.name} is undefined")
        self.inner = inner
        self.threshold = int(threshold)
        self.min_state = 1
        self.name = f"frozen({inner.name})"

    @property
    def B(self) -> int:
        return self.threshold

    def is_frozen(self, n: int) -> bool:
        return n <= self.threshold

    def support(self, n: int):
        n = int(n)
        if n <= self.threshold:
            row = self._cache.get(n)
            if row is None:
                ms = np.array([n], dtype=np.int64)
                ps = np.array([1.0])
                ms.setflags(write=False)
                ps.setflags(write=False)
                row = self._cache[n] = (ms, ps)
            return row
        return self.inner.support(n)

    def __repr__(self):
        return f"FrozenKernel({self.inner!r}, B={self.threshold})"


def as_frozen(kernel: TransitionKernel, threshold: int | None = None) -> FrozenKernel:
    if isinstance(kernel, FrozenKernel):
        if threshold is not None and threshold != kernel.threshold:
            return FrozenKernel(kernel.inner, threshold)
        return kernel
    return FrozenKernel(kernel, 0 if threshold is None else threshold)


def sample_step(kernel: FrozenKernel, n: int, rng) -> KernelOutcome:
    """Draw one transition from size ``n``.

    ``rng`` is a numpy Generator or a zero-argument callable returning a
    uniform in [0, 1).
    """
    if n < 1:
        raise ConfigurationError(f"sizes must be positive, got n={n}")
    kernel = as_frozen(kernel)
    if kernel.is_frozen(n):
        return KernelOutcome(OutcomeKind.FROZEN, n, 0)
    ms, ps = kernel.support(n)
    u = rng() if callable(rng) else rng.random()
    i = min(int(np.searchsorted(np.cumsum(ps), u, side="right")), len(ms) - 1)
    return KernelOutcome.from_target(n, int(ms[i]))


def next_state(kernel: TransitionKernel, n: int, u: float) -> int:
    ms, ps = kernel.support(n)
    if len(ms) == 1:
        return int(ms[0])
    acc = 0.0
    for m, p in zip(ms, ps):
        acc += p
        if u < acc:
            return int(m)
    return int(ms[-1])


@dataclass
class KernelTable:
    """Dense padded copy of a kernel's rows for vectorized sampling.

    Row ``n`` holds up to ``width`` targets and their cumulative masses; padding
    repeats the last target with cumulative mass 1. Rows the kernel cannot
    evaluate are flagged invalid and raise when sampled.
    """

    kernel: TransitionKernel
    targets: np.ndarray = field(init=False)
    cum: np.ndarray = field(init=False)
    valid: np.ndarray = field(init=False)

    def __post_init__(self):
        self.targets = np.zeros((1, 1), dtype=np.int64)
        self.cum = np.ones((1, 1))
        self.valid = np.zeros(1, dtype=bool)
        self._rows: list = [None]

    @property
    def nmax(self) -> int:
        return len(self._rows) - 1

    def _fetch(self, n):
        try:
            return self.kernel.support(n)
        except ConfigurationError:
            return None

    def ensure(self, nmax: int) -> None:
        nmax = int(nmax)
        if nmax <= self.nmax:
            return
        new_max = max(nmax, 2 * self.nmax, 16)
        for n in range(self.nmax + 1, new_max + 1):
            self._rows.append(self._fetch(n))
        width = max((len(r[0]) for r in self._rows if r is not None), default=1)
        targets = np.zeros((new_max + 1, width), dtype=np.int64)
        cum = np.ones((new_max + 1, width))
        valid = np.zeros(new_max + 1, dtype=bool)
        for n, r in enumerate(self._rows):
            if r is None:
                continue
            ms, ps = r
            k = len(ms)
            targets[n, :k] = ms
            targets[n, k:] = ms[-1]
            c = np.cumsum(ps)
            cum[n, :k] = c
            valid[n] = True
        self.targets, self.cum, self.valid = targets, cum, valid

    def sample(self, states: np.ndarray, u: np.ndarray) -> np.ndarray:
        if states.size == 0:
            return states.copy()
        self.ensure(int(states.max()))
        if not self.valid[states].all():
            bad = np.unique(states[~self.valid[states]])
            raise ConfigurationError(f"kernel undefined at states {bad[:10].tolist()}")
        idx = (self.cum[states] <= u[:, None]).sum(axis=1)
        np.minimum(idx, self.targets.shape[1] - 1, out=idx)
        return self.targets[states, idx]
