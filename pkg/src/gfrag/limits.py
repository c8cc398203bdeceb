"""Limit objects: compound Poisson Levy paths, their Lamperti transforms, the
self-similar cell system and its genealogical tree.

Everything is event driven. Between jumps of xi the drift is linear, and in
real time ``Y**gamma`` is linear with slope ``gamma * b``, so no time
discretization is needed.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .exponents import LevyTriplet, spine_triplet
from .genealogy import GenealogyTree, Node
from .rng import label_stream

TAIL_FLOOR = 1e-12  # paths are stopped once Y/x0 drops below this


@dataclass
class LevyPath:
    """Piecewise linear path ``xi`` with drift ``b`` between the recorded jumps."""

    drift: float
    jump_times: np.ndarray
    jump_sizes: np.ndarray
    horizon: float  # simulated up to here (or to the killing time)
    killed_at: float = math.inf
    stopped_below: bool = False  # ended because xi fell below the requested level

    def value(self, t: float) -> float:
        if t >= self.killed_at:
            return -math.inf
        i = np.searchsorted(self.jump_times, t, side="right")
        return self.drift * t + float(self.jump_sizes[:i].sum())

    def values_at_jumps(self) -> np.ndarray:
        """xi right after each jump."""
        return self.drift * self.jump_times + np.cumsum(self.jump_sizes)


def simulate_levy(triplet: LevyTriplet, horizon: float, rng: np.random.Generator,
                  stop_below: float | None = None) -> LevyPath:
    """Exact simulation on [0, horizon] (horizon may be infinite if ``stop_below`` is set)."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if math.isinf(horizon) and stop_below is None:
        raise ValueError("an infinite horizon needs a stop_below level")
    ys = np.array([y for y, _ in triplet.jumps])
    rates = np.array([r for _, r in triplet.jumps])
    total = float(rates.sum()) + triplet.killing
    b = triplet.drift_b
    probs = np.append(rates, triplet.killing) / total if total > 0 else None
    times, sizes = [], []
    t, xi = 0.0, 0.0
    while True:
        dt = rng.exponential(1 / total) if total > 0 else math.inf
        if stop_below is not None and b < 0:
            t_cross = t + (stop_below - xi) / b if xi > stop_below else t
            if t_cross <= min(t + dt, horizon):
                return LevyPath(b, np.array(times), np.array(sizes), t_cross, stopped_below=True)
        if t + dt > horizon or math.isinf(dt):
            return LevyPath(b, np.array(times), np.array(sizes), horizon)
        t += dt
        xi += b * dt
        k = rng.choice(len(probs), p=probs) if len(probs) > 1 else 0
        if k == len(ys):
            return LevyPath(b, np.array(times), np.array(sizes), t, killed_at=t)
        times.append(t)
        sizes.append(ys[k])
        xi += ys[k]
        if stop_below is not None and xi < stop_below:
            return LevyPath(b, np.array(times), np.array(sizes), t, stopped_below=True)


@dataclass
class PssmpPath:
    """Y in real time: on segment i, ``Y**gamma`` starts at ``y0[i]**gamma`` at ``t0[i]``
    and moves linearly with slope ``gamma*b`` until ``t0[i+1]`` (or zeta)."""

    x0: float
    gamma: float
    drift: float
    t0: np.ndarray
    y0: np.ndarray
    y_before: np.ndarray  # Y just before the jump that starts segment i (i >= 1)
    jumps: np.ndarray  # jump of xi starting segment i (i >= 1)
    zeta: float

    def value(self, t: float) -> float:
        if t >= self.zeta or t < 0:
            return 0.0
        i = int(np.searchsorted(self.t0, t, side="right")) - 1
        g = self.y0[i] ** self.gamma + self.gamma * self.drift * (t - self.t0[i])
        return max(g, 0.0) ** (1 / self.gamma)

    def values(self, ts) -> np.ndarray:
        return np.array([self.value(float(t)) for t in np.atleast_1d(ts)])

    def negative_jumps(self):
        """(real time, daughter size) of every negative jump."""
        out = []
        for i in range(1, len(self.t0)):
            if self.jumps[i] < 0:
                out.append((float(self.t0[i]), float(self.y_before[i] * -math.expm1(self.jumps[i]))))
        return out

    def sup_power(self, omega: float) -> float:
        ys = np.concatenate([self.y0, self.y_before[1:]])
        return float(np.max(ys) ** omega)


def _segment_duration(y: float, gamma: float, b: float, ds: float) -> float:
    """Real time spent while xi drifts for ``ds`` from level with Y = y."""
    g = y ** gamma
    if b == 0:
        return g * ds
    if math.isinf(ds):
        return g / (gamma * -b) if b < 0 else math.inf
    return g * math.expm1(gamma * b * ds) / (gamma * b)


def lamperti_pssmp(levy: LevyPath, x0: float, gamma: float) -> PssmpPath:
    """Lamperti transform of ``levy`` started at ``x0``.

    If the Levy path ended by killing, Y is sent to 0 at that instant. If it
    ended because xi fell below a level with negative drift, the remaining
    drift-only time is added in closed form.
    """
    if not x0 > 0:
        raise ValueError("x0 must be positive")
    b = levy.drift
    t0, y0, yb, jumps = [0.0], [float(x0)], [float("nan")], [0.0]
    t, s, y = 0.0, 0.0, float(x0)
    for tj, dj in zip(levy.jump_times.tolist(), levy.jump_sizes.tolist()):
        ds = tj - s
        t += _segment_duration(y, gamma, b, ds)
        y_minus = y * math.exp(b * ds)
        y = y_minus * math.exp(dj)
        s = tj
        t0.append(t)
        y0.append(y)
        yb.append(y_minus)
        jumps.append(dj)
    ds = levy.horizon - s
    if levy.stopped_below and b < 0:
        ds = math.inf
    zeta = t + _segment_duration(y, gamma, b, ds)
    if math.isinf(levy.horizon) and not levy.stopped_below:
        zeta = math.inf
    return PssmpPath(float(x0), gamma, b, np.array(t0), np.array(y0), np.array(yb),
                     np.array(jumps), zeta)


def lamperti_inverse(path: PssmpPath) -> tuple[np.ndarray, np.ndarray]:
    """(Levy time, xi) recovered at the segment starts of ``path``."""
    g, b = path.gamma, path.drift
    taus, xis = [0.0], [0.0]
    tau = 0.0
    for i in range(1, len(path.t0)):
        a = path.y0[i - 1] ** g
        dt = path.t0[i] - path.t0[i - 1]
        tau += dt / a if b == 0 else math.log1p(g * b * dt / a) / (g * b)
        taus.append(tau)
        xis.append(math.log(path.y0[i] / path.x0))
    return np.array(taus), np.array(xis)


def simulate_pssmp(triplet: LevyTriplet, x0: float, gamma: float, rng: np.random.Generator,
                   floor: float = TAIL_FLOOR) -> PssmpPath:
    """Y from ``x0`` until absorption; stopped once Y < floor * x0."""
    levy = simulate_levy(triplet, math.inf, rng, stop_below=math.log(floor))
    return lamperti_pssmp(levy, x0, gamma)


def spine_triplet_pssmp(triplet: LevyTriplet, p_bar: float, gamma: float, rng: np.random.Generator,
                        floor: float = TAIL_FLOOR) -> float:
    """Lifetime (killing or absorption) of the size-biased limit particle from 1."""
    return simulate_pssmp(spine_triplet(triplet, p_bar), 1.0, gamma, rng, floor).zeta


@dataclass
class Cell:
    birth_time: float
    initial_size: float
    path: PssmpPath
    children: list = field(default_factory=list)

    @property
    def death_time(self) -> float:
        return self.birth_time + self.path.zeta


@dataclass
class CellSystem:
    cells: dict
    size_floor: float
    exploded: bool = False
    snapshot_times: np.ndarray | None = None
    snapshot_lw: np.ndarray | None = None  # sum over cells of size**omega at the times

    @property
    def extinction_time(self) -> float:
        return max(c.death_time for c in self.cells.values())


def simulate_cell_system(triplet: LevyTriplet, gamma: float, x0: float, size_floor: float | None = None,
                         seed: int = 0, times=(), omega: float = 2.0, budget: int = 10**6,
                         max_depth: int | None = None, max_letter: int | None = None) -> CellSystem:
    """Self-similar cell system from one cell of size ``x0``.

    Every negative jump of a cell spawns a daughter of the jump's magnitude,
    ranked by decreasing size (chronologically among ties); daughters smaller
    than ``size_floor`` are dropped. Cell ``u`` draws from its own stream.
    """
    size_floor = x0 * 1e-3 if size_floor is None else float(size_floor)
    if not size_floor > 0:
        raise ValueError("size_floor must be positive")
    cells = {}
    queue = deque([((), 0.0, float(x0))])
    exploded = False
    while queue:
        if len(cells) >= budget:
            exploded = True
            break
        label, born, size = queue.popleft()
        path = simulate_pssmp(triplet, size, gamma, label_stream(seed, ("cell",) + label))
        cell = Cell(born, size, path)
        cells[label] = cell
        if max_depth is not None and len(label) >= max_depth:
            continue
        kids = sorted(path.negative_jumps(), key=lambda ts: (-ts[1], ts[0]))
        for j, (t, d) in enumerate(kids, start=1):
            if d < size_floor or (max_letter is not None and j > max_letter):
                continue
            child = label + (j,)
            cell.children.append(child)
            queue.append((child, born + t, d))
    ts = np.asarray(times, dtype=float)
    snap = None
    if ts.size:
        snap = np.zeros(ts.size)
        for c in cells.values():
            rel = ts - c.birth_time
            ok = rel >= 0
            snap[ok] += c.path.values(rel[ok]) ** omega
    return CellSystem(cells, size_floor, exploded, ts if ts.size else None, snap)


def cell_system_tree(system: CellSystem) -> GenealogyTree:
    nodes = {}
    for lab, c in system.cells.items():
        parent_birth = system.cells[lab[:-1]].birth_time if lab else 0.0
        nodes[lab] = Node(c.path.zeta, c.birth_time - parent_birth, tuple(c.children))
    return GenealogyTree(nodes)


def simulate_limit_tree(triplet: LevyTriplet, gamma: float, x0: float, depth_h: int,
                        size_floor: float | None = None, seed: int = 0) -> GenealogyTree:
    """Limit genealogical tree restricted to labels over {1..h} of length <= h.

    A daughter of size ``x`` carries a copy of the tree from size 1 with lengths
    multiplied by ``x**gamma``; here that scaling is realized by simulating the
    daughter from its own size.
    """
    if depth_h < 0:
        raise ValueError("depth_h must be non-negative")
    system = simulate_cell_system(triplet, gamma, x0, size_floor, seed,
                                  max_depth=depth_h, max_letter=depth_h)
    return cell_system_tree(system)
