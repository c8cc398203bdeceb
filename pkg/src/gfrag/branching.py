"""Reference (particle-by-particle) simulators.

The locally largest chain, the size-biased chain with killing and the full
Ulam-Harris particle system with freezing. Labels are tuples of positive
integers; the Eve particle is ``()``. Each particle draws from its own
label-keyed stream, so a run is a pure function of ``(kernel, n, seed)``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .exponents import ScalingSequence, kappa_n
from .kernels import ConfigurationError, FrozenKernel, as_frozen, next_state
from .rng import UniformBlock, label_stream

DEFAULT_STEP_CAP = 10**6
DEFAULT_BUDGET = 10**7


def _uniforms(rng):
    if isinstance(rng, UniformBlock) or callable(rng):
        return rng
    return UniformBlock(rng)


@dataclass
class ChainPath:
    start_n: int
    states: np.ndarray
    lifetime: int | None  # None when capped
    capped: bool = False

    def state_at(self, k: int) -> int:
        return int(self.states[min(k, len(self.states) - 1)])

    def negative_jumps(self) -> list[tuple[int, int]]:
        """(size, time) of every split, time counted from the path start."""
        s = self.states
        drops = np.nonzero(s[1:] < s[:-1])[0]
        return [(int(s[i] - s[i + 1]), int(i + 1)) for i in drops]


def _run_path(kernel: FrozenKernel, n: int, step_cap: int, uni) -> ChainPath:
    states = [n]
    x = n
    B = kernel.threshold
    k = 0
    while x > B:
        if k == step_cap:
            return ChainPath(n, np.array(states, dtype=np.int64), None, True)
        x = next_state(kernel, x, uni())
        states.append(x)
        k += 1
    return ChainPath(n, np.array(states, dtype=np.int64), k)


def simulate_chain(kernel, n: int, step_cap: int = DEFAULT_STEP_CAP, rng=None) -> ChainPath:
    """Locally largest chain from ``n`` until it enters {1..B} or hits ``step_cap``."""
    if n < 1 or step_cap < 1:
        raise ValueError("need n >= 1 and step_cap >= 1")
    kernel = as_frozen(kernel)
    rng = np.random.default_rng() if rng is None else rng
    return _run_path(kernel, int(n), int(step_cap), _uniforms(rng))


class SpineKernel:
    """Size-biased transitions with a cemetery state 0.

    From ``n > B`` the chain moves to ``m`` with mass ``p[n,m] (m/n)**p_bar`` and
    to the smaller fragment ``n-m`` with mass ``p[n,m] ((n-m)/n)**p_bar``; the
    remaining mass ``-kappa_n(p_bar)/a_n`` kills it. States ``<= B`` are stopped.
    """

    def __init__(self, kernel, p_bar: float):
        self.kernel = as_frozen(kernel)
        self.p_bar = float(p_bar)
        self._cache: dict[int, tuple[np.ndarray, np.ndarray, float]] = {}

    @property
    def threshold(self) -> int:
        return self.kernel.threshold

    def row(self, n: int) -> tuple[np.ndarray, np.ndarray, float]:
        """(targets, masses, killing mass) at state ``n``."""
        n = int(n)
        hit = self._cache.get(n)
        if hit is not None:
            return hit
        if n <= self.kernel.threshold:
            hit = (np.array([n], dtype=np.int64), np.array([1.0]), 0.0)
        else:
            ms, ps = self.kernel.support(n)
            masses: dict[int, list[float]] = {}
            for m, p in zip(ms.tolist(), ps.tolist()):
                masses.setdefault(m, []).append(p * (m / n) ** self.p_bar)
                if m < n:
                    masses.setdefault(n - m, []).append(p * ((n - m) / n) ** self.p_bar)
            targets = np.array(sorted(masses), dtype=np.int64)
            w = np.array([math.fsum(masses[t]) for t in targets.tolist()])
            kill = 1.0 - math.fsum(w)
            if kill < -1e-12:
                raise ConfigurationError(
                    f"negative killing mass {kill:.3e} at m={n}: kappa_m(p_bar) > 0, "
                    f"freezing threshold B={self.kernel.threshold} is too small")
            hit = (targets, w, max(kill, 0.0))
        self._cache[n] = hit
        return hit

    def killing_mass(self, n: int) -> float:
        return self.row(n)[2]

    def step(self, n: int, u: float) -> int:
        targets, w, _ = self.row(n)
        acc = 0.0
        for t, p in zip(targets.tolist(), w.tolist()):
            acc += p
            if u < acc:
                return t
        return 0


@dataclass
class SpinePath:
    states: np.ndarray
    killed_at: int | None
    stopped_at: int | None  # first time in {1..B}
    capped: bool = False

    @property
    def lifetime(self) -> float:
        return math.inf if self.killed_at is None else self.killed_at


def simulate_spine(kernel, scaling: ScalingSequence, p_bar: float, n: int,
                   step_cap: int = DEFAULT_STEP_CAP, rng=None) -> SpinePath:
    """Size-biased chain from ``n``; runs until killed, stopped in {1..B}, or capped."""
    spine = kernel if isinstance(kernel, SpineKernel) else SpineKernel(kernel, p_bar)
    uni = _uniforms(np.random.default_rng() if rng is None else rng)
    B = spine.threshold
    states = [int(n)]
    x = int(n)
    for k in range(1, step_cap + 1):
        if x <= B:
            return SpinePath(np.array(states, dtype=np.int64), None, k - 1)
        x = spine.step(x, uni())
        states.append(x)
        if x == 0:
            return SpinePath(np.array(states, dtype=np.int64), k, None)
    stopped = len(states) - 1 if x <= B else None
    return SpinePath(np.array(states, dtype=np.int64), None, stopped, capped=stopped is None)


@dataclass
class ParticleRecord:
    label: tuple
    birth_time: int
    birth_size: int
    path: ChainPath
    frozen: bool
    children: list[tuple] = field(default_factory=list)

    @property
    def lifetime(self) -> int | None:
        return self.path.lifetime

    @property
    def end_time(self) -> int | None:
        lt = self.path.lifetime
        return None if lt is None else self.birth_time + lt

    def size_at(self, k: int) -> int:
        """Size at absolute time ``k >= birth_time``."""
        return self.path.state_at(k - self.birth_time)


@dataclass
class SystemRun:
    start: int
    threshold: int
    seed: int
    particles: dict[tuple, ParticleRecord]
    step_cap: int
    extinct: bool
    extinction_time: int | None
    capped: bool = False
    exploded: bool = False

    @property
    def root(self) -> ParticleRecord:
        return self.particles[()]

    def snapshot(self, k: int) -> list[int]:
        return [p.size_at(k) for p in self.particles.values() if p.birth_time <= k]


def ranked_children(path: ChainPath) -> list[tuple[int, int]]:
    """Negative jumps ranked by decreasing size, chronologically among ties."""
    return sorted(path.negative_jumps(), key=lambda st: (-st[0], st[1]))


def simulate_system(kernel, n: int, step_cap: int = DEFAULT_STEP_CAP, seed: int = 0,
                    particle_budget: int = DEFAULT_BUDGET) -> SystemRun:
    """Breadth-first Ulam-Harris simulation of the frozen particle system.

    ``particle_budget`` bounds the total number of particle-steps; exceeding it
    flags the run as exploded (the remaining particles are not simulated).
    """
    if n < 1:
        raise ValueError("n must be positive")
    kernel = as_frozen(kernel)
    particles: dict[tuple, ParticleRecord] = {}
    queue = deque([((), 0, int(n))])
    used = 0
    capped = exploded = False
    while queue:
        label, born, size = queue.popleft()
        path = _run_path(kernel, size, step_cap, UniformBlock(label_stream(seed, label)))
        rec = ParticleRecord(label, born, size, path, frozen=not path.capped)
        particles[label] = rec
        capped |= path.capped
        used += len(path.states)
        if used > particle_budget:
            exploded = True
            break
        for j, (csize, t) in enumerate(ranked_children(path), start=1):
            child = label + (j,)
            rec.children.append(child)
            queue.append((child, born + t, csize))
    extinct = not (capped or exploded)
    ext_time = max(p.end_time for p in particles.values()) if extinct else None
    return SystemRun(int(n), kernel.threshold, seed, particles, step_cap, extinct, ext_time,
                     capped, exploded)


@dataclass(frozen=True)
class StoppedParticle:
    label: tuple
    hit_time: int
    hit_size: int


def stopped_population(run_or_kernel, eps: float, n: int | None = None, seed: int = 0,
                       step_cap: int = DEFAULT_STEP_CAP,
                       particle_budget: int = DEFAULT_BUDGET) -> list[StoppedParticle]:
    """First-hitting data of {1..floor(n eps)} along every line of descent.

    Accepts a finished :class:`SystemRun` (replayed) or a kernel plus ``n``
    (simulated with the hitting set frozen, which has the same law).
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if isinstance(run_or_kernel, SystemRun):
        run = run_or_kernel
    else:
        kernel = as_frozen(run_or_kernel)
        level = max(kernel.threshold, math.floor(n * eps))
        run = simulate_system(FrozenKernel(kernel.inner, level), n, step_cap, seed, particle_budget)
    level = max(run.threshold, math.floor(run.start * eps))
    out = []
    stack = [()]
    while stack:
        label = stack.pop()
        rec = run.particles.get(label)
        if rec is None:
            continue
        hits = np.nonzero(rec.path.states <= level)[0]
        stop = int(hits[0]) if hits.size else None
        if stop is not None:
            out.append(StoppedParticle(label, rec.birth_time + stop, int(rec.path.states[stop])))
        for child in rec.children:
            if stop is None or run.particles[child].birth_time - rec.birth_time <= stop:
                stack.append(child)
    out.sort(key=lambda s: s.label)
    return out


def good_set(run: SystemRun, eps: float) -> set[tuple]:
    """Labels whose ancestors (itself included) all had birth size >= n eps."""
    bound = run.start * eps
    good = set()
    stack = [()]
    while stack:
        label = stack.pop()
        rec = run.particles.get(label)
        if rec is None or rec.birth_size < bound:
            continue
        good.add(label)
        stack.extend(rec.children)
    return good


def snapshot_lq(run: SystemRun, k: int, q: float) -> float:
    """Sum of size**q over particles born by time ``k`` (frozen ones included)."""
    if q <= 0:
        raise ValueError("q must be positive")
    return math.fsum(float(s) ** q for s in run.snapshot(k))


def spine_killing_consistency(kernel, scaling: ScalingSequence, p_bar: float, states) -> float:
    """max |killing mass - (-kappa_m(p_bar)/a_m)| over ``states``."""
    spine = SpineKernel(kernel, p_bar)
    base = spine.kernel
    worst = 0.0
    for m in states:
        exp = -kappa_n(base, scaling, m, p_bar) / scaling.a(m) if m > base.threshold else 0.0
        worst = max(worst, abs(spine.killing_mass(m) - exp))
    return worst
