"""Vectorized Monte Carlo over many independent replicates.

The scalar simulators in :mod:`gfrag.branching` are the reference; these run
the same laws in lockstep over numpy arrays and only keep the per-replicate
statistics the diagnostics need. A call consumes its generator in a fixed
order, so results depend only on the generator state and the arguments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .branching import SpineKernel
from .kernels import ConfigurationError, KernelTable, as_frozen


class SpineTable(KernelTable):
    """Dense rows of the size-biased chain; target 0 is the cemetery."""

    def __init__(self, kernel, p_bar: float):
        spine = kernel if isinstance(kernel, SpineKernel) else SpineKernel(kernel, p_bar)
        self.errors: dict[int, Exception] = {}
        super().__init__(spine)

    def _fetch(self, n):
        if n == 0:
            return np.array([0]), np.array([1.0])
        try:
            targets, w, kill = self.kernel.row(n)
        except ConfigurationError as exc:
            self.errors[n] = exc
            return None
        if n <= self.kernel.threshold:
            return targets, w
        return np.concatenate(([0], targets)), np.concatenate(([kill], w))

    def sample(self, states, u):
        if states.size:
            self.ensure(int(states.max()))
            bad = states[~self.valid[states]]
            if bad.size:
                m = int(bad.min())
                raise self.errors.get(m, ConfigurationError(f"spine undefined at m={m}"))
        return super().sample(states, u)


@dataclass
class BatchChains:
    lifetime: np.ndarray  # -1 where capped
    paths: np.ndarray | None = None  # (reps, steps+1), padded with the final state


def batch_chain(kernel, n, reps: int, rng: np.random.Generator, step_cap: int = 10**6,
                record: bool = False, table: KernelTable | None = None) -> BatchChains:
    """``reps`` independent locally largest chains started from ``n`` (scalar or array)."""
    kernel = as_frozen(kernel)
    table = table or KernelTable(kernel)
    B = kernel.threshold
    states = np.broadcast_to(np.asarray(n, dtype=np.int64), (reps,)).copy()
    lifetime = np.where(states <= B, 0, -1).astype(np.int64)
    cols = [states.copy()] if record else None
    alive = np.nonzero(states > B)[0]
    k = 0
    while alive.size and k < step_cap:
        states[alive] = table.sample(states[alive], rng.random(alive.size))
        k += 1
        done = states[alive] <= B
        lifetime[alive[done]] = k
        alive = alive[~done]
        if record:
            cols.append(states.copy())
    paths = np.stack(cols, axis=1) if record else None
    return BatchChains(lifetime, paths)


@dataclass
class BatchSpines:
    hit_time: np.ndarray  # first time <= stop level, -1 if never
    hit_size: np.ndarray  # 0 if never
    killed_at: np.ndarray  # -1 if not killed before stopping
    capped: np.ndarray

    @property
    def survived(self) -> np.ndarray:
        """Indicator of {killing time > hitting time}."""
        return self.hit_time >= 0


def batch_spine(table: SpineTable, n: int, reps: int, rng: np.random.Generator,
                stop_level: int | None = None, step_cap: int = 10**6) -> BatchSpines:
    """Size-biased chains from ``n`` run until killed or until they reach ``stop_level``.

    States in ``(stop_level, B]`` are absorbing: such chains never hit the level
    and count as not surviving to it.
    """
    B = table.kernel.threshold
    level = B if stop_level is None else int(stop_level)
    states = np.full(reps, int(n), dtype=np.int64)
    hit_time = np.where(states <= level, 0, -1).astype(np.int64)
    hit_size = np.where(states <= level, states, 0)
    killed = np.full(reps, -1, dtype=np.int64)
    capped = np.zeros(reps, dtype=bool)
    alive = np.nonzero(states > max(level, B))[0]
    k = 0
    while alive.size:
        if k == step_cap:
            capped[alive] = True
            break
        s = table.sample(states[alive], rng.random(alive.size))
        states[alive] = s
        k += 1
        dead = s == 0
        killed[alive[dead]] = k
        hit = (s > 0) & (s <= level)
        hit_time[alive[hit]] = k
        hit_size[alive[hit]] = s[hit]
        alive = alive[(s > max(level, B))]
    return BatchSpines(hit_time, hit_size, killed, capped)


@dataclass
class BatchSystem:
    """Per-replicate statistics of a batch of frozen particle systems."""

    extinction_time: np.ndarray  # -1 where capped or exploded
    n_particles: np.ndarray
    capped: np.ndarray
    exploded: np.ndarray
    power_sums: dict = field(default_factory=dict)  # q -> sum of final size**q
    tail_sup: dict = field(default_factory=dict)  # h -> sup_k sum_{u not in U_h} size**q
    snapshots: np.ndarray | None = None  # (reps, len(times)) sum of size**q at times
    trunc_height: dict = field(default_factory=dict)  # h -> height of the U_h-truncated tree
    good_outside: dict = field(default_factory=dict)  # h -> some good label lies outside U_h


class _Timeline:
    """Per-replicate sums over time, grown on demand.

    Slot 0 collects every particle; slot i >= 1 collects particles outside U_{h_i}.
    Alive particles add their size at each time; absorbed ones add a constant
    from then on through a difference array.
    """

    def __init__(self, n_slots, reps):
        self.direct = np.zeros((n_slots, reps, 64))
        self.diff = np.zeros((n_slots, reps, 64))

    def _grow(self, t):
        T = self.direct.shape[2]
        if t < T:
            return
        new = max(2 * T, t + 1)
        pad = ((0, 0), (0, 0), (0, new - T))
        self.direct = np.pad(self.direct, pad)
        self.diff = np.pad(self.diff, pad)

    def add(self, slots_mask, reps, times, values, constant=False):
        if not times.size:
            return
        self._grow(int(times.max()))
        arr = self.diff if constant else self.direct
        for s in range(slots_mask.shape[0]):
            sel = slots_mask[s]
            if sel.any():
                np.add.at(arr[s], (reps[sel], times[sel]), values[sel])

    def finish(self):
        return self.direct + np.cumsum(self.diff, axis=2)


def _rank_children(parent, size, time):
    """Ulam-Harris letter of each child: rank by (-size, time) within its parent."""
    if not parent.size:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((time, -size, parent))
    p_sorted = parent[order]
    starts = np.r_[0, np.nonzero(np.diff(p_sorted))[0] + 1]
    pos = np.arange(parent.size) - np.repeat(starts, np.diff(np.r_[starts, parent.size]))
    letters = np.empty(parent.size, dtype=np.int64)
    letters[order] = pos + 1
    return letters


def batch_system(kernel, n: int, reps: int, rng: np.random.Generator,
                 freeze_level: int | None = None, powers=(), tail_h=(), q: float = 2.0,
                 snapshot_times=(), good_eps: float | None = None,
                 step_cap: int = 10**6, particle_budget: int = 10**7) -> BatchSystem:
    """Simulate ``reps`` particle systems from ``n`` generation by generation.

    Particles at or below ``freeze_level`` (default: the kernel threshold B) are
    frozen; since a frozen particle has no progeny, freezing at ``floor(n eps)``
    yields the population stopped on first hitting {1..floor(n eps)}.

    ``powers``: record sum of final size**p over all particles, per p.
    ``tail_h``: record sup over time of sum_{u not in U_h} size**q.
    ``snapshot_times``: record sum over particles of size**q at those times.
    ``good_eps``: record, per h in ``tail_h``, whether some label whose
    ancestors were all born with size >= n*good_eps lies outside U_h.
    """
    kernel = as_frozen(kernel)
    table = KernelTable(kernel)
    L = kernel.threshold if freeze_level is None else max(int(freeze_level), kernel.threshold)
    tail_h = [int(h) for h in tail_h]
    snapshot_times = np.asarray(snapshot_times, dtype=np.int64)
    use_timeline = bool(tail_h) or snapshot_times.size > 0
    tl = _Timeline(1 + len(tail_h), reps) if use_timeline else None
    h_arr = np.asarray(tail_h, dtype=np.int64).reshape(-1, 1)

    ext = np.zeros(reps, dtype=np.int64)
    count = np.zeros(reps, dtype=np.int64)
    used = np.zeros(reps, dtype=np.int64)
    capped = np.zeros(reps, dtype=bool)
    exploded = np.zeros(reps, dtype=bool)
    psums = {float(p): np.zeros(reps) for p in powers}
    th = {h: np.zeros(reps, dtype=np.int64) for h in tail_h}
    good_out = {h: np.zeros(reps, dtype=bool) for h in tail_h}
    good_bound = None if good_eps is None else n * good_eps

    def slot_mask(depth, maxl):
        # row 0: all particles; row i: outside U_{h_i}
        out = (depth[None, :] > h_arr) | (maxl[None, :] > h_arr)
        return np.vstack([np.ones((1, depth.size), dtype=bool), out])

    def settle(rep, birth, end, size_final, depth, maxl, minb):
        """Book-keeping for particles whose final state is known."""
        np.maximum.at(ext, rep, end)
        np.add.at(count, rep, 1)
        for p, acc in psums.items():
            np.add.at(acc, rep, size_final.astype(float) ** p)
        for h in tail_h:
            inside = (depth <= h) & (maxl <= h)
            np.maximum.at(th[h], rep[inside], end[inside])
            if good_bound is not None:
                bad = (~inside) & (minb >= good_bound)
                good_out[h][rep[bad]] = True
        if tl is not None:
            tl.add(slot_mask(depth, maxl), rep, end, size_final.astype(float) ** q, constant=True)

    # generation 0
    g_rep = np.arange(reps, dtype=np.int64)
    g_birth = np.zeros(reps, dtype=np.int64)
    g_size = np.full(reps, int(n), dtype=np.int64)
    g_depth = np.zeros(reps, dtype=np.int64)
    g_maxl = np.zeros(reps, dtype=np.int64)
    g_minb = g_size.copy()
    if n <= L:
        settle(g_rep, g_birth, g_birth, g_size, g_depth, g_maxl, g_minb)
        g_rep = g_rep[:0]

    while g_rep.size:
        m = g_rep.size
        states = g_size.copy()
        slots = slot_mask(g_depth, g_maxl) if tl is not None else None
        if tl is not None:
            tl.add(slots, g_rep, g_birth, states.astype(float) ** q)
        lifetime = np.full(m, -1, dtype=np.int64)
        c_par, c_size, c_time = [], [], []
        alive = np.arange(m)
        k = 0
        while alive.size:
            if k == step_cap:
                capped[g_rep[alive]] = True
                break
            s_old = states[alive]
            s_new = table.sample(s_old, rng.random(alive.size))
            states[alive] = s_new
            k += 1
            drop = s_new < s_old
            if drop.any():
                c_par.append(alive[drop])
                c_size.append(s_old[drop] - s_new[drop])
                c_time.append(g_birth[alive[drop]] + k)
            done = s_new <= L
            if tl is not None:
                live = alive[~done]
                tl.add(slots[:, live], g_rep[live], g_birth[live] + k, s_new[~done].astype(float) ** q)
            lifetime[alive[done]] = k
            alive = alive[~done]
        fin = lifetime >= 0
        settle(g_rep[fin], g_birth[fin], g_birth[fin] + lifetime[fin], states[fin],
               g_depth[fin], g_maxl[fin], g_minb[fin])
        np.add.at(used, g_rep, np.where(fin, lifetime, k) + 1)
        if not c_par:
            break
        par = np.concatenate(c_par)
        size = np.concatenate(c_size)
        time = np.concatenate(c_time)
        letters = _rank_children(par, size, time)
        rep = g_rep[par]
        depth = g_depth[par] + 1
        maxl = np.maximum(g_maxl[par], letters)
        minb = np.minimum(g_minb[par], size)
        over = used > particle_budget
        exploded |= over
        keep = ~(capped[rep] | exploded[rep])
        frozen = keep & (size <= L)
        settle(rep[frozen], time[frozen], time[frozen], size[frozen],
               depth[frozen], maxl[frozen], minb[frozen])
        act = keep & (size > L)
        g_rep, g_birth, g_size = rep[act], time[act], size[act]
        g_depth, g_maxl, g_minb = depth[act], maxl[act], minb[act]

    bad = capped | exploded
    ext = np.where(bad, -1, ext)
    tail_sup, snaps = {}, None
    if tl is not None:
        full = tl.finish()
        for i, h in enumerate(tail_h, start=1):
            tail_sup[h] = full[i].max(axis=1)
        if snapshot_times.size:
            T = full.shape[2]
            idx = np.minimum(snapshot_times, T - 1)
            snaps = full[0][:, idx]
    return BatchSystem(ext, count, capped, exploded, psums, tail_sup, snaps,
                       {h: np.where(bad, -1, v) for h, v in th.items()}, good_out)
