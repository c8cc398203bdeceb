"""Exact (deterministic, enumeration based) identity checks.

With an integer exponent p_bar every quantity is a rational function of the
kernel masses, so both sides are accumulated as :class:`fractions.Fraction`
(kernel masses are converted exactly from their binary floats). Otherwise
compensated float sums are used.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from fractions import Fraction
from typing import Callable

import numpy as np

from ..branching import SpineKernel
from ..exponents import KAPPA_TOL, ScalingSequence, kappa_n
from ..kernels import as_frozen
from .reports import VerificationReport

ENUM_BUDGET = 10**7
EXACT_TOL = 1e-12


class EnumerationBudgetError(RuntimeError):
    pass


def ones(*_):
    return 1


def monotone_indicator(path) -> int:
    """1 if the path is non-increasing or non-decreasing."""
    d = np.diff(np.asarray(path))
    return int(bool(np.all(d <= 0) or np.all(d >= 0)))


class _Arith:
    """Exact rationals for integer exponents, floats otherwise."""

    def __init__(self, p_bar):
        self.exact = float(p_bar).is_integer()
        self.p = int(p_bar) if self.exact else float(p_bar)

    def num(self, x):
        return Fraction(x) if self.exact else float(x)

    def ratio_pow(self, a, b):
        return Fraction(int(a), int(b)) ** self.p if self.exact else (a / b) ** self.p

    def pow(self, a):
        return Fraction(int(a)) ** self.p if self.exact else float(a) ** self.p

    def total(self, xs):
        xs = list(xs)
        return sum(xs, Fraction(0)) if self.exact else math.fsum(xs)


def verify_supermartingale_step(kernel, scaling: ScalingSequence, p_bar: float, n_grid,
                                tol: float = EXACT_TOL) -> VerificationReport:
    """E[C(1)^p + (n - C(1))_+^p] = n^p (1 + kappa_n(p)/a_n) for every n in the grid.

    The right side comes from :func:`gfrag.exponents.kappa_n`; the left side is
    summed directly over the kernel row. Errors are relative to ``n**p``.
    Additionally checks LHS <= n^p above the freezing threshold.
    """
    fk = as_frozen(kernel)
    base = fk.inner
    worst, failing, above = 0.0, [], []
    lhs_all, rhs_all = [], []
    for n in n_grid:
        n = int(n)
        ms, ps = fk.support(n)
        small = np.where(ms < n, n - ms, 0).astype(float)
        lhs = math.fsum(ps * (ms.astype(float) ** p_bar + small ** p_bar))
        if n <= fk.threshold:
            rhs = float(n) ** p_bar
        else:
            rhs = float(n) ** p_bar * (1 + kappa_n(base, scaling, n, p_bar) / scaling.a(n))
        err = abs(lhs - rhs) / float(n) ** p_bar
        worst = max(worst, err)
        if err > tol:
            failing.append(n)
        if n > fk.threshold and lhs > float(n) ** p_bar * (1 + KAPPA_TOL):
            above.append(n)
        lhs_all.append(lhs)
        rhs_all.append(rhs)
    passed = not failing and not above
    return VerificationReport(
        "supermartingale_step", True, lhs_all if len(lhs_all) <= 20 else None,
        rhs_all if len(rhs_all) <= 20 else None, tol, passed, n_samples=len(lhs_all),
        details={"max_rel_error": worst, "identity_failures": failing[:20],
                 "drift_violations": above[:20], "threshold": fk.threshold, "p_bar": p_bar})


def verify_threshold(kernel, scaling: ScalingSequence, p_bar: float, n_max: int) -> VerificationReport:
    """kappa_n(p_bar) <= 0 for every B < n <= n_max."""
    fk = as_frozen(kernel)
    bad = [n for n in range(max(fk.threshold + 1, fk.inner.min_state), n_max + 1)
           if kappa_n(fk.inner, scaling, n, p_bar) > KAPPA_TOL]
    return VerificationReport(
        "freezing_threshold", True, len(bad), 0, 0.0, not bad, n_samples=n_max,
        details={"threshold": fk.threshold, "violating_n": bad[:50], "p_bar": p_bar})


def verify_spine_killing(kernel, scaling: ScalingSequence, p_bar: float, states,
                         tol: float = EXACT_TOL) -> VerificationReport:
    """Killing mass of the spine sampler equals -kappa_m(p_bar)/a_m."""
    spine = SpineKernel(kernel, p_bar)
    fk = spine.kernel
    worst, bad, m4 = 0.0, [], None
    for m in states:
        m = int(m)
        exp = -kappa_n(fk.inner, scaling, m, p_bar) / scaling.a(m) if m > fk.threshold else 0.0
        got = spine.killing_mass(m)
        err = abs(got - exp)
        worst = max(worst, err)
        if err > tol:
            bad.append(m)
        if m == 4:
            m4 = got
    return VerificationReport("spine_killing", True, worst, 0.0, tol, not bad, n_samples=len(states),
                              details={"failing_m": bad[:20], "killing_at_4": m4})


def _spine_rows(fk, p_bar, ar: _Arith):
    cache = {}

    def row(m):
        if m not in cache:
            if m <= fk.threshold:
                cache[m] = [(m, ar.num(1))]
            else:
                ms, ps = fk.support(m)
                acc = defaultdict(list)
                for j, p in zip(ms.tolist(), ps.tolist()):
                    acc[j].append(ar.num(p) * ar.ratio_pow(j, m))
                    if j < m:
                        acc[m - j].append(ar.num(p) * ar.ratio_pow(m - j, m))
                out = [(j, ar.total(v)) for j, v in sorted(acc.items())]
                kill = ar.num(1) - ar.total(w for _, w in out)
                cache[m] = out + [(0, kill)]
        return cache[m]

    return row


def _system_options(fk, ar: _Arith):
    """Per-particle step outcomes: (prob, new size, child size or 0)."""
    cache = {}

    def opts(m):
        if m not in cache:
            ms, ps = fk.support(m)
            cache[m] = [(ar.num(p), j, m - j if j < m else 0) for j, p in zip(ms.tolist(), ps.tolist())]
        return cache[m]

    return opts


def many_to_one_sides(kernel, p_bar: float, n: int, k: int, f: Callable = ones,
                      budget: int = ENUM_BUDGET):
    """(LHS, RHS, enumeration size) of the many-to-one formula at time ``k``.

    LHS = E[sum_u C_u(k)^p f(line history of u up to k)] over the whole system;
    RHS = n^p E[f(spine path up to k); spine alive at k].
    """
    fk = as_frozen(kernel)
    ar = _Arith(p_bar)
    opts = _system_options(fk, ar)
    B = fk.threshold
    states = {((n,),): ar.num(1)}
    branches = 0
    for _ in range(k):
        nxt = defaultdict(lambda: ar.num(0))
        for hists, prob in states.items():
            choices = []
            for h in hists:
                m = h[-1]
                if m <= B:
                    choices.append([(ar.num(1), (h + (m,),))])
                else:
                    choices.append([(p, (h + (j,),) + ((h + (c,),) if c else ()))
                                    for p, j, c in opts(m)])
            for combo in itertools.product(*choices):
                branches += 1
                if branches > budget:
                    raise EnumerationBudgetError(f"system enumeration exceeded {budget} branches")
                pr = prob
                new = []
                for p, hs in combo:
                    pr *= p
                    new.extend(hs)
                nxt[tuple(sorted(new))] += pr
        states = nxt
    lhs = ar.total(pr * ar.total(ar.pow(h[-1]) * ar.num(f(h)) for h in hists)
                   for hists, pr in states.items())

    row = _spine_rows(fk, p_bar, ar)
    paths = {(n,): ar.num(1)}
    for _ in range(k):
        nxt = defaultdict(lambda: ar.num(0))
        for path, prob in paths.items():
            for j, w in row(path[-1]):
                branches += 1
                if branches > budget:
                    raise EnumerationBudgetError(f"spine enumeration exceeded {budget} branches")
                if j != 0 and w != 0:
                    nxt[path + (j,)] += prob * w
        paths = nxt
    rhs = ar.pow(n) * ar.total(pr * ar.num(f(path)) for path, pr in paths.items())
    return lhs, rhs, branches


def reachable_states(kernel, n: int, k: int) -> list[int]:
    """States visited by the frozen chain from ``n`` within ``k`` steps."""
    fk = as_frozen(kernel)
    seen, front = {int(n)}, {int(n)}
    for _ in range(k):
        nxt = set()
        for x in front:
            ms, _ = fk.support(x)
            nxt.update(int(m) for m in ms)
            nxt.update(x - int(m) for m in ms if m < x)
        front = nxt - seen
        seen |= nxt
    return sorted(seen)


def verify_many_to_one_exact(kernel, scaling: ScalingSequence, p_bar: float, n: int, k: int,
                             f: Callable = ones, tol: float = EXACT_TOL,
                             budget: int = ENUM_BUDGET) -> VerificationReport:
    pre = verify_spine_killing(kernel, scaling, p_bar, reachable_states(kernel, n, k))
    lhs, rhs, size = many_to_one_sides(kernel, p_bar, n, k, f, budget)
    err = abs(float(lhs - rhs)) / float(n) ** p_bar
    return VerificationReport(
        f"many_to_one(n={n},k={k},f={getattr(f, '__name__', 'f')})", True, float(lhs), float(rhs),
        tol, bool(err <= tol and pre.passed), n_samples=size,
        details={"rel_error": err, "exact_rational": isinstance(lhs, Fraction),
                 "spine_killing_check": pre.passed})


def stopped_sides(kernel, p_bar: float, n: int, eps: float, horizon: int, f: Callable = ones,
                  budget: int = ENUM_BUDGET):
    """Both sides of the stopped many-to-one formula, truncated at ``horizon``.

    LHS = E[sum over particles stopped by time K of Xi^p f(S, Xi)];
    RHS = n^p E[f(S, C(S)); spine alive at S, S <= K]. The identity holds for
    every finite K. Also returns the probability mass still running at K on
    each side.
    """
    fk = as_frozen(kernel)
    ar = _Arith(p_bar)
    opts = _system_options(fk, ar)
    H = math.floor(n * eps)
    B = fk.threshold
    active_min = max(H, B)
    lhs_terms, branches = [], 0
    states = {(n,): ar.num(1)} if n > active_min else {}
    if n <= H:
        lhs_terms.append(ar.pow(n) * ar.num(f(0, n)))
    for t in range(1, horizon + 1):
        nxt = defaultdict(lambda: ar.num(0))
        for sizes, prob in states.items():
            for combo in itertools.product(*(opts(m) for m in sizes)):
                branches += 1
                if branches > budget:
                    raise EnumerationBudgetError(f"stopped enumeration exceeded {budget} branches")
                pr = prob
                new, hit = [], []
                for p, j, c in combo:
                    pr *= p
                    for s in (j, c):
                        if s == 0:
                            continue
                        if s <= H:
                            hit.append(s)
                        elif s > active_min:
                            new.append(s)
                if hit:
                    lhs_terms.append(pr * ar.total(ar.pow(s) * ar.num(f(t, s)) for s in hit))
                if new:
                    nxt[tuple(sorted(new))] += pr
        states = nxt
    lhs = ar.total(lhs_terms)
    lhs_open = ar.total(states.values())

    row = _spine_rows(fk, p_bar, ar)
    rhs_terms = []
    if n <= H:
        rhs_terms.append(ar.num(f(0, n)))
    cur = {n: ar.num(1)} if n > active_min else {}
    for t in range(1, horizon + 1):
        nxt = defaultdict(lambda: ar.num(0))
        for m, prob in cur.items():
            for j, w in row(m):
                branches += 1
                if j == 0 or w == 0:
                    continue
                if j <= H:
                    rhs_terms.append(prob * w * ar.num(f(t, j)))
                elif j > active_min:
                    nxt[j] += prob * w
        cur = nxt
    rhs = ar.pow(n) * ar.total(rhs_terms)
    rhs_open = ar.total(cur.values())
    return lhs, rhs, branches, float(lhs_open), float(rhs_open)


def verify_many_to_one_stopped(kernel, scaling: ScalingSequence, p_bar: float, n: int, eps: float,
                               f: Callable = ones, horizon: int = 40, tol: float = EXACT_TOL,
                               budget: int = ENUM_BUDGET) -> VerificationReport:
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    lhs, rhs, size, lo, ro = stopped_sides(kernel, p_bar, n, eps, horizon, f, budget)
    err = abs(float(lhs - rhs)) / float(n) ** p_bar
    return VerificationReport(
        f"many_to_one_stopped(n={n},eps={eps},K={horizon})", True, float(lhs), float(rhs), tol,
        bool(err <= tol), n_samples=size,
        details={"rel_error": err, "horizon": horizon, "system_mass_running": lo,
                 "spine_mass_running": ro, "hit_set_max": math.floor(n * eps)})
