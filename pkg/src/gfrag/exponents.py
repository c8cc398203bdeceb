"""Discrete and limiting cumulant functions, assumption checks, freezing threshold.

Notation (sizes ``n``, kernel masses ``p[n, m]``, scaling sequence ``a_n``):

    Lambda_n(q) = a_n * sum_m p[n, m] * ((m/n)**q - 1)
    kappa_n(q)  = Lambda_n(q) + a_n * sum_{m<n} p[n, m] * (1 - m/n)**q

and for a finite-activity Levy triplet ``(b, 0, {(y_i, r_i)}, k)``

    Lambda(q) = -k + b q + sum_i r_i (exp(q y_i) - 1)
    kappa(q)  = Lambda(q) + sum_{y_i<0} r_i (1 - exp(y_i))**q
"""

from __future__ import annotations

import cmath
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class LevyTriplet:
    drift_b: float
    gaussian: float = 0.0
    jumps: tuple[tuple[float, float], ...] = ()
    killing: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "jumps", tuple((float(y), float(r)) for y, r in self.jumps))
        if self.gaussian < 0:
            raise ValueError("gaussian coefficient must be non-negative")
        if self.gaussian != 0:
            raise ValueError("Gaussian components are not supported")
        if self.killing < 0:
            raise ValueError("killing rate must be non-negative")
        for y, r in self.jumps:
            if y == 0 or r <= 0:
                raise ValueError(f"bad jump atom (y={y}, rate={r})")

    @property
    def negative_jumps(self):
        return [(y, r) for y, r in self.jumps if y < 0]

    @property
    def total_rate(self) -> float:
        return math.fsum(r for _, r in self.jumps)


@dataclass(frozen=True)
class ScalingSequence:
    """``a_n = c_scale * n**gamma`` unless an explicit table ``a_1..a_N`` is given."""

    gamma: float
    c_scale: float = 1.0
    table: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.gamma <= 0 or self.c_scale <= 0:
            raise ValueError("gamma and c_scale must be positive")
        if self.table is not None:
            t = tuple(float(x) for x in self.table)
            if any(x <= 0 for x in t):
                raise ValueError("scaling table entries must be positive")
            object.__setattr__(self, "table", t)

    def a(self, n) -> float:
        n = int(n)
        if n <= 0:
            return 0.0
        if self.table is not None:
            if n > len(self.table):
                raise ValueError(f"scaling table covers 1..{len(self.table)}, asked a_{n}")
            return self.table[n - 1]
        return self.c_scale * float(n) ** self.gamma

    def regular_variation_error(self, n: int, xs=(0.5, 2.0)) -> float:
        """max_x |a_{floor(nx)}/a_n - x**gamma| at a given n."""
        return max(abs(self.a(math.floor(n * x)) / self.a(n) - x ** self.gamma) for x in xs)


def _base(kernel):
    return getattr(kernel, "inner", kernel)


def lambda_n(kernel, scaling: ScalingSequence, n: int, q) -> complex:
    ms, ps = kernel.support(n)
    log_ratio = np.log(ms / n)
    an = scaling.a(n)
    if isinstance(q, complex) or np.iscomplexobj(q):
        terms = np.exp(complex(q) * log_ratio) - 1.0
        return an * complex(np.sum(ps * terms))
    return an * math.fsum(ps * np.expm1(float(q) * log_ratio))


def fragment_sum(kernel, n: int, q: float) -> float:
    """sum_{m<n} p[n, m] (1 - m/n)**q."""
    ms, ps = kernel.support(n)
    sel = ms < n
    return math.fsum(ps[sel] * (1.0 - ms[sel] / n) ** q)


def kappa_n(kernel, scaling: ScalingSequence, n: int, q: float) -> float:
    if q <= 0:
        raise ValueError("kappa_n needs q > 0")
    return lambda_n(kernel, scaling, n, q) + scaling.a(n) * fragment_sum(kernel, n, q)


def kappa_tilde_n(kernel, scaling: ScalingSequence, n: int, q: float) -> float:
    """kappa_n with m**q replaced by a_m**(q/gamma); a_m = 0 for m <= 0."""
    ms, ps = kernel.support(n)
    r = q / scaling.gamma
    an = scaling.a(n)
    terms = []
    for m, p in zip(ms, ps):
        m = int(m)
        terms.append(p * ((scaling.a(m) / an) ** r - 1.0 + (scaling.a(n - m) / an) ** r))
    return an * math.fsum(terms)


def levy_exponent(triplet: LevyTriplet, q) -> complex | float:
    """Lambda(q), defined for complex ``q`` wherever the atoms allow."""
    if isinstance(q, complex):
        s = sum(r * (cmath.exp(q * y) - 1.0) for y, r in triplet.jumps)
        return -triplet.killing + triplet.drift_b * q + s
    s = math.fsum(r * math.expm1(q * y) for y, r in triplet.jumps)
    return -triplet.killing + triplet.drift_b * q + s


def limit_exponents(triplet: LevyTriplet, q: float) -> tuple[float, float]:
    """(Lambda(q), kappa(q)) for real q > 0."""
    if q <= 0:
        raise ValueError("limit exponents need q > 0")
    lam = levy_exponent(triplet, float(q))
    frag = math.fsum(r * (-math.expm1(y)) ** q for y, r in triplet.negative_jumps)
    return lam, lam + frag


def kappa(triplet: LevyTriplet, q: float) -> float:
    return limit_exponents(triplet, q)[1]


def kappa_bar(triplet: LevyTriplet, p_bar: float, q: float) -> float:
    """Spine exponent kappa(p_bar + q)."""
    return kappa(triplet, p_bar + q)


def spine_triplet(triplet: LevyTriplet, p_bar: float) -> LevyTriplet:
    """Triplet whose Laplace exponent is ``q -> kappa(p_bar + q)``.

    Atoms are tilted by ``exp(p_bar y)``; each negative atom also produces the
    complementary fragment ``log(1 - e^y)`` with rate ``r (1 - e^y)**p_bar``;
    the killing rate is ``-kappa(p_bar)``.
    """
    k = kappa(triplet, p_bar)
    if k > 1e-12:
        raise ValueError(f"kappa(p_bar)={k} > 0: the size-biased particle is not defective")
    jumps = []
    for y, r in triplet.jumps:
        jumps.append((y, r * math.exp(p_bar * y)))
        if y < 0:
            frag = -math.expm1(y)
            jumps.append((math.log(frag), r * frag ** p_bar))
    return LevyTriplet(triplet.drift_b, 0.0, tuple(jumps), max(0.0, -k))


def kappa_derivative(triplet: LevyTriplet, q: float, h: float = 1e-5) -> float:
    step = h * max(1.0, abs(q))
    return (kappa(triplet, q + step) - kappa(triplet, q - step)) / (2 * step)


def _non_increasing(xs) -> bool:
    xs = np.asarray(xs, dtype=float)
    return bool(np.all(np.isfinite(xs)) and np.all(np.diff(xs) <= 1e-15))


@dataclass
class ExponentReport:
    n_grid: list[int]
    q_grid: list[float]
    t_grid: list[float]
    lambda_n: list[list[float]]
    kappa_n: list[list[float]]
    kappa_tilde_n: list[list[float]]
    Lambda: list[float]
    kappa: list[float]
    kappa_bar: list[float] | None
    h1_evidence: list[float]
    h2_evidence: list[float]
    h3_evidence: list[float]
    h1: bool
    h2: bool
    h3: bool
    kappa_omega: float
    kappa_prime_omega: float
    omega: float
    p_bar: float | None
    eps: float
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def check_assumptions(kernel, scaling: ScalingSequence, triplet: LevyTriplet, omega: float,
                      n_grid: Sequence[int], t_grid: Sequence[float] = (0.1, 0.5, 1, 2, 5),
                      eps: float | None = None, q_grid: Sequence[float] | None = None,
                      p_bar: float | None = None) -> ExponentReport:
    """Numerical evidence for the three convergence assumptions on finite grids."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    if not len(n_grid) or not len(t_grid):
        raise ValueError("grids must be non-empty")
    eps = omega / 10 if eps is None else float(eps)
    n_grid = sorted(int(n) for n in n_grid)
    if q_grid is None:
        q_grid = [float(x) for x in np.linspace(omega / 4, omega, 4)]
    base = _base(kernel)

    h1, h2, h3 = [], [], []
    lam_tab, kap_tab, kapt_tab = [], [], []
    frag_limit = math.fsum(r * (-math.expm1(y)) ** (omega - eps) for y, r in triplet.negative_jumps)
    for n in n_grid:
        an = scaling.a(n)
        h1.append(max(abs(lambda_n(base, scaling, n, complex(0, t)) - levy_exponent(triplet, complex(0, t)))
                      for t in t_grid))
        ms, ps = base.support(n)
        big = ms >= 2 * n
        h2.append(an * math.fsum(ps[big] * (ms[big] / n) ** omega))
        h3.append(abs(an * fragment_sum(base, n, omega - eps) - frag_limit))
        lam_tab.append([lambda_n(base, scaling, n, q) for q in q_grid])
        kap_tab.append([kappa_n(base, scaling, n, q) for q in q_grid])
        try:
            kapt_tab.append([kappa_tilde_n(base, scaling, n, q) for q in q_grid])
        except ValueError:
            kapt_tab.append([float("nan")] * len(q_grid))

    k_om = kappa(triplet, omega)
    kp_om = kappa_derivative(triplet, omega)
    sign_ok = k_om < 0 or (abs(k_om) <= 1e-12 and kp_om > 0)
    h2_ok = bool(np.all(np.isfinite(h2)) and max(h2) <= 2 * h2[0] + 1e-9)
    notes = [
        f"H1 checked on t_grid={list(t_grid)} only",
        f"kappa'(omega) by central difference, h=1e-5*max(1,omega)",
        f"H3 uses eps={eps}",
    ]
    return ExponentReport(
        n_grid=n_grid, q_grid=list(map(float, q_grid)), t_grid=list(map(float, t_grid)),
        lambda_n=lam_tab, kappa_n=kap_tab, kappa_tilde_n=kapt_tab,
        Lambda=[limit_exponents(triplet, q)[0] for q in q_grid],
        kappa=[kappa(triplet, q) for q in q_grid],
        kappa_bar=None if p_bar is None else [kappa_bar(triplet, p_bar, q) for q in q_grid],
        h1_evidence=h1, h2_evidence=h2, h3_evidence=h3,
        h1=_non_increasing(h1), h2=h2_ok, h3=_non_increasing(h3) and sign_ok,
        kappa_omega=k_om, kappa_prime_omega=kp_om, omega=float(omega),
        p_bar=p_bar, eps=eps, notes=notes,
    )


class ThresholdError(ValueError):
    """No freezing threshold below ``n_max`` makes kappa_n(p_bar) non-positive."""

    def __init__(self, message, violating):
        super().__init__(message)
        self.violating = list(violating)


KAPPA_TOL = 1e-12


def freezing_certificate(kernel, scaling: ScalingSequence, p_bar: float, n_max: int) -> np.ndarray:
    """kappa_n(p_bar) for n = 1..n_max (NaN where the kernel is undefined)."""
    base = _base(kernel)
    out = np.full(n_max + 1, np.nan)
    for n in range(max(1, base.min_state), n_max + 1):
        out[n] = kappa_n(base, scaling, n, p_bar)
    return out


def choose_freezing_threshold(kernel, scaling: ScalingSequence, p_bar: float, n_max: int,
                              return_certificate: bool = False):
    """Smallest B with kappa_n(p_bar) <= 0 for every B < n <= n_max.

    States below the kernel's ``min_state`` must be frozen, so B is at least
    ``min_state - 1``.
    """
    base = _base(kernel)
    cert = freezing_certificate(base, scaling, p_bar, n_max)
    ns = np.arange(n_max + 1)
    bad = ns[(ns >= base.min_state) & (cert > KAPPA_TOL)]
    B = max(base.min_state - 1, int(bad.max()) if bad.size else 0)
    if B >= n_max:
        raise ThresholdError(
            f"no freezing threshold below n_max={n_max}: kappa_n({p_bar}) > 0 at "
            f"n={bad[:5].tolist()}{'...' if bad.size > 5 else ''}", bad.tolist())
    if return_certificate:
        return B, cert
    return B
