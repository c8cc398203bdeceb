"""Exponential growth of small particles without freezing.

With the random-walk kernel and no freezing, every particle at size 1 moves
to size 2 and every downward step at size s >= 2 leaves a new particle of
size 1. Since all particles of equal size are exchangeable, the system is
simulated through its size histogram: per step and size, the number of
upward moves is binomial.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import optimize, stats

from ..batch import batch_system
from ..exponents import ScalingSequence, choose_freezing_threshold
from ..kernels import FrozenKernel, RandomWalkKernel
from ..rng import stream
from .reports import VerificationReport


def histogram_counts(p: float, reps: int, steps: int, rng: np.random.Generator,
                     start: int = 1) -> np.ndarray:
    """Size histograms (reps, steps + 1, start + steps + 1) of the unfrozen system."""
    S = start + steps + 1
    out = np.zeros((reps, steps + 1, S), dtype=np.int64)
    cur = np.zeros((reps, S), dtype=np.int64)
    cur[:, start] = 1
    out[:, 0] = cur
    for k in range(1, steps + 1):
        nxt = np.zeros_like(cur)
        nxt[:, 2] += cur[:, 1]
        body = cur[:, 2:-1]
        up = rng.binomial(body, p)
        down = body - up
        nxt[:, 3:] += up
        nxt[:, 1:-2] += down
        nxt[:, 1] += down.sum(axis=1)
        cur = nxt
        out[:, k] = cur
    return out


def cramer_rate(p: float, x: float, up: float | None = None) -> float:
    """Legendre transform at ``x`` of the log-MGF of a +-1 step with P(+1) = ``up``."""
    up = p if up is None else up
    f = lambda th: -(th * x - math.log(up * math.exp(th) + (1 - up) * math.exp(-th)))
    res = optimize.minimize_scalar(f, bounds=(-50, 50), method="bounded",
                                   options={"xatol": 1e-12})
    return -res.fun


def growth_slope(counts_mean: np.ndarray, ks: np.ndarray):
    ok = counts_mean > 0
    fit = stats.linregress(ks[ok], np.log(counts_mean[ok]))
    return fit.slope, fit.stderr


def explosion_demo(p: float = 0.25, reps: int = 1000, k_max: int = 40, seed: int = 0,
                   eps: float = 0.25, excess_k: int = 20, frozen_start: int = 20,
                   frozen_reps: int | None = None, budget: int = 10**7) -> VerificationReport:
    """Growth of the size-1 count without freezing, and extinction with freezing.

    The slope of log E[N_1(k)] over the second half of 0..k_max is compared with
    log r_p - 0.05, r_p = sqrt(2(1-p)). The count of particles above
    (1-2p+eps)k at time 2k is reported next to log r_p - c_p(eps) for both
    readings of c_p (down-drifting walk and its mirror image) and both time
    normalizations; none of those enter the verdict.
    """
    if not 0 < p < 0.5:
        raise ValueError("need 0 < p < 1/2")
    rng = stream(seed, ("explosion", "counts"))
    counts = histogram_counts(p, reps, max(k_max, 2 * excess_k), rng)
    n1 = counts[:, : k_max + 1, 1].astype(float)
    totals = counts.sum(axis=2)
    ks = np.arange(k_max + 1)
    lo = k_max // 2
    slope, slope_se = growth_slope(n1.mean(axis=0)[lo:], ks[lo:])
    log_rp = 0.5 * math.log(2 * (1 - p))
    target = log_rp - 0.05

    kk = np.arange(1, excess_k + 1)
    sizes = np.arange(counts.shape[2])
    excess = np.array([counts[:, 2 * k, sizes > (1 - 2 * p + eps) * k].sum(axis=1).mean() for k in kk])
    ex_slope = growth_slope(excess, kk)[0] if np.count_nonzero(excess) >= 2 else float("nan")
    x = 1 - 2 * p + eps
    c_down = cramer_rate(p, x)
    c_mirror = cramer_rate(p, x, up=1 - p)
    orders = {
        "per_k": {"down": log_rp - c_down, "mirror": log_rp - c_mirror},
        "per_2k": {"down": 2 * log_rp - c_down, "mirror": 2 * log_rp - c_mirror},
    }

    # frozen contrast
    scaling = ScalingSequence(1.0)
    B = choose_freezing_threshold(RandomWalkKernel(p), scaling, 2.0, 10 * frozen_start)
    frozen = batch_system(FrozenKernel(RandomWalkKernel(p), B), frozen_start, frozen_reps or reps,
                          stream(seed, ("explosion", "frozen")), particle_budget=budget)
    extinct = int((frozen.extinction_time >= 0).sum())
    passed = slope >= target and extinct == (frozen_reps or reps)
    return VerificationReport(
        f"explosion(p={p})", False, slope, target, 0.05, bool(passed), n_samples=reps, seed=seed,
        details={
            "slope_se": slope_se, "log_r_p": log_rp, "fit_range": [lo, k_max],
            "mean_size1": n1.mean(axis=0).tolist(),
            "max_population": int(totals.max()), "budget_exceeded": bool(totals.max() > budget),
            "excess_counts": excess.tolist(), "excess_slope_per_k": ex_slope,
            "cramer_rate": {"down": c_down, "mirror": c_mirror}, "m_p": orders,
            "reference_claim": 0.16,
            "frozen_threshold": B, "frozen_start": frozen_start, "frozen_extinct": extinct,
            "frozen_runs": frozen_reps or reps,
        })
