"""Monte Carlo diagnostics: identity checks, scaling consistency, tightness."""

from __future__ import annotations

import math
from functools import partial

import numpy as np
from scipy import stats

from ..batch import SpineTable, batch_chain, batch_spine, batch_system
from ..branching import simulate_system
from ..exponents import LevyTriplet, ScalingSequence, kappa_tilde_n
from ..genealogy import build_tree, truncation_gh_upper
from ..kernels import FrozenKernel, LevyDiscretizationKernel, as_frozen
from ..limits import simulate_cell_system, simulate_limit_tree, simulate_pssmp, spine_triplet_pssmp
from ..parallel import DEFAULT_CHUNK, run_replicates
from ..rng import stream
from .reports import (ConvergenceSeries, VerificationReport, mean_se, non_increasing,
                      strictly_decreasing, wilson_interval)

KS_THRESHOLD = 0.05
KS_SELF = 0.02


# --- chunk workers (top level so they pickle) ---------------------------------

def _system_power_chunk(size, rng, kernel, n, level, p):
    r = batch_system(kernel, n, size, rng, freeze_level=level, powers=(p,))
    return r.power_sums[float(p)] / float(n) ** p, r.capped | r.exploded


def _spine_survival_chunk(size, rng, kernel, p_bar, n, level):
    sp = batch_spine(SpineTable(kernel, p_bar), n, size, rng, stop_level=level)
    return sp.survived.astype(float), sp.capped


def _chain_chunk(size, rng, kernel, n, record):
    r = batch_chain(kernel, n, size, rng, record=record)
    return r


def _tail_chunk(size, rng, kernel, n, h_grid, omega, eps):
    r = batch_system(kernel, n, size, rng, tail_h=h_grid, q=omega, good_eps=eps)
    return r


def _height_chunk(size, rng, kernel, n):
    return batch_system(kernel, n, size, rng).extinction_time


def _cat(parts, i=None):
    return np.concatenate([p if i is None else p[i] for p in parts])


# --- identity of the stopped population --------------------------------------

def ramanujan_statistic(kernel, scaling: ScalingSequence, p_bar: float, eps: float, n_grid, reps: int,
                        seed: int = 0, chunk: int = DEFAULT_CHUNK, workers=None) -> ConvergenceSeries:
    """n^-p E[sum_u Xi_u^p] (system) against P(spine survives to the hitting time).

    The two estimators use disjoint random streams. Agreement means a
    difference within 3 combined standard errors at every n.
    """
    fk = as_frozen(kernel)
    vals, errs, sp_vals, sp_errs, zs, bad = [], [], [], [], [], []
    for n in sorted(int(n) for n in n_grid):
        level = math.floor(n * eps)
        sys_parts = run_replicates(partial(_system_power_chunk, kernel=fk, n=n, level=level, p=p_bar),
                                   reps, seed, f"stopped/system/n={n}/eps={eps}", chunk, workers)
        spn_parts = run_replicates(partial(_spine_survival_chunk, kernel=fk, p_bar=p_bar, n=n, level=level),
                                   reps, seed, f"stopped/spine/n={n}/eps={eps}", chunk, workers)
        x, y = _cat(sys_parts, 0), _cat(spn_parts, 0)
        bad.append(int(_cat(sys_parts, 1).sum() + _cat(spn_parts, 1).sum()))
        mx, sx = mean_se(x)
        my, sy = mean_se(y)
        z = abs(mx - my) / math.hypot(sx, sy) if sx + sy > 0 else (0.0 if mx == my else math.inf)
        vals.append(mx), errs.append(sx), sp_vals.append(my), sp_errs.append(sy), zs.append(z)
    ok = all(z <= 3 for z in zs) and not any(bad)
    return ConvergenceSeries(
        f"stopped_population(eps={eps})", sorted(int(n) for n in n_grid), vals, errs,
        "agree" if ok else "fail:estimators differ", ok,
        {"spine_values": sp_vals, "spine_errors": sp_errs, "z_scores": zs, "reps": reps,
         "seed": seed, "p_bar": p_bar, "capped_or_exploded": bad})


def verify_many_to_one_mc(kernel, scaling, p_bar, n, eps, reps, seed=0, **kw) -> VerificationReport:
    """Monte Carlo mode of the stopped many-to-one check (f = 1)."""
    s = ramanujan_statistic(kernel, scaling, p_bar, eps, [n], reps, seed, **kw)
    return VerificationReport(
        f"many_to_one_stopped_mc(n={n},eps={eps})", False, s.values[0], s.details["spine_values"][0],
        3.0, s.passed, n_samples=reps, seed=seed,
        details={"z": s.details["z_scores"][0], "se_system": s.errors[0],
                 "se_spine": s.details["spine_errors"][0], "band": "3 combined s.e."})


# --- scaling self-consistency ------------------------------------------------

def drift_only_kernel(gamma: float = 0.5, b: float = -1.0) -> FrozenKernel:
    """Deterministic discretization of the pure drift ``b`` with a_n = n**gamma."""
    k = LevyDiscretizationKernel(LevyTriplet(b), gamma)
    return FrozenKernel(k, k.min_state - 1)


def closed_form_marginal_ks(n: int, reps: int, seed: int = 0, gamma: float = 0.5,
                            threshold: float = KS_THRESHOLD) -> VerificationReport:
    """Drift-only chain against Y(t) = (1 - t/2)**2 (b = -1, gamma = 1/2, x0 = 1).

    Each replicate reads X(floor(a_n T))/n at an independent uniform time
    T in [0, 2); under the limit, Y(T) has distribution function sqrt(y).
    """
    fk = drift_only_kernel(gamma=gamma)
    scaling = ScalingSequence(gamma)
    rng = stream(seed, ("closed_form_marginal", n))
    T = rng.uniform(0.0, 2.0, size=reps)
    run = batch_chain(fk, n, 1, rng, record=True)
    paths = run.paths[0]
    steps = np.minimum(np.floor(scaling.a(n) * T).astype(np.int64), len(paths) - 1)
    sample = paths[steps] / n
    ks = stats.kstest(sample, lambda y: np.sqrt(np.clip(y, 0.0, 1.0)))
    t_grid = np.array([0.5, 1.0, 1.5])
    st = np.minimum(np.floor(scaling.a(n) * t_grid).astype(np.int64), len(paths) - 1)
    point_err = np.abs(paths[st] / n - (1 - t_grid / 2) ** 2)
    return VerificationReport(
        f"drift_closed_form_ks(n={n})", False, float(ks.statistic), threshold, threshold,
        bool(ks.statistic < threshold), n_samples=reps, seed=seed,
        details={"t_grid": t_grid.tolist(), "abs_error_at_t": point_err.tolist(),
                 "lifetime_over_a_n": float(run.lifetime[0]) / scaling.a(n),
                 "note": "chain is deterministic; law of Y(T) with T uniform on [0,2)"})


def limit_lifetimes(triplet: LevyTriplet, gamma: float, reps: int, seed: int) -> np.ndarray:
    return np.array([simulate_pssmp(triplet, 1.0, gamma, stream(seed, ("limit_zeta", i))).zeta
                     for i in range(reps)])


def scaling_self_consistency(kernel, scaling: ScalingSequence, triplet: LevyTriplet, n_grid, reps: int,
                             seed: int = 0, t_grid=(0.5, 1.0), p_bar: float | None = None,
                             limit_reps: int | None = None, threshold: float = KS_THRESHOLD,
                             chunk: int = DEFAULT_CHUNK, workers=None) -> ConvergenceSeries:
    """KS distances of rescaled discrete quantities to limit samples along n.

    Values are the lifetime KS distances (zeta_n / a_n against the Lamperti
    lifetime). Details carry chain marginals at ``t_grid``, consecutive-n
    distances and, if ``p_bar`` is given, the spine lifetimes.
    """
    fk = as_frozen(kernel)
    n_grid = sorted(int(n) for n in n_grid)
    limit_reps = limit_reps or reps
    lim = [simulate_pssmp(triplet, 1.0, scaling.gamma, stream(seed, ("limit", i))) for i in range(limit_reps)]
    zeta = np.array([p.zeta for p in lim])
    lim_marg = {t: np.array([p.value(t) for p in lim]) for t in t_grid}
    life_ks, marg_ks, samples = [], {t: [] for t in t_grid}, []
    for n in n_grid:
        parts = run_replicates(partial(_chain_chunk, kernel=fk, n=n, record=True), reps, seed,
                               f"scaling/chain/n={n}", chunk, workers)
        life = np.concatenate([p.lifetime for p in parts]).astype(float)
        an = scaling.a(n)
        samples.append(life / an)
        life_ks.append(float(stats.ks_2samp(life / an, zeta).statistic))
        for t in t_grid:
            k = int(math.floor(an * t))
            vals = np.concatenate([p.paths[:, min(k, p.paths.shape[1] - 1)] for p in parts]) / n
            marg_ks[t].append(float(stats.ks_2samp(vals, lim_marg[t]).statistic))
    consecutive = [float(stats.ks_2samp(a, b).statistic) for a, b in zip(samples[:-1], samples[1:])]
    details = {"marginal_ks": {str(t): v for t, v in marg_ks.items()}, "consecutive_ks": consecutive,
               "reps": reps, "limit_reps": limit_reps, "seed": seed, "threshold": threshold}
    if p_bar is not None:
        sp_lim = np.array([spine_triplet_pssmp(triplet, p_bar, scaling.gamma, stream(seed, ("spine_limit", i)))
                           for i in range(limit_reps)])
        sp_ks = []
        table = SpineTable(fk, p_bar)
        for n in n_grid:
            sp = batch_spine(table, n, reps, stream(seed, ("scaling_spine", n)))
            end = np.where(sp.killed_at >= 0, sp.killed_at, sp.hit_time).astype(float)
            sp_ks.append(float(stats.ks_2samp(end / scaling.a(n), sp_lim).statistic))
        details["spine_lifetime_ks"] = sp_ks
    dec = strictly_decreasing(life_ks)
    final_ok = life_ks[-1] < threshold
    verdict = "decreasing" if dec else "fail:not decreasing"
    details["final_below_threshold"] = final_ok
    return ConvergenceSeries("lifetime_ks", n_grid, life_ks, None, verdict, dec, details)


# --- l^omega tail suprema ----------------------------------------------------

def lq_supremum_tail(kernel, scaling: ScalingSequence, omega: float, h_grid, n_grid, reps: int,
                     delta: float = 0.1, seed: int = 0, chunk: int = 1000,
                     workers=None) -> ConvergenceSeries:
    """P(sup_k sum_{u not in U_h} size_u(k)**omega > delta n**omega) per (h, n).

    Values: for the largest n, the probabilities along ``h_grid``. The verdict
    asks for a strict decrease in h at every n, with disjoint 95% Wilson
    intervals at the first and last h.
    """
    fk = as_frozen(kernel)
    h_grid = sorted(int(h) for h in h_grid)
    table, ok_all = {}, True
    for n in sorted(int(n) for n in n_grid):
        parts = run_replicates(partial(_tail_chunk, kernel=fk, n=n, h_grid=h_grid, omega=omega, eps=None),
                               reps, seed, f"tail/n={n}/omega={omega}", chunk, workers)
        bad = int(sum((p.capped | p.exploded).sum() for p in parts))
        probs, cis = [], []
        for h in h_grid:
            sup = np.concatenate([p.tail_sup[h] for p in parts]) / float(n) ** omega
            k = int((sup > delta).sum())
            probs.append(k / reps)
            cis.append(wilson_interval(k, reps))
        disjoint = cis[0][0] > cis[-1][1]
        ok = strictly_decreasing(probs) and disjoint and not bad
        ok_all &= ok
        table[n] = {"probabilities": probs, "ci95": cis, "strict_decrease": strictly_decreasing(probs),
                    "ci_disjoint_first_last": disjoint, "capped_or_exploded": bad}
    last = table[max(table)]
    return ConvergenceSeries(
        f"lq_tail(omega={omega},delta={delta})", h_grid, last["probabilities"],
        [list(c) for c in last["ci95"]], "decreasing" if ok_all else "fail:not strictly decreasing",
        ok_all, {"grid": "h", "per_n": {str(k): v for k, v in table.items()}, "reps": reps, "seed": seed})


# --- extinction-time moments ---------------------------------------------------

def eta_constant(kernel, scaling: ScalingSequence, q: float, m_max: int):
    """min over B < m <= m_max of -kappa~_m(q) gamma / q, with the violating m if any."""
    fk = as_frozen(kernel)
    lo = max(fk.threshold + 1, fk.inner.min_state)
    vals = np.array([kappa_tilde_n(fk.inner, scaling, m, q) for m in range(lo, m_max + 1)])
    bad = (np.nonzero(vals >= 0)[0] + lo).tolist()
    eta = float(np.min(-vals) * scaling.gamma / q)
    return eta, int(np.argmin(-vals) + lo), bad


def wls_slope(xs, ys) -> tuple[float, float]:
    """Slope and its standard error for groups of replicates with unequal spread."""
    w = np.concatenate([np.full(len(y), 1 / max(np.var(y, ddof=1), 1e-300)) for y in ys])
    x, y = np.concatenate(xs), np.concatenate(ys)
    xm, ym = np.average(x, weights=w), np.average(y, weights=w)
    sxx = float(np.sum(w * (x - xm) ** 2))
    slope = float(np.sum(w * (x - xm) * (y - ym)) / sxx)
    return slope, math.sqrt(1 / sxx)


def height_moment_bound(kernel, scaling: ScalingSequence, q: float, n_grid, reps: int, seed: int = 0,
                        m_max: int | None = None, chunk: int = DEFAULT_CHUNK,
                        workers=None) -> ConvergenceSeries:
    """E[(height / a_n)**(q/gamma)] along n, a slope test and the explicit bound.

    The slope is a weighted least-squares fit of replicate-level moments on
    log10(n), each replicate weighted by the inverse sample variance of its
    n-group (the spread shrinks with n). The verdict requires the 95% interval
    of the slope to reach down to <= 0 and every mean to lie below
    (1/eta)**(q/gamma).
    """
    fk = as_frozen(kernel)
    gamma = scaling.gamma
    if not q > gamma:
        raise ValueError("need q > gamma")
    n_grid = sorted(int(n) for n in n_grid)
    m_max = m_max or 2 * n_grid[-1]
    eta, argmin, bad = eta_constant(fk, scaling, q, m_max)
    if bad:
        raise ValueError(f"kappa~_m({q}) >= 0 at m={bad[:10]}: threshold certificate fails")
    bound = (1 / eta) ** (q / gamma)
    xs, ys, means, ses, capped = [], [], [], [], 0
    for n in n_grid:
        h = _cat(run_replicates(partial(_height_chunk, kernel=fk, n=n), reps, seed,
                                f"height/n={n}", chunk, workers))
        capped += int((h < 0).sum())
        v = (h.astype(float) / scaling.a(n)) ** (q / gamma)
        m, s = mean_se(v)
        means.append(m), ses.append(s)
        xs.append(np.full(v.size, math.log10(n))), ys.append(v)
    slope, slope_se = wls_slope(xs, ys)
    ci = (slope - 1.959963984540054 * slope_se, slope + 1.959963984540054 * slope_se)
    below = max(means) <= bound
    ok = ci[0] <= 0 and below and not capped
    return ConvergenceSeries(
        f"height_moment(q={q})", n_grid, means, ses, "bounded" if ok else "fail:trend or bound", ok,
        {"slope": slope, "slope_ci95": list(ci), "proof_bound": bound, "eta": eta,
         "eta_argmin_m": argmin, "m_max": m_max, "reps": reps, "seed": seed, "capped": capped})


def power_mean_check(gamma: float, q: float, configs: int = 10**4, seed: int = 0,
                     rel_tol: float = 1e-12) -> VerificationReport:
    """sum_i z_i**theta >= (sum_i z_i)**theta for theta = 1 - gamma/q on random z."""
    theta = 1 - gamma / q
    if not 0 < theta <= 1:
        raise ValueError("need 0 < gamma < q")
    rng = stream(seed, ("power_mean",))
    worst, fails = math.inf, 0
    for _ in range(configs):
        k = int(rng.integers(1, 21))
        z = rng.exponential(size=k) * 10.0 ** rng.uniform(-3, 3, size=k)
        lhs = math.fsum(z ** theta)
        rhs = math.fsum(z) ** theta
        worst = min(worst, lhs / rhs - 1)
        if lhs < rhs * (1 - rel_tol):
            fails += 1
    return VerificationReport("power_mean_inequality", True, fails, 0, rel_tol, fails == 0,
                              n_samples=configs, seed=seed,
                              details={"theta": theta, "min_relative_slack": worst})


# --- trees -------------------------------------------------------------------

def tree_convergence_stats(kernel, scaling: ScalingSequence, triplet: LevyTriplet, h_grid, n_grid,
                           reps: int, eps: float = 0.5, delta: float = 0.1, seed: int = 0,
                           tree_reps: int = 200, limit_reps: int | None = None,
                           chunk: int = 1000, workers=None) -> ConvergenceSeries:
    """Per n: KS of truncated-tree heights / a_n against limit-tree heights at the
    largest h, P(truncation GH bound > delta a_n) and P(Good(n, eps) not in U_h)."""
    fk = as_frozen(kernel)
    gamma = scaling.gamma
    h_grid = sorted(int(h) for h in h_grid)
    n_grid = sorted(int(n) for n in n_grid)
    hmax = h_grid[-1]
    limit_reps = limit_reps or reps
    lim_h = np.array([simulate_limit_tree(triplet, gamma, 1.0, hmax, seed=int(stream(seed, ("lt", i)).integers(2**62))
                                          ).height() for i in range(limit_reps)])
    ks, samples, good, gh = [], [], {}, {}
    for n in n_grid:
        parts = run_replicates(partial(_tail_chunk, kernel=fk, n=n, h_grid=h_grid, omega=1.0, eps=eps),
                               reps, seed, f"tree/n={n}", chunk, workers)
        th = np.concatenate([p.trunc_height[hmax] for p in parts]).astype(float) / scaling.a(n)
        samples.append(th)
        ks.append(float(stats.ks_2samp(th, lim_h).statistic))
        good[str(n)] = [float(np.concatenate([p.good_outside[h] for p in parts]).mean()) for h in h_grid]
        exceed = np.zeros(len(h_grid))
        for r in range(tree_reps):
            t = build_tree(simulate_system(fk, n, seed=int(stream(seed, ("tree_gh", n, r)).integers(2**62))))
            exceed += [truncation_gh_upper(t, h) > delta * scaling.a(n) for h in h_grid]
        gh[str(n)] = (exceed / tree_reps).tolist()
    consecutive = [float(stats.ks_2samp(a, b).statistic) for a, b in zip(samples[:-1], samples[1:])]
    mono = all(non_increasing(v) for v in good.values()) and all(non_increasing(v) for v in gh.values())
    return ConvergenceSeries(
        "tree_convergence", n_grid, ks, None, "decreasing-in-h" if mono else "fail:not monotone in h", mono,
        {"h_grid": h_grid, "good_outside_Uh": good, "gh_exceed": gh, "consecutive_height_ks": consecutive,
         "eps": eps, "delta": delta, "reps": reps, "tree_reps": tree_reps, "seed": seed})


def cell_system_sup_finite(triplet, gamma, omega, reps, seed=0, size_floor=1e-3) -> VerificationReport:
    """sup_t sum_cells size**omega is finite on every sample of the limit cell system.

    Uses the upper bound sum over cells of sup_t size**omega.
    """
    sups = []
    for i in range(reps):
        cs = simulate_cell_system(triplet, gamma, 1.0, size_floor, seed=int(stream(seed, ("cells", i)).integers(2**62)))
        sups.append(math.fsum(c.path.sup_power(omega) for c in cs.cells.values()))
    sups = np.array(sups)
    ok = bool(np.all(np.isfinite(sups)))
    return VerificationReport("cell_system_sup", False, float(sups.max()), math.inf, 0.0, ok,
                              n_samples=reps, seed=seed)
