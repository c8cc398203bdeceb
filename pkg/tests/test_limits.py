import math

import numpy as np
import pytest
from scipy import stats

from gfrag.diagnostics import cell_system_sup_finite
from gfrag.exponents import LevyTriplet, levy_exponent
from gfrag.limits import (lamperti_inverse, lamperti_pssmp, simulate_cell_system, simulate_levy,
                          simulate_limit_tree, simulate_pssmp)
from gfrag.rng import stream

FRAG = LevyTriplet(-1.0, jumps=((-0.3, 2.0),))


def test_drift_only_levy():
    p = simulate_levy(LevyTriplet(-1.0), 5.0, stream(0))
    assert p.jump_times.size == 0
    for t in (0.0, 1.3, 5.0):
        assert p.value(t) == -t


def test_levy_mgf():
    tr = LevyTriplet(0.0, jumps=((-0.3, 2.0),))
    reps = 10**5
    rng = stream(1, ("mgf",))
    counts = rng.poisson(2.0, reps)  # xi(1) = -0.3 N(1)
    x = np.exp(-0.3 * counts)
    se = x.std(ddof=1) / math.sqrt(reps)
    assert abs(x.mean() - math.exp(levy_exponent(tr, 1.0))) <= 3 * se
    # the path sampler on a smaller batch
    y = np.array([math.exp(simulate_levy(tr, 1.0, stream(2, ("p", i))).value(1.0)) for i in range(20000)])
    se = y.std(ddof=1) / math.sqrt(y.size)
    assert abs(y.mean() - math.exp(levy_exponent(tr, 1.0))) <= 3 * se


def test_levy_jump_count_poisson():
    tr = LevyTriplet(0.1, jumps=((-0.3, 2.0), (0.2, 1.0)))
    n = np.array([simulate_levy(tr, 4.0, stream(3, ("c", i))).jump_times.size for i in range(20000)])
    assert abs(n.mean() - 12.0) <= 3 * math.sqrt(12.0 / n.size)


def test_levy_killing_truncates():
    p = simulate_levy(LevyTriplet(0.0, killing=1.0), 1e6, stream(0))
    assert math.isfinite(p.killed_at) and p.value(p.killed_at) == -math.inf


def test_lamperti_closed_form():
    y = lamperti_pssmp(simulate_levy(LevyTriplet(-1.0), math.inf, stream(0), stop_below=-50), 1.0, 0.5)
    assert y.zeta == pytest.approx(2.0, abs=1e-12)
    assert y.value(1.0) == pytest.approx(0.25, abs=1e-12)
    for t in np.linspace(0, 2, 11):
        assert y.value(t) == pytest.approx((1 - t / 2) ** 2, abs=1e-12)


def test_lamperti_inverse_recovers_xi():
    for i in range(50):
        lp = simulate_levy(FRAG, 3.0, stream(4, ("inv", i)))
        y = lamperti_pssmp(lp, 2.0, 0.5)
        taus, xis = lamperti_inverse(y)
        assert np.allclose(taus[1:], lp.jump_times, atol=1e-9, rtol=0)
        assert np.allclose(xis[1:], lp.values_at_jumps(), atol=1e-9, rtol=0)


def test_self_similarity_of_lifetime():
    g, reps = 0.5, 10**4
    z1 = np.array([simulate_pssmp(FRAG, 1.0, g, stream(5, ("a", i))).zeta for i in range(reps)])
    z2 = np.array([simulate_pssmp(FRAG, 2.0, g, stream(5, ("b", i))).zeta for i in range(reps)])
    assert stats.ks_2samp(z2, 2**g * z1).statistic < 0.02


def test_self_similarity_of_marginals():
    g, reps = 0.5, 10**4
    for t in (0.5, 1.0):
        a = np.array([simulate_pssmp(FRAG, 2.0, g, stream(6, ("a", i))).value(t) for i in range(reps)])
        b = np.array([2 * simulate_pssmp(FRAG, 1.0, g, stream(6, ("b", i))).value(2**-g * t)
                      for i in range(reps)])
        # both laws have an atom (no jump by time t); round away float noise so
        # the two copies of the atom coincide
        assert stats.ks_2samp(np.round(a, 9), np.round(b, 9)).statistic < 0.02


def test_absorbed_in_finite_time():
    for i in range(200):
        assert math.isfinite(simulate_pssmp(FRAG, 1.0, 0.5, stream(7, ("z", i))).zeta)


def test_split_conservation():
    y = simulate_pssmp(FRAG, 1.0, 0.5, stream(8))
    for i in range(1, len(y.t0)):
        if y.jumps[i] < 0:
            daughter = y.y_before[i] * -math.expm1(y.jumps[i])
            assert y.y0[i] + daughter == pytest.approx(y.y_before[i], rel=1e-12)


def test_cell_system_without_negative_atoms():
    tr = LevyTriplet(-1.0, jumps=((0.2, 1.0),))
    s = simulate_cell_system(tr, 0.5, 1.0, seed=3)
    assert list(s.cells) == [()]
    assert s.extinction_time == s.cells[()].path.zeta


def test_first_daughter_size():
    s = simulate_cell_system(FRAG, 0.5, 1.0, seed=9, size_floor=1e-9, max_depth=1)
    eve = s.cells[()]
    jumps = eve.path.negative_jumps()
    first_t, first_d = jumps[0]
    x_before = eve.path.y_before[1]
    assert first_d == pytest.approx(x_before * (1 - math.exp(-0.3)), rel=1e-12)
    births = {(c.birth_time, c.initial_size) for l, c in s.cells.items() if l}
    assert (first_t, first_d) in births


def test_cell_system_labels_ranked():
    s = simulate_cell_system(FRAG, 0.5, 1.0, seed=2)
    for lab, c in s.cells.items():
        sizes = [s.cells[ch].initial_size for ch in c.children]
        assert sizes == sorted(sizes, reverse=True)


def test_sup_finite_when_kappa_negative():
    rep = cell_system_sup_finite(FRAG, 0.5, 2.0, reps=1000, seed=0)
    assert rep.passed


def test_limit_tree_depth():
    t0 = simulate_limit_tree(FRAG, 0.5, 1.0, 0, seed=4)
    assert list(t0.nodes) == [()]
    heights = [simulate_limit_tree(FRAG, 0.5, 1.0, h, seed=4).height() for h in range(6)]
    assert heights[0] == pytest.approx(t0.nodes[()].length)
    assert all(a <= b for a, b in zip(heights, heights[1:]))


def test_limit_height_moment_stable_under_floor_refinement():
    g, q = 0.5, 1.0
    def moment(floor):
        hs = [simulate_limit_tree(FRAG, g, 1.0, 6, size_floor=floor, seed=i).height() for i in range(2000)]
        return np.mean(np.array(hs) ** (q / g))
    m1, m2 = moment(2e-2), moment(1e-2)
    assert abs(m2 - m1) <= 0.05 * m1
