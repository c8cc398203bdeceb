import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gfrag.exponents import (LevyTriplet, ScalingSequence, ThresholdError, check_assumptions,
                             choose_freezing_threshold, kappa, kappa_bar, kappa_n, kappa_tilde_n,
                             lambda_n, levy_exponent, limit_exponents, spine_triplet)
from gfrag.kernels import FrozenKernel, LevyDiscretizationKernel, RandomWalkKernel

RW = RandomWalkKernel(0.25)
LIN = ScalingSequence(1.0)


def test_lambda_n_worked_value():
    assert lambda_n(RW, LIN, 2, 1.0) == pytest.approx(-0.5, abs=1e-15)


@pytest.mark.parametrize("n", [10, 100, 1000])
def test_lambda_n_converges_to_drift(n):
    assert abs(lambda_n(RW, LIN, n, 1.0) - (-0.5)) <= 1 / n


def test_kappa_n_worked_values():
    assert kappa_n(RW, LIN, 2, 1.0) == pytest.approx(0.25, abs=1e-15)
    assert kappa_n(RW, LIN, 4, 2.0) == pytest.approx(-0.5625, abs=1e-15)
    for n in range(2, 200):
        assert kappa_n(RW, LIN, n, 2.0) == pytest.approx(-1 + 1.75 / n, abs=1e-13)


def test_frozen_states_have_zero_exponents():
    fk = FrozenKernel(RW, 3)
    for n in (1, 2, 3):
        assert lambda_n(fk, LIN, n, 2.0) == 0.0
        assert kappa_n(fk, LIN, n, 2.0) == 0.0
        assert kappa_tilde_n(fk, LIN, n, 2.0) == 0.0


def test_lambda_n_at_zero_is_zero():
    for n in range(1, 50):
        assert lambda_n(RW, LIN, n, 0.0) == 0.0


def test_kappa_tilde_equals_kappa_for_pure_powers():
    sc = ScalingSequence(0.5, 1.0)
    k = LevyDiscretizationKernel(LevyTriplet(-1.0, jumps=((-0.3, 2.0),)), 0.5)
    for n in (50, 100, 1000):
        for q in (0.75, 1.0, 2.0):
            assert kappa_tilde_n(k, sc, n, q) == pytest.approx(kappa_n(k, sc, n, q), rel=1e-11, abs=1e-12)


def test_kappa_tilde_perturbed_table():
    gamma = 1.0
    table = tuple(m ** gamma * (1 + 1 / m) for m in range(1, 202))
    sc = ScalingSequence(gamma, table=table)
    kt, kn = kappa_tilde_n(RW, sc, 100, 2.0), kappa_n(RW, sc, 100, 2.0)
    assert kt != kn
    assert abs(kt - kn) <= 0.1 * abs(kn)


def test_limit_exponents_closed_forms():
    lam, kap = limit_exponents(LevyTriplet(-1.0), 2.0)
    assert lam == kap == -2.0
    tr = LevyTriplet(0.0, jumps=((-0.3, 2.0),))
    lam, kap = limit_exponents(tr, 2.0)
    assert lam == pytest.approx(2 * (math.exp(-0.6) - 1), abs=1e-14)
    assert lam == pytest.approx(-0.90238, abs=1e-5)
    assert kap == pytest.approx(lam + 2 * (1 - math.exp(-0.3)) ** 2, abs=1e-14)
    # recomputed by hand: -0.902377 + 2 * 0.259182**2 = -0.768026
    assert kap == pytest.approx(-0.768026, abs=1e-6)


def test_kappa_bar_shift():
    tr = LevyTriplet(-0.2, jumps=((-0.3, 2.0), (0.1, 1.0)))
    for p in (0.5, 1.0, 2.0):
        assert kappa_bar(tr, p, 0.0) == pytest.approx(kappa(tr, p), abs=1e-14)
        assert kappa_bar(tr, p, 1.0) == pytest.approx(kappa(tr, p + 1.0), abs=1e-13)


def test_spine_triplet_exponent():
    tr = LevyTriplet(-0.2, jumps=((-0.3, 2.0), (0.1, 1.0)))
    sp = spine_triplet(tr, 1.5)
    for q in (0.0, 0.5, 1.0):
        assert levy_exponent(sp, q) == pytest.approx(kappa_bar(tr, 1.5, q), abs=1e-13)


def test_threshold_random_walk():
    assert choose_freezing_threshold(RW, LIN, 2.0, 1000) == 1
    with pytest.raises(ThresholdError):
        choose_freezing_threshold(RW, LIN, 1.0, 1000)


def test_threshold_certificate_holds_above_b():
    k = LevyDiscretizationKernel(LevyTriplet(0.6, jumps=((-0.65, 4.0),)), 0.5, 2.0)
    sc = k.scaling
    B = choose_freezing_threshold(k, sc, 1.5, 2000)
    assert B >= k.min_state - 1
    assert all(kappa_n(k, sc, n, 1.5) <= 1e-12 for n in range(B + 1, 2001))


def test_assumptions_random_walk_h2_zero():
    rep = check_assumptions(RW, LIN, LevyTriplet(-0.5), 2.0, [10, 100, 1000])
    assert all(x == 0 for x in rep.h2_evidence)
    assert rep.h1


def test_assumptions_drift_only_sign():
    k = LevyDiscretizationKernel(LevyTriplet(-1.0), 1.0)
    rep = check_assumptions(k, k.scaling, LevyTriplet(-1.0), 2.0, [100, 1000])
    assert rep.kappa_omega == -2.0
    assert rep.h3


def test_assumptions_h3_decreasing():
    tr = LevyTriplet(-1.0, jumps=((-0.3, 2.0),))
    k = LevyDiscretizationKernel(tr, 0.5)
    rep = check_assumptions(k, k.scaling, tr, 2.0, [10**2, 10**3, 10**4])
    assert rep.h3_evidence[0] > rep.h3_evidence[1] > rep.h3_evidence[2]


def test_drift_only_h1_strictly_decreasing():
    tr = LevyTriplet(-1.0)
    k = LevyDiscretizationKernel(tr, 1.0)
    errs = [abs(lambda_n(k, k.scaling, n, 1j) - levy_exponent(tr, 1j)) for n in (10**2, 10**3, 10**4)]
    assert errs[0] > errs[1] > errs[2]


@settings(max_examples=50, deadline=None)
@given(n=st.integers(2, 5000), q=st.floats(0.1, 4.0))
def test_kappa_dominates_lambda(n, q):
    assert kappa_n(RW, LIN, n, q) >= lambda_n(RW, LIN, n, q) - 1e-12


@pytest.mark.parametrize("n", [2, 5, 37, 400])
def test_convex_in_q(n):
    qs = np.linspace(0.2, 4, 40)
    lam = np.array([lambda_n(RW, LIN, n, q) for q in qs])
    kap = np.array([kappa_n(RW, LIN, n, q) for q in qs])
    assert np.all(np.diff(lam, 2) >= -1e-10)
    assert np.all(np.diff(kap, 2) >= -1e-10)


def test_scaling_table_errors():
    with pytest.raises(ValueError):
        ScalingSequence(1.0, table=(1.0, -1.0))
    sc = ScalingSequence(1.0, table=(1.0, 2.0))
    with pytest.raises(ValueError):
        sc.a(3)
