import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import initial_states, model_params, random_sets
from debtcycle import (BASELINE_INIT, InitialState, ModelParams, OutcomeKind, SameClassAtBracket, baseline_params,
                       classify, first_root, fluctuation_flip_check, quadrant, threshold, threshold_s)
from debtcycle import outcome
from debtcycle.mean import mean_at, solve_mean
from debtcycle.outcome import NoRecyclingConvention, flip_scan, mean_expsums, t_no_recycling


def test_linear_mortgage_root():
    params = ModelParams(ell=0.0, mu=0.5, p=0.3, s=0.0, q=0.01, pi_star=3000.0)
    out = classify(params, BASELINE_INIT)
    assert out.t_mortgage == pytest.approx(300000.0 / 2970.0, abs=1e-6)


def test_baseline_roots(favorable, adverse, init):
    fav = classify(favorable, init)
    adv = classify(adverse, init)
    assert abs(fav.t_mortgage - 11.4) <= 0.05
    assert abs(adv.t_equity - 3.2) <= 0.05


def test_classification_examples(favorable, adverse, init):
    fav = classify(favorable, init)
    assert fav.kind is OutcomeKind.STRONG_SUCCESS and fav.owner == "mortgage"
    assert fav.t_no_recycling == pytest.approx(300000.0 / 2970.0)
    adv = classify(adverse, init)
    assert adv.kind is OutcomeKind.DEFAULT and adv.owner == "equity"
    assert adv.t_star == pytest.approx(3.2, abs=0.05)
    flat = classify(baseline_params(p=0.4, s=0.005), init)
    assert flat.kind is OutcomeKind.PERMANENT_REMORTGAGING and flat.t_star is None and flat.owner is None


@pytest.mark.parametrize("p, s, label", [
    (0.8, 0.02, "I"), (0.2, -0.03, "III"), (0.2, 0.02, "II"), (0.8, -0.02, "IV"),
    (0.5, 0.0, "III[l1=1,l2=1]"), (0.5, 0.01, "II[l2=1]"), (0.9, 0.0, "IV[l1=1]"),
])
def test_quadrant_labels(p, s, label):
    q = quadrant(baseline_params(p=p, s=s))
    assert str(q) == label
    assert q.on_boundary == ("[" in label)


@settings(max_examples=100, deadline=None)
@given(model_params(), st.floats(0.0, 0.5), st.floats(0.0, 5e4))
def test_quadrant_ignores_payments_and_state(params, q, pi_star):
    assert quadrant(params) == quadrant(params.with_(q=q, pi_star=pi_star))


def test_no_recycling_conventions(favorable, init):
    assert t_no_recycling(favorable, init) == pytest.approx(101.0101, abs=1e-4)
    assert t_no_recycling(favorable, init, NoRecyclingConvention.SCHEDULED) == 100.0
    assert t_no_recycling(favorable.with_(pi_star=0.0), init) == math.inf


def test_convention_moves_weak_strong_line():
    params = ModelParams(ell=0.0, mu=0.5, p=0.5, s=0.0, q=0.01, pi_star=3000.0)
    init = InitialState(30000.0, 300000.0)
    # linear mortgage: t* equals M0/<pi> and ties are weak
    assert classify(params, init).kind is OutcomeKind.WEAK_SUCCESS
    # a slight investment edge puts the root between M0/pi* and M0/<pi>
    edge = params.with_(ell=0.5, p=0.5002)
    mean_conv = classify(edge, init)
    sched = classify(edge, init, convention=NoRecyclingConvention.SCHEDULED)
    assert sched.t_no_recycling == 100.0
    assert 100.0 < mean_conv.t_star < mean_conv.t_no_recycling
    assert mean_conv.kind is OutcomeKind.STRONG_SUCCESS
    assert sched.kind is OutcomeKind.WEAK_SUCCESS


def test_tie_goes_to_default(favorable, init):
    out = outcome._decide(favorable, init, 7.0, 7.0 + 0.5 * outcome.TIE_TOL, NoRecyclingConvention.MEAN_INSTALLMENT)
    assert out.kind is OutcomeKind.DEFAULT and out.t_star == 7.0


def test_generic_first_root_simple_functions():
    assert first_root(lambda t: 5.0 - t, 10.0) == pytest.approx(5.0, abs=1e-9)
    assert first_root(lambda t: 1.0 + t * t, 10.0) is None
    assert first_root(lambda t: math.cos(float(t)), 10.0) == pytest.approx(math.pi / 2, abs=1e-6)
    assert first_root(lambda t: -1.0, 10.0) == 0.0
    with pytest.raises(ValueError):
        first_root(lambda t: t, 0.0)


def test_analytic_roots_match_generic_scan():
    checked = 0
    for params, init in random_sets(1000, seed=31):
        sol = solve_mean(params, init)
        if sol.degenerate:
            continue
        eq, mo = mean_expsums(params, init, sol)
        grid = np.arange(int(outcome.T_MAX) + 1)
        e, m = mean_at(sol, params, init, grid)
        for k, fn in enumerate((eq, mo)):
            # the scan stops where float overflow starts
            finite = np.isfinite(e) & np.isfinite(m)
            horizon = float(grid[finite].max()) if finite.all() else float(np.argmin(finite) - 1)
            analytic = fn.first_root(t_cap=horizon)
            generic = first_root(lambda t, k=k: mean_at(sol, params, init, t)[k], horizon)
            if analytic is None:
                assert generic is None
            else:
                assert generic == pytest.approx(analytic, abs=1e-5)
            checked += 1
    assert checked > 1500


def test_root_exclusivity():
    for params, init in random_sets(300, seed=32):
        out = classify(params, init)
        if out.t_star is None:
            continue
        e, m = mean_at(solve_mean(params, init), params, init, out.t_star)
        other = m if out.owner == "equity" else e
        scale = init.e0 + init.m0
        assert other > -1e-9 * scale


def test_threshold_p04(init):
    params = baseline_params(p=0.4)
    s_ds = threshold_s(params, init, (-0.04, 0.0), "default/success")
    s_sr = threshold_s(params, init, (-0.01, 0.01), "success/remortgage")
    assert abs(s_ds + 0.0128) <= 0.0005
    assert abs(s_sr) <= 0.0001
    assert classify(params.with_(s=s_ds - 1e-4), init).kind is OutcomeKind.DEFAULT
    assert classify(params.with_(s=s_ds + 1e-4), init).kind.is_success


def test_threshold_same_class_raises(init):
    with pytest.raises(SameClassAtBracket):
        threshold_s(baseline_params(p=0.8), init, (0.01, 0.03))


def test_threshold_argument_checks(init):
    with pytest.raises(ValueError):
        threshold(baseline_params(), init, "q", (0.0, 0.1))
    with pytest.raises(ValueError):
        threshold(baseline_params(), init, "s", (0.0, 0.1), boundary="nope")


def test_threshold_along_p(init):
    params = ModelParams(ell=0.5, mu=0.5, p=0.5, s=-0.01, q=0.01, pi_star=10000.0)
    case = InitialState(90000.0, 900000.0)
    p_star = threshold(params, case, "p", (0.3, 0.7), boundary=lambda k: k is OutcomeKind.STRONG_SUCCESS)
    assert abs(p_star - 0.5) < 1e-3


def test_slice_changes_only_at_thresholds(init):
    base = baseline_params(p=0.4)
    s_values = np.round(np.arange(-0.04, 0.04 + 1e-12, 1e-3), 12)
    kinds = [outcome.classify_kind(base.with_(s=float(s)), init) for s in s_values]
    changes = 0
    for k in range(len(s_values) - 1):
        if kinds[k] is kinds[k + 1]:
            continue
        changes += 1
        before = kinds[k]
        x = threshold_s(base, init, (float(s_values[k]), float(s_values[k + 1])), lambda kind: kind is before)
        assert s_values[k] <= x <= s_values[k + 1]
    assert changes >= 2


def test_flip_examples(favorable, adverse, init):
    fav = fluctuation_flip_check(favorable, init)
    assert not fav.flipped and fav.owner == "mortgage" and fav.min_band > 0
    adv = fluctuation_flip_check(adverse, init)
    assert not adv.flipped and adv.owner == "equity" and adv.min_band > 0


@pytest.mark.parametrize("p", [0.0, 1.0])
@pytest.mark.parametrize("s", [-0.02, 0.02])
def test_flip_impossible_without_noise(p, s, init):
    params = ModelParams(ell=0.5, mu=0.5, p=p, s=s, q=0.0, pi_star=3000.0, phi=0.0)
    rep = fluctuation_flip_check(params, init)
    assert not rep.flipped


def test_known_flip_cell(init):
    # the equity mean dips far below its spread before the mortgage root
    params = baseline_params(p=0.0, s=-0.0096)
    out = classify(params, init)
    rep = fluctuation_flip_check(params, init)
    assert out.owner == "mortgage"
    assert rep.flipped and rep.first_touch < out.t_star


def test_flip_scan_small_grid(init):
    scan = flip_scan(baseline_params(), init, [0.2, 0.8], [-0.03, 0.02])
    assert len(scan.reports) == 4
    assert scan.n_flipped == len(scan.flipped_cells)
