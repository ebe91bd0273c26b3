import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from epsense.effective import EffectiveOscillator, build_heff, build_heff_binary
from epsense.errors import CardinalityMismatch, ConvergenceFailure
from epsense.spectral import closed_form_binary, discriminant, eigenvalues, track_branches

osc = st.builds(
    EffectiveOscillator,
    omega_eff=st.floats(0.9, 1.1),
    gamma_eff=st.floats(-0.05, 0.05),
    theta=st.floats(0, 0.02),
)
osc_free = st.builds(EffectiveOscillator, omega_eff=st.floats(0.9, 1.1), gamma_eff=st.floats(-0.05, 0.05))
J_st = st.floats(1e-4, 0.05)


@given(osc_free, osc_free, J_st)
@settings(max_examples=200, deadline=None)
def test_closed_form_binary(o1, o2, J):
    # At an exact EP2 any backward-stable solver splits the pair by ~sqrt(eps);
    # 1e-10 agreement needs the discriminant away from zero.
    assume(abs(discriminant(o1, o2, J)) > 1e-4)
    ev = eigenvalues(build_heff_binary(o1, o2, J)).positive()
    lp, lm = closed_form_binary(o1, o2, J)
    err = min(max(abs(ev[0] - lp), abs(ev[1] - lm)), max(abs(ev[0] - lm), abs(ev[1] - lp)))
    assert err < 1e-10


def test_exact_ep2_within_square_root_of_rounding():
    J = 0.0078125
    o1, o2 = EffectiveOscillator(1.0, 0.0), EffectiveOscillator(1.0, 4 * J)
    ev = eigenvalues(build_heff_binary(o1, o2, J)).positive()
    assert np.all(np.abs(ev - closed_form_binary(o1, o2, J)[0]) < 1e-7)


def test_discriminant_vanishes_on_the_ep_condition():
    J = 0.022
    o1 = EffectiveOscillator(1.0, -2 * J)
    o2 = EffectiveOscillator(1.0, 2 * J)
    assert abs(discriminant(o1, o2, J)) < 1e-7


@given(st.lists(osc, min_size=2, max_size=3), J_st)
@settings(max_examples=200, deadline=None)
def test_spectrum_paired_and_trace(oscs, J):
    H = build_heff(oscs, J)
    es = eigenvalues(H)
    assert es.pairing_defect() < 1e-9
    assert np.sum(es.values) == pytest.approx(np.trace(H.matrix), abs=1e-12)
    assert np.all(es.residuals < 1e-10)


@given(st.lists(osc, min_size=3, max_size=3), J_st)
@settings(max_examples=100, deadline=None)
def test_reversed_chain_has_same_spectrum(oscs, J):
    a = eigenvalues(build_heff(oscs, J)).values
    b = eigenvalues(build_heff(oscs[::-1], J)).values
    assert np.allclose(np.sort_complex(a), np.sort_complex(b), atol=1e-12)


def test_sorted_output():
    v = eigenvalues(build_heff([EffectiveOscillator(1.0, 0.01), EffectiveOscillator(1.05, -0.02)], 0.01)).values
    assert np.all(np.diff(v.real) >= 0)


def test_nonfinite_matrix_rejected():
    with pytest.raises(ValueError):
        eigenvalues(np.array([[np.nan, 0], [0, 1.0]]))


def test_residual_bound_enforced():
    H = build_heff([EffectiveOscillator(1.0, 0.01), EffectiveOscillator(1.0, -0.01)], 0.005)
    with pytest.raises(ConvergenceFailure):
        eigenvalues(H, residual_bound=-1.0)


def _crossing_sets(xs):
    # Two real levels crossing linearly plus a distant third.
    return [np.array([x, -x, 5.0 + 0.1 * x], dtype=complex) for x in xs]


def test_tracking_follows_straight_lines_through_a_crossing():
    xs = np.linspace(-1, 1, 21)
    sets = [np.sort_complex(s) for s in _crossing_sets(xs)]
    tb = track_branches(xs, sets)
    up = np.argmin(np.abs(tb.branches[0] - (-1.0)))
    assert np.allclose(tb.branches[:, up].real, xs)
    assert 10 in tb.ambiguous


def test_refining_the_axis_keeps_branch_identity():
    rng = np.random.default_rng(1)
    xs = np.linspace(0, 1, 11)
    fine = np.linspace(0, 1, 101)

    def spec(x):
        o = [EffectiveOscillator(1.0, 0.02 - 0.04 * x), EffectiveOscillator(1.0 + 0.01 * x, -0.02 + 0.04 * x)]
        return eigenvalues(build_heff(o, 0.006)).values

    coarse = track_branches(xs, [spec(x) for x in xs])
    dense = track_branches(fine, [spec(x) for x in fine])
    shuffled = [rng.permutation(spec(x)) for x in fine]
    assert np.allclose(track_branches(fine, shuffled).branches[-1], dense.branches[-1])
    assert np.allclose(dense.branches[::10], coarse.branches)


def test_positive_and_mirror_branches():
    xs = np.linspace(0, 1, 5)
    sets = [eigenvalues(build_heff([EffectiveOscillator(1.0, 0.01 * x), EffectiveOscillator(1.1, 0.0)], 0.01)).values
            for x in xs]
    tb = track_branches(xs, sets)
    assert tb.mirror_flags().sum() == 2
    assert np.all(tb.branches[:, tb.positive_branches()].real > 0)


def test_cardinality_checks():
    with pytest.raises(CardinalityMismatch):
        track_branches([0.0, 1.0], [np.zeros(2), np.zeros(3)])
    with pytest.raises(CardinalityMismatch):
        track_branches([0.0], [np.zeros(2)])
    with pytest.raises(ValueError):
        track_branches([1.0, 0.0], [np.zeros(2), np.zeros(2)])
