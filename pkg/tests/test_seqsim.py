import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from erspin.errors import DegenerateRotation, NoEntanglingAxis, NoRootInWindow, OverlappingPulses
from erspin.seqsim import (
    NamedSequence,
    PulseSequence,
    TogglingPair,
    chevron_map,
    conditional_decompose,
    conditional_propagators,
    cz_pair,
    cz_resonance_tau,
    deer_pair,
    deer_trace,
    effective_interaction_time,
    eseem_contrast,
    even_spacings,
    solve_cz_offset,
    xy_phases,
    xy_sequence,
)
from erspin.spinsys import HyperfineParams, precession_frame, trace_overlap

from conftest import full_sequence_oracle


def so3(u):
    """SU(2) -> SO(3) via R_ij = Tr(sigma_i u sigma_j u^dag) / 2."""
    from erspin.spinsys import PAULIS

    return np.real(np.einsum("iab,bc,jcd,da->ij", PAULIS, u, PAULIS, u.conj().T)) / 2


# ---------------------------------------------------------------------------
# sequences


def test_pulse_sequence_bookkeeping():
    s = PulseSequence((1.0, 2.0, 3.0), ("X", "Y"))
    assert s.n_pulses == 2 and s.total_duration == 6.0
    assert np.allclose(s.pulse_times(0.5), [1.5, 3.5])
    a, b = s.split(1)
    assert a.spacings == (1.0,) and b.spacings == (0.0, 2.0, 3.0)


@pytest.mark.parametrize("spacings, phases", [((1.0, -1.0), None), ((), None), ((1.0, 1.0), ("Z",)),
                                              ((1.0, 1.0), ("X", "Y"))])
def test_pulse_sequence_validation(spacings, phases):
    with pytest.raises(ValueError):
        PulseSequence(spacings, phases)


def test_named_families():
    assert NamedSequence("XY-8", 6.0).expand().phases == ("X", "Y", "X", "Y", "Y", "X", "Y", "X")
    assert NamedSequence("Hahn", 5.0).expand().spacings == (5.0, 5.0)
    assert NamedSequence("CPMG", 1.0, 3).expand().phases == ("Y", "Y", "Y")
    assert xy_phases(12) == ("X", "Y") * 6
    assert xy_phases(16)[8:] == ("X", "Y", "X", "Y", "Y", "X", "Y", "X")
    assert even_spacings(2.0, 0) == (4.0,)
    with pytest.raises(ValueError):
        NamedSequence("XY-N", 1.0).expand()
    with pytest.raises(ValueError):
        NamedSequence("UDD", 1.0, 4).expand()


# ---------------------------------------------------------------------------
# conditional propagators vs a full electron-nuclear simulation


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 12.0), min_size=1, max_size=10), st.sampled_from(["Nuc-1", "Nuc-2", "Nuc-3"]))
def test_conditional_propagators_match_full_oracle(spacings, name):
    from erspin.constants import nucleus

    frame = precession_frame(nucleus(name))
    cp = conditional_propagators(PulseSequence(tuple(spacings)), frame)
    o_plus, o_minus = full_sequence_oracle(name, spacings)
    assert trace_overlap(cp.v_plus, o_plus) == pytest.approx(1.0, abs=1e-10)
    assert trace_overlap(cp.v_minus, o_minus) == pytest.approx(1.0, abs=1e-10)


def test_pulse_phase_does_not_change_nuclear_blocks(frame1):
    seq_x = PulseSequence(even_spacings(6.0, 8))
    seq_xy = xy_sequence(6.0, 8)
    a, b = conditional_propagators(seq_x, frame1), conditional_propagators(seq_xy, frame1)
    assert np.allclose(a.v_plus, b.v_plus) and np.allclose(a.v_minus, b.v_minus)


def test_zero_length_sequence_is_identity(frame1):
    cp = conditional_propagators(PulseSequence((0.0,)), frame1)
    assert np.allclose(cp.v_plus, np.eye(2))
    with pytest.warns(DegenerateRotation):
        dec = conditional_decompose(cp)
    assert dec.degenerate


# ---------------------------------------------------------------------------
# resonance


def test_resonance_nuc1(frame1):
    res = cz_resonance_tau(frame1)
    assert res.tau0 == pytest.approx(6.208, abs=0.02)
    assert res.alpha0 / np.pi == pytest.approx(0.248, abs=0.005)
    assert res.antiparallelity < 0.5


def test_resonance_is_antiparallel_by_brute_force_scan(frame1):
    """Minimise the SO(3) angle between the XY-2 rotation axes of V+ and -V- on a fine grid."""
    taus = np.linspace(5.9, 6.5, 6001)

    def anti_deg(tau):
        o_plus, o_minus = full_sequence_oracle("Nuc-1", [tau, 2 * tau, tau])
        rp = Rotation.from_matrix(so3(o_plus)).as_rotvec()
        rm = Rotation.from_matrix(so3(o_minus)).as_rotvec()
        c = np.dot(rp, -rm) / np.linalg.norm(rp) / np.linalg.norm(rm)
        return np.degrees(np.arccos(np.clip(c, -1, 1)))

    vals = np.array([anti_deg(t) for t in taus])
    best = taus[np.argmin(vals)]
    res = cz_resonance_tau(frame1)
    assert abs(best - res.tau0) < 2e-4
    assert vals.min() < 0.5


def test_resonance_z_prime_sign_rule(frame1):
    z = cz_resonance_tau(frame1).basis.z_prime
    assert z[2] > 0


def test_resonance_errors():
    with pytest.raises(NoEntanglingAxis):
        cz_resonance_tau(precession_frame(HyperfineParams(100.0, 0.0, 142.0)))
    with pytest.raises(NoRootInWindow):
        cz_resonance_tau(precession_frame(HyperfineParams(287.0, 163.0, 142.0)), search_window=(0.5, 1.0))


def test_xy4_at_resonance_is_conditional_quarter_turn(frame1):
    res = cz_resonance_tau(frame1)
    cp = conditional_propagators(xy_sequence(res.tau0, 4), frame1)
    dec = conditional_decompose(cp)
    assert dec.alpha_plus == pytest.approx(np.pi / 2, abs=0.02)
    assert dec.antiparallelity < 0.5


# ---------------------------------------------------------------------------
# ESEEM


def test_eseem_matches_full_density_matrix_oracle(frame1, frame2):
    """Echo contrast of an electron in |+x> with two mixed nuclei, propagated exactly."""
    for tau in (4.1, 5.3, 6.21):
        seq = xy_sequence(tau, 8)
        prod = 1.0
        for name in ("Nuc-1", "Nuc-2"):
            o_plus, o_minus = full_sequence_oracle(name, list(seq.spacings))
            prod *= np.real(np.trace(o_plus @ o_minus.conj().T)) / 2
        assert eseem_contrast(seq, [frame1, frame2]) == pytest.approx(prod, abs=1e-10)


def test_eseem_without_nuclei_is_envelope():
    seq = xy_sequence(6.0, 8)
    assert eseem_contrast(seq, []) == 1.0
    assert eseem_contrast(seq, [], (120.0, 2.0)) == pytest.approx(np.exp(-((96 / 120) ** 2)))


def test_eseem_dip_depth_at_resonance(frame1, frame2):
    """At tau = 6.21 us the XY-8 echo is almost fully inverted by the two Er-2 nuclei."""
    c = eseem_contrast(xy_sequence(6.21, 8), [frame1, frame2])
    o = [full_sequence_oracle(n, list(xy_sequence(6.21, 8).spacings)) for n in ("Nuc-1", "Nuc-2")]
    expected = np.prod([np.real(np.trace(p @ m.conj().T)) / 2 for p, m in o])
    assert c == pytest.approx(expected, abs=1e-12)
    assert c < -0.95


# ---------------------------------------------------------------------------
# chevron


def test_chevron_at_resonance(frame1):
    res = cz_resonance_tau(frame1)
    m = chevron_map(frame1, [res.tau0], [0, 8])
    assert m[1, 0] > 0.999
    # the free-precession baseline is independent of the pulse count grid
    assert m[0, 0] == pytest.approx(chevron_map(frame1, [res.tau0], [0])[0, 0])


def test_chevron_matches_explicit_propagators(frame1):
    res = cz_resonance_tau(frame1)
    plus = np.array([1, 1]) / np.sqrt(2)
    minus = np.array([1, -1]) / np.sqrt(2)
    for tau in (5.9, 6.3):
        for n in (1, 2, 5):
            o_plus, _ = full_sequence_oracle("Nuc-1", list(even_spacings(tau, n)))
            p = abs(minus @ res.basis.to_local(o_plus) @ plus) ** 2
            assert chevron_map(frame1, [tau], [n])[0, 0] == pytest.approx(p, abs=1e-10)


def test_chevron_empty_grid(frame1):
    with pytest.raises(ValueError):
        chevron_map(frame1, [], [2])


# ---------------------------------------------------------------------------
# toggling frame


def grid_oracle(pair: TogglingPair, dt=1e-4):
    """Integrate s1(t) s2(t) on a midpoint grid."""
    t = np.arange(0.0, pair.window, dt) + dt / 2
    p1, p2 = pair.pulse_times()
    s1 = pair.sign1 * (-1.0) ** np.searchsorted(p1, t)
    s2 = pair.sign2 * (-1.0) ** np.searchsorted(p2, t)
    return float(np.sum(s1 * s2) * dt)


def test_deer_geometry_exact():
    assert effective_interaction_time(deer_pair(64, 6.0, 2.0)) == pytest.approx(504.0, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 80), st.floats(1.0, 10.0), st.floats(0.01, 0.99))
def test_deer_closed_form(n, tau, frac):
    delta = frac * tau
    assert effective_interaction_time(deer_pair(n, tau, delta)) == pytest.approx(2 * (n - 1) * (tau - delta),
                                                                                abs=1e-9)


def test_cz_pair_matches_grid_integration():
    pair = cz_pair(6.220, 6, 6.208, 8, 2.3)
    assert effective_interaction_time(pair) == pytest.approx(grid_oracle(pair), abs=2e-3)
    assert effective_interaction_time(pair) == pytest.approx(46.3, rel=0.02)


def test_interaction_time_sign_and_symmetry():
    pair = cz_pair(6.0, 4, 6.5, 4, 1.0)
    flipped = TogglingPair(pair.seq1, pair.seq2, pair.start1, pair.start2, sign1=-1)
    assert effective_interaction_time(flipped) == pytest.approx(-effective_interaction_time(pair))
    swapped = TogglingPair(pair.seq2, pair.seq1, pair.start2, pair.start1)
    assert effective_interaction_time(swapped) == pytest.approx(effective_interaction_time(pair))


def test_no_pulses_gives_full_window():
    pair = TogglingPair(PulseSequence((10.0,)), PulseSequence((4.0,)))
    assert effective_interaction_time(pair) == 10.0


def test_overlap_warning():
    with pytest.warns(OverlappingPulses):
        effective_interaction_time(deer_pair(4, 3.0, 0.0))


def test_solve_offset_hits_target():
    target = 1e3 / (4 * 5.40)
    d = solve_cz_offset(6.220, 6, 6.208, 8, target, 2.3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OverlappingPulses)
        assert effective_interaction_time(cz_pair(6.220, 6, 6.208, 8, d)) == pytest.approx(target, abs=1e-9)
    with pytest.raises(NoRootInWindow):
        solve_cz_offset(6.220, 6, 6.208, 8, 1e4, 2.3)


def test_deer_pair_rejects_reordered_pulses():
    with pytest.raises(ValueError):
        deer_pair(8, 3.0, 6.0)
    with pytest.raises(ValueError):
        deer_pair(8, 3.0, -0.1)


def test_deer_trace_damping_uses_magnitude():
    t = np.array([-100.0, 100.0])
    assert np.allclose(deer_trace(5.4, t, 200.0), np.cos(2 * np.pi * 0.54) * np.exp(-0.5))


def test_deer_trace():
    t = np.linspace(0, 400, 5)
    assert np.allclose(deer_trace(5.4, t), np.cos(2 * np.pi * 5.4e-3 * t))
    with pytest.raises(ValueError):
        deer_trace(0.0, t)
