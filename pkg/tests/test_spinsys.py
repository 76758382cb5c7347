import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from erspin.errors import NegativeDuration, NotUnitary
from erspin.spinsys import (
    I2,
    PAULIS,
    SX,
    ElectronParams,
    HyperfineParams,
    SpinSystem,
    axis_angle,
    basis_change,
    free_propagator,
    is_unitary,
    ordered_product,
    precession_frame,
    reunitarize,
    rotation,
    to_lab,
    to_local,
    trace_overlap,
)

from conftest import branch_hamiltonian

unit_vectors = st.tuples(*[st.floats(-1, 1) for _ in range(3)]).filter(lambda v: np.linalg.norm(v) > 0.1)


def test_branch_frequencies_match_hamiltonian_eigenvalues(frame1):
    for branch in (+1, -1):
        ev = np.linalg.eigvalsh(branch_hamiltonian("Nuc-1", branch))
        assert frame1.omega(branch) * 1e-3 == pytest.approx(ev[1] - ev[0], rel=1e-12)


def test_nuc1_frequencies_near_measured(frame1):
    f_plus, f_minus = frame1.frequencies_khz()
    assert f_plus == pytest.approx(458, abs=2)
    assert f_minus == pytest.approx(219, abs=2)


def test_axes_are_unit_and_in_xz_plane(frame1):
    for m in (frame1.m_plus, frame1.m_minus):
        assert np.linalg.norm(m) == pytest.approx(1.0)
        assert m[1] == 0.0


def test_zero_hyperfine_gives_larmor_precession():
    f = precession_frame(HyperfineParams(0.0, 0.0, 100.0))
    assert f.frequencies_khz() == pytest.approx((100.0, 100.0))
    assert np.allclose(f.m_plus, [0, 0, 1]) and np.allclose(f.m_minus, [0, 0, 1])


@pytest.mark.parametrize("kwargs", [dict(a_par=1, a_perp=-1, omega_l=1), dict(a_par=1, a_perp=1, omega_l=0),
                                    dict(a_par=1, a_perp=1, omega_l=1, larmor_scale=1.2)])
def test_hyperfine_validation(kwargs):
    with pytest.raises(ValueError):
        HyperfineParams(**kwargs)


def test_electron_and_system_validation():
    with pytest.raises(ValueError):
        ElectronParams(t2_envelope=(-1.0, 2.0))
    with pytest.raises(ValueError):
        SpinSystem((ElectronParams(), ElectronParams()), None)
    with pytest.raises(ValueError):
        SpinSystem((ElectronParams(),), None, [(1, HyperfineParams(1, 1, 1))])


@given(unit_vectors, st.floats(-4 * np.pi, 4 * np.pi))
def test_rotation_matches_matrix_exponential(axis, angle):
    n = np.asarray(axis) / np.linalg.norm(axis)
    oracle = expm(-0.5j * angle * np.einsum("k,kij->ij", n, PAULIS))
    assert np.allclose(rotation(axis, angle), oracle, atol=1e-12)


def test_rotation_by_pi_about_x_is_minus_i_x():
    assert np.allclose(rotation([1, 0, 0], np.pi), -1j * SX)


@given(unit_vectors, st.floats(1e-3, np.pi - 1e-3))
def test_axis_angle_round_trip(axis, angle):
    n = np.asarray(axis) / np.linalg.norm(axis)
    u = np.exp(0.3j) * rotation(n, angle)
    m, a = axis_angle(u)
    assert a == pytest.approx(angle, abs=1e-9)
    assert np.allclose(m, n, atol=1e-8)


def test_axis_angle_folds_angles_above_pi():
    m, a = axis_angle(rotation([0, 0, 1], 1.5 * np.pi))
    assert a == pytest.approx(0.5 * np.pi)
    assert np.allclose(m, [0, 0, -1])


def test_axis_angle_identity_and_non_unitary():
    m, a = axis_angle(I2)
    assert a == 0.0 and np.allclose(m, [0, 0, 1])
    with pytest.raises(NotUnitary):
        axis_angle(2 * I2)


def test_free_propagator_composes(frame1):
    u = free_propagator(frame1, +1, 1.3) @ free_propagator(frame1, +1, 2.1)
    assert np.allclose(u, free_propagator(frame1, +1, 3.4))
    assert np.allclose(free_propagator(frame1, -1, 0.0), I2)
    with pytest.raises(NegativeDuration):
        free_propagator(frame1, +1, -1.0)


def test_long_products_stay_unitary(frame1):
    u = ordered_product([free_propagator(frame1, (-1) ** k, 0.37) for k in range(5000)])
    assert is_unitary(u, atol=1e-10)


def test_reunitarize_projects_perturbed_matrix():
    u = rotation([1, 2, 3], 0.7) + 1e-4 * np.array([[1, 2], [3, 4]])
    q = reunitarize(u)
    assert is_unitary(q, atol=1e-12)
    assert np.linalg.det(q) == pytest.approx(1.0)
    assert trace_overlap(q, u) > 1 - 1e-6


@given(unit_vectors)
def test_basis_change_is_right_handed(z):
    rows = basis_change(z)
    assert np.allclose(rows @ rows.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(rows) == pytest.approx(1.0)
    assert np.allclose(rows[2], np.asarray(z) / np.linalg.norm(z))


@given(unit_vectors, unit_vectors, st.floats(0, 2 * np.pi))
def test_frame_change_maps_local_axis_to_lab_axis(z, n, angle):
    rows = basis_change(z)
    local = rotation(n, angle)
    lab = to_lab(local, rows)
    lab_axis = rows.T @ (np.asarray(n) / np.linalg.norm(n))
    assert trace_overlap(lab, rotation(lab_axis, angle)) == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(to_local(lab, rows), local, atol=1e-12)
