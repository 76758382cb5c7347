import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from erspin.circuits import (
    ER1,
    ER2,
    NUC,
    ENConditional,
    MeasureZ,
    NoiseBudget,
    OpticalExcite,
    PulseHalfPi,
    PulsePi,
    Register,
    Wait,
    apply_circuit,
    bell_ee_circuit,
    bell_fidelity,
    build_gate,
    circuit_unitary,
    correct_bell_fidelity,
    depolarize,
    en_bell_circuit,
    en_local_frame,
    expectation,
    fidelity_budget,
    initial_state,
    local_z_infidelity,
    merge_half_pi,
    nuclear_correlation,
    optical_excite_channel,
    product_state,
    qnd_analysis,
    readout_correct,
    spectrum_peaks,
    subspace_unitary,
)
from erspin.errors import FidelityTooLow, InvalidTarget, MissingGrassSequence, RoundsTooLarge
from erspin.grass import CU_MINUS, CU_PLUS
from erspin.seqsim import effective_interaction_time, cz_pair
from erspin.spinsys import I2, SX, SY, SZ

PAULI = {"X": SX, "Y": SY, "-X": -SX, "-Y": -SY}
UP, DOWN = np.array([1.0, 0.0]), np.array([0.0, 1.0])
CZ = np.diag([1.0, 1.0, 1.0, -1.0]).astype(complex)
SWAP = np.eye(4, dtype=complex)[[0, 2, 1, 3]]


def embed_oracle(op, q):
    mats = [I2, I2, I2]
    mats[q] = op
    return np.kron(np.kron(mats[0], mats[1]), mats[2])


def random_rho(rng):
    a = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


# ---------------------------------------------------------------------------
# density-matrix step oracle


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([ER1, ER2]), st.sampled_from(list(PAULI)), st.sampled_from([1, -1]),
                          st.booleans()), min_size=1, max_size=8), st.integers(0, 2**16))
def test_pulses_match_expm_step_oracle(register_decoupled, ops, seed):
    rho = random_rho(np.random.default_rng(seed))
    circuit, expected = [], rho
    for q, axis, sign, full in ops:
        angle = np.pi if full else sign * np.pi / 2
        circuit.append(PulsePi(q, axis) if full else PulseHalfPi(q, axis, sign))
        u = embed_oracle(expm(-0.5j * angle * PAULI[axis]), q)
        expected = u @ expected @ u.conj().T
    assert np.allclose(apply_circuit(rho, circuit, register_decoupled), expected, atol=1e-12)


def test_apply_circuit_equals_unitary_conjugation(register):
    rho = random_rho(np.random.default_rng(3))
    circuit = build_gate("SWAP_en", register) + [Wait(1.7)]
    u = circuit_unitary(circuit, register)
    assert np.allclose(apply_circuit(rho, circuit, register), u @ rho @ u.conj().T, atol=1e-12)


def test_wait_evolves_nucleus_conditionally(register):
    from erspin.spinsys import free_propagator

    rho = product_state(UP, DOWN, np.array([1.0, 0.0]))
    out = apply_circuit(rho, [Wait(2.0)], register)
    v = free_propagator(register.frame, -1, 2.0) @ np.array([1.0, 0.0])
    assert np.allclose(out, product_state(UP, DOWN, v))


def test_measure_z_dephases_electron_and_rejects_nucleus(register):
    plus = np.array([1.0, 1.0]) / np.sqrt(2)
    rho = apply_circuit(product_state(plus, UP, UP), [MeasureZ(ER1)], register)
    assert expectation(rho, {ER1: SX}) == pytest.approx(0.0)
    assert expectation(rho, {ER1: SZ}) == pytest.approx(0.0)
    assert np.trace(rho).real == pytest.approx(1.0)
    with pytest.raises(InvalidTarget):
        apply_circuit(rho, [MeasureZ(NUC)], register)
    with pytest.raises(InvalidTarget):
        apply_circuit(rho, [PulsePi(NUC)], register)


def test_circuit_unitary_rejects_channels(register):
    with pytest.raises(InvalidTarget):
        circuit_unitary([MeasureZ(ER1)], register)


# ---------------------------------------------------------------------------
# channels


@pytest.mark.parametrize("p", [0.0, 0.3, 0.87, 1.0, -0.5])
def test_depolarize_shrinks_bloch_vector(p):
    n = np.array([0.3, -0.4, 0.5])
    one = 0.5 * (I2 + n[0] * SX + n[1] * SY + n[2] * SZ)
    rho = product_state(UP, one, UP)
    out = depolarize(rho, ER2, p)
    bloch = [expectation(out, {ER2: s}) for s in (SX, SY, SZ)]
    assert np.allclose(bloch, abs(p) * n)
    assert expectation(out, {ER1: SZ}) == pytest.approx(1.0)
    assert np.linalg.eigvalsh(out).min() > -1e-12


def test_optical_channels(register):
    nuc_x = 0.5 * (I2 + register.nuclear_paulis()[0])
    rho = product_state(UP, UP, nuc_x)
    direct = optical_excite_channel(rho, register, ER2, 1)
    assert expectation(direct, {NUC: register.nuclear_paulis()[0]}) == pytest.approx(0.0, abs=1e-12)
    remote = optical_excite_channel(rho, register, ER1, 307)
    assert expectation(remote, {NUC: register.nuclear_paulis()[0]}) == pytest.approx(np.exp(-1.0))
    nuc_z = 0.5 * (I2 + register.nuclear_paulis()[2])
    relaxed = optical_excite_channel(product_state(UP, UP, nuc_z), register, ER2, 20)
    assert expectation(relaxed, {NUC: register.nuclear_paulis()[2]}) == pytest.approx(np.exp(-1.0))
    assert np.allclose(optical_excite_channel(rho, register, ER2, 0), rho)
    out = apply_circuit(rho, [OpticalExcite(ER2, 1)], register)
    assert np.allclose(out, direct)
    with pytest.raises(InvalidTarget):
        optical_excite_channel(rho, register, NUC, 1)


# ---------------------------------------------------------------------------
# gates


def test_cz_ee_interaction_time_is_quarter_period(register):
    tau1, n1, tau2, n2, offset = register.cz_ee
    t = effective_interaction_time(cz_pair(tau1, n1, tau2, n2, offset))
    assert t == pytest.approx(1e3 / (4 * register.j_khz), abs=1e-9)


def test_cz_ee_is_exact_up_to_local_z(register_decoupled):
    u = subspace_unitary(circuit_unitary(build_gate("CZ_ee", register_decoupled), register_decoupled), idle=NUC)
    assert local_z_infidelity(u, CZ, both_sides=True) < 1e-10


def test_swap_ee_is_exact_up_to_local_z(register_decoupled):
    u = subspace_unitary(circuit_unitary(build_gate("SWAP_ee", register_decoupled), register_decoupled), idle=NUC)
    assert local_z_infidelity(u, SWAP, both_sides=True) < 1e-10


def test_physical_cz_en_close_to_cz(register):
    u = en_local_frame(subspace_unitary(circuit_unitary(build_gate("CZ_en", register), register)), register)
    assert local_z_infidelity(u, CZ, both_sides=True) < 1e-4


def test_ideal_cu_is_exact_target(register):
    u = en_local_frame(subspace_unitary(circuit_unitary(build_gate("CU_en", register, ideal=True), register)),
                       register)
    target = np.block([[CU_PLUS, np.zeros((2, 2))], [np.zeros((2, 2)), CU_MINUS]])
    assert np.allclose(u, target)


def test_ideal_swap_en_squared_is_identity(register):
    s = en_local_frame(subspace_unitary(circuit_unitary(build_gate("SWAP_en", register, ideal=True), register)),
                       register)
    assert local_z_infidelity(s @ s, np.eye(4, dtype=complex)) < 1e-12
    assert local_z_infidelity(s, SWAP, both_sides=True) < 1e-10


def test_physical_swap_en_squared_near_identity(register):
    s = en_local_frame(subspace_unitary(circuit_unitary(build_gate("SWAP_en", register), register)), register)
    assert local_z_infidelity(s @ s, np.eye(4, dtype=complex)) < 2e-3


@pytest.mark.parametrize("ideal", [False, True])
def test_zonly_swap_moves_electron_z_to_nucleus(register, ideal):
    zn = register.nuclear_paulis()[2]
    ops = build_gate("SWAP_en_zonly", register, ideal=ideal)
    for e, sign in ((UP, 1), (DOWN, -1)):
        rho = apply_circuit(product_state(UP, e, I2 / 2), ops, register)
        assert sign * expectation(rho, {NUC: zn}) > 0.999


def test_missing_grass_sequence(system):
    reg = Register.from_system(system, grass_spacings=None)
    with pytest.raises(MissingGrassSequence):
        build_gate("CU_en", reg)
    with pytest.raises(ValueError):
        build_gate("CCZ", reg)


def test_merge_half_pi():
    assert merge_half_pi([PulseHalfPi(ER2, "X", 1), PulseHalfPi(ER2, "X", -1)]) == []
    assert merge_half_pi([PulseHalfPi(ER2, "Y", -1), PulseHalfPi(ER2, "Y", -1)]) == [PulsePi(ER2, "-Y")]
    kept = [PulseHalfPi(ER1, "X", 1), PulseHalfPi(ER2, "X", 1)]
    assert merge_half_pi(kept) == kept


# ---------------------------------------------------------------------------
# circuits


def test_bell_ee_noiseless(register_decoupled, register):
    rho = apply_circuit(initial_state(), bell_ee_circuit(register_decoupled), register_decoupled)
    f, t = bell_fidelity(rho, ER1, ER2, register_decoupled)
    assert f == pytest.approx(1.0, abs=1e-9)
    assert abs(t[2, 2]) == pytest.approx(1.0)
    # a coupled nucleus leaves a small residual entanglement
    rho = apply_circuit(initial_state(), bell_ee_circuit(register), register)
    assert bell_fidelity(rho, ER1, ER2, register)[0] > 0.9999


def test_bell_ee_channel_mode_matches_budget(register_decoupled):
    budget = NoiseBudget()
    rho = apply_circuit(initial_state(), bell_ee_circuit(register_decoupled, budget), register_decoupled, noisy=True)
    f, _ = bell_fidelity(rho, ER1, ER2, register_decoupled)
    assert f == pytest.approx(fidelity_budget(budget, "bell_ee").value, abs=1e-9)


def test_en_bell_noiseless(register):
    prep, back = en_bell_circuit(register)
    rho = apply_circuit(initial_state(), prep, register)
    assert bell_fidelity(rho, ER2, NUC, register)[0] > 0.995
    rho = apply_circuit(rho, back, register)
    assert bell_fidelity(rho, ER1, ER2, register)[0] > 0.995


def test_nuclear_ramsey_peaks(register):
    dt = 0.25
    waits = np.arange(800) * dt
    signal = nuclear_correlation(register, waits)
    peaks, bin_khz = spectrum_peaks(signal, dt, 2)
    f_plus, f_minus = register.frame.frequencies_khz()
    assert abs(peaks[1] - f_plus) <= bin_khz
    assert abs(peaks[0] - f_minus) <= bin_khz


def test_nuclear_echo_refocuses(register):
    signal = nuclear_correlation(register, [0.0, 37.0, 410.0], echo=True)
    assert np.allclose(np.abs(signal), abs(signal[0]), atol=1e-9)
    decayed = nuclear_correlation(register, [100.0], echo=True, envelope=(100.0, 1.0))
    assert abs(decayed[0]) == pytest.approx(abs(signal[0]) * np.exp(-1), rel=1e-6)


# ---------------------------------------------------------------------------
# budgets and readout


@pytest.mark.parametrize("kind, value", [("bell_ee", 0.81), ("remote_readout", 0.89), ("swap2", 0.830),
                                         ("en_bell", 0.56)])
def test_budgets(kind, value):
    assert fidelity_budget(NoiseBudget(), kind).value == pytest.approx(value, abs=0.005)


def test_en_bell_budget_zz():
    assert fidelity_budget(NoiseBudget(), "en_bell").components["ZZ"] == pytest.approx(0.455, abs=0.005)


def test_budget_with_perfect_contrasts_is_one():
    perfect = NoiseBudget(1, 1, 1, 1, 1, 1, 0)
    for kind in ("bell_ee", "remote_readout", "swap2", "en_bell"):
        assert fidelity_budget(perfect, kind).value == pytest.approx(1.0)
    with pytest.raises(ValueError):
        fidelity_budget(perfect, "ghz")


def test_readout_correction():
    value, clamped = readout_correct(0.5, [0.9, 0.9])
    assert value == pytest.approx(0.5 / 0.64) and not clamped
    value, clamped = readout_correct(0.9, [0.6])
    assert value == 1.0 and clamped
    with pytest.raises(FidelityTooLow):
        readout_correct(0.1, [0.5])
    assert correct_bell_fidelity(0.25 + 0.75 * 0.64, [0.9, 0.9]) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# QND


def qnd_monte_carlo(rounds, p, f, trials, seed):
    rng = np.random.default_rng(seed)
    s0 = rng.integers(0, 2, trials)
    state = s0.copy()
    outs = np.empty((trials, rounds), dtype=int)
    for k in range(rounds):
        err = rng.random(trials) >= f
        outs[:, k] = state ^ err
        state = state ^ (rng.random(trials) < p)
    agree = np.all(outs == outs[:, :1], axis=1)
    return (outs[agree, 0] == s0[agree]).mean(), agree.mean()


def test_qnd_matches_monte_carlo():
    r = qnd_analysis(3, 0.08, 0.94)
    fid, acc = qnd_monte_carlo(3, 0.08, 0.94, 400_000, 11)
    assert r.acceptance == pytest.approx(acc, abs=4e-3)
    assert r.fidelity == pytest.approx(fid, abs=4e-3)


@given(st.integers(1, 8), st.floats(0, 0.5), st.floats(0.5, 1.0))
@settings(max_examples=40, deadline=None)
def test_qnd_per_round_closed_form(rounds, p, f):
    r = qnd_analysis(rounds, p, f, "per_round")
    for k, got in enumerate(r.per_round):
        q = (1 + (1 - 2 * p) ** k) / 2
        assert got == pytest.approx(f * q + (1 - f) * (1 - q), abs=1e-12)


def test_qnd_policies_and_limits():
    assert qnd_analysis(1, 0.08, 0.94).fidelity == pytest.approx(0.94)
    assert qnd_analysis(5, 0.0, 1.0).fidelity == pytest.approx(1.0)
    assert qnd_analysis(3, 0.0, 0.94, "majority").fidelity == pytest.approx(0.94**3 + 3 * 0.94**2 * 0.06)
    with pytest.raises(RoundsTooLarge):
        qnd_analysis(21, 0.08, 0.94)
    with pytest.raises(ValueError):
        qnd_analysis(3, 0.08, 0.94, "vote")


def test_en_conditional_semantics(register):
    op = ENConditional(SX, SZ)
    rho = apply_circuit(product_state(UP, DOWN, UP), [op], register)
    assert expectation(rho, {NUC: SZ}) == pytest.approx(1.0)
    rho = apply_circuit(product_state(UP, UP, UP), [op], register)
    assert expectation(rho, {NUC: SZ}) == pytest.approx(-1.0)
