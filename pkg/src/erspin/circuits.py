"""Three-spin register (Er-1, Er-2, nuclear spin) simulator, gate library and error budgets.

States are 8x8 density matrices over Er-1 (x) Er-2 (x) nucleus with |up> at index 0.
The nucleus is coupled to Er-2: between pulses it precesses about m+ when Er-2 is up
and about m- when Er-2 is down. There is no rotating frame for the nucleus, so every
wait evolves it. The Ising phase exp(-i pi J t Z1 Z2) is applied during
electron-electron sequence pairs only; other gates are short compared with 1/J and
idle electrons are assumed decoupled.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation

from .constants import (
    CZ_EE_N1,
    CZ_EE_N2,
    CZ_EE_OFFSET,
    CZ_EE_TAU1,
    CZ_EE_TAU2,
    PUBLISHED_GRASS_SPACINGS,
)
from .errors import FidelityTooLow, InvalidTarget, MissingGrassSequence, RoundsTooLarge
from .seqsim import (
    PulseSequence,
    QubitBasis,
    TogglingPair,
    cz_pair,
    cz_resonance_tau,
    solve_cz_offset,
    xy_phases,
    xy_sequence,
)
from .spinsys import I2, SX, SY, SZ, US_TO_MS, PrecessionFrame, SpinSystem, free_propagator, precession_frame, rotation

ER1, ER2, NUC = 0, 1, 2
DIM = 8
P_UP = np.diag([1.0, 0.0]).astype(complex)
P_DOWN = np.diag([0.0, 1.0]).astype(complex)
AXES = {"X": (1.0, 0.0, 0.0), "Y": (0.0, 1.0, 0.0), "-X": (-1.0, 0.0, 0.0), "-Y": (0.0, -1.0, 0.0)}
MAX_QND_ROUNDS = 20


def embed(op: np.ndarray, qubit: int) -> np.ndarray:
    mats = [I2, I2, I2]
    mats[qubit] = op
    return np.kron(np.kron(mats[0], mats[1]), mats[2])


# ---------------------------------------------------------------------------
# gate operations


@dataclass(frozen=True)
class PulseHalfPi:
    target: int
    axis: str = "X"
    sign: int = 1
    contrast: tuple = ()


@dataclass(frozen=True)
class PulsePi:
    target: int
    axis: str = "X"
    contrast: tuple = ()


@dataclass(frozen=True, eq=False)
class EESequencePair:
    pair: TogglingPair
    contrast: tuple = ()  # ((qubit, p), ...) applied after the gate in channel mode

    @property
    def duration(self) -> float:
        return float(self.pair.window)


@dataclass(frozen=True, eq=False)
class ENSequence:
    seq: PulseSequence
    contrast: tuple = ()

    @property
    def duration(self) -> float:
        return self.seq.total_duration


@dataclass(frozen=True, eq=False)
class ENConditional:
    """Exact conditional nuclear unitaries (lab frame) in place of a pulse sequence."""

    v_plus: np.ndarray
    v_minus: np.ndarray
    contrast: tuple = ()


@dataclass(frozen=True)
class Wait:
    duration: float
    contrast: tuple = ()


@dataclass(frozen=True)
class MeasureZ:
    target: int
    contrast: tuple = ()


@dataclass(frozen=True)
class OpticalExcite:
    target: int
    n_pulses: int
    contrast: tuple = ()


@dataclass(frozen=True)
class NoiseBudget:
    """Sequence contrast factors and readout parameters used by budgets and channels."""

    p_xy6_er1: float = 0.87
    p_xy8_er2: float = 0.86
    p_cz: float = 0.93
    p_cx: float = 0.94
    f_read1: float = 0.94
    f_read2: float = 0.94
    p_err: float = 0.08

    def __post_init__(self):
        for name in ("p_xy6_er1", "p_xy8_er2", "p_cz", "p_cx"):
            if abs(getattr(self, name)) > 1:
                raise ValueError(f"{name} must have magnitude <= 1")
        for name in ("f_read1", "f_read2", "p_err"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")


# ---------------------------------------------------------------------------
# register model


@dataclass(frozen=True, eq=False)
class Register:
    """Physical parameters the gate library and simulator need.

    ``frame`` is the nucleus coupled to Er-2; ``None`` leaves the nucleus idle.
    """

    frame: PrecessionFrame | None
    basis: QubitBasis
    tau0: float
    j_khz: float
    grass_spacings: tuple[float, ...] | None = PUBLISHED_GRASS_SPACINGS
    cz_ee: tuple = (CZ_EE_TAU1, CZ_EE_N1, CZ_EE_TAU2, CZ_EE_N2, CZ_EE_OFFSET)

    @classmethod
    def from_system(
        cls,
        system: SpinSystem,
        grass_spacings=PUBLISHED_GRASS_SPACINGS,
        nucleus: int | None = None,
        solve_offset: bool = True,
        couple_nucleus: bool = True,
    ) -> "Register":
        """Register with the first Er-2 nucleus (or ``nucleus``, an index into system.nuclei).

        With ``solve_offset`` the Er-1 start offset is re-solved near the nominal value
        so that the interaction time is exactly 1/(4J).
        """
        if len(system.electrons) != 2:
            raise ValueError("the register needs two electrons")
        if nucleus is None:
            owned = [i for i, (owner, _) in enumerate(system.nuclei) if owner == 1]
            if not owned:
                raise ValueError("no nucleus is coupled to Er-2")
            nucleus = owned[0]
        frame = precession_frame(system.nuclei[nucleus][1])
        res = cz_resonance_tau(frame)
        tau1, n1, tau2, n2, offset = CZ_EE_TAU1, CZ_EE_N1, CZ_EE_TAU2, CZ_EE_N2, CZ_EE_OFFSET
        if solve_offset:
            offset = solve_cz_offset(tau1, n1, tau2, n2, 1e3 / (4 * system.j_coupling), CZ_EE_OFFSET)
        return cls(
            frame=frame if couple_nucleus else None,
            basis=res.basis,
            tau0=res.tau0,
            j_khz=system.j_coupling,
            grass_spacings=None if grass_spacings is None else tuple(grass_spacings),
            cz_ee=(tau1, n1, tau2, n2, offset),
        )

    def nuclear_window(self, t_us: float) -> np.ndarray:
        """8x8 propagator of a pulse-free window: nucleus conditioned on Er-2."""
        if self.frame is None:
            return np.eye(DIM, dtype=complex)
        up = np.kron(P_UP, free_propagator(self.frame, +1, t_us))
        u = up + np.kron(P_DOWN, free_propagator(self.frame, -1, t_us))
        return np.kron(I2, u)

    def ising_window(self, t_us: float) -> np.ndarray:
        z1z2 = np.array([1.0, -1.0, -1.0, 1.0])
        phase = np.exp(-1j * np.pi * self.j_khz * t_us * US_TO_MS * z1z2)
        return np.diag(np.kron(phase, np.ones(2)))

    def nuclear_su2(self) -> np.ndarray:
        """SU(2) W with W sigma_k W^dag equal to the k-th z'-frame Pauli in lab coordinates."""
        rotvec = Rotation.from_matrix(self.basis.rows.T).as_rotvec()
        angle = float(np.linalg.norm(rotvec))
        return I2.copy() if angle < 1e-15 else rotation(rotvec / angle, angle)

    def nuclear_paulis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(self.basis.to_lab(p) for p in (SX, SY, SZ))


# ---------------------------------------------------------------------------
# simulator


def pure_state(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=complex).reshape(DIM)
    v = v / np.linalg.norm(v)
    return np.outer(v, v.conj())


def product_state(er1, er2, nuc) -> np.ndarray:
    """Density matrix of a product of single-qubit density matrices or kets."""

    def dm(x):
        x = np.asarray(x, dtype=complex)
        return np.outer(x, x.conj()) if x.ndim == 1 else x

    return np.kron(np.kron(dm(er1), dm(er2)), dm(nuc))


def initial_state(nucleus=None) -> np.ndarray:
    """Both electrons up; nucleus maximally mixed unless a ket or density matrix is given."""
    up = np.array([1.0, 0.0])
    return product_state(up, up, I2 / 2 if nucleus is None else nucleus)


def _pulse(axis: str, angle: float) -> np.ndarray:
    if axis not in AXES:
        raise InvalidTarget(f"unknown pulse axis {axis!r}")
    return rotation(AXES[axis], angle)


def _check_electron(target: int):
    if target not in (ER1, ER2):
        raise InvalidTarget(f"target {target} is not an electron (0 = Er-1, 1 = Er-2)")


def depolarize(rho: np.ndarray, qubit: int, p: float) -> np.ndarray:
    """Shrink the Bloch vector of ``qubit`` by |p| (Pauli-twirl form)."""
    p = abs(p)
    out = (1 + 3 * p) / 4 * rho
    for s in (SX, SY, SZ):
        op = embed(s, qubit)
        out = out + (1 - p) / 4 * op @ rho @ op
    return out


def _nuclear_scale(rho: np.ndarray, reg: Register, coherence: float, population: float) -> np.ndarray:
    """Scale nuclear z'-frame coherences by ``coherence`` and <Z'> by ``population``."""
    w = np.kron(np.eye(4), reg.nuclear_su2())
    loc = w.conj().T @ rho @ w
    blocks = loc.reshape(4, 2, 4, 2).copy()
    blocks[:, 0, :, 1] *= coherence
    blocks[:, 1, :, 0] *= coherence
    d0 = blocks[:, 0, :, 0].copy()
    d1 = blocks[:, 1, :, 1].copy()
    blocks[:, 0, :, 0] = (1 + population) / 2 * d0 + (1 - population) / 2 * d1
    blocks[:, 1, :, 1] = (1 - population) / 2 * d0 + (1 + population) / 2 * d1
    return w @ blocks.reshape(DIM, DIM) @ w.conj().T


def optical_excite_channel(rho, reg: Register, target: int, n_pulses: int, mode: str | None = None,
                           relax_const: float = 20.0, dephase_const: float = 307.0) -> np.ndarray:
    """Nuclear back-action of ``n_pulses`` optical excitations of an electron.

    er2_direct: full z'-frame dephasing after one pulse and exp(-n / relax_const)
    population relaxation. er1_remote: coherence factor exp(-n / dephase_const) and
    no population change. Both constants are calibration inputs.
    """
    _check_electron(target)
    mode = mode or ("er2_direct" if target == ER2 else "er1_remote")
    if n_pulses < 0:
        raise ValueError("n_pulses must be >= 0")
    if n_pulses == 0:
        return rho
    if mode == "er2_direct":
        return _nuclear_scale(rho, reg, 0.0, float(np.exp(-n_pulses / relax_const)))
    if mode == "er1_remote":
        return _nuclear_scale(rho, reg, float(np.exp(-n_pulses / dephase_const)), 1.0)
    raise ValueError(f"unknown optical excitation mode {mode!r}")


def _sequence_pair_unitary(op: EESequencePair, reg: Register) -> np.ndarray:
    pair = op.pair
    events = []
    for q, seq, start in ((ER1, pair.seq1, pair.start1), (ER2, pair.seq2, pair.start2)):
        for t, ph in zip(seq.pulse_times(start), seq.phases):
            events.append((float(t), q, ph))
    events.sort(key=lambda e: (e[0], e[1]))
    u = np.eye(DIM, dtype=complex)
    t_prev = 0.0
    for t, q, ph in events:
        dt = t - t_prev
        if dt > 0:
            u = reg.ising_window(dt) @ reg.nuclear_window(dt) @ u
        u = embed(_pulse(ph, np.pi), q) @ u
        t_prev = t
    dt = pair.window - t_prev
    if dt > 0:
        u = reg.ising_window(dt) @ reg.nuclear_window(dt) @ u
    return u


def _en_sequence_unitary(op: ENSequence, reg: Register) -> np.ndarray:
    u = np.eye(DIM, dtype=complex)
    seq = op.seq
    for k, t in enumerate(seq.spacings):
        u = reg.nuclear_window(t) @ u
        if k < seq.n_pulses:
            u = embed(_pulse(seq.phases[k], np.pi), ER2) @ u
    return u


def gate_unitary(op, reg: Register) -> np.ndarray | None:
    """8x8 unitary of a coherent gate; None for channels and measurements."""
    if isinstance(op, PulseHalfPi):
        _check_electron(op.target)
        return embed(_pulse(op.axis, op.sign * np.pi / 2), op.target)
    if isinstance(op, PulsePi):
        _check_electron(op.target)
        return embed(_pulse(op.axis, np.pi), op.target)
    if isinstance(op, EESequencePair):
        return _sequence_pair_unitary(op, reg)
    if isinstance(op, ENSequence):
        return _en_sequence_unitary(op, reg)
    if isinstance(op, ENConditional):
        return np.kron(I2, np.kron(P_UP, op.v_plus) + np.kron(P_DOWN, op.v_minus))
    if isinstance(op, Wait):
        if op.duration < 0:
            raise ValueError("wait duration must be >= 0")
        return reg.nuclear_window(op.duration)
    return None


def apply_circuit(rho, circuit, reg: Register, noisy: bool = False) -> np.ndarray:
    """Apply gates in order. With ``noisy`` each gate's contrast channel follows it."""
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim == 1:
        rho = pure_state(rho)
    for op in circuit:
        u = gate_unitary(op, reg)
        if u is not None:
            rho = u @ rho @ u.conj().T
        elif isinstance(op, MeasureZ):
            _check_electron(op.target)
            p0, p1 = embed(P_UP, op.target), embed(P_DOWN, op.target)
            rho = p0 @ rho @ p0 + p1 @ rho @ p1
        elif isinstance(op, OpticalExcite):
            rho = optical_excite_channel(rho, reg, op.target, op.n_pulses)
        else:
            raise InvalidTarget(f"unknown gate {op!r}")
        if noisy:
            for q, p in op.contrast:
                rho = depolarize(rho, q, p)
        rho = 0.5 * (rho + rho.conj().T)
    return rho


def circuit_unitary(circuit, reg: Register) -> np.ndarray:
    u = np.eye(DIM, dtype=complex)
    for op in circuit:
        g = gate_unitary(op, reg)
        if g is None:
            raise InvalidTarget(f"{op!r} is not a coherent gate")
        u = g @ u
    return u


# ---------------------------------------------------------------------------
# gate library


def _pulse_product(labels) -> np.ndarray:
    u = I2.copy()
    for ph in labels:
        u = _pulse(ph, np.pi) @ u
    return u


def _compensation(labels) -> tuple[str, ...]:
    """pi pulses that undo the net single-qubit action of a pulse train (up to phase)."""
    net = _pulse_product(labels)
    for fix in ((), ("X",), ("Y",), ("X", "Y")):
        if abs(abs(np.trace(_pulse_product(fix) @ net)) - 2) < 1e-9:
            return fix
    raise AssertionError("pulse train is not a Pauli product")


def merge_half_pi(ops):
    """Cancel or merge back-to-back pi/2 pulses on the same electron and axis."""
    out = []
    for op in ops:
        prev = out[-1] if out else None
        if (
            isinstance(op, PulseHalfPi)
            and isinstance(prev, PulseHalfPi)
            and prev.target == op.target
            and prev.axis == op.axis
        ):
            out.pop()
            if prev.sign == op.sign:
                out.append(PulsePi(op.target, op.axis if op.sign > 0 else _negate(op.axis)))
            continue
        out.append(op)
    return out


def _negate(axis: str) -> str:
    return axis[1:] if axis.startswith("-") else "-" + axis


def _contrast(budget, pairs):
    return () if budget is None else tuple((q, getattr(budget, name)) for q, name in pairs)


def _cz_ee(reg: Register, budget) -> list:
    tau1, n1, tau2, n2, offset = reg.cz_ee
    pair = cz_pair(tau1, n1, tau2, n2, offset)
    ops = [EESequencePair(pair, _contrast(budget, ((ER1, "p_xy6_er1"), (ER2, "p_xy8_er2"))))]
    ops += [PulsePi(ER1, a) for a in _compensation(pair.seq1.phases)]
    ops += [PulsePi(ER2, a) for a in _compensation(pair.seq2.phases)]
    return ops


def _cz_en(reg: Register, budget, ideal=False) -> list:
    c = _contrast(budget, ((ER2, "p_cz"),))
    if ideal:
        quarter = rotation([0, 0, 1], np.pi / 2)
        return [ENConditional(reg.basis.to_lab(quarter.conj().T), reg.basis.to_lab(quarter), c)]
    return [ENSequence(xy_sequence(reg.tau0, 4), c)]


def _cx_en(reg: Register, budget, ideal=False) -> list:
    # nucleus controls, Er-2 is the target; XY-4 at tau0 gives exp(+i pi/4 Z Z')
    return [PulseHalfPi(ER2, "Y", +1), *_cz_en(reg, budget, ideal), PulseHalfPi(ER2, "X", +1)]


def _cu_en(reg: Register, budget, ideal=False) -> list:
    if ideal:
        return [ENConditional(reg.basis.to_lab(SX), reg.basis.to_lab(SZ), _contrast(budget, ((ER2, "p_cx"),)))]
    if reg.grass_spacings is None:
        raise MissingGrassSequence("CU_en needs a GRASS sequence")
    seq = PulseSequence(reg.grass_spacings, xy_phases(len(reg.grass_spacings) - 1))
    return [ENSequence(seq, _contrast(budget, ((ER2, "p_cx"),)))]


def _cx_ee(reg: Register, target: int, budget) -> list:
    # the Ising phase is exp(-i pi/4 Z1 Z2), opposite in sign to the e-n CZ
    return [PulseHalfPi(target, "Y", +1), *_cz_ee(reg, budget), PulseHalfPi(target, "X", -1)]


def build_gate(kind: str, reg: Register, budget: NoiseBudget | None = None, ideal: bool = False) -> list:
    """Pulse-level decomposition of a named gate.

    With a ``budget`` the gates carry contrast factors for channel-mode simulation.
    ``ideal`` swaps the electron-nuclear sequences for their exact target unitaries
    (conditional +-pi/2 about z' for CZ, X / Z for CU).
    """
    if kind == "CZ_ee":
        return _cz_ee(reg, budget)
    if kind == "CZ_en":
        return _cz_en(reg, budget, ideal)
    if kind == "CX_en":
        return _cx_en(reg, budget, ideal)
    if kind == "CU_en":
        return _cu_en(reg, budget, ideal)
    if kind == "SWAP_en":
        return merge_half_pi(_cx_en(reg, budget, ideal) + _cu_en(reg, budget, ideal) + _cx_en(reg, budget, ideal))
    if kind == "SWAP_en_zonly":
        return merge_half_pi(_cx_en(reg, budget, ideal) + _cu_en(reg, budget, ideal))
    if kind == "SWAP_ee":
        return merge_half_pi(_cx_ee(reg, ER2, budget) + _cx_ee(reg, ER1, budget) + _cx_ee(reg, ER2, budget))
    raise ValueError(f"unknown gate kind {kind!r}")


GATE_KINDS = ("CZ_ee", "CZ_en", "CX_en", "CU_en", "SWAP_en", "SWAP_en_zonly", "SWAP_ee")


# ---------------------------------------------------------------------------
# observables


def expectation(rho, ops: dict) -> float:
    mats = [I2, I2, I2]
    for q, m in ops.items():
        mats[q] = m
    full = np.kron(np.kron(mats[0], mats[1]), mats[2])
    return float(np.real(np.trace(rho @ full)))


def _paulis(qubit: int, reg: Register):
    return reg.nuclear_paulis() if qubit == NUC else (SX, SY, SZ)


def correlation_matrix(rho, qa: int, qb: int, reg: Register) -> np.ndarray:
    """T[i, j] = <sigma_i^a sigma_j^b>, nuclear Paulis taken in the z' frame."""
    pa, pb = _paulis(qa, reg), _paulis(qb, reg)
    return np.array([[expectation(rho, {qa: a, qb: b}) for b in pb] for a in pa])


def bell_fidelity(rho, qa: int, qb: int, reg: Register) -> tuple[float, np.ndarray]:
    """(1 + |<XX>| + |<YY>| + |<ZZ>|)/4 in the analysis frame.

    The analysis frame absorbs local z rotations of each qubit (calibrated readout
    phases), so the transverse pair is the sum of singular values of the XY block.
    """
    t = correlation_matrix(rho, qa, qb, reg)
    sv = np.linalg.svd(t[:2, :2], compute_uv=False)
    return float((1 + abs(t[2, 2]) + sv.sum()) / 4), t


def subspace_unitary(u8: np.ndarray, idle: int = ER1) -> np.ndarray:
    """4x4 block acting on the two non-idle qubits; requires the idle qubit untouched."""
    t = u8.reshape(2, 2, 2, 2, 2, 2)
    if idle == ER1:
        return t[0, :, :, 0, :, :].reshape(4, 4)
    if idle == NUC:
        return t[:, :, 0, :, :, 0].reshape(4, 4)
    raise ValueError("idle must be Er-1 or the nucleus")


def local_z_infidelity(u: np.ndarray, target: np.ndarray, both_sides: bool = False) -> float:
    """Min over local z rotations of 1 - |Tr(L target R U^dag)|^2 / 16 for 4x4 matrices."""

    def lz(a, b):
        return np.kron(rotation([0, 0, 1], a), rotation([0, 0, 1], b))

    def f(ph):
        left = lz(ph[0], ph[1])
        right = lz(ph[2], ph[3]) if both_sides else np.eye(4)
        return 1 - abs(np.trace(left @ target @ right @ u.conj().T)) ** 2 / 16

    n = 4 if both_sides else 2
    starts = [np.array(s, dtype=float) for s in itertools.product((0.0, np.pi / 2, np.pi, 3 * np.pi / 2), repeat=n)]
    best = min(starts, key=f)
    res = minimize(f, best, method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-16, "maxiter": 20000})
    return float(max(min(res.fun, f(best)), 0.0))


def en_local_frame(u4: np.ndarray, reg: Register) -> np.ndarray:
    """Express an (Er-2, nucleus) unitary with the nucleus in the z' frame."""
    w = np.kron(I2, reg.nuclear_su2())
    return w.conj().T @ u4 @ w


# ---------------------------------------------------------------------------
# named circuits


def bell_ee_circuit(reg: Register, budget: NoiseBudget | None = None) -> list:
    """pi/2 on both electrons, Er-Er CZ, pi/2 on Er-2 (|up up> + |down down> up to local z)."""
    return [PulseHalfPi(ER1, "Y", +1), PulseHalfPi(ER2, "Y", +1), *_cz_ee(reg, budget), PulseHalfPi(ER2, "X", +1)]


def en_bell_circuit(reg: Register, budget: NoiseBudget | None = None) -> tuple[list, list]:
    """(prepare, read-back) halves of the electron-nuclear Bell experiment.

    Prepare: initialise the nucleus by SWAP_en, refresh Er-2 with SWAP_ee, then a
    pi/2 on Er-2 followed by CU entangles Er-2 with the nucleus. Read-back runs the
    reverse mapping so the pair ends on (Er-1, Er-2).
    """
    prepare = (
        build_gate("SWAP_en", reg, budget)
        + build_gate("SWAP_ee", reg, budget)
        + [PulseHalfPi(ER2, "Y", +1)]
        + build_gate("CU_en", reg, budget)
    )
    readback = build_gate("SWAP_ee", reg, budget) + build_gate("SWAP_en", reg, budget)
    return prepare, readback


def nuclear_correlation(reg: Register, waits, echo: bool = False, envelope=None) -> np.ndarray:
    """<Z'_n(0) Z'_n(t)> through Er-2: CX, Er-2 readout, wait t, CX, Er-2 readout.

    With ``echo`` a nuclear pi pulse about y at t/2 refocuses the precession: y is
    normal to both precession axes and to z', so the echoed signal is -1 times the
    envelope. ``envelope`` is an optional (T2 us, n) stretched exponential that shrinks
    the nuclear Bloch vector during the wait.
    """
    cx = build_gate("CX_en", reg)
    flip = rotation([0, 1, 0], np.pi)
    out = []
    for t in waits:
        rho = apply_circuit(initial_state(), cx + [MeasureZ(ER2)], reg)
        if echo:
            rho = apply_circuit(rho, [Wait(t / 2), ENConditional(flip, flip), Wait(t / 2)], reg)
        else:
            rho = apply_circuit(rho, [Wait(t)], reg)
        if envelope is not None:
            t2, n = envelope
            rho = depolarize(rho, NUC, float(np.exp(-((t / t2) ** n))))
        rho = apply_circuit(rho, cx, reg)
        out.append(expectation(rho, {ER2: SZ}))
    return np.array(out)


def spectrum_peaks(signal, dt_us: float, n_peaks: int = 2) -> tuple[np.ndarray, float]:
    """Frequencies (kHz) of the largest local maxima of |FFT| and the bin width."""
    x = np.asarray(signal, dtype=float)
    amp = np.abs(np.fft.rfft(x - x.mean()))
    freqs = np.fft.rfftfreq(x.size, dt_us * US_TO_MS)
    interior = np.nonzero((amp[1:-1] > amp[:-2]) & (amp[1:-1] >= amp[2:]))[0] + 1
    top = interior[np.argsort(amp[interior])[::-1][:n_peaks]]
    return np.sort(freqs[top]), float(freqs[1])


# ---------------------------------------------------------------------------
# budgets, readout correction and QND


@dataclass(frozen=True)
class BudgetResult:
    value: float
    components: dict = field(default_factory=dict)


def fidelity_budget(budget: NoiseBudget, kind: str) -> BudgetResult:
    p1, p2 = budget.p_xy6_er1, abs(budget.p_xy8_er2)
    if kind == "bell_ee":
        c = p1 * p2
        return BudgetResult((1 + 3 * c) / 4, {"XX": c, "YY": c, "ZZ": c})
    if kind == "remote_readout":
        return BudgetResult((1 + p1 * budget.f_read1 * (1 - budget.p_err / 2)) / 2)
    if kind == "swap2":
        return BudgetResult((1 + budget.p_cx**2 * budget.p_cz**4) / 2)
    if kind == "en_bell":
        zz = budget.p_cz**2 * budget.p_cx * p1**2 * p2**2
        xx = budget.p_cz**3 * budget.p_cx**2 * p1**2 * p2**2
        return BudgetResult((1 + 2 * xx + zz) / 4, {"XX": xx, "YY": xx, "ZZ": zz})
    raise ValueError(f"unknown budget kind {kind!r}")


BUDGET_KINDS = ("bell_ee", "remote_readout", "swap2", "en_bell")


def readout_correct(raw: float, fidelities) -> tuple[float, bool]:
    """raw * prod (2F_i - 1)^-1, clamped to [-1, 1]; returns (value, clamped)."""
    scale = 1.0
    for f in fidelities:
        if f <= 0.5:
            raise FidelityTooLow(f"readout fidelity {f} must exceed 0.5")
        scale /= 2 * f - 1
    value = raw * scale
    clamped = bool(abs(value) > 1)
    return float(np.clip(value, -1.0, 1.0)), clamped


def correct_bell_fidelity(raw_f: float, fidelities) -> float:
    """Correct a Bell fidelity with equal XX, YY, ZZ magnitudes: c -> c / prod(2F - 1)."""
    c = (4 * raw_f - 1) / 3
    return (1 + 3 * readout_correct(c, fidelities)[0]) / 4


@dataclass(frozen=True)
class QndResult:
    fidelity: float
    acceptance: float
    per_round: tuple[float, ...]


def qnd_analysis(rounds: int, p_err: float, f_read: float, policy: str = "post_select",
                 flip_before_read: bool = False, gate_contrast: float = 1.0,
                 round_index: int | None = None) -> QndResult:
    """Exact enumeration of repeated Er-2 readout through Er-1.

    Each round reads the current Er-2 state with fidelity (1 + c (2F - 1)) / 2, where c
    is the mapping-gate contrast, and Er-2 flips with probability p_err (after the
    read by default). Fidelity is agreement with the initial state, which is 50/50.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if rounds > MAX_QND_ROUNDS:
        raise RoundsTooLarge(f"rounds must be <= {MAX_QND_ROUNDS} for exact enumeration")
    if not (0 <= p_err <= 1 and 0 <= f_read <= 1 and 0 <= gate_contrast <= 1):
        raise ValueError("probabilities must lie in [0, 1]")
    f_eff = (1 + gate_contrast * (2 * f_read - 1)) / 2
    # states and outcomes relative to the initial state: 0 agrees, 1 disagrees
    paths = [((), 0, 1.0)]
    for _ in range(rounds):
        nxt = []
        for outs, s, pr in paths:
            for flip in (0, 1):
                pf = p_err if flip else 1 - p_err
                s_read = s ^ flip if flip_before_read else s
                s_next = s ^ flip
                for err in (0, 1):
                    pe = (1 - f_eff) if err else f_eff
                    if pf * pe > 0:
                        nxt.append((outs + (s_read ^ err,), s_next, pr * pf * pe))
        paths = nxt
    per_round = np.zeros(rounds)
    accept = agree = majority = 0.0
    for outs, _, pr in paths:
        per_round += pr * (1 - np.array(outs))
        if len(set(outs)) == 1:
            accept += pr
            agree += pr * (outs[0] == 0)
        ones = sum(outs)
        majority += pr * (1.0 if 2 * ones < rounds else 0.5 if 2 * ones == rounds else 0.0)
    per = tuple(float(x) for x in per_round)
    if policy == "per_round":
        k = rounds - 1 if round_index is None else round_index
        return QndResult(per[k], 1.0, per)
    if policy == "post_select":
        return QndResult(agree / accept if accept > 0 else float("nan"), float(accept), per)
    if policy == "majority":
        return QndResult(float(majority), 1.0, per)
    raise ValueError(f"unknown policy {policy!r}")


QND_POLICIES = ("per_round", "post_select", "majority")
