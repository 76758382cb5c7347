"""Pulse sequences on one electron and the nuclear / electron dynamics they produce.

pi-pulses are instantaneous and perfect. A sequence with N pulses is described by
its N + 1 free-evolution windows; the electron state flips at every pulse, so a
nucleus alternates between the two conditional precession axes.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import DegenerateRotation, NoEntanglingAxis, NoRootInWindow, OverlappingPulses
from .spinsys import (
    I2,
    US_TO_MS,
    HyperfineParams,
    PrecessionFrame,
    axis_angle,
    basis_change,
    batch_rotation,
    free_propagator,
    ordered_product,
    precession_frame,
    to_lab,
    to_local,
)

PHASE_LABELS = ("X", "Y", "-X", "-Y")


@dataclass(frozen=True)
class PulseSequence:
    """Spacings tau_1..tau_{N+1} (us) around N pi-pulses with phase labels."""

    spacings: tuple[float, ...]
    phases: tuple[str, ...] | None = None

    def __post_init__(self):
        sp = tuple(float(t) for t in self.spacings)
        if len(sp) == 0:
            raise ValueError("spacings: a sequence needs at least one window")
        for k, t in enumerate(sp):
            if not np.isfinite(t) or t < 0:
                raise ValueError(f"spacings[{k}] must be >= 0, got {t}")
        n = len(sp) - 1
        ph = tuple(self.phases) if self.phases is not None else ("X",) * n
        if len(ph) != n:
            raise ValueError(f"phases: expected {n} labels, got {len(ph)}")
        for p in ph:
            if p not in PHASE_LABELS:
                raise ValueError(f"phases: unknown pulse label {p!r}")
        object.__setattr__(self, "spacings", sp)
        object.__setattr__(self, "phases", ph)

    @property
    def n_pulses(self) -> int:
        return len(self.spacings) - 1

    @property
    def total_duration(self) -> float:
        return float(sum(self.spacings))

    def pulse_times(self, start: float = 0.0) -> np.ndarray:
        return start + np.cumsum(self.spacings[:-1])

    def split(self, k: int) -> tuple["PulseSequence", "PulseSequence"]:
        """Split at pulse boundary ``k`` (0 < k <= N): the halves share a zero-length window."""
        a = PulseSequence(self.spacings[:k], self.phases[: k - 1])
        b = PulseSequence((0.0,) + self.spacings[k:], self.phases[k - 1 :])
        return a, b


def xy_phases(n: int) -> tuple[str, ...]:
    if n % 8 == 0:
        block = ("X", "Y", "X", "Y", "Y", "X", "Y", "X")
    elif n % 4 == 0:
        block = ("X", "Y", "X", "Y")
    else:
        block = ("X", "Y")
    return tuple(block[k % len(block)] for k in range(n))


def even_spacings(tau: float, n_pulses: int) -> tuple[float, ...]:
    """tau, 2tau, ..., 2tau, tau for n_pulses >= 1; a single 2tau window for n_pulses = 0."""
    if n_pulses == 0:
        return (2.0 * tau,)
    return (tau,) + (2.0 * tau,) * (n_pulses - 1) + (tau,)


@dataclass(frozen=True)
class NamedSequence:
    """A standard decoupling family at half-spacing ``tau`` (us)."""

    family: str
    tau: float
    n_pulses: int | None = None

    FIXED = {"Hahn": 1, "XY-2": 2, "XY-4": 4, "XY-8": 8}

    def pulse_count(self) -> int:
        if self.family in self.FIXED:
            return self.FIXED[self.family]
        if self.family in ("XY-N", "CPMG"):
            if self.n_pulses is None or self.n_pulses < 0:
                raise ValueError(f"{self.family} needs a non-negative n_pulses")
            return self.n_pulses
        raise ValueError(f"unknown sequence family {self.family!r}")

    def expand(self) -> PulseSequence:
        n = self.pulse_count()
        if self.family == "CPMG":
            phases = ("Y",) * n
        elif self.family == "Hahn":
            phases = ("X",)
        else:
            phases = xy_phases(n)
        return PulseSequence(even_spacings(self.tau, n), phases)


def xy_sequence(tau: float, n_pulses: int) -> PulseSequence:
    return NamedSequence("XY-N", tau, n_pulses).expand()


# ---------------------------------------------------------------------------
# conditional nuclear propagators


@dataclass(frozen=True, eq=False)
class ConditionalPropagator:
    v_plus: np.ndarray
    v_minus: np.ndarray


def branch_propagator(spacings, frame: PrecessionFrame, initial_branch: int) -> np.ndarray:
    """U_{b_N}(tau_{N+1}) ... U_{-b}(tau_2) U_b(tau_1) with b = initial_branch."""
    factors = []
    b = 1 if initial_branch > 0 else -1
    for t in spacings:
        factors.append(free_propagator(frame, b, t))
        b = -b
    return ordered_product(factors)


def conditional_propagators(seq: PulseSequence, frame: PrecessionFrame) -> ConditionalPropagator:
    return ConditionalPropagator(
        branch_propagator(seq.spacings, frame, +1),
        branch_propagator(seq.spacings, frame, -1),
    )


@dataclass(frozen=True, eq=False)
class Decomposition:
    alpha_plus: float
    alpha_minus: float
    q_plus: np.ndarray
    q_minus: np.ndarray
    antiparallelity: float  # degrees between q_plus and -q_minus
    degenerate: bool = False


def conditional_decompose(cp: ConditionalPropagator) -> Decomposition:
    q_p, a_p = axis_angle(cp.v_plus)
    q_m, a_m = axis_angle(cp.v_minus)
    degenerate = a_p < 1e-9 or a_m < 1e-9
    if degenerate:
        warnings.warn("conditional rotation angle ~0; axis reported as z", DegenerateRotation, stacklevel=2)
    cos_anti = float(np.clip(np.dot(q_p, -q_m), -1.0, 1.0))
    return Decomposition(a_p, a_m, q_p, q_m, float(np.degrees(np.arccos(cos_anti))), degenerate)


# ---------------------------------------------------------------------------
# CZ resonance


@dataclass(frozen=True, eq=False)
class QubitBasis:
    """Nuclear qubit frame: rows x', y', z' in lab coordinates."""

    rows: np.ndarray

    @property
    def z_prime(self) -> np.ndarray:
        return self.rows[2]

    def to_lab(self, u_local: np.ndarray) -> np.ndarray:
        return to_lab(u_local, self.rows)

    def to_local(self, u_lab: np.ndarray) -> np.ndarray:
        return to_local(u_lab, self.rows)

    @classmethod
    def from_z(cls, z_axis) -> "QubitBasis":
        z = np.asarray(z_axis, dtype=float)
        z = z / np.linalg.norm(z)
        if z[2] < 0 or (z[2] == 0 and z[0] < 0):
            z = -z
        return cls(basis_change(z))


@dataclass(frozen=True, eq=False)
class ResonanceResult:
    tau0: float
    alpha0: float
    antiparallelity: float
    basis: QubitBasis
    candidates: tuple[tuple[float, float], ...] = field(default=())  # (tau, alpha) of every validated root


def _xy2_decomposition(frame: PrecessionFrame, tau: float) -> Decomposition:
    cp = conditional_propagators(PulseSequence(even_spacings(tau, 2)), frame)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateRotation)
        return conditional_decompose(cp)


def resonance_seed(frame: PrecessionFrame, tau):
    """Continuous form of cot(w+ tau/2) cot(w- tau/2) = m+ . m-; zero at candidate resonances."""
    a = frame.omega_plus * np.asarray(tau) * US_TO_MS / 2
    b = frame.omega_minus * np.asarray(tau) * US_TO_MS / 2
    mm = float(np.dot(frame.m_plus, frame.m_minus))
    return np.cos(a) * np.cos(b) - mm * np.sin(a) * np.sin(b)


def cz_resonance_tau(
    frame: PrecessionFrame,
    search_window: tuple[float, float] = (0.5, 20.0),
    alpha_target: float | None = np.pi / 4,
    scan_points: int = 2000,
    max_antiparallelity: float = 0.5,
) -> ResonanceResult:
    """Half-spacing tau0 at which an XY-2 block rotates the nucleus about antiparallel axes.

    Candidate roots are bracketed on a scan of the closed-form condition and refined
    by Brent's method; each is then accepted only if the matrix-level antiparallelity
    is below ``max_antiparallelity`` degrees. With ``alpha_target`` set, the root whose
    XY-2 angle is closest to it is returned (pi/4 makes XY-4 a CZ); with ``None`` the
    smallest root is returned.
    """
    if np.linalg.norm(np.cross(frame.m_plus, frame.m_minus)) < 1e-12:
        raise NoEntanglingAxis("precession axes are parallel; no conditional rotation possible")
    lo, hi = search_window
    grid = np.linspace(lo, hi, scan_points)
    f = resonance_seed(frame, grid)
    roots = []
    for k in np.nonzero(np.sign(f[:-1]) * np.sign(f[1:]) <= 0)[0]:
        if f[k] == 0.0:
            root = float(grid[k])
        else:
            root = brentq(lambda t: float(resonance_seed(frame, t)), grid[k], grid[k + 1], xtol=1e-12)
        dec = _xy2_decomposition(frame, root)
        if dec.degenerate or dec.antiparallelity >= max_antiparallelity:
            continue
        if roots and abs(roots[-1][0] - root) < 1e-9:
            continue
        roots.append((root, dec))
    if not roots:
        raise NoRootInWindow(f"no antiparallel XY-2 resonance in {search_window} us")
    if alpha_target is None:
        tau0, dec = roots[0]
    else:
        tau0, dec = min(roots, key=lambda r: (abs(r[1].alpha_plus - alpha_target), r[0]))
    return ResonanceResult(
        tau0=tau0,
        alpha0=dec.alpha_plus,
        antiparallelity=dec.antiparallelity,
        basis=QubitBasis.from_z(dec.q_plus),
        candidates=tuple((t, d.alpha_plus) for t, d in roots),
    )


# ---------------------------------------------------------------------------
# ESEEM


def coherence_factor(seq: PulseSequence, frame: PrecessionFrame) -> complex:
    """L = Tr[V+ V-^dag] / 2 for a maximally mixed nucleus."""
    cp = conditional_propagators(seq, frame)
    return complex(np.trace(cp.v_plus @ cp.v_minus.conj().T) / 2)


def stretched_envelope(total_us: float, envelope: tuple[float, float] | None) -> float:
    if envelope is None:
        return 1.0
    t2, n = envelope
    return float(np.exp(-((total_us / t2) ** n)))


def eseem_contrast(
    seq: PulseSequence,
    nuclei,
    envelope: tuple[float, float] | None = None,
) -> float:
    """Electron echo contrast: Re(prod_k L_k) times the stretched-exponential bath envelope.

    ``nuclei`` may hold HyperfineParams or precomputed PrecessionFrames.
    """
    prod = 1.0 + 0.0j
    for nuc in nuclei:
        frame = precession_frame(nuc) if isinstance(nuc, HyperfineParams) else nuc
        prod *= coherence_factor(seq, frame)
    return float(prod.real) * stretched_envelope(seq.total_duration, envelope)


def eseem_sweep(family: str, taus, nuclei, envelope=None, n_pulses=None) -> np.ndarray:
    frames = [precession_frame(n) if isinstance(n, HyperfineParams) else n for n in nuclei]
    return np.array(
        [eseem_contrast(NamedSequence(family, float(t), n_pulses).expand(), frames, envelope) for t in taus]
    )


# ---------------------------------------------------------------------------
# chevron


def chevron_map(frame: PrecessionFrame, tau_grid, n_pulses_grid, basis: QubitBasis | None = None) -> np.ndarray:
    """Nuclear flip probability |<-'| V+ |+'>|^2 for evenly spaced sequences.

    Rows follow ``n_pulses_grid`` and columns ``tau_grid``. |+'> and |-'> are the
    x' eigenstates of the nuclear qubit frame, so a rotation about z' by angle phi
    gives sin^2(phi/2). The frame defaults to the CZ resonance of ``frame``.
    """
    taus = np.asarray(tau_grid, dtype=float)
    counts = [int(n) for n in n_pulses_grid]
    if taus.size == 0 or not counts:
        raise ValueError("chevron_map needs non-empty grids")
    if basis is None:
        basis = cz_resonance_tau(frame).basis
    plus = np.array([1.0, 1.0], dtype=complex) / np.sqrt(2)
    minus = np.array([1.0, -1.0], dtype=complex) / np.sqrt(2)
    out = np.empty((len(counts), taus.size))
    for j, tau in enumerate(taus):
        u_p = free_propagator(frame, +1, tau)
        u_m = free_propagator(frame, -1, tau)
        u_p2 = u_p @ u_p
        u_m2 = u_m @ u_m
        for i, n in enumerate(counts):
            if n == 0:
                v = u_p2
            else:
                # tau, 2tau, ..., 2tau, tau starting on the + branch
                factors = [u_p] + [u_m2 if k % 2 == 0 else u_p2 for k in range(n - 1)]
                factors.append(u_p if n % 2 == 0 else u_m)
                v = ordered_product(factors)
            v_local = basis.to_local(v)
            out[i, j] = abs(minus.conj() @ v_local @ plus) ** 2
    return out


# ---------------------------------------------------------------------------
# two-electron toggling frame


@dataclass(frozen=True)
class TogglingPair:
    """Pulse trains on electron 1 and 2 with absolute start offsets (us)."""

    seq1: PulseSequence
    seq2: PulseSequence
    start1: float = 0.0
    start2: float = 0.0
    window: float | None = None
    sign1: int = 1
    sign2: int = 1

    def __post_init__(self):
        end = max(self.start1 + self.seq1.total_duration, self.start2 + self.seq2.total_duration)
        if self.start1 < 0 or self.start2 < 0:
            raise ValueError("start offsets must be >= 0")
        if self.window is None:
            object.__setattr__(self, "window", float(end))
        elif self.window < end - 1e-12:
            raise ValueError(f"window {self.window} us is shorter than the sequences ({end} us)")

    def pulse_times(self) -> tuple[np.ndarray, np.ndarray]:
        return self.seq1.pulse_times(self.start1), self.seq2.pulse_times(self.start2)


def effective_interaction_time(pair: TogglingPair) -> float:
    """T_int = integral of s1(t) s2(t) over [0, window], by event-sorted piecewise integration."""
    p1, p2 = pair.pulse_times()
    if p1.size and p2.size:
        gaps = np.abs(p1[:, None] - p2[None, :])
        if np.any(gaps < 1e-3):
            warnings.warn("pulses on the two electrons coincide within 1 ns", OverlappingPulses, stacklevel=2)
    times = np.concatenate([p1, p2])
    owner = np.concatenate([np.zeros(p1.size, int), np.ones(p2.size, int)])
    order = np.argsort(times, kind="stable")
    s = [pair.sign1, pair.sign2]
    t_prev = 0.0
    total = 0.0
    for k in order:
        t = float(times[k])
        total += s[0] * s[1] * (t - t_prev)
        s[owner[k]] = -s[owner[k]]
        t_prev = t
    total += s[0] * s[1] * (pair.window - t_prev)
    return total


def deer_pair(n_pulses: int, tau: float, delta_tau: float) -> TogglingPair:
    """XY-N on electron 1 at half-spacing tau; electron 2 is flipped delta_tau after each
    of electron 1's first N-1 pulses, giving T_int = 2 (N-1) (tau - delta_tau)."""
    if not 0 <= delta_tau < 2 * tau:
        raise ValueError(f"delta_tau must lie in [0, 2 tau) to keep the pulse order, got {delta_tau}")
    seq1 = xy_sequence(tau, n_pulses)
    flips = seq1.pulse_times()[:-1] + delta_tau
    edges = np.concatenate([[0.0], flips, [seq1.total_duration]])
    seq2 = PulseSequence(tuple(np.diff(edges)), ("X",) * flips.size)
    return TogglingPair(seq1, seq2, window=seq1.total_duration)


def cz_pair(tau1: float, n1: int, tau2: float, n2: int, offset: float) -> TogglingPair:
    """Electron 2 runs XY-n2 from t = 0; electron 1 runs XY-n1 starting ``offset`` later."""
    return TogglingPair(xy_sequence(tau1, n1), xy_sequence(tau2, n2), start1=offset, start2=0.0)


def solve_cz_offset(tau1, n1, tau2, n2, target_us, seed_offset, half_width=1.0) -> float:
    """Offset of electron 1's sequence giving T_int = target_us, searched near seed_offset."""

    def resid(d):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OverlappingPulses)
            return effective_interaction_time(cz_pair(tau1, n1, tau2, n2, d)) - target_us

    lo = max(0.0, seed_offset - half_width)
    hi = seed_offset + half_width
    grid = np.linspace(lo, hi, 401)
    vals = np.array([resid(d) for d in grid])
    idx = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]
    if idx.size == 0:
        raise NoRootInWindow(f"no offset in [{lo}, {hi}] us gives T_int = {target_us} us")
    best = min(idx, key=lambda k: abs(grid[k] - seed_offset))
    return float(brentq(resid, grid[best], grid[best + 1], xtol=1e-13))


# ---------------------------------------------------------------------------
# DEER


def deer_trace(j_khz: float, t_int_grid, damping: float | None = None) -> np.ndarray:
    """cos(2 pi J T) exp(-|T| / T_damp) with J in kHz and T in us; T may be negative."""
    if j_khz <= 0:
        raise ValueError(f"j_khz must be > 0, got {j_khz}")
    t = np.asarray(t_int_grid, dtype=float)
    out = np.cos(2 * np.pi * j_khz * t * US_TO_MS)
    if damping is not None:
        out = out * np.exp(-np.abs(t) / damping)
    return out


__all__ = [
    "PulseSequence",
    "NamedSequence",
    "ConditionalPropagator",
    "Decomposition",
    "QubitBasis",
    "ResonanceResult",
    "TogglingPair",
    "I2",
    "branch_propagator",
    "conditional_propagators",
    "conditional_decompose",
    "cz_resonance_tau",
    "resonance_seed",
    "coherence_factor",
    "eseem_contrast",
    "eseem_sweep",
    "chevron_map",
    "effective_interaction_time",
    "deer_pair",
    "cz_pair",
    "solve_cz_offset",
    "deer_trace",
    "xy_sequence",
    "even_spacings",
    "batch_rotation",
]
