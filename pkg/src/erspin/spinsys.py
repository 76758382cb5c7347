"""Spin-system types and SU(2) helpers for the electron-conditioned nuclear evolution.

Frequencies are given in kHz (ordinary frequency) and durations in microseconds.
Internally precession rates are angular frequencies in rad/ms, so a rate in
rad/ms times a duration in us needs a factor 1e-3 to become a phase.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NegativeDuration, NotUnitary, ZeroPrecession

TWO_PI = 2.0 * np.pi
US_TO_MS = 1e-3

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = np.stack([SX, SY, SZ])

Su2 = np.ndarray  # 2x2 complex, unitary, det = +1

REUNITARIZE_EVERY = 256


@dataclass(frozen=True)
class HyperfineParams:
    """Effective hyperfine couplings of one spin-1/2 nucleus (all in kHz)."""

    a_par: float
    a_perp: float
    omega_l: float
    larmor_scale: float = 1.0

    def __post_init__(self):
        if self.a_perp < 0:
            raise ValueError(f"a_perp must be >= 0, got {self.a_perp}")
        if self.omega_l <= 0:
            raise ValueError(f"omega_l must be > 0, got {self.omega_l}")
        if not 0.9 < self.larmor_scale < 1.1:
            raise ValueError(f"larmor_scale must lie in (0.9, 1.1), got {self.larmor_scale}")

    @property
    def magnitude(self) -> float:
        """|A| = sqrt(A_par^2 + A_perp^2) in kHz."""
        return float(np.hypot(self.a_par, self.a_perp))


@dataclass(frozen=True, eq=False)
class PrecessionFrame:
    """Conditional precession rates (rad/ms) and unit axes for the two electron states."""

    omega_plus: float
    omega_minus: float
    m_plus: np.ndarray
    m_minus: np.ndarray

    def omega(self, branch: int) -> float:
        return self.omega_plus if branch > 0 else self.omega_minus

    def axis(self, branch: int) -> np.ndarray:
        return self.m_plus if branch > 0 else self.m_minus

    def frequencies_khz(self) -> tuple[float, float]:
        return self.omega_plus / TWO_PI, self.omega_minus / TWO_PI


@dataclass(frozen=True)
class ElectronParams:
    mwg_freq: float = 8600.0  # MHz
    t2_envelope: tuple[float, float] = (120.0, 2.0)  # (T2 in us, stretch exponent)
    readout_fidelity: float = 0.94

    def __post_init__(self):
        t2, n = self.t2_envelope
        if t2 <= 0:
            raise ValueError(f"T2 must be > 0, got {t2}")
        if not 0.5 < n <= 4:
            raise ValueError(f"stretch exponent must lie in (0.5, 4], got {n}")
        if not 0.5 <= self.readout_fidelity <= 1:
            raise ValueError(f"readout_fidelity must lie in [0.5, 1], got {self.readout_fidelity}")


@dataclass(frozen=True)
class SpinSystem:
    """One or two electrons, their Ising coupling J (kHz) and the hyperfine-coupled nuclei.

    ``nuclei`` holds ``(owner electron index, HyperfineParams)`` pairs.
    """

    electrons: tuple[ElectronParams, ...]
    j_coupling: float | None = None
    nuclei: tuple[tuple[int, HyperfineParams], ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "electrons", tuple(self.electrons))
        object.__setattr__(self, "nuclei", tuple((int(o), p) for o, p in self.nuclei))
        n = len(self.electrons)
        if n not in (1, 2):
            raise ValueError(f"a spin system has 1 or 2 electrons, got {n}")
        if (self.j_coupling is not None) != (n == 2):
            raise ValueError("j_coupling must be given exactly when there are two electrons")
        for owner, _ in self.nuclei:
            if not 0 <= owner < n:
                raise ValueError(f"nucleus owner index {owner} does not name an electron")

    def frame(self, index: int) -> PrecessionFrame:
        return precession_frame(self.nuclei[index][1])

    def nuclei_of(self, electron: int) -> list[HyperfineParams]:
        return [p for owner, p in self.nuclei if owner == electron]


def precession_frame(p: HyperfineParams) -> PrecessionFrame:
    """Build the conditional precession vectors omega_pm * m_pm.

    omega_pm m_pm = +-A_perp x + (scale * omega_L +- A_par) z, converted to rad/ms.
    """
    wl = p.larmor_scale * p.omega_l
    v_plus = TWO_PI * np.array([p.a_perp, 0.0, wl + p.a_par])
    v_minus = TWO_PI * np.array([-p.a_perp, 0.0, wl - p.a_par])
    w_plus = float(np.linalg.norm(v_plus))
    w_minus = float(np.linalg.norm(v_minus))
    if w_plus == 0.0 or w_minus == 0.0:
        raise ZeroPrecession(f"conditional precession rate vanishes for {p}")
    return PrecessionFrame(w_plus, w_minus, v_plus / w_plus, v_minus / w_minus)


def rotation(axis, angle) -> Su2:
    """exp(-i angle (axis . sigma) / 2)."""
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    return np.cos(angle / 2) * I2 - 1j * np.sin(angle / 2) * np.einsum("k,kij->ij", n, PAULIS)


def free_propagator(frame: PrecessionFrame, branch: int, t: float) -> Su2:
    """Nuclear free evolution for ``t`` us with the electron in state ``branch`` (+1 or -1)."""
    if t < 0:
        raise NegativeDuration(f"duration must be >= 0, got {t}")
    return rotation(frame.axis(branch), frame.omega(branch) * t * US_TO_MS)


def batch_rotation(axis: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Vectorised :func:`rotation` over an array of angles about a fixed axis."""
    angles = np.asarray(angles, dtype=float)
    ns = np.einsum("k,kij->ij", axis, PAULIS)
    c = np.cos(angles / 2)[..., None, None]
    s = np.sin(angles / 2)[..., None, None]
    return c * I2 - 1j * s * ns


def is_unitary(u, atol=1e-8) -> bool:
    u = np.asarray(u)
    return u.shape == (2, 2) and np.allclose(u.conj().T @ u, I2, atol=atol)


def reunitarize(u: np.ndarray) -> np.ndarray:
    """Project onto the nearest unitary (polar factor), keeping det = +1 for 2x2 input."""
    w, _, vh = np.linalg.svd(u)
    q = w @ vh
    if q.shape[-1] == 2:
        q = q / np.sqrt(np.linalg.det(q))[..., None, None]
    return q


def ordered_product(factors) -> np.ndarray:
    """Return factors[-1] @ ... @ factors[0], re-projected every 256 multiplications."""
    out = I2.copy()
    for k, f in enumerate(factors, start=1):
        out = f @ out
        if k % REUNITARIZE_EVERY == 0:
            out = reunitarize(out)
    return out


def pauli_components(u: np.ndarray) -> tuple[complex, np.ndarray]:
    """Coefficients (a0, a) with u = a0 I + a . sigma."""
    a0 = np.trace(u) / 2
    a = np.einsum("kij,ji->k", PAULIS, u) / 2
    return a0, a


def axis_angle(u: Su2) -> tuple[np.ndarray, float]:
    """Decompose a 2x2 unitary as exp(-i angle (axis . sigma)/2) up to global phase.

    The angle is returned in [0, pi]; a rotation by theta > pi about n is the same
    operator (up to phase) as 2*pi - theta about -n. Zero angle returns the z axis.
    """
    u = np.asarray(u, dtype=complex)
    if not is_unitary(u):
        raise NotUnitary("axis_angle expects a 2x2 unitary")
    u = u / np.sqrt(np.linalg.det(u))
    a0, a = pauli_components(u)
    c = a0.real
    v = -a.imag  # sin(angle/2) * axis
    if c < 0:
        c, v = -c, -v
    s = float(np.linalg.norm(v))
    angle = 2.0 * np.arctan2(s, c)
    if s < 1e-15:
        return np.array([0.0, 0.0, 1.0]), 0.0
    return v / s, float(angle)


def trace_overlap(u: np.ndarray, v: np.ndarray) -> float:
    """Phase-insensitive gate overlap |Tr(u v^dag)|^2 / d^2, in [0, 1]."""
    d = u.shape[0]
    return float(abs(np.trace(u @ v.conj().T)) ** 2 / d**2)


def basis_change(z_axis, x_axis=None) -> np.ndarray:
    """Rows are the unit vectors (x', y', z') of a right-handed frame with the given z'.

    Without an explicit x' the frame takes x' = y_hat cross z' (in-plane with z_hat
    when z' lies in the xz plane).
    """
    z = np.asarray(z_axis, dtype=float)
    z = z / np.linalg.norm(z)
    if x_axis is None:
        x = np.cross([0.0, 1.0, 0.0], z)
        if np.linalg.norm(x) < 1e-9:
            x = np.cross(z, [0.0, 0.0, 1.0]) if abs(z[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    else:
        x = np.asarray(x_axis, dtype=float)
        x = x - np.dot(x, z) * z
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return np.vstack([x, y, z])


def to_lab(u_local: np.ndarray, frame_rows: np.ndarray) -> np.ndarray:
    """Map an operator written in a rotated qubit basis back to lab Pauli coordinates."""
    a0, a = pauli_components(np.asarray(u_local, dtype=complex))
    lab = frame_rows.T @ a
    return a0 * I2 + np.einsum("k,kij->ij", lab, PAULIS)


def to_local(u_lab: np.ndarray, frame_rows: np.ndarray) -> np.ndarray:
    a0, a = pauli_components(np.asarray(u_lab, dtype=complex))
    return a0 * I2 + np.einsum("k,kij->ij", frame_rows @ a, PAULIS)
