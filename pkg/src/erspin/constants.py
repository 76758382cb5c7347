"""Reference parameters of the Er-1 / Er-2 / W-183 register."""
from .spinsys import ElectronParams, HyperfineParams, SpinSystem

# Larmor frequency correction inferred from Ramsey + XY-96 ESEEM data (0.7 % low).
LARMOR_SCALE = 0.993

# (A_par, A_perp, omega_L) in kHz, and the owning electron (0 = Er-1, 1 = Er-2).
NUCLEUS_TABLE = {
    "Nuc-1": (287.0, 163.0, 142.0, 1),
    "Nuc-2": (168.0, 130.0, 144.0, 1),
    "Nuc-3": (54.0, 134.0, 144.0, 0),
}

J_COUPLING_KHZ = 5.40
MWG_FREQ_MHZ = 8600.0

ER1 = ElectronParams(mwg_freq=MWG_FREQ_MHZ, t2_envelope=(100.0, 1.1), readout_fidelity=0.95)
ER2 = ElectronParams(mwg_freq=MWG_FREQ_MHZ, t2_envelope=(120.0, 2.0), readout_fidelity=0.94)

# Eight-pulse CU sequence, nine inter-pulse intervals in us.
PUBLISHED_GRASS_SPACINGS = (1.928, 5.392, 7.056, 7.874, 7.380, 2.926, 4.822, 7.116, 2.086)

# Er-Er CZ geometry: half periods (us), pulse counts, offset of Er-1 start (us).
CZ_EE_TAU1, CZ_EE_N1 = 6.220, 6
CZ_EE_TAU2, CZ_EE_N2 = 6.208, 8
CZ_EE_OFFSET = 2.3


def nucleus(name: str, larmor_scale: float = LARMOR_SCALE) -> HyperfineParams:
    a_par, a_perp, wl, _ = NUCLEUS_TABLE[name]
    return HyperfineParams(a_par, a_perp, wl, larmor_scale)


def reference_system(larmor_scale: float = LARMOR_SCALE) -> SpinSystem:
    """Er-1, Er-2 with J = 5.40 kHz and Nuc-1..3 in table order."""
    nuclei = [(NUCLEUS_TABLE[n][3], nucleus(n, larmor_scale)) for n in ("Nuc-1", "Nuc-2", "Nuc-3")]
    return SpinSystem(electrons=(ER1, ER2), j_coupling=J_COUPLING_KHZ, nuclei=nuclei)
