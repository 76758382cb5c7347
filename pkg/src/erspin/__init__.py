"""Simulation, gate design and pulse-sequence optimisation for a two-electron, one-nucleus Er spin register."""
__version__ = "0.1.0"

from .spinsys import ElectronParams, HyperfineParams, PrecessionFrame, SpinSystem, precession_frame  # noqa: E402
from .constants import nucleus, reference_system  # noqa: E402

__all__ = [
    "__version__",
    "ElectronParams",
    "HyperfineParams",
    "PrecessionFrame",
    "SpinSystem",
    "nucleus",
    "reference_system",
    "precession_frame",
]
