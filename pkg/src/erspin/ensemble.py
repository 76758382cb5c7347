"""Dipolar pair statistics of implanted ions and the optical-dephasing frequency ratio."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import constants as sc
from scipy.spatial import cKDTree

from .errors import BoxTooSmall, ZeroSeparation
from .spinsys import HyperfineParams

# mu0 / (4 pi) * mu_B^2 / h in Hz m^3; times g^2 it is the S1z S2z coefficient at r = 1 m
_DIPOLAR_HZ_M3 = sc.mu_0 / (4 * np.pi) * sc.physical_constants["Bohr magneton"][0] ** 2 / sc.h
# the reported J is the coefficient of Z1 Z2, i.e. a quarter of the S1z S2z coefficient
SPIN_HALF_FACTOR = 0.25
DEFAULT_CUTOFF_NM = 150.0


def g_from_splitting(freq_mhz: float, field_gauss: float) -> float:
    """Effective g with h f = g mu_B B."""
    return sc.h * freq_mhz * 1e6 / (sc.physical_constants["Bohr magneton"][0] * field_gauss * 1e-4)


G_EFF = g_from_splitting(8600.0, 790.0)  # ~7.78


def dipolar_prefactor_khz_nm3(g_eff: float) -> float:
    return SPIN_HALF_FACTOR * g_eff**2 * _DIPOLAR_HZ_M3 * 1e27 * 1e-3


def dipolar_j(r_vector, g_eff: float = G_EFF, field_axis=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Secular Ising coupling C (1 - 3 cos^2 theta) / r^3 in kHz; r in nm, vectorised over rows."""
    r = np.asarray(r_vector, dtype=float)
    axis = np.asarray(field_axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    dist = np.linalg.norm(r, axis=-1)
    if np.any(dist == 0):
        raise ZeroSeparation("dipolar coupling needs a nonzero separation")
    cos = (r @ axis) / dist
    return dipolar_prefactor_khz_nm3(g_eff) * (1 - 3 * cos**2) / dist**3


def distance_bounds(j_measured: float, g_eff: float = G_EFF, r_min: float = 10.0) -> tuple[float, float]:
    """(r_min, r_max) in nm; r_max solves |J(r, theta=0)| = j_measured, r_min is passed through."""
    if j_measured <= 0:
        raise ValueError("j_measured must be > 0")
    return float(r_min), float((2 * dipolar_prefactor_khz_nm3(g_eff) / j_measured) ** (1 / 3))


@dataclass(frozen=True)
class ImplantModel:
    areal_density: float = 5e9  # ions / cm^2
    layer_thickness: float = 20.0  # nm
    sample_box_side: float | None = None  # nm; derived from n_ions when None
    g_eff: float = G_EFF
    seed: int = 0
    field_axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    cutoff: float = DEFAULT_CUTOFF_NM

    def __post_init__(self):
        if self.areal_density <= 0 or self.layer_thickness <= 0:
            raise ValueError("areal_density and layer_thickness must be > 0")

    @property
    def density_nm2(self) -> float:
        return self.areal_density * 1e-14

    @property
    def mean_spacing(self) -> float:
        return float(1 / np.sqrt(self.density_nm2))


@dataclass(frozen=True, eq=False)
class PairStats:
    max_j: np.ndarray  # per-ion largest |J| over neighbours (kHz)
    box_side: float

    def prob_above(self, threshold: float) -> float:
        return float(np.mean(self.max_j >= threshold))

    def cdf(self, grid) -> np.ndarray:
        """Fraction of ions whose largest |J| is below each grid value."""
        s = np.sort(self.max_j)
        return np.searchsorted(s, np.asarray(grid, dtype=float), side="left") / s.size

    def quantile(self, q) -> np.ndarray:
        return np.quantile(self.max_j, q)

    def stderr(self, threshold: float) -> float:
        p = self.prob_above(threshold)
        return float(np.sqrt(p * (1 - p) / self.max_j.size))


def sample_positions(model: ImplantModel, n_ions: int) -> tuple[np.ndarray, float]:
    side = model.sample_box_side or float(np.sqrt(n_ions / model.density_nm2))
    if side < 10 * model.mean_spacing or side < 2 * model.cutoff:
        raise BoxTooSmall(f"box side {side:.0f} nm is below 10 mean spacings or twice the cutoff")
    rng = np.random.default_rng(model.seed)
    xy = rng.uniform(0.0, side, (n_ions, 2))
    z = rng.uniform(0.0, model.layer_thickness, n_ions)
    return np.column_stack([xy, z]), side


def pair_statistics(model: ImplantModel, j_threshold: float = 5.40, n_ions: int = 100_000) -> tuple[float, PairStats]:
    """Monte Carlo of each ion's strongest dipolar partner, periodic in-plane."""
    if n_ions < 1:
        raise ValueError("n_ions must be >= 1")
    pos, side = sample_positions(model, n_ions)
    # periodic in x, y; the z period is far larger than the layer plus cutoff
    zbox = max(side, model.layer_thickness + 2 * model.cutoff)
    tree = cKDTree(pos, boxsize=[side, side, zbox])
    pairs = tree.query_pairs(model.cutoff, output_type="ndarray")
    max_j = np.zeros(n_ions)
    if pairs.size:
        d = pos[pairs[:, 1]] - pos[pairs[:, 0]]
        d[:, :2] -= side * np.round(d[:, :2] / side)
        j = np.abs(dipolar_j(d, model.g_eff, model.field_axis))
        np.maximum.at(max_j, pairs[:, 0], j)
        np.maximum.at(max_j, pairs[:, 1], j)
    stats = PairStats(max_j, side)
    return stats.prob_above(j_threshold), stats


def dephasing_ratio(hp: HyperfineParams, mwg_freq: float) -> float:
    """omega_MWg / |A|: electron-to-nuclear ratio of frequency fluctuations under shared dg/g."""
    if mwg_freq <= 0 or hp.magnitude <= 0:
        raise ValueError("inputs must be positive")
    return float(mwg_freq * 1e3 / hp.magnitude)


__all__ = [
    "G_EFF",
    "ImplantModel",
    "PairStats",
    "dipolar_j",
    "dipolar_prefactor_khz_nm3",
    "distance_bounds",
    "g_from_splitting",
    "pair_statistics",
    "sample_positions",
    "dephasing_ratio",
]
