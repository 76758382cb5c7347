"""Least-squares fits for DEER oscillations and echo-decay envelopes. Times in us, frequencies in kHz."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from .errors import FitDiverged, InsufficientData
from .spinsys import US_TO_MS


@dataclass(frozen=True, eq=False)
class DampedCosineFit:
    frequency: float  # kHz
    decay: float  # us
    amplitude: float
    phase: float
    covariance: np.ndarray

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))


@dataclass(frozen=True, eq=False)
class StretchedExpFit:
    t2: float
    n: float
    amplitude: float
    covariance: np.ndarray


def damped_cosine(t, f_khz, decay_us, amp, phase):
    return amp * np.cos(2 * np.pi * f_khz * t * US_TO_MS + phase) * np.exp(-t / decay_us)


def stretched_exp(t, t2, n, amp):
    return amp * np.exp(-((t / t2) ** n))


def _as_series(t, y, min_points):
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise InsufficientData("time and value arrays must be 1-D and equal length")
    if t.size < min_points:
        raise InsufficientData(f"need at least {min_points} points, got {t.size}")
    if not np.all(np.isfinite(y)):
        raise FitDiverged("series contains non-finite values")
    return t, y


def spectral_peak(t, y) -> float:
    """Frequency (kHz) of the largest nonzero bin of the mean-removed series (uniform grid assumed)."""
    dt = float(np.median(np.diff(t)))
    amp = np.abs(np.fft.rfft(y - y.mean()))
    freqs = np.fft.rfftfreq(y.size, dt * US_TO_MS)
    k = 1 + int(np.argmax(amp[1:]))
    if amp[k] < 1e-9 * max(1.0, float(np.abs(y).max())) * y.size:
        raise FitDiverged("no oscillation in the series")
    return float(freqs[k])


def fit_damped_cosine(t, y) -> DampedCosineFit:
    """a cos(2 pi f t + phi) exp(-t / T), seeded from the spectral peak."""
    t, y = _as_series(t, y, 8)
    f0 = spectral_peak(t, y)
    span = float(t[-1] - t[0])
    if f0 * span * US_TO_MS < 1.0:
        raise InsufficientData("series spans less than one period")
    a0 = float(np.max(np.abs(y)))
    phase0 = 0.0 if y[0] >= 0 else np.pi
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", OptimizeWarning)
            p, cov = curve_fit(
                damped_cosine,
                t,
                y,
                p0=[f0, span, a0, phase0],
                bounds=([0.0, 1e-6, 0.0, -2 * np.pi], [np.inf, np.inf, np.inf, 2 * np.pi]),
                max_nfev=20000,
            )
    except (RuntimeError, OptimizeWarning, ValueError) as exc:
        raise FitDiverged(f"damped-cosine fit failed: {exc}") from exc
    if not np.all(np.isfinite(cov)):
        raise FitDiverged("damped-cosine fit has undefined covariance")
    return DampedCosineFit(float(p[0]), float(p[1]), float(p[2]), float(p[3]), cov)


def fit_stretched_exp(t, y, fix_n: float | None = None) -> StretchedExpFit:
    """a exp(-(t / T2)^n); with ``fix_n`` only T2 and a are free."""
    t, y = _as_series(t, y, 6)
    if not (y[0] > 0 and y[-1] < y[0]):
        raise FitDiverged("series is not a decay")
    a0 = float(y.max())
    below = np.nonzero(y < a0 / np.e)[0]
    t20 = float(t[below[0]]) if below.size else float(t[-1])
    try:
        if fix_n is None:
            p, cov = curve_fit(stretched_exp, t, y, p0=[t20, 1.5, a0], bounds=([1e-9, 0.1, 0.0], [np.inf, 6.0, np.inf]),
                               max_nfev=20000)
            t2, n, amp = p
        else:
            p, cov2 = curve_fit(lambda tt, t2, amp: stretched_exp(tt, t2, fix_n, amp), t, y, p0=[t20, a0],
                                bounds=([1e-9, 0.0], [np.inf, np.inf]), max_nfev=20000)
            t2, amp = p
            n = fix_n
            cov = np.zeros((3, 3))
            cov[np.ix_([0, 2], [0, 2])] = cov2
    except (RuntimeError, ValueError) as exc:
        raise FitDiverged(f"stretched-exponential fit failed: {exc}") from exc
    if not np.all(np.isfinite(cov)):
        raise FitDiverged("stretched-exponential fit has undefined covariance")
    return StretchedExpFit(float(t2), float(n), float(amp), cov)
