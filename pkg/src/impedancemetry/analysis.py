"""Measurement analyses: Q extraction, sensitivity fit, square-wave SNR, resolution law.

Conventions used throughout:

* Phases are in radians, capacitances in farads.
* A switched DUT moves the phase between 0 and ``dphi``; the SNR is the
  amplitude ratio ``2 * sqrt(p_sig / p_noise)``, i.e. the full step over the
  noise RMS, so ``C_m / snr`` is the capacitance noise RMS at that bandwidth.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.signal.windows import flattop
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .validation import check_1d, check_consistent_length, check_positive

SNR_CEILING = 1e6
# Resolution fits use a first-order RC low-pass, whose noise bandwidth is 1/(4 t)
RESOLUTION_FACTOR = math.sqrt(0.25)
WHITE_BAND = (-0.65, -0.35)
# flat-top main lobe spans +-4 bins for a bin-aligned tone
FLATTOP_HALF_WIDTH = 4


class FitError(RuntimeError):
    """Raised when an analysis cannot produce a usable estimate."""


def extract_q(freqs, phase, fr_hint: float | None = None, *, half_width: float | None = None,
              linearize: bool = True):
    """Resonance frequency and Q from a phase-vs-frequency sweep.

    ``fr`` is the linearly interpolated phase zero crossing closest to
    ``fr_hint``; ``q = -(fr / 2) dphi/df`` at ``fr`` from a least-squares line
    over the samples within ``half_width`` of ``fr`` (all samples if not
    given).  With ``linearize`` the line is fitted to ``tan(phase)``, which is
    linear in frequency for a parallel tank and has the same slope at ``fr``;
    a raw-phase fit underestimates ``q`` by ~5% over ``fr +- fr / (4 q)``.
    """
    freqs = check_1d(freqs, "freqs", min_len=5)
    phase = check_1d(phase, "phase", min_len=5)
    check_consistent_length(freqs, phase)
    order = np.argsort(freqs)
    freqs, phase = freqs[order], phase[order]
    crossings = np.flatnonzero(np.signbit(phase[:-1]) != np.signbit(phase[1:]))
    if crossings.size == 0:
        raise FitError("no phase zero crossing in the sweep window")
    hint = freqs.mean() if fr_hint is None else fr_hint
    i = crossings[np.argmin(np.abs(freqs[crossings] - hint))]
    f0, f1, p0, p1 = freqs[i], freqs[i + 1], phase[i], phase[i + 1]
    fr = f0 - p0 * (f1 - f0) / (p1 - p0)
    sel = np.ones(freqs.size, bool) if half_width is None else np.abs(freqs - fr) <= half_width
    if sel.sum() < 2:
        raise FitError("fewer than two samples inside the fit window")
    y = np.tan(phase[sel]) if linearize else phase[sel]
    slope = np.polyfit(freqs[sel] - fr, y, 1)[0]
    return float(fr), float(-fr / 2 * slope)


def alpha_from_steps(c_m, dphi) -> float:
    """Phase-per-capacitance slope (rad/F) from switched-capacitor steps.

    A parallel tank gives ``tan|dphi| = alpha * C_m`` exactly, so the fit is
    zero-intercept in ``tan`` and reduces to the plain ratio for small steps.
    Points are weighted by ``cos^4``, the inverse variance of ``tan`` under phase noise.
    """
    c_m = check_1d(c_m, "c_m")
    y = np.tan(np.abs(check_1d(dphi, "dphi")))
    check_consistent_length(c_m, y)
    w = np.cos(np.abs(dphi)) ** 4
    return float(np.sum(w * c_m * y) / np.sum(w * c_m**2))


def _zero_intercept(x, y):
    slope = float(np.dot(x, y) / np.dot(x, x))
    resid = y - slope * x
    # uncentered R^2, the appropriate measure for a line through the origin
    r2 = 1.0 - float(np.dot(resid, resid) / np.dot(y, y))
    return slope, resid, r2


class SensitivityFit(BaseEstimator):
    """Zero-intercept fit of ``alpha = q / C_tot``.

    After :meth:`fit`: ``slope_`` (1/F), ``c_tot_`` (F), ``r2_`` and
    ``residuals_`` (rad/F).
    """

    def __init__(self, min_distinct_q: int = 2):
        self.min_distinct_q = min_distinct_q

    def fit(self, q, alpha):
        q = check_1d(q, "q")
        alpha = check_1d(alpha, "alpha")
        check_consistent_length(q, alpha)
        if np.unique(q).size < self.min_distinct_q:
            raise FitError(f"need at least {self.min_distinct_q} distinct q values")
        self.q_, self.alpha_ = q, alpha
        self.slope_, self.residuals_, self.r2_ = _zero_intercept(q, alpha)
        if not self.slope_ > 0:
            raise FitError("non-positive sensitivity slope")
        self.c_tot_ = 1.0 / self.slope_
        return self

    def predict(self, q):
        check_is_fitted(self, "slope_")
        return self.slope_ * check_1d(q, "q")

    def to_rows(self):
        check_is_fitted(self, "slope_")
        return [
            {"q": q, "alpha_rad_per_f": a, "residual_rad_per_f": r}
            for q, a, r in zip(self.q_, self.alpha_, self.residuals_)
        ]


def fit_sensitivity(points: Iterable[tuple[float, float]]) -> SensitivityFit:
    q, alpha = np.asarray(list(points), dtype=float).T
    return SensitivityFit().fit(q, alpha)


@dataclass(frozen=True)
class SnrReport:
    p_sig: float
    p_noise: float
    snr: float
    tint: float
    cm_equivalent: float
    harmonics: int
    saturated: bool = False


def _power_spectrum(x: np.ndarray) -> np.ndarray:
    w = flattop(x.size, sym=False)
    return np.abs(np.fft.rfft((x - x.mean()) * w)) ** 2 / np.sum(w**2)


def snr_from_square_wave(phase, fs: float, fsw: float, tint: float, c_m: float, *,
                         ceiling: float = SNR_CEILING,
                         half_width: int = FLATTOP_HALF_WIDTH) -> SnrReport:
    """SNR of a switched-capacitor phase trace by harmonic separation.

    ``fs / fsw`` must be an even integer so the sampled wave keeps a 50 %
    duty cycle and carries only odd harmonics.  Leading periods covering the filter transient (at least one, and
    ``30 * tint`` worth) and any trailing partial period are dropped.  Signal
    groups are the odd harmonics of ``fsw``, each ``+-half_width`` bins wide;
    every other bin of the filtered stream is noise, DC group excluded.  The
    mean noise-bin power is taken as the floor under each signal group.
    """
    phase = check_1d(phase, "phase")
    check_positive(fs, "fs")
    check_positive(fsw, "fsw")
    check_positive(tint, "tint")
    check_positive(c_m, "c_m")
    per = fs / fsw
    if abs(per - round(per)) > 1e-9 * per:
        raise ValueError(f"fs / fsw = {per:g} is not an integer; switching is not bin-aligned")
    per = int(round(per))
    if per % 2:
        raise ValueError(f"{per} samples per period; an odd count breaks the 50 % duty cycle")
    skip = max(1, math.ceil(30 * tint * fsw))
    periods = phase.size // per - skip
    if periods < 20:
        raise ValueError(f"trace holds {periods} full periods after cropping; need 20")
    x = phase[skip * per: per * (periods + skip)]
    spec = _power_spectrum(x)
    is_signal = np.zeros(spec.size, bool)
    excluded = np.zeros(spec.size, bool)
    excluded[: half_width + 1] = True
    # bin spacing is fsw / periods
    centers = np.arange(periods, spec.size, 2 * periods)
    for c in centers:
        is_signal[c - half_width: c + half_width + 1] = True
    n_harm = int(centers.size)
    if n_harm == 0:
        raise ValueError("sample rate too low to resolve the switching fundamental")
    noise_bins = ~is_signal & ~excluded
    floor = float(spec[noise_bins].mean()) if noise_bins.any() else 0.0
    n_sig = int(is_signal.sum())
    p_sig = max(float(spec[is_signal].sum()) - floor * n_sig, 0.0)
    p_noise = float(spec[noise_bins].sum()) + floor * n_sig
    # both powers normalized to the trace length
    p_sig, p_noise = p_sig / x.size, p_noise / x.size
    if p_noise <= 0 or 2 * math.sqrt(p_sig / p_noise) >= ceiling:
        return SnrReport(p_sig, p_noise, ceiling, tint, c_m / ceiling, n_harm, True)
    snr = 2 * math.sqrt(p_sig / p_noise)
    return SnrReport(p_sig, p_noise, snr, tint, c_m / snr, n_harm)


class ResolutionFit(BaseEstimator):
    """Fit of ``C(SNR=1) = a * tint**p``.

    The exponent ``p`` is fitted freely in log-log space; ``a`` comes from a
    second fit with ``p`` fixed at -1/2, and ``sc_ = a_ / factor``.  The
    default factor ``sqrt(0.25)`` belongs to a first-order RC method-I filter;
    a square-wave lock-in over ``t2`` has ``pi / 2`` instead.
    ``white_`` is False when ``exponent_`` leaves ``white_band``.
    """

    def __init__(self, white_band: tuple[float, float] = WHITE_BAND, min_points: int = 4,
                 min_decades: float = 2.0, factor: float = RESOLUTION_FACTOR):
        self.factor = factor
        self.white_band = white_band
        self.min_points = min_points
        self.min_decades = min_decades

    def fit(self, tint, cm):
        tint = check_1d(tint, "tint")
        cm = check_1d(cm, "cm")
        check_consistent_length(tint, cm)
        if np.any(tint <= 0) or np.any(cm <= 0):
            raise FitError("tint and cm must be positive")
        if tint.size < self.min_points:
            raise FitError(f"need at least {self.min_points} points")
        if math.log10(tint.max() / tint.min()) < self.min_decades - 1e-9:
            raise FitError(f"tint must span {self.min_decades} decades")
        lx, ly = np.log(tint), np.log(cm)
        self.exponent_, log_prefactor = np.polyfit(lx, ly, 1)
        self.exponent_ = float(self.exponent_)
        self.prefactor_free_ = float(math.exp(log_prefactor))
        self.a_ = float(math.exp(np.mean(ly + 0.5 * lx)))
        self.sc_ = self.a_ / self.factor
        lo, hi = self.white_band
        self.white_ = bool(lo <= self.exponent_ <= hi)
        self.tint_, self.cm_ = tint, cm
        self.residuals_ = cm - self.predict(tint)
        return self

    def predict(self, tint):
        check_is_fitted(self, "a_")
        return self.a_ * check_1d(tint, "tint") ** -0.5

    def to_rows(self):
        check_is_fitted(self, "a_")
        return [
            {"tint_s": t, "cm_snr1_f": c, "fit_f": f, "residual_f": c - f}
            for t, c, f in zip(self.tint_, self.cm_, self.predict(self.tint_))
        ]


def fit_resolution(points: Iterable[tuple[float, float]], **kwargs) -> ResolutionFit:
    tint, cm = np.asarray(list(points), dtype=float).T
    return ResolutionFit(**kwargs).fit(tint, cm)


def input_referred_noise(phase_noise_density: float, alpha: float) -> float:
    """Capacitance noise density (F/sqrt(Hz)) from phase noise and sensitivity."""
    check_positive(alpha, "alpha")
    check_positive(phase_noise_density, "phase_noise_density", allow_zero=True)
    return phase_noise_density / alpha


def phase_to_capacitance(dphi, alpha: float):
    """Invert ``tan|dphi| = alpha * C``; sign follows ``-dphi`` (added C lags)."""
    check_positive(alpha, "alpha")
    dphi = np.asarray(dphi, dtype=float)
    return -np.tan(dphi) / alpha


def write_rows(path, rows: Sequence[dict], header: Sequence[str] | None = None) -> Path:
    """Write dict rows as CSV; floats keep full precision."""
    path = Path(path)
    rows = list(rows)
    header = list(header or (rows[0].keys() if rows else []))
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(v) for k, v in r.items()})
    return path


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else v


def report_row(report: SnrReport) -> dict:
    return asdict(report)
