"""Seeded phase-noise synthesis: white plateau plus 1/f flicker.

The flicker part is a sum of octave-spaced first-order (AR(1)) processes whose
Lorentzian spectra add up to ``1/f`` between the lowest and highest corner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .validation import check_positive

MIN_OCTAVES = 12
# flicker above this multiple of the corner is < 0.1 % of the white plateau
_FLICKER_SPAN = 1000.0


@dataclass(frozen=True)
class NoiseSpec:
    """One-sided phase-noise density ``white_phase**2 * (1 + flicker_corner / f)``."""

    white_phase: float = 0.0
    flicker_corner: float = 0.0
    seed: int = 0

    def __post_init__(self):
        check_positive(self.white_phase, "white_phase", allow_zero=True)
        check_positive(self.flicker_corner, "flicker_corner", allow_zero=True)
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 bits")

    @property
    def enabled(self) -> bool:
        return self.white_phase > 0

    def psd(self, f):
        """Target one-sided PSD in rad^2/Hz."""
        f = np.asarray(f, dtype=float)
        return self.white_phase**2 * (1 + self.flicker_corner / f)


def child_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Independent generator for experiment point ``index`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def flicker_corners(f_low: float, f_high: float) -> np.ndarray:
    n_oct = max(MIN_OCTAVES, math.ceil(math.log2(f_high / f_low)))
    return f_high / 2.0 ** np.arange(n_oct + 1)


def white_noise(density: float, n: int, fs: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian samples whose one-sided PSD is ``density**2`` up to ``fs / 2``."""
    return density * math.sqrt(fs / 2) * rng.standard_normal(n)


def flicker_noise(level: float, n: int, fs: float, rng: np.random.Generator,
                  f_low: float | None = None, f_high: float | None = None) -> np.ndarray:
    """Samples with one-sided PSD close to ``level / f`` on ``[f_low, f_high]``.

    Each octave ``k`` contributes a Lorentzian ``A_k / (1 + (f / f_k)^2)`` with
    ``A_k = level * (2 ln 2 / pi) / f_k``; integrated over log-spaced corners
    this sums to ``level / f``.  Every branch starts in its stationary state.
    """
    f_high = fs / 4 if f_high is None else min(f_high, fs / 4)
    f_low = fs / n / 4 if f_low is None else f_low
    out = np.zeros(n)
    for fk in flicker_corners(f_low, f_high):
        amp = level * (2 * math.log(2) / math.pi) / fk
        var = amp * math.pi * fk / 2
        rho = math.exp(-2 * math.pi * fk / fs)
        scale = math.sqrt(var * (1 - rho**2))
        x0 = math.sqrt(var) * rng.standard_normal()
        w = scale * rng.standard_normal(n)
        y, _ = lfilter([1.0], [1.0, -rho], w, zi=[rho * x0])
        out += y
    return out


def phase_noise(spec: NoiseSpec, n: int, fs: float, index: int = 0) -> np.ndarray:
    """Phase-noise samples (radians) for experiment point ``index``."""
    if not spec.enabled:
        return np.zeros(n)
    rng = child_rng(spec.seed, index)
    phi = white_noise(spec.white_phase, n, fs, rng)
    if spec.flicker_corner > 0:
        level = spec.white_phase**2 * spec.flicker_corner
        phi += flicker_noise(level, n, fs, rng, f_high=_FLICKER_SPAN * spec.flicker_corner)
    return phi
