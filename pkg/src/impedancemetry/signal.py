"""Baseband synthesis of the readout signal and the three demodulation methods.

The simulation works on the complex envelope at the carrier ``f1``: each
sample is ``H_chain(f1; C_dut(t)) * V_in * exp(j phi_noise(t))``.  Method I is
a low-pass of that envelope (or of its tracked phase), method IIa a lock-in on
the phase stream at the switching frequency ``f2``, and method IIb the same
lock-in with a sine gate-voltage modulation converted to dC/dV.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import lfilter

from .chain import ChainConfig, chain_transfer
from .dut import FetCvModel, fet_cgg
from .noise import NoiseSpec, phase_noise
from .validation import check_1d, check_positive

MAX_SAMPLES = 1 << 26
MOD_KINDS = ("none", "dut-switch", "vbias-sine")


class SampleRateError(ValueError):
    pass


@dataclass(frozen=True)
class Excitation:
    """Carrier and optional low-frequency modulation.

    ``mod_amplitude`` is the switched capacitance (F) for ``"dut-switch"`` and
    the gate-voltage excursion (V) for ``"vbias-sine"``.
    """

    f1: float
    amplitude: float
    f2: float = 1e3
    mod_kind: str = "none"
    mod_amplitude: float = 0.0

    def __post_init__(self):
        check_positive(self.f1, "f1")
        check_positive(self.amplitude, "amplitude", allow_zero=True)
        check_positive(self.f2, "f2")
        if self.mod_kind not in MOD_KINDS:
            raise ValueError(f"mod_kind must be one of {MOD_KINDS}")
        if self.mod_kind != "none" and not self.f2 * 100 <= self.f1:
            raise ValueError("f2 must be much smaller than f1")


@dataclass
class Trace:
    """Complex baseband samples plus the tracked (unwrapped) phase."""

    envelope: np.ndarray
    phase: np.ndarray
    fs: float

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.envelope.size) / self.fs

    @property
    def duration(self) -> float:
        return self.envelope.size / self.fs

    def to_csv(self, path) -> Path:
        """Write ``time, I, Q, amplitude, phase`` rows."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", "i_v", "q_v", "amplitude_v", "phase_rad"])
            for row in zip(self.times, self.envelope.real, self.envelope.imag,
                           np.abs(self.envelope), self.phase):
                w.writerow([repr(float(v)) for v in row])
        return path


def square_wave(t, f2: float) -> np.ndarray:
    """0/1 wave: 1 (connected) during the first half of each period."""
    # rounding pins samples that land on a half-period edge to one side
    return (np.round(np.mod(np.asarray(t) * f2, 1.0), 9) < 0.5).astype(float)


def switched_capacitance(c_m: float, f2: float) -> Callable:
    return lambda t: c_m * square_wave(t, f2)


def gate_modulated_capacitance(fet: FetCvModel, vgs0: float, vbg: float, dv: float,
                               f2: float) -> Callable:
    return lambda t: fet_cgg(fet, vgs0 + dv * np.sin(2 * np.pi * f2 * np.asarray(t)), vbg)


def synthesize_baseband(chain: ChainConfig, capacitance, exc: Excitation, noise: NoiseSpec,
                        duration: float, fs: float, *, tint: float | None = None,
                        index: int = 0, max_samples: int = MAX_SAMPLES) -> Trace:
    """Simulate the demodulator input for one experiment point.

    ``capacitance`` is the DUT contribution: a constant, or a callable of the
    sample times returning farads.  ``index`` selects the child noise stream.
    """
    check_positive(duration, "duration")
    check_positive(fs, "fs")
    rates = [exc.f2] if exc.mod_kind != "none" else []
    if tint is not None:
        rates.append(1.0 / tint)
    if rates and fs < 20 * max(rates) * (1 - 1e-9):
        raise SampleRateError(f"fs={fs:g} Hz below 20 x {max(rates):g} Hz")
    n = int(round(duration * fs))
    if n > max_samples:
        raise MemoryError(f"{n} samples exceed the cap of {max_samples}")
    if n < 1:
        raise ValueError("duration shorter than one sample")
    t = np.arange(n) / fs
    if callable(capacitance):
        caps = np.broadcast_to(np.asarray(capacitance(t), dtype=float), (n,))
    else:
        caps = np.full(n, float(capacitance))
    # few distinct states (switching) are evaluated once each
    levels, inverse = np.unique(caps, return_inverse=True)
    resp = chain_transfer(chain, exc.f1, levels)
    if not resp.stable:
        from .tank import UnstableTankError
        raise UnstableTankError("cannot synthesize a trace with an unstable tank")
    h = np.atleast_1d(resp.h)[inverse] * exc.amplitude
    phi = phase_noise(noise, n, fs, index)
    # tracked phase: the deterministic part is continuous in C, so unwrap is safe
    phase = np.unwrap(np.angle(h)) + phi
    return Trace(h * np.exp(1j * phi), phase, fs)


@dataclass
class DemodResult:
    times: np.ndarray
    amplitude: np.ndarray
    phase: np.ndarray
    tint: float
    method: str
    fs: float

    def __len__(self):
        return self.amplitude.size


def _moving_average(x: np.ndarray, n: int) -> np.ndarray:
    if np.iscomplexobj(x):
        return _moving_average(x.real, n) + 1j * _moving_average(x.imag, n)
    return uniform_filter1d(x, n, mode="nearest")


def _rc(x: np.ndarray, fs: float, tint: float) -> np.ndarray:
    a = math.exp(-1.0 / (fs * tint))
    y, _ = lfilter([1 - a], [1.0, -a], x, zi=[a * x[0]])
    return y


def demod_single(trace: Trace, tint: float, *, filter: str = "boxcar", decimate: bool = True,
                 mode: str = "complex") -> DemodResult:
    """Method I: low-pass the baseband over ``tint``.

    ``filter="boxcar"`` averages windows of ``tint`` (one output per window
    with ``decimate``, otherwise a centered moving average at the input rate);
    ``filter="rc"`` is a first-order low-pass of time constant ``tint`` at the
    input rate.  ``mode="complex"`` averages the envelope and reports
    ``|mean|, arg(mean)``; ``mode="phase"`` averages the tracked phase
    directly, which stays meaningful when per-sample phase noise exceeds a
    radian.
    """
    fs = trace.fs
    if tint < 2 / fs:
        raise ValueError(f"tint={tint:g} s shorter than two samples")
    if tint > trace.duration:
        raise ValueError("tint exceeds the trace length")
    if mode not in ("complex", "phase"):
        raise ValueError("mode must be 'complex' or 'phase'")
    x = trace.envelope if mode == "complex" else trace.phase
    mag = np.abs(trace.envelope)
    if filter == "boxcar" and decimate:
        n = int(round(tint * fs))
        m = x.size // n
        y = x[: m * n].reshape(m, n).mean(axis=1)
        amp = mag[: m * n].reshape(m, n).mean(axis=1)
        times = (np.arange(m) + 0.5) * n / fs
        fs_out = fs / n
    elif filter == "boxcar":
        n = int(round(tint * fs))
        y, amp = _moving_average(x, n), _moving_average(mag, n)
        times, fs_out = trace.times, fs
    elif filter == "rc":
        y, amp = _rc(x, fs, tint), _rc(mag, fs, tint)
        times, fs_out = trace.times, fs
    else:
        raise ValueError("filter must be 'boxcar' or 'rc'")
    if mode == "complex":
        amp, phase = np.abs(y), np.unwrap(np.angle(y))
    else:
        phase = y
    return DemodResult(times, amp, phase, tint, "I", fs_out)


def method_i_gain(filter: str, tint: float, f: float) -> float:
    """Magnitude response of the method-I low-pass at ``f``."""
    if filter == "boxcar":
        return abs(float(np.sinc(f * tint)))
    if filter == "rc":
        return 1.0 / math.sqrt(1 + (2 * math.pi * f * tint) ** 2)
    raise ValueError(filter)


def _lockin_windows(stream: np.ndarray, fs: float, f: float, tint2: float, reference: str,
                    harmonic: int = 1):
    n = int(round(tint2 * fs))
    if n < 1 or n > stream.size:
        raise ValueError("tint2 must cover at least one sample and fit in the stream")
    m = stream.size // n
    t = np.arange(m * n) / fs
    s = stream[: m * n]
    arg = 2 * np.pi * harmonic * f * t
    ref = np.exp(-1j * (arg - np.pi / 2)) if reference == "sine" else np.exp(-1j * arg)
    z = (2 * s * ref).reshape(m, n).mean(axis=1)
    return z, (np.arange(m) + 0.5) * n / fs


def demod_double_amplitude(stream, fs: float, f2: float, tint2: float, *,
                           prefilter_gain: float = 1.0) -> DemodResult:
    """Method IIa: square-wave lock-in at ``f2`` on a method-I phase stream.

    The fundamental is demodulated and scaled by ``pi / 4`` so that an ideal
    square wave of half-amplitude ``a`` returns ``a``.  ``prefilter_gain``
    divides out the method-I attenuation at ``f2``.
    """
    stream = check_1d(stream, "stream")
    if fs < 10 * f2:
        raise SampleRateError(f"stream rate {fs:g} Hz below 10 x f2")
    z, times = _lockin_windows(stream, fs, f2, tint2, "cos")
    z = z * (math.pi / 4) / prefilter_gain
    return DemodResult(times, np.abs(z), np.angle(z), tint2, "IIa", 1.0 / tint2)


def lockin_sine(stream, fs: float, f2: float, tint2: float, harmonic: int = 1) -> np.ndarray:
    """Signed amplitude against ``sin(2 pi harmonic f2 t)``, one per window."""
    stream = check_1d(stream, "stream")
    if fs < 10 * harmonic * f2:
        raise SampleRateError(f"stream rate {fs:g} Hz below 10 x {harmonic} x f2")
    z, _ = _lockin_windows(stream, fs, f2, tint2, "sine", harmonic)
    return z.real


def demod_derivative(chain: ChainConfig, fet: FetCvModel, vgs, vbg: float, exc: Excitation,
                     noise: NoiseSpec, tint2: float, sensitivity: float | None, *,
                     fs: float = 200e3, tint1: float = 100e-6, ref_phase: float | None = None,
                     harmonics: int = 3, index0: int = 0) -> np.ndarray:
    """Method IIb: dC/dV (F/V) at each gate voltage in ``vgs``.

    The gate is modulated as ``vgs + dv * sin(2 pi f2 t)`` with
    ``dv = exc.mod_amplitude``.  The phase first harmonic is converted to
    capacitance with the small-signal ``sensitivity`` (rad/F), linearized about
    the DC phase relative to ``ref_phase`` (the phase with no DUT, measured
    if not given): ``dphi/dC = -sensitivity * cos^2(phi_dc)``.

    With ``harmonics=1`` the estimate is ``2 C_1 / dv`` from the first
    harmonic alone, which smears features narrower than a few ``dv``.
    ``harmonics=3`` adds the third harmonic, ``(b_1 + 3 b_3) / dv``, which
    cancels the ``dv**2 C3 / 8`` term (``C3`` the third derivative).
    """
    if harmonics not in (1, 3):
        raise ValueError("harmonics must be 1 or 3")
    if sensitivity is None or not sensitivity > 0:
        raise ValueError("sensitivity uncalibrated")
    dv = exc.mod_amplitude
    if exc.mod_kind != "vbias-sine" or not dv > 0:
        raise ValueError("excitation must be a 'vbias-sine' modulation with amplitude > 0")
    vgs = np.atleast_1d(np.asarray(vgs, dtype=float))
    if ref_phase is None:
        ref_phase = float(np.angle(chain_transfer(chain, exc.f1).h))
    period = 1.0 / exc.f2
    n_periods = max(1, int(round(tint2 / period)))
    # one guard period on each side absorbs the moving-average edges
    duration = (n_periods + 2) * period
    guard = int(round(period * fs))
    out = np.empty(vgs.size)
    for i, v in enumerate(vgs):
        cap = gate_modulated_capacitance(fet, v, vbg, dv, exc.f2)
        tr = synthesize_baseband(chain, cap, exc, noise, duration, fs, tint=tint1, index=index0 + i)
        ph = demod_single(tr, tint1, decimate=False, mode="phase").phase
        core = ph[guard: guard + n_periods * guard]
        b = 0.0
        for k, weight in ((1, 1.0), (3, 3.0))[: 1 if harmonics == 1 else 2]:
            gain = method_i_gain("boxcar", tint1, k * exc.f2)
            b += weight * lockin_sine(core, fs, exc.f2, n_periods * period, k)[0] / gain
        phi_dc = float(core.mean()) - ref_phase
        local = sensitivity * math.cos(phi_dc) ** 2
        out[i] = -b / (local * dv)
    return out
