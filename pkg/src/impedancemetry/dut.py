"""Devices under test: calibration MOM capacitors and a MOSFET gate-capacitance model."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import expit

from .validation import check_positive


@dataclass(frozen=True)
class MomCap:
    value: float

    def __post_init__(self):
        check_positive(self.value, "value")


@dataclass(frozen=True)
class QuantumPeak:
    """Thermally broadened sech^2 capacitance peak.

    ``position`` is the gate voltage of the peak at the reference back-gate
    voltage; ``beta`` is the back-gate to front-gate lever ratio.
    """

    position: float
    amplitude: float
    width: float
    beta: float

    def __post_init__(self):
        check_positive(self.amplitude, "amplitude")
        check_positive(self.width, "width")
        check_positive(self.beta, "beta")

    def position_at(self, vbg, vbg_ref: float):
        return self.position - (np.asarray(vbg) - vbg_ref) / self.beta


@dataclass(frozen=True)
class FetCvModel:
    c_sub: float = 50e-18
    c_inv: float = 300e-18
    vth: float = 0.0
    transition_width: float = 30e-3
    vth_backgate_slope: float = 0.1
    peaks: tuple[QuantumPeak, ...] = ()
    vbg_ref: float = 6.0

    def __post_init__(self):
        object.__setattr__(self, "peaks", tuple(self.peaks))
        check_positive(self.c_sub, "c_sub", allow_zero=True)
        check_positive(self.transition_width, "transition_width")
        if not self.c_inv > self.c_sub:
            raise ValueError("c_inv must exceed c_sub")

    def vth_at(self, vbg):
        return self.vth - (np.asarray(vbg) - self.vbg_ref) * self.vth_backgate_slope


def default_fet() -> FetCvModel:
    """Synthetic desk-scale device: three 40 aF, 10 mV peaks around threshold.

    The last peak couples less to the front gate (lever ratio 8.6), like an
    impurity state near the back interface.
    """
    peaks = (
        QuantumPeak(-0.08, 40e-18, 10e-3, 10.0),
        QuantumPeak(-0.02, 40e-18, 10e-3, 10.0),
        QuantumPeak(0.06, 40e-18, 10e-3, 8.6),
    )
    return FetCvModel(peaks=peaks)


def _sech2(x):
    # 1/cosh^2 without overflow for large |x|
    e = np.exp(-2 * np.abs(x))
    return 4 * e / (1 + e) ** 2


def fet_cgg(m: FetCvModel, vgs, vbg=None):
    """Gate capacitance: logistic inversion step plus quantum peaks (farads)."""
    vbg = m.vbg_ref if vbg is None else vbg
    vgs = np.asarray(vgs, dtype=float)
    u = (vgs - m.vth_at(vbg)) / m.transition_width
    c = m.c_sub + (m.c_inv - m.c_sub) * expit(u)
    for p in m.peaks:
        c = c + p.amplitude * _sech2((vgs - p.position_at(vbg, m.vbg_ref)) / p.width)
    return c


def fet_dcgg_dv(m: FetCvModel, vgs, vbg=None):
    """Analytic derivative of :func:`fet_cgg` with respect to ``vgs`` (F/V)."""
    vbg = m.vbg_ref if vbg is None else vbg
    vgs = np.asarray(vgs, dtype=float)
    u = (vgs - m.vth_at(vbg)) / m.transition_width
    s = expit(u)
    d = (m.c_inv - m.c_sub) * s * (1 - s) / m.transition_width
    for p in m.peaks:
        x = (vgs - p.position_at(vbg, m.vbg_ref)) / p.width
        d = d - 2 * p.amplitude * _sech2(x) * np.tanh(x) / p.width
    return d


@dataclass(frozen=True)
class Selection:
    """What the tank sees after a multiplexer change."""

    dut_cap: float
    vgs: float | None
    device: str | None


@dataclass
class DutBank:
    """Multiplexed DUTs; ids are ``"mom0".."momN"`` and ``"fet0".."fetN"``.

    Unselected devices contribute ``off_parasitic`` each.  Selection is the
    only mutation and is logged with a timestamp in ``events``.
    """

    moms: Sequence[MomCap] = field(default_factory=lambda: [MomCap(2e-15), MomCap(4e-15), MomCap(8e-15)])
    fets: Sequence[FetCvModel] = field(default_factory=lambda: [default_fet()])
    selected: str | None = None
    vbias: float = 0.48
    vcm: float = 0.48
    vbg: float = 6.0
    off_parasitic: float = 0.0
    events: list = field(default_factory=list)

    @property
    def ids(self) -> list[str]:
        return [f"mom{i}" for i in range(len(self.moms))] + [f"fet{i}" for i in range(len(self.fets))]

    @property
    def vgs(self) -> float:
        return self.vcm - self.vbias

    def device(self, device_id: str):
        if device_id not in self.ids:
            raise KeyError(f"unknown device {device_id!r}; have {self.ids}")
        kind, idx = device_id[:3], int(device_id[3:])
        return (self.moms if kind == "mom" else self.fets)[idx]

    def _off_total(self, exclude: str | None) -> float:
        n = len(self.ids) - (exclude is not None)
        return n * self.off_parasitic

    def select(self, device_id: str | None, t: float = 0.0) -> Selection:
        """Connect ``device_id`` (``None`` deselects all) and return the tank delta."""
        if device_id is not None:
            self.device(device_id)
        self.selected = device_id
        self.events.append((float(t), device_id))
        return self.current()

    def current(self) -> Selection:
        off = self._off_total(self.selected)
        if self.selected is None:
            return Selection(off, None, None)
        dev = self.device(self.selected)
        if isinstance(dev, MomCap):
            return Selection(off + dev.value, None, self.selected)
        return Selection(off + float(fet_cgg(dev, self.vgs, self.vbg)), self.vgs, self.selected)

    def with_bias(self, vbias: float) -> "DutBank":
        return replace(self, vbias=float(vbias), events=list(self.events))
