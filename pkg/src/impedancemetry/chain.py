"""Excitation and amplification path: current source, bias tee, tank, amplifier, follower."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .tank import TankConfig, default_tank, net_damping, tank_impedance
from .validation import check_positive

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CurrentSource:
    gm: float = 3.4e-6
    pole: float = 3.5e9

    def __post_init__(self):
        check_positive(self.gm, "gm")
        check_positive(self.pole, "pole")


@dataclass(frozen=True)
class BiasTee:
    rbt: float = 10e6
    cbt: float = 406e-15

    def __post_init__(self):
        check_positive(self.rbt, "rbt")
        check_positive(self.cbt, "cbt")

    @property
    def corner(self) -> float:
        return 1.0 / (2 * math.pi * self.rbt * self.cbt)


@dataclass(frozen=True)
class AmplifierStage:
    gain_db: float
    pole: float

    def __post_init__(self):
        check_positive(self.pole, "pole")

    def response(self, f):
        f = np.asarray(f, dtype=float)
        return 10 ** (self.gain_db / 20) / (1 + 1j * f / self.pole)


def default_amplifier() -> AmplifierStage:
    return AmplifierStage(15.0, 1.8e9)


def default_follower() -> AmplifierStage:
    return AmplifierStage(0.0, 92e6)


@dataclass(frozen=True)
class ChainConfig:
    source: CurrentSource = field(default_factory=CurrentSource)
    bias_tee: BiasTee = field(default_factory=BiasTee)
    amp: AmplifierStage = field(default_factory=default_amplifier)
    follower: AmplifierStage = field(default_factory=default_follower)
    tank: TankConfig = field(default_factory=default_tank)
    # flags, never clips
    max_output: float = 2e-3


def source_current(cs: CurrentSource, vin, f):
    """Output current ``gm * vin / (1 + j f / pole)``."""
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise ValueError("frequency must be > 0")
    return cs.gm * np.asarray(vin) / (1 + 1j * f / cs.pole)


def bias_tee_highpass(bt: BiasTee, f):
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise ValueError("frequency must be >= 0")
    x = 1j * f / bt.corner
    return x / (1 + x)


def stage_gain(cfg: ChainConfig, f):
    """Product of everything except the tank (V/A): bias tee, source, amp, follower."""
    return (
        bias_tee_highpass(cfg.bias_tee, f)
        * source_current(cfg.source, 1.0, f)
        * cfg.amp.response(f)
        * cfg.follower.response(f)
    )


def amplification_db(cfg: ChainConfig, f: float) -> float:
    """Voltage gain of amplifier and follower together, in dB."""
    return float(20 * np.log10(abs(cfg.amp.response(f) * cfg.follower.response(f))))


@dataclass(frozen=True)
class ChainResponse:
    h: complex | np.ndarray
    stable: bool


def chain_transfer(cfg: ChainConfig, f, extra_cap=0.0) -> ChainResponse:
    """Vout/Vin.  An unstable tank is evaluated anyway and flagged."""
    stable = net_damping(cfg.tank) >= 0
    if not stable:
        log.info("chain evaluated with an unstable tank configuration")
    h = stage_gain(cfg, f) * tank_impedance(cfg.tank, f, extra_cap)
    return ChainResponse(h, bool(stable))


def input_for_output(cfg: ChainConfig, f: float, vout: float = 1.8e-3) -> float:
    """Input amplitude that produces ``vout`` at ``f``."""
    return vout / abs(chain_transfer(cfg, f).h)


def check_amplitude(cfg: ChainConfig, vout: float) -> bool:
    """True when ``vout`` stays under the linear-regime threshold; logs otherwise."""
    ok = abs(vout) <= cfg.max_output
    if not ok:
        log.warning("output amplitude %.3g V exceeds linear threshold %.3g V", vout, cfg.max_output)
    return ok
