"""Experiment configuration: YAML with unit-carrying quantities.

Every physical field declares its SI unit in dataclass metadata; the file
must give it as ``"<number> <unit>"`` (``"136 fF"``).  Unknown keys are
rejected, and :func:`dump_config` writes canonical units that parse back to
an identical :class:`ExperimentConfig`.
"""

from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from . import chain as chain_mod
from . import dut as dut_mod
from . import tank as tank_mod
from .noise import NoiseSpec
from .units import UnitError, format_quantity, parse_quantity


class ConfigError(ValueError):
    """Invalid configuration; carries the dotted path of the offending key."""


def q(unit: str, default=dataclasses.MISSING, **kw):
    """Field holding a physical quantity (or a list of them) in ``unit``."""
    if isinstance(default, list):
        return field(default_factory=lambda d=default: list(d), metadata={"unit": unit}, **kw)
    return field(default=default, metadata={"unit": unit}, **kw)


def _list(default):
    return field(default_factory=lambda: list(default))


@dataclass
class GyratorSection:
    gm1: float = q("S")
    gm2: float = q("S")
    r0: float = q("Ohm")
    alpha_r: float = q("Ohm/F")
    g_load: float = q("S")
    c_l_par: float = q("F", 0.0)


@dataclass
class BankSection:
    base: float = q("F")
    steps: list = q("F", [])


@dataclass
class TankSection:
    # None selects the built-in calibrated gyrator
    gyrator: GyratorSection | None = None
    cl_bank: BankSection = field(default_factory=lambda: BankSection(362e-15, [68e-15, 136e-15]))
    cr_bank: BankSection = field(
        default_factory=lambda: BankSection(0.0, [23e-15, 46e-15, 92e-15, 184e-15]))
    cl_code: int = 0
    cr_code: int = 0
    cp: float = q("F", 136e-15)
    cpar: float = q("F", 1e-15)


@dataclass
class ChainSection:
    source_gm: float = q("S", 3.4e-6)
    source_pole: float = q("Hz", 3.5e9)
    rbt: float = q("Ohm", 10e6)
    cbt: float = q("F", 406e-15)
    amp_gain: float = q("dB", 15.0)
    amp_pole: float = q("Hz", 1.8e9)
    follower_gain: float = q("dB", 0.0)
    follower_pole: float = q("Hz", 92e6)
    max_output: float = q("V", 2e-3)
    vout: float = q("V", 1.8e-3)


@dataclass
class PeakSection:
    position: float = q("V")
    amplitude: float = q("F")
    width: float = q("V")
    beta: float = 10.0


@dataclass
class FetSection:
    c_sub: float = q("F", 50e-18)
    c_inv: float = q("F", 300e-18)
    vth: float = q("V", 0.0)
    transition_width: float = q("V", 30e-3)
    vth_backgate_slope: float = 0.1
    vbg_ref: float = q("V", 6.0)
    peaks: list[PeakSection] = field(default_factory=lambda: [
        PeakSection(-0.08, 40e-18, 10e-3, 10.0),
        PeakSection(-0.02, 40e-18, 10e-3, 10.0),
        PeakSection(0.06, 40e-18, 10e-3, 8.6),
    ])


@dataclass
class DutSection:
    moms: list = q("F", [2e-15, 4e-15, 8e-15])
    fets: list[FetSection] = field(default_factory=lambda: [FetSection()])
    vbias: float = q("V", 0.48)
    vcm: float = q("V", 0.48)
    vbg: float = q("V", 6.0)
    off_parasitic: float = q("F", 0.0)


@dataclass
class NoiseSection:
    """Exactly one of ``white_phase`` and ``input_referred`` may be set.

    ``input_referred`` is converted to phase with the large-signal sensitivity
    of the configured tank to the resolution test capacitance.
    """

    white_phase: float | None = q("rad/sqrt(Hz)", None)
    input_referred: float | None = q("F/sqrt(Hz)", None)
    flicker_corner: float = q("Hz", 0.0)


@dataclass
class SweepSection:
    fmin: float = q("Hz", 180e6)
    fmax: float = q("Hz", 210e6)
    points: int = 301
    cl_codes: list[int] = _list([0, 1, 2, 3])
    cr_codes: list[int] = _list(range(16))


@dataclass
class CalibrateSection:
    cr_codes: list[int] = _list([0, 2, 4, 6])
    duration: float = q("s", 0.2)
    fs: float = q("Hz", 200e3)
    tint1: float = q("s", 100e-6)
    sweep_points: int = 41


@dataclass
class ResolutionSection:
    c_m: float = q("F", 2e-15)
    tints: list = q("s", [1e-7, 3.16e-7, 1e-6, 3.16e-6, 1e-5, 3.16e-5, 1e-4])
    anchor_tint: float = q("s", 55e-6)
    repeats: int = 4
    min_periods: int = 20
    max_periods: int = 200
    max_samples: int = 4_000_000
    t2s: list = q("s", [1e-3, 1e-2, 1e-1, 1.0])
    windows: int = 20
    stream_fs: float = q("Hz", 200e3)
    stream_tint: float = q("s", 100e-6)
    horizon_tints: list = q("s", [1e-3, 1e-2, 1e-1, 1.0])
    horizon_duration: float = q("s", 64.0)


@dataclass
class QcapSection:
    vgs_min: float = q("V", -0.25)
    vgs_max: float = q("V", 0.25)
    points: int = 501
    # peak tracking needs each step to move a peak by less than half the peak spacing
    vbgs: list = q("V", [5.4, 5.6, 5.8, 6.0, 6.2, 6.4, 6.6])
    dvs: list = q("V", [3.1e-3, 25e-3])
    tint2: float = q("s", 10e-3)
    fs: float = q("Hz", 200e3)
    tint1: float = q("s", 100e-6)
    harmonics: int = 3
    smear_ratio: float = 0.4


@dataclass
class BudgetEntry:
    name: str
    unit_footprint: float = q("mm2")
    scaling: str = "m*N"
    unit_power: float | None = q("W", None)


@dataclass
class PlanSection:
    n: int = 10
    m: int = 1
    bandwidth: float = q("Hz", 1e9)
    readout_time: float = q("s", 1e-6)
    resonator_power: float = q("W", 85e-6)
    # empty selects the shipped tables
    budgets: dict[str, list[BudgetEntry]] = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "out"
    tank: TankSection = field(default_factory=TankSection)
    chain: ChainSection = field(default_factory=ChainSection)
    dut: DutSection = field(default_factory=DutSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    f2: float = q("Hz", 1e3)
    sweep: SweepSection = field(default_factory=SweepSection)
    calibrate: CalibrateSection = field(default_factory=CalibrateSection)
    resolution: ResolutionSection = field(default_factory=ResolutionSection)
    qcap: QcapSection = field(default_factory=QcapSection)
    plan: PlanSection = field(default_factory=PlanSection)


# -- generic (de)serialization -------------------------------------------------


def _strip_optional(tp):
    if typing.get_origin(tp) in (typing.Union, getattr(__import__("types"), "UnionType", None)):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return args[0], True
    return tp, False


def _parse_value(tp, unit, raw, path):
    tp, optional = _strip_optional(tp)
    if raw is None:
        if optional:
            return None
        raise ConfigError(f"{path}: value required")
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return _from_dict(tp, raw, path)
    if origin is list or tp is list:
        if not isinstance(raw, list):
            raise ConfigError(f"{path}: expected a list")
        (inner,) = typing.get_args(tp) or (float if unit else Any,)
        return [_parse_value(inner, unit, v, f"{path}[{i}]") for i, v in enumerate(raw)]
    if origin is dict:
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a mapping")
        _, inner = typing.get_args(tp)
        return {str(k): _parse_value(inner, unit, v, f"{path}.{k}") for k, v in raw.items()}
    if unit is not None:
        try:
            return parse_quantity(raw, unit)
        except UnitError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if tp is bool:
        if not isinstance(raw, bool):
            raise ConfigError(f"{path}: expected true/false")
        return raw
    if tp is int:
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(f"{path}: expected an integer")
        return raw
    if tp is float:
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{path}: expected a plain number")
        return float(raw)
    if tp is str:
        if not isinstance(raw, str):
            raise ConfigError(f"{path}: expected a string")
        return raw
    raise ConfigError(f"{path}: unsupported field type {tp!r}")


def _from_dict(cls, raw, path=""):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {unknown}")
    kw = {}
    for name, value in raw.items():
        f = fields[name]
        kw[name] = _parse_value(hints[name], f.metadata.get("unit"), value,
                                f"{path}.{name}" if path else name)
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def _dump_value(value, unit):
    if value is None:
        return None
    if dataclasses.is_dataclass(value):
        return _to_dict(value)
    if isinstance(value, list):
        return [_dump_value(v, unit) for v in value]
    if isinstance(value, dict):
        return {k: _dump_value(v, unit) for k, v in value.items()}
    if unit is not None:
        return format_quantity(value, unit)
    return value


def _to_dict(obj) -> dict:
    return {f.name: _dump_value(getattr(obj, f.name), f.metadata.get("unit"))
            for f in dataclasses.fields(obj)}


def config_from_dict(raw: dict) -> ExperimentConfig:
    cfg = _from_dict(ExperimentConfig, raw or {})
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(raw)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(_to_dict(cfg), sort_keys=False, allow_unicode=True)


def validate(cfg: ExperimentConfig) -> None:
    """Cross-field checks; raises :class:`ConfigError`."""
    n = cfg.noise
    if n.white_phase is not None and n.input_referred is not None:
        raise ConfigError("noise: set white_phase or input_referred, not both")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed: must fit in 64 bits")
    t = cfg.tank
    if not 0 <= t.cl_code < 2 ** len(t.cl_bank.steps):
        raise ConfigError("tank.cl_code: out of range for cl_bank")
    if not 0 <= t.cr_code < 2 ** len(t.cr_bank.steps):
        raise ConfigError("tank.cr_code: out of range for cr_bank")
    for name, codes, bank in (("sweep.cl_codes", cfg.sweep.cl_codes, t.cl_bank),
                              ("sweep.cr_codes", cfg.sweep.cr_codes, t.cr_bank),
                              ("calibrate.cr_codes", cfg.calibrate.cr_codes, t.cr_bank)):
        if any(not 0 <= c < 2 ** len(bank.steps) for c in codes):
            raise ConfigError(f"{name}: code out of range")
    if cfg.sweep.points < 1 or not cfg.sweep.fmax >= cfg.sweep.fmin > 0:
        raise ConfigError("sweep: need points >= 1 and 0 < fmin <= fmax")
    if cfg.plan.n < 1 or cfg.plan.m < 1:
        raise ConfigError("plan: n and m must be >= 1")
    for arch, entries in cfg.plan.budgets.items():
        if not entries:
            raise ConfigError(f"plan.budgets.{arch}: empty budget table")
    try:
        build_tank(cfg)
        build_chain(cfg)
        build_bank(cfg)
    except (ValueError, tank_mod.CalibrationError) as exc:
        raise ConfigError(str(exc)) from None


# -- model construction --------------------------------------------------------


def build_tank(cfg: ExperimentConfig, cl_code: int | None = None,
               cr_code: int | None = None) -> tank_mod.TankConfig:
    t = cfg.tank
    if t.gyrator is None:
        gyr = tank_mod.default_tank().gyrator
    else:
        gyr = tank_mod.GyratorModel(**dataclasses.asdict(t.gyrator))
    cfg_t = tank_mod.TankConfig(
        gyrator=gyr,
        cl_bank=tank_mod.CapacitorBank(t.cl_bank.base, tuple(t.cl_bank.steps)),
        cr_bank=tank_mod.CapacitorBank(t.cr_bank.base, tuple(t.cr_bank.steps)),
        cp=t.cp, cpar=t.cpar)
    return cfg_t.with_codes(t.cl_code if cl_code is None else cl_code,
                            t.cr_code if cr_code is None else cr_code)


def build_chain(cfg: ExperimentConfig, tank: tank_mod.TankConfig | None = None) -> chain_mod.ChainConfig:
    c = cfg.chain
    return chain_mod.ChainConfig(
        source=chain_mod.CurrentSource(c.source_gm, c.source_pole),
        bias_tee=chain_mod.BiasTee(c.rbt, c.cbt),
        amp=chain_mod.AmplifierStage(c.amp_gain, c.amp_pole),
        follower=chain_mod.AmplifierStage(c.follower_gain, c.follower_pole),
        tank=build_tank(cfg) if tank is None else tank,
        max_output=c.max_output)


def build_fet(sec: FetSection) -> dut_mod.FetCvModel:
    peaks = tuple(dut_mod.QuantumPeak(p.position, p.amplitude, p.width, p.beta) for p in sec.peaks)
    return dut_mod.FetCvModel(sec.c_sub, sec.c_inv, sec.vth, sec.transition_width,
                              sec.vth_backgate_slope, peaks, sec.vbg_ref)


def build_bank(cfg: ExperimentConfig) -> dut_mod.DutBank:
    d = cfg.dut
    return dut_mod.DutBank(moms=[dut_mod.MomCap(v) for v in d.moms],
                           fets=[build_fet(f) for f in d.fets],
                           vbias=d.vbias, vcm=d.vcm, vbg=d.vbg, off_parasitic=d.off_parasitic)


def build_noise(cfg: ExperimentConfig, alpha: float | None = None, seed: int | None = None) -> NoiseSpec:
    """Phase-noise spec; ``alpha`` (rad/F) converts an input-referred density."""
    n = cfg.noise
    seed = cfg.seed if seed is None else seed
    if n.input_referred is not None:
        if alpha is None or not math.isfinite(alpha) or alpha <= 0:
            raise ConfigError("noise.input_referred needs a positive sensitivity to convert")
        white = n.input_referred * alpha
    else:
        white = n.white_phase or 0.0
    return NoiseSpec(white, n.flicker_corner, seed)
