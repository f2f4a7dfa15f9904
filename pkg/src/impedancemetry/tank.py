"""Behavioral model of the gyrator active inductor and the parallel resonant tank.

The emulated inductor is ``L = (C_L + c_l_par) / (gm1 * gm2)`` in series with a
loss resistance ``r_s = r0 - alpha_r * C_R`` that the C_R bank drives negative.
The tank places that branch in parallel with the fixed capacitance, the
parasitics, the attached DUT and a load conductance.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import optimize

from .validation import check_positive

log = logging.getLogger(__name__)

Q_CAP = 1e6


class UnstableTankError(ArithmeticError):
    """The tank admittance vanishes exactly (lossless or over-compensated)."""


class CalibrationError(RuntimeError):
    """Least-squares calibration did not reach the requested tolerances."""

    def __init__(self, message: str, residuals: np.ndarray):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True)
class GyratorModel:
    """Gyrator transconductances and loss parameters (SI units).

    ``c_l_par`` is a fixed capacitance at the C_L node that adds to the bank
    value; it is 0 for the ideal gyrator.
    """

    gm1: float
    gm2: float
    r0: float = 0.0
    alpha_r: float = 0.0
    g_load: float = 1e-9
    c_l_par: float = 0.0

    def __post_init__(self):
        check_positive(self.gm1, "gm1")
        check_positive(self.gm2, "gm2")
        check_positive(self.r0, "r0", allow_zero=True)
        check_positive(self.alpha_r, "alpha_r", allow_zero=True)
        check_positive(self.g_load, "g_load")
        check_positive(self.c_l_par, "c_l_par", allow_zero=True)

    @property
    def gm_product(self) -> float:
        return self.gm1 * self.gm2


@dataclass(frozen=True)
class CapacitorBank:
    """Fixed capacitor plus binary-selectable steps.

    Bit ``i`` of ``code`` connects ``steps[i]``.
    """

    base: float
    steps: tuple[float, ...]
    code: int = 0

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(float(s) for s in self.steps))
        check_positive(self.base, "base", allow_zero=True)
        for s in self.steps:
            check_positive(s, "step")
        if not 0 <= int(self.code) < self.n_codes:
            raise ValueError(f"code {self.code} outside [0, {self.n_codes})")

    @property
    def n_codes(self) -> int:
        return 1 << len(self.steps)

    def total(self, code: int | None = None) -> float:
        code = self.code if code is None else int(code)
        if not 0 <= code < self.n_codes:
            raise ValueError(f"code {code} outside [0, {self.n_codes})")
        return self.base + sum(s for i, s in enumerate(self.steps) if code >> i & 1)

    @property
    def value(self) -> float:
        return self.total()

    def with_code(self, code: int) -> "CapacitorBank":
        return replace(self, code=int(code))


def default_cl_bank(code: int = 0) -> CapacitorBank:
    return CapacitorBank(362e-15, (68e-15, 136e-15), code)


def default_cr_bank(code: int = 0) -> CapacitorBank:
    return CapacitorBank(0.0, (23e-15, 46e-15, 92e-15, 184e-15), code)


@dataclass(frozen=True)
class TankConfig:
    gyrator: GyratorModel
    cl_bank: CapacitorBank = field(default_factory=default_cl_bank)
    cr_bank: CapacitorBank = field(default_factory=default_cr_bank)
    cp: float = 136e-15
    cpar: float = 1e-15
    dut_cap: float = 0.0

    def __post_init__(self):
        check_positive(self.cp, "cp")
        check_positive(self.cpar, "cpar", allow_zero=True)
        check_positive(self.dut_cap, "dut_cap", allow_zero=True)

    @property
    def c_tot(self) -> float:
        return self.cp + self.cpar + self.dut_cap

    def with_codes(self, cl: int | None = None, cr: int | None = None) -> "TankConfig":
        cfg = self
        if cl is not None:
            cfg = replace(cfg, cl_bank=cfg.cl_bank.with_code(cl))
        if cr is not None:
            cfg = replace(cfg, cr_bank=cfg.cr_bank.with_code(cr))
        return cfg

    def with_dut(self, dut_cap: float) -> "TankConfig":
        return replace(self, dut_cap=float(dut_cap))


@dataclass(frozen=True)
class TankResponse:
    fr: float
    q: float
    l: float
    r_series: float
    stable: bool
    saturated: bool = False
    peak_deviation: float = 0.0


def effective_inductance(g: GyratorModel, c_l: float) -> float:
    """Emulated inductance ``(c_l + c_l_par) / (gm1 * gm2)`` in henries."""
    c_l = check_positive(c_l, "c_l", allow_zero=True)
    return (c_l + g.c_l_par) / g.gm_product


def series_resistance(g: GyratorModel, c_r: float) -> float:
    """Series loss of the emulated inductor; negative once C_R over-cancels r0."""
    c_r = check_positive(c_r, "c_r", allow_zero=True)
    return g.r0 - g.alpha_r * c_r


def _branch_values(cfg: TankConfig) -> tuple[float, float]:
    return (
        effective_inductance(cfg.gyrator, cfg.cl_bank.value),
        series_resistance(cfg.gyrator, cfg.cr_bank.value),
    )


def tank_impedance(cfg: TankConfig, f, extra_cap=0.0):
    """Complex impedance of the tank at frequency ``f`` (Hz).

    ``f`` and ``extra_cap`` broadcast; ``extra_cap`` adds to ``cfg.dut_cap`` and
    lets callers evaluate many DUT states at once.  Negative frequencies are
    accepted and give ``Z(-f) = conj(Z(f))``.
    """
    f = np.asarray(f, dtype=float)
    if np.any(f == 0) or not np.all(np.isfinite(f)):
        raise ValueError("frequency must be finite and non-zero")
    inductance, r_s = _branch_values(cfg)
    w = 2 * np.pi * f
    c = cfg.c_tot + np.asarray(extra_cap, dtype=float)
    branch = 1j * w * inductance + r_s
    if np.any(branch == 0):
        raise UnstableTankError("inductive branch has zero impedance")
    y = 1.0 / branch + 1j * w * c + cfg.gyrator.g_load
    if np.any(y == 0):
        raise UnstableTankError("tank admittance is exactly zero")
    z = 1.0 / y
    return z if np.ndim(z) else complex(z)


def analytic_fr(cfg: TankConfig) -> float:
    inductance, _ = _branch_values(cfg)
    return 1.0 / (2 * math.pi * math.sqrt(inductance * cfg.c_tot))


def net_damping(cfg: TankConfig) -> float:
    """Coefficient of ``s`` in the normalized characteristic polynomial (1/s)."""
    inductance, r_s = _branch_values(cfg)
    return r_s / inductance + cfg.gyrator.g_load / cfg.c_tot


def q_series_to_parallel(cfg: TankConfig) -> float:
    """Q from the series-to-parallel conversion ``R_eff * sqrt(C_tot / L)``.

    The series loss maps to ``R_p = (Q_L**2 + 1) r_s`` with ``Q_L = w L / r_s``;
    ``R_eff`` is ``R_p`` in parallel with ``1 / g_load``.
    """
    inductance, r_s = _branch_values(cfg)
    w = 2 * math.pi * analytic_fr(cfg)
    g_series = 0.0 if r_s == 0 else 1.0 / (((w * inductance / r_s) ** 2 + 1) * r_s)
    g_total = g_series + cfg.gyrator.g_load
    if g_total == 0:
        return Q_CAP
    return _cap_q(math.sqrt(cfg.c_tot / inductance) / g_total)[0]


def _cap_q(q: float) -> tuple[float, bool]:
    if not np.isfinite(q) or abs(q) >= Q_CAP:
        return math.copysign(Q_CAP, q if not np.isnan(q) else 1.0), True
    return float(q), False


def _phase_slope(cfg: TankConfig, fr: float, rel_step: float) -> float:
    df = fr * rel_step
    z = tank_impedance(cfg, np.array([fr - df, fr + df]))
    dphi = np.angle(z[1] / z[0])
    return dphi / (2 * df)


def _peak_search(cfg: TankConfig, fr: float, half_width: float) -> float:
    res = optimize.minimize_scalar(
        lambda f: -abs(tank_impedance(cfg, f)),
        bounds=(fr * (1 - half_width), fr * (1 + half_width)),
        method="bounded",
        options={"xatol": fr * 1e-6},
    )
    return float(res.x)


def resonance(cfg: TankConfig, *, self_check: bool = False) -> TankResponse:
    """Resonance frequency, Q and stability of ``cfg``.

    ``fr`` is the analytic ``1 / (2 pi sqrt(L C_tot))``.  ``q`` comes from the
    impedance phase slope, ``q = -(fr / 2) dphi/df``, and is capped at
    ``+-Q_CAP`` (``saturated``) in the lossless or marginal limit.  With
    ``self_check`` a bounded |Z| peak search reports the relative offset of the
    numeric peak from ``fr``.
    """
    inductance, r_s = _branch_values(cfg)
    fr = analytic_fr(cfg)
    damping = net_damping(cfg)
    stable = damping >= 0
    w0 = 2 * math.pi * fr
    if abs(damping) * Q_CAP <= w0:
        q, saturated = math.copysign(Q_CAP, damping if damping else 1.0), True
    else:
        q_guess = w0 / abs(damping)
        slope = _phase_slope(cfg, fr, min(1e-4, 0.01 / q_guess))
        q, saturated = _cap_q(-fr / 2 * slope)
    deviation = 0.0
    if self_check and stable and not saturated:
        peak = _peak_search(cfg, fr, min(0.2, 4.0 / abs(q)))
        deviation = peak / fr - 1
        log.debug("|Z| peak offset from analytic fr: %.3g", deviation)
    return TankResponse(fr, q, inductance, r_s, bool(stable), saturated, deviation)


def phase_shift_small_signal(q: float, delta_c: float, c_tot: float) -> float:
    """Small-signal phase shift magnitude ``q * delta_c / c_tot`` (radians).

    A capacitance increase lags the phase at the original resonance, so the
    measured phase moves by minus this amount.
    """
    check_positive(c_tot, "c_tot")
    return float(q) * float(delta_c) / c_tot


# -- calibration ---------------------------------------------------------------

FREE_PARAMETERS = ("gm_product", "c_l_par", "r0", "alpha_r", "g_load")
_SCALE = {"gm_product": 1e-7, "c_l_par": 1e-12, "r0": 100.0, "alpha_r": 1e14, "g_load": 1e-6}


@dataclass(frozen=True)
class CalibrationTarget:
    """Resonance target for one bank setting; ``fr`` or ``q`` may be omitted."""

    cl_code: int
    cr_code: int = 0
    fr: float | None = None
    q: float | None = None


def _apply(g: GyratorModel, names: Sequence[str], values: np.ndarray) -> GyratorModel:
    kw = {}
    for name, v in zip(names, values):
        if name == "gm_product":
            gm = math.sqrt(v)
            kw.update(gm1=gm, gm2=gm)
        else:
            kw[name] = float(v)
    return replace(g, **kw)


def _current(g: GyratorModel, name: str) -> float:
    return g.gm_product if name == "gm_product" else getattr(g, name)


def calibrate_gyrator(
    base: TankConfig,
    targets: Sequence[CalibrationTarget],
    free: Sequence[str] = FREE_PARAMETERS,
    *,
    fr_tol: float = 0.005,
    q_tol: float = 0.10,
) -> GyratorModel:
    """Fit the free gyrator parameters of ``base`` to resonance targets.

    Residuals are relative errors of ``fr`` and ``1/q`` divided by their tolerances.  Raises ``ValueError``
    for degenerate target sets and :class:`CalibrationError` when any target
    misses its tolerance after the solve.
    """
    free = tuple(free)
    unknown = set(free) - set(FREE_PARAMETERS)
    if unknown:
        raise ValueError(f"unknown free parameters {sorted(unknown)}")
    n_res = sum((t.fr is not None) + (t.q is not None) for t in targets)
    if n_res == 0 or n_res < len(free):
        raise ValueError(f"{n_res} target values cannot determine {len(free)} free parameters")
    if len(free) == 0:
        raise ValueError("no free parameters")

    scale = np.array([_SCALE[n] for n in free])

    def model_for(x):
        return _apply(base.gyrator, free, np.asarray(x) * scale)

    def residuals(x):
        g = model_for(x)
        out = []
        for t in targets:
            cfg = replace(base, gyrator=g).with_codes(t.cl_code, t.cr_code)
            if t.fr is not None:
                out.append((analytic_fr(cfg) / t.fr - 1) / fr_tol)
            if t.q is not None:
                # inverse-Q residual stays continuous across the stability boundary
                inv_q = net_damping(cfg) / (2 * math.pi * analytic_fr(cfg))
                out.append((t.q * inv_q - 1) / q_tol)
        return np.array(out)

    x0 = np.array([max(_current(base.gyrator, n), 1e-3 * _SCALE[n]) for n in free]) / scale
    lower = np.array([1e-9 if n in ("gm_product", "g_load") else 0.0 for n in free])
    try:
        sol = optimize.least_squares(residuals, x0, bounds=(lower, np.inf), x_scale="jac",
                                     xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=5000)
    except ValueError as exc:  # model left its valid domain
        raise CalibrationError(str(exc), np.full(n_res, np.nan)) from exc
    g = model_for(sol.x)
    checks = []
    for t in targets:
        cfg = replace(base, gyrator=g).with_codes(t.cl_code, t.cr_code)
        r = resonance(cfg)
        if t.fr is not None:
            checks.append(abs(r.fr / t.fr - 1) <= fr_tol)
        if t.q is not None:
            checks.append(abs(r.q / t.q - 1) <= q_tol)
    if not all(checks):
        raise CalibrationError(
            f"calibration residual above tolerance (cost {sol.cost:.3g})", sol.fun
        )
    return g


# Targets read from the 4.2 K characterization: fr endpoints of the C_L range
# and the low/high Q reached by the C_R bank at each C_L endpoint.
DEFAULT_TARGETS = (
    CalibrationTarget(cl_code=0, cr_code=0, fr=199.0e6, q=80.0),
    CalibrationTarget(cl_code=3, cr_code=0, fr=189.1e6, q=80.0),
    CalibrationTarget(cl_code=0, cr_code=6, q=250.0),
    CalibrationTarget(cl_code=3, cr_code=6, q=250.0),
)


def uncalibrated_gyrator() -> GyratorModel:
    """Room-temperature starting point: 5.3 uH at the 362 fF code."""
    gm = math.sqrt(362e-15 / 5.30e-6)
    return GyratorModel(gm1=gm, gm2=gm, r0=40.0, alpha_r=3e14, g_load=1e-6, c_l_par=1e-12)


def default_tank(cl_code: int = 0, cr_code: int = 0) -> TankConfig:
    """Tank calibrated against :data:`DEFAULT_TARGETS`."""
    return _default_tank().with_codes(cl_code, cr_code)


@functools.cache
def _default_tank() -> TankConfig:
    base = TankConfig(gyrator=uncalibrated_gyrator())
    return replace(base, gyrator=calibrate_gyrator(base, DEFAULT_TARGETS))
