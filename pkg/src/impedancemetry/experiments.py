"""End-to-end reproduction pipelines behind the CLI subcommands.

Each pipeline takes an :class:`~impedancemetry.config.ExperimentConfig` and
returns plain row dictionaries.  Experiment points get a fixed enumeration
index, which selects their child noise stream, so results do not depend on
``jobs``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.stats import linregress

from . import analysis, planner
from .chain import ChainConfig, chain_transfer, input_for_output, stage_gain
from .config import ExperimentConfig, build_chain, build_fet, build_noise, build_tank
from .dut import FetCvModel, fet_cgg, fet_dcgg_dv
from .noise import NoiseSpec
from .signal import (Excitation, demod_derivative, demod_double_amplitude, demod_single,
                     method_i_gain, switched_capacitance, synthesize_baseband)
from .tank import resonance


def parallel_map(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """Ordered map; ``jobs > 1`` fans out to worker processes."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# -- operating point -------------------------------------------------------------


@dataclass(frozen=True)
class OperatingPoint:
    """Measured resonance of one tank setting and the drive that gives ``vout``."""

    chain: ChainConfig
    fr: float
    q: float
    vin: float


def measure_operating_point(cfg: ExperimentConfig, cl_code=None, cr_code=None,
                            points: int | None = None) -> OperatingPoint:
    """Phase sweep around the model resonance, de-embedded from the chain stages."""
    tank = build_tank(cfg, cl_code, cr_code)
    chain = build_chain(cfg, tank)
    model = resonance(tank)
    if not model.stable:
        from .tank import UnstableTankError
        raise UnstableTankError(f"tank codes ({tank.cl_bank.code}, {tank.cr_bank.code}) are unstable")
    n = points or cfg.calibrate.sweep_points
    half = model.fr / (2 * model.q)
    f = np.linspace(model.fr - half, model.fr + half, n)
    phase = np.angle(chain_transfer(chain, f).h / stage_gain(chain, f))
    fr, q = analysis.extract_q(f, phase, model.fr)
    return OperatingPoint(chain, fr, q, input_for_output(chain, fr, cfg.chain.vout))


def large_signal_alpha(op: OperatingPoint, c_m: float) -> float:
    """``|dphi(c_m)| / c_m`` (rad/F) from the noiseless chain response."""
    h0 = chain_transfer(op.chain, op.fr).h
    h1 = chain_transfer(op.chain, op.fr, c_m).h
    return abs(float(np.angle(h1 / h0))) / c_m


def reference_alpha(cfg: ExperimentConfig) -> float:
    """Sensitivity used to turn an input-referred noise density into phase noise."""
    return large_signal_alpha(measure_operating_point(cfg), cfg.resolution.c_m)


def noise_for(cfg: ExperimentConfig) -> NoiseSpec:
    alpha = reference_alpha(cfg) if cfg.noise.input_referred is not None else None
    return build_noise(cfg, alpha)


# -- sweep -----------------------------------------------------------------------


@dataclass
class SweepResult:
    curves: dict = field(default_factory=dict)
    summary: list = field(default_factory=list)


def run_sweep(cfg: ExperimentConfig) -> SweepResult:
    s = cfg.sweep
    f = np.linspace(s.fmin, s.fmax, s.points)
    out = SweepResult()
    for cl in s.cl_codes:
        for cr in s.cr_codes:
            tank = build_tank(cfg, cl, cr)
            chain = build_chain(cfg, tank)
            r = resonance(tank)
            vin = input_for_output(chain, r.fr, cfg.chain.vout)
            h = np.atleast_1d(chain_transfer(chain, f).h) * vin
            out.curves[(cl, cr)] = [
                {"f_hz": float(fi), "vout_v": float(abs(hi)), "phase_rad": float(np.angle(hi))}
                for fi, hi in zip(f, h)]
            out.summary.append({
                "cl_code": cl, "cr_code": cr, "c_l_f": tank.cl_bank.value,
                "c_r_f": tank.cr_bank.value, "l_h": r.l, "r_series_ohm": r.r_series,
                "fr_hz": r.fr, "q": r.q, "stable": r.stable, "saturated": r.saturated})
    return out


# -- sensitivity calibration -----------------------------------------------------


def _switched_dphi(args) -> float:
    op, c_m, noise, duration, fs, tint1, f2, index = args
    exc = Excitation(op.fr, op.vin, f2, "dut-switch", c_m)
    tr = synthesize_baseband(op.chain, switched_capacitance(c_m, f2), exc, noise, duration, fs,
                             tint=tint1, index=index)
    ph = demod_single(tr, tint1, decimate=False, mode="phase").phase
    period = int(round(fs / f2))
    # drop one period at each end, where the moving average sees the edges
    core = ph[period: ph.size - period]
    gain = method_i_gain("boxcar", tint1, f2)
    res = demod_double_amplitude(core, fs, f2, (core.size // period) * period / fs,
                                 prefilter_gain=gain)
    return 2 * float(res.amplitude.mean())


@dataclass
class CalibrationResult:
    rows: list
    fit: analysis.SensitivityFit
    c_tot_configured: float

    @property
    def relative_error(self) -> float:
        return self.fit.c_tot_ / self.c_tot_configured - 1


def measure_alpha(cfg: ExperimentConfig, op: OperatingPoint, noise: NoiseSpec, index0: int,
                  jobs: int = 1) -> tuple[float, list]:
    c = cfg.calibrate
    args = [(op, cm, noise, c.duration, c.fs, c.tint1, cfg.f2, index0 + i)
            for i, cm in enumerate(cfg.dut.moms)]
    dphis = parallel_map(_switched_dphi, args, jobs)
    return analysis.alpha_from_steps(cfg.dut.moms, dphis), dphis


def run_calibrate(cfg: ExperimentConfig, jobs: int = 1) -> CalibrationResult:
    """Switch every MOM capacitor at each C_R setting and fit ``alpha(q)``."""
    noise = noise_for(cfg)
    qs, alphas, rows = [], [], []
    n_caps = len(cfg.dut.moms)
    for k, cr in enumerate(cfg.calibrate.cr_codes):
        op = measure_operating_point(cfg, cr_code=cr)
        alpha, dphis = measure_alpha(cfg, op, noise, k * n_caps, jobs)
        qs.append(op.q)
        alphas.append(alpha)
        for cm, dphi in zip(cfg.dut.moms, dphis):
            rows.append({"cr_code": cr, "fr_hz": op.fr, "q": op.q, "c_m_f": cm,
                         "dphi_rad": dphi, "alpha_rad_per_f": alpha})
    fit = analysis.SensitivityFit().fit(qs, alphas)
    tank = build_tank(cfg)
    return CalibrationResult(rows, fit, tank.cp + tank.cpar)


# -- resolution ------------------------------------------------------------------


def fs_for_tint(tint: float, fsw: float, floor: float = 1e6) -> float:
    """Sample rate ``max(floor, 20 / tint)`` rounded up to an even multiple of ``fsw``."""
    fs = max(floor, 20.0 / tint)
    # an even count per period keeps the sampled duty cycle at exactly 50 %
    return 2 * math.ceil(fs / (2 * fsw) - 1e-9) * fsw


def _snr_point(args) -> analysis.SnrReport:
    op, c_m, noise, tint, fsw, periods, index = args
    fs = fs_for_tint(tint, fsw)
    skip = max(1, math.ceil(30 * tint * fsw))
    exc = Excitation(op.fr, op.vin, fsw, "dut-switch", c_m)
    tr = synthesize_baseband(op.chain, switched_capacitance(c_m, fsw), exc, noise,
                             (periods + skip) / fsw, fs, tint=tint, index=index)
    ph = demod_single(tr, tint, filter="rc", mode="phase").phase
    return analysis.snr_from_square_wave(ph, fs, fsw, tint, c_m)


def _periods_for(cfg: ExperimentConfig, tint: float) -> int:
    r = cfg.resolution
    per = fs_for_tint(tint, cfg.f2) / cfg.f2
    return int(min(r.max_periods, max(r.min_periods, r.max_samples // per)))


def _iia_stream(args):
    op, c_m, noise, duration, fs, tint1, f2, index = args
    exc = Excitation(op.fr, op.vin, f2, "dut-switch", c_m)
    tr = synthesize_baseband(op.chain, switched_capacitance(c_m, f2), exc, noise, duration, fs,
                             tint=tint1, index=index)
    return demod_single(tr, tint1, mode="phase")


def _iia_resolution(stream, f2: float, t2: float, c_m: float) -> tuple[float, int]:
    """``C_m * std(a) / mean(a)`` over lock-in windows of ``t2``."""
    res = demod_double_amplitude(stream.phase, stream.fs, f2, t2)
    z = res.amplitude * np.exp(1j * res.phase)
    ref = np.angle(z.mean())
    a = (z * np.exp(-1j * ref)).real
    return c_m * float(np.std(a, ddof=1) / np.mean(a)), a.size


def _horizon_point(args) -> float:
    op, noise, tint, duration, index = args
    fs = max(1e3, 20.0 / tint)
    exc = Excitation(op.fr, op.vin)
    tr = synthesize_baseband(op.chain, 0.0, exc, noise, duration, fs, tint=tint, index=index)
    ph = demod_single(tr, tint, filter="rc", mode="phase").phase
    return float(np.std(ph[int(10 * tint * fs):]))


@dataclass
class ResolutionResult:
    rows: list
    anchor: dict
    fits: dict
    sc_configured: float | None
    alpha: float


def run_resolution(cfg: ExperimentConfig, jobs: int = 1) -> ResolutionResult:
    """Method-I SNR curve, anchor point, method-IIa curve and method-I long horizon."""
    r = cfg.resolution
    op = measure_operating_point(cfg)
    alpha = large_signal_alpha(op, r.c_m)
    noise = build_noise(cfg, alpha)
    sc = noise.white_phase / alpha
    fsw = cfg.f2

    tints = list(r.tints) + [r.anchor_tint]
    args = []
    for i, t in enumerate(tints):
        for k in range(r.repeats):
            args.append((op, r.c_m, noise, t, fsw, _periods_for(cfg, t), i * r.repeats + k))
    reports = parallel_map(_snr_point, args, jobs)
    rows = []
    per_tint = {}
    for i, t in enumerate(tints):
        reps = reports[i * r.repeats:(i + 1) * r.repeats]
        cm = float(np.mean([x.cm_equivalent for x in reps]))
        snr = float(np.mean([x.snr for x in reps]))
        per_tint[i] = (t, cm, snr, all(x.saturated for x in reps))
    white_i = 0.5 * sc
    for i, t in enumerate(r.tints):
        _, cm, snr, sat = per_tint[i]
        rows.append(_res_row("I", "fft-snr", t, cm, snr, white_i / math.sqrt(t), sat, r.repeats))
    t, cm, snr, sat = per_tint[len(r.tints)]
    anchor = _res_row("I", "fft-snr", t, cm, snr, white_i / math.sqrt(t), sat, r.repeats)

    fits = {}
    # saturated points carry the ceiling sentinel, not a measurement
    live = [per_tint[i] for i in range(len(r.tints)) if not per_tint[i][3]]
    if len(live) >= analysis.ResolutionFit().min_points:
        fits["I"] = analysis.ResolutionFit().fit([p[0] for p in live], [p[1] for p in live])

    base = len(tints) * r.repeats
    if noise.enabled:
        # method IIa: one long trace cut into windows of each t2
        duration = r.windows * max(r.t2s)
        stream = _iia_stream((op, r.c_m, noise, duration, r.stream_fs, r.stream_tint, fsw, base))
        cms = []
        for t2 in r.t2s:
            cm, n_win = _iia_resolution(stream, fsw, t2, r.c_m)
            cms.append(cm)
            rows.append(_res_row("IIa", "lockin-std", t2, cm, r.c_m / cm,
                                 math.pi / 2 * sc / math.sqrt(t2), False, n_win))
        fits["IIa"] = analysis.ResolutionFit(factor=math.pi / 2).fit(r.t2s, cms)
        hargs = [(op, noise, t, r.horizon_duration, base + 1 + i) for i, t in enumerate(r.horizon_tints)]
        for t, std in zip(r.horizon_tints, parallel_map(_horizon_point, hargs, jobs)):
            cm = std / alpha
            rows.append(_res_row("I", "noise-rms", t, cm, r.c_m / cm, white_i / math.sqrt(t),
                                 False, 1))
    return ResolutionResult(rows, anchor, fits, sc if noise.enabled else None, alpha)


def _res_row(method, estimator, tint, cm, snr, white, saturated, n):
    return {"method": method, "estimator": estimator, "tint_s": tint, "cm_snr1_f": cm,
            "snr": snr, "white_prediction_f": white, "ratio_to_white": cm / white if white else math.inf,
            "saturated": saturated, "samples": n}


# -- quantum capacitance ---------------------------------------------------------


def _qcap_line(args) -> np.ndarray:
    op, fet, vgs, vbg, dv, q, noise, sensitivity, index0 = args
    exc = Excitation(op.fr, op.vin, q.f2, "vbias-sine", dv)
    return demod_derivative(op.chain, fet, vgs, vbg, exc, noise, q.tint2, sensitivity,
                            fs=q.fs, tint1=q.tint1, harmonics=q.harmonics, index0=index0)


@dataclass(frozen=True)
class _QcapParams:
    f2: float
    tint2: float
    fs: float
    tint1: float
    harmonics: int


def zero_crossings_down(x, y) -> np.ndarray:
    """Positions where ``y`` goes from positive to non-positive, interpolated."""
    x, y = np.asarray(x), np.asarray(y)
    i = np.flatnonzero((y[:-1] > 0) & (y[1:] <= 0))
    return x[i] - y[i] * (x[i + 1] - x[i]) / (y[i + 1] - y[i])


def track_peaks(vbgs: Sequence[float], crossings: Sequence[np.ndarray]) -> list[list[tuple]]:
    """Follow crossings from the first ``vbg`` on, predicting with the running slope."""
    order = np.argsort(vbgs)
    tracks = [[(vbgs[order[0]], p)] for p in crossings[order[0]]]
    for j in order[1:]:
        cand = list(crossings[j])
        for tr in tracks:
            if not cand:
                break
            (v0, p0) = tr[-1]
            slope = (tr[-1][1] - tr[-2][1]) / (tr[-1][0] - tr[-2][0]) if len(tr) > 1 else 0.0
            pred = p0 + slope * (vbgs[j] - v0)
            k = int(np.argmin(np.abs(np.asarray(cand) - pred)))
            tr.append((vbgs[j], cand.pop(k)))
    return [t for t in tracks if len(t) == len(vbgs)]


def _peak_dip(vgs, d, centers, half: float):
    """Peak-to-dip amplitude and separation around each crossing."""
    out = []
    for c in centers:
        sel = np.abs(vgs - c) <= half
        if sel.sum() < 3:
            out.append((math.nan, math.nan))
            continue
        xs, ys = vgs[sel], d[sel]
        out.append((float(ys.max() - ys.min()), float(abs(xs[ys.argmin()] - xs[ys.argmax()]))))
    return out


@dataclass
class QcapResult:
    map_rows: list
    track_rows: list
    integrated_rows: list
    smear_rows: list
    sensitivity: float


def run_qcap(cfg: ExperimentConfig, jobs: int = 1, fet_index: int = 0) -> QcapResult:
    qc = cfg.qcap
    fet: FetCvModel = build_fet(cfg.dut.fets[fet_index])
    op = measure_operating_point(cfg)
    noise = noise_for(cfg)
    sensitivity, _ = measure_alpha(cfg, op, noise, 0, jobs)
    vgs = np.linspace(qc.vgs_min, qc.vgs_max, qc.points)
    params = _QcapParams(cfg.f2, qc.tint2, qc.fs, qc.tint1, qc.harmonics)
    base = len(cfg.dut.moms)
    lines = [(dv, vbg) for dv in qc.dvs for vbg in qc.vbgs]
    args = [(op, fet, vgs, vbg, dv, params, noise, sensitivity, base + i * vgs.size)
            for i, (dv, vbg) in enumerate(lines)]
    maps = parallel_map(_qcap_line, args, jobs)

    map_rows, integrated_rows, track_rows, smear_rows = [], [], [], []
    by_dv: dict[float, list] = {}
    for (dv, vbg), d in zip(lines, maps):
        exact = fet_dcgg_dv(fet, vgs, vbg)
        for v, m, e in zip(vgs, d, exact):
            map_rows.append({"dv_v": dv, "vbg_v": vbg, "vgs_v": float(v),
                             "dcdv_f_per_v": float(m), "analytic_f_per_v": float(e)})
        integ = cumulative_trapezoid(d, vgs, initial=0.0)
        c_exact = fet_cgg(fet, vgs, vbg)
        for v, ci, ce in zip(vgs, integ, c_exact - c_exact[0]):
            integrated_rows.append({"dv_v": dv, "vbg_v": vbg, "vgs_v": float(v),
                                    "delta_c_f": float(ci), "analytic_delta_c_f": float(ce)})
        by_dv.setdefault(dv, []).append((vbg, d, exact))

    for dv, entries in by_dv.items():
        vbgs = [e[0] for e in entries]
        crossings = [zero_crossings_down(vgs, e[1]) for e in entries]
        for pid, tr in enumerate(track_peaks(vbgs, crossings)):
            vb, pos = np.array(tr).T
            fit = linregress(vb, pos)
            for v, p in tr:
                track_rows.append({"dv_v": dv, "peak": pid, "vbg_v": v, "vgs_v": p,
                                   "beta": -1.0 / fit.slope, "r2": fit.rvalue**2})
        for vbg, d, exact in entries:
            centers = zero_crossings_down(vgs, exact)
            meas = _peak_dip(vgs, d, centers, 3 * max(dv, 0.01))
            ref = _peak_dip(vgs, exact, centers, 3 * max(dv, 0.01))
            for c, (amp, sep), (amp0, _) in zip(centers, meas, ref):
                smear_rows.append({"dv_v": dv, "vbg_v": vbg, "center_v": float(c),
                                   "peak_dip_f_per_v": amp, "analytic_peak_dip_f_per_v": amp0,
                                   "amplitude_ratio": amp / amp0, "separation_v": sep,
                                   "smeared": bool(dv / sep > qc.smear_ratio) if sep > 0 else True})
    return QcapResult(map_rows, track_rows, integrated_rows, smear_rows, sensitivity)


def beta_estimates(result: QcapResult, dv: float) -> list[float]:
    seen = {}
    for row in result.track_rows:
        if row["dv_v"] == dv:
            seen[row["peak"]] = row["beta"]
    return [seen[k] for k in sorted(seen)]


# -- plan ------------------------------------------------------------------------


@dataclass
class PlanResult:
    reports: dict
    power_per_qubit: float
    density: list
    allocation: planner.ArrayPlan
    presets: list


def run_plan(cfg: ExperimentConfig) -> PlanResult:
    p = cfg.plan
    if p.budgets:
        tables = {arch: [planner.ElementBudget(e.name, e.unit_footprint, e.scaling, e.unit_power)
                         for e in entries] for arch, entries in p.budgets.items()}
    else:
        tables = {arch: make() for arch, make in planner.DEFAULT_BUDGETS.items()}
    reports = {arch: planner.footprint_report(t, p.n, p.m) for arch, t in tables.items()}
    plan = planner.allocate(p.bandwidth, p.readout_time, p.n, m=p.m)
    return PlanResult(reports, planner.power_per_qubit(p.resonator_power, p.n),
                      planner.inductance_density_comparison(), plan,
                      [planner.preset_capacity(k) for k in planner.PRESETS])
