"""Static figures for the reproduction subcommands (convenience; CSV is the contract)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_sweep(result, path) -> Path:
    fig, (ax_a, ax_p, ax_q) = plt.subplots(1, 3, figsize=(13, 4))
    for (cl, cr), rows in result.curves.items():
        if cr != min(c for _, c in result.curves):
            continue
        f = np.array([r["f_hz"] for r in rows]) / 1e6
        ax_a.plot(f, [r["vout_v"] * 1e3 for r in rows], label=f"C_L code {cl}")
        ax_p.plot(f, np.degrees([r["phase_rad"] for r in rows]))
    ax_a.set(xlabel="f (MHz)", ylabel="|Vout| (mV)")
    ax_p.set(xlabel="f (MHz)", ylabel="phase (deg)")
    ax_a.legend(fontsize=8)
    for cl in sorted({r["cl_code"] for r in result.summary}):
        rows = [r for r in result.summary if r["cl_code"] == cl]
        cr = [r["cr_code"] for r in rows]
        q = np.array([r["q"] for r in rows])
        ax_q.plot(cr, np.where(np.abs(q) < 2000, q, np.nan), "o-", label=f"C_L code {cl}")
    ax_q.axhline(0, color="k", lw=0.5)
    ax_q.set(xlabel="C_R code", ylabel="Q (negative: unstable)")
    return _save(fig, path)


def plot_calibration(result, path) -> Path:
    fit = result.fit
    fig, ax = plt.subplots(figsize=(5, 4))
    q = np.linspace(0, max(fit.q_) * 1.1, 50)
    ax.plot(fit.q_, np.degrees(fit.alpha_) * 1e-15, "o", label="measured")
    ax.plot(q, np.degrees(fit.predict(q)) * 1e-15, "-",
            label=f"fit, C_tot = {fit.c_tot_ * 1e15:.1f} fF")
    ax.set(xlabel="Q", ylabel="sensitivity (deg/fF)")
    ax.legend()
    return _save(fig, path)


def plot_resolution(result, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for (method, est), marker in ((("I", "fft-snr"), "o"), (("I", "noise-rms"), "s"),
                                  (("IIa", "lockin-std"), "^")):
        rows = [r for r in result.rows if r["method"] == method and r["estimator"] == est]
        if rows:
            t = [r["tint_s"] for r in rows]
            ax.loglog(t, [r["cm_snr1_f"] * 1e18 for r in rows], marker, label=f"{method} ({est})")
            ax.loglog(t, [r["white_prediction_f"] * 1e18 for r in rows], "k:", lw=0.8)
    ax.set(xlabel="integration time (s)", ylabel="C at SNR = 1 (aF)")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_qcap(result, path) -> Path:
    dvs = sorted({r["dv_v"] for r in result.map_rows})
    fig, axes = plt.subplots(1, len(dvs), figsize=(5 * len(dvs), 4), squeeze=False)
    for ax, dv in zip(axes[0], dvs):
        rows = [r for r in result.map_rows if r["dv_v"] == dv]
        vbg = sorted({r["vbg_v"] for r in rows})
        vgs = sorted({r["vgs_v"] for r in rows})
        z = np.array([r["dcdv_f_per_v"] for r in rows]).reshape(len(vbg), len(vgs))
        ax.pcolormesh(vgs, vbg, z * 1e15, shading="auto", cmap="RdBu_r")
        for pid in sorted({r["peak"] for r in result.track_rows if r["dv_v"] == dv}):
            tr = [r for r in result.track_rows if r["dv_v"] == dv and r["peak"] == pid]
            ax.plot([r["vgs_v"] for r in tr], [r["vbg_v"] for r in tr], "k.--", lw=0.8,
                    label=f"beta = {tr[0]['beta']:.2f}")
        ax.set(xlabel="Vgs (V)", ylabel="Vbg (V)", title=f"dC/dV, dV = {dv * 1e3:g} mV")
        ax.legend(fontsize=7)
    return _save(fig, path)
