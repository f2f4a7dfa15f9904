"""Frequency-multiplexed readout planning: channel allocation, footprint and power budgets."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

SCALINGS = ("m*N^2", "m*N", "m")


class InfeasiblePlanError(ValueError):
    pass


@dataclass(frozen=True)
class ArrayPlan:
    n: int
    m: int
    bandwidth: float
    spacing: float
    readout_time: float
    frequencies: tuple[float, ...]

    @property
    def qubits(self) -> int:
        return self.m * self.n * self.n


def max_channels(bandwidth: float, readout_time: float) -> int:
    """Hard bound: channels spaced by ``1 / readout_time`` inside ``bandwidth``."""
    return int(math.floor(bandwidth * readout_time * (1 + 1e-12)))


def allocate(bandwidth: float, readout_time: float, n: int, *, m: int = 1,
             f_start: float = 0.0) -> ArrayPlan:
    """Place ``n`` channels uniformly, ``spacing = max(bandwidth / n, 1 / readout_time)``.

    Channel ``i`` sits at the center of slot ``i`` of width ``spacing``
    starting at ``f_start``, so ``n = 1`` lands on the band center.
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    if bandwidth <= 0 or readout_time <= 0:
        raise ValueError("bandwidth and readout_time must be > 0")
    if n > max_channels(bandwidth, readout_time):
        raise InfeasiblePlanError(
            f"{n} channels need {n / readout_time:g} Hz; only {bandwidth:g} Hz available")
    spacing = max(bandwidth / n, 1.0 / readout_time)
    freqs = f_start + spacing * (np.arange(n) + 0.5)
    return ArrayPlan(n, m, bandwidth, spacing, readout_time, tuple(float(f) for f in freqs))


# Readings of the "N x N up to 100" statement at 1 us and 1 GHz.  The hard
# bound spaces channels by 1/t; the example resolution uses 5 MHz; the stated
# figure fixes N x N = 100 outright.
PRESETS = {
    "hard-bound": {"bandwidth": 1e9, "readout_time": 1e-6, "spacing": 1e6},
    "example-resolution": {"bandwidth": 1e9, "readout_time": 1e-6, "spacing": 5e6},
    "stated-100": {"bandwidth": 1e9, "readout_time": 1e-6, "qubits": 100},
}


def preset_capacity(name: str) -> dict:
    """Channel count and the largest square array ``N x N`` for a preset."""
    p = PRESETS[name]
    if "qubits" in p:
        n = math.isqrt(p["qubits"])
        return {"preset": name, "channels": n, "n": n, "qubits": n * n}
    channels = int(round(p["bandwidth"] / p["spacing"]))
    # one channel per qubit: N x N <= channels
    n = math.isqrt(channels)
    return {"preset": name, "channels": channels, "n": n, "qubits": n * n}


@dataclass(frozen=True)
class ElementBudget:
    name: str
    unit_footprint: float  # mm^2
    scaling: str
    unit_power: float | None = None  # W

    def __post_init__(self):
        if self.scaling not in SCALINGS:
            raise ValueError(f"scaling must be one of {SCALINGS}")
        if self.unit_footprint < 0:
            raise ValueError("unit_footprint must be >= 0")

    def count(self, n: int, m: int) -> int:
        return {"m*N^2": m * n * n, "m*N": m * n, "m": m}[self.scaling]


def reflectometry_budget() -> list[ElementBudget]:
    return [
        ElementBudget("qubits", 1e-8, "m*N^2"),
        ElementBudget("amplifiers", 0.1, "m"),
        ElementBudget("inductors", 1.0, "m*N"),
        ElementBudget("couplers", 100.0, "m"),
    ]


def passive_impedancemetry_budget() -> list[ElementBudget]:
    return [
        ElementBudget("sources", 1e-3, "m*N"),
        ElementBudget("followers", 1e-3, "m*N"),
        ElementBudget("inductors", 1.0, "m*N"),
        ElementBudget("amplifiers", 0.1, "m"),
    ]


def active_impedancemetry_budget() -> list[ElementBudget]:
    return [replace(b, unit_footprint=1e-3) if b.name == "inductors" else b
            for b in passive_impedancemetry_budget()]


DEFAULT_BUDGETS = {
    "reflectometry": reflectometry_budget,
    "impedancemetry-passive": passive_impedancemetry_budget,
    "impedancemetry-active": active_impedancemetry_budget,
}


@dataclass(frozen=True)
class FootprintRow:
    name: str
    scaling: str
    count: int
    unit_footprint: float
    total: float


@dataclass(frozen=True)
class FootprintReport:
    rows: tuple[FootprintRow, ...]
    total: float
    dominant: str


def footprint_report(budgets: Sequence[ElementBudget], n: int, m: int) -> FootprintReport:
    if not budgets:
        raise ValueError("budget table is empty")
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    rows = tuple(FootprintRow(b.name, b.scaling, b.count(n, m), b.unit_footprint,
                              b.unit_footprint * b.count(n, m)) for b in budgets)
    total = math.fsum(r.total for r in rows)
    dominant = max(rows, key=lambda r: r.total).name
    return FootprintReport(rows, total, dominant)


def power_per_qubit(resonator_power: float, n: int) -> float:
    """One resonator reads a row of ``n`` qubits in an ``n x n`` array."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if resonator_power < 0:
        raise ValueError("resonator_power must be >= 0")
    return resonator_power * n / (n * n)


INDUCTANCE_DENSITY = {  # H/mm^2
    "active": 1.73e-3,
    "superconducting": 1.6e-6,
    "passive": 55e-9,
}
CLAIMED_ORDERS = {"passive": 5, "superconducting": 3}


def inductance_density_comparison(reference: str = "active") -> list[dict]:
    """Density ratios against ``reference`` with a flag where the stated order is off."""
    ref = INDUCTANCE_DENSITY[reference]
    out = []
    for name, d in INDUCTANCE_DENSITY.items():
        ratio = ref / d
        orders = math.log10(ratio)
        claimed = CLAIMED_ORDERS.get(name) if reference == "active" else None
        flag = claimed is not None and round(orders) != claimed
        note = (f"stated as {claimed} orders, arithmetic gives {orders:.2f}" if flag else "")
        out.append({"technology": name, "density_h_per_mm2": d, "ratio": ratio,
                    "orders_of_magnitude": orders, "claimed_orders": claimed,
                    "discrepancy": flag, "note": note})
    return out


def report_csv(reports: dict[str, FootprintReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["architecture", "element", "scaling", "count", "unit_footprint_mm2", "total_mm2"])
    for arch, rep in reports.items():
        for r in rep.rows:
            w.writerow([arch, r.name, r.scaling, r.count, repr(r.unit_footprint), repr(r.total)])
        w.writerow([arch, "TOTAL", "", "", "", repr(rep.total)])
    return buf.getvalue()


def report_table(reports: dict[str, FootprintReport]) -> str:
    """Aligned plain-text table of the same content as :func:`report_csv`."""
    head = ("architecture", "element", "scaling", "count", "unit mm2", "total mm2")
    lines = []
    for arch, rep in reports.items():
        for r in rep.rows:
            lines.append((arch, r.name, r.scaling, str(r.count), f"{r.unit_footprint:g}", f"{r.total:.6g}"))
        lines.append((arch, f"TOTAL (dominant: {rep.dominant})", "", "", "", f"{rep.total:.6g}"))
    widths = [max(len(x) for x in col) for col in zip(head, *lines)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    return "\n".join([fmt.format(*head), fmt.format(*("-" * w for w in widths))]
                     + [fmt.format(*ln) for ln in lines]) + "\n"
