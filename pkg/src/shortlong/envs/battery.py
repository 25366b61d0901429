"""Synthetic battery discharge-capacity curves.

Curves follow a decreasing logistic on a lifetime-shifted cycle axis:

    capacity(t) = f_shape(t - lifetime; a, b) + Gaussian(0, noise_sd)
    f_shape(u; a, b) = 1 / (1 + exp(a*u + b)),  a > 0

so every curve from the same (a, b) coincides once shifted by its own
lifetime (right-alignment).  With b = -ln(4) the shape passes through
0.8 at u = 0, which matches the 80%-of-initial-capacity end-of-life
convention used to define lifetime for synthetic data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..regress import CURVE_FAMILIES
from ..seeding import generator

EOL_FRACTION = 0.8
DEFAULT_B = float(-np.log(4.0))  # f_shape(0) = EOL_FRACTION


@dataclass
class CapacityCurve:
    """Per-cycle discharge capacities plus the ground-truth lifetime when known."""

    cycles: np.ndarray
    capacities: np.ndarray
    lifetime: int | None = None

    def __post_init__(self) -> None:
        self.cycles = np.asarray(self.cycles, dtype=int)
        self.capacities = np.asarray(self.capacities, dtype=float)
        if self.cycles.shape != self.capacities.shape or self.cycles.ndim != 1:
            raise ValueError("cycles and capacities must be equal-length 1-d arrays")
        if len(self.cycles) == 0:
            raise ValueError("empty capacity curve")

    def prefix(self, n_cycles: int) -> "CapacityCurve":
        """The first n_cycles measurements (lifetime label dropped)."""
        if not 1 <= n_cycles <= len(self.cycles):
            raise ValueError(f"prefix of {n_cycles} cycles outside [1, {len(self.cycles)}]")
        return CapacityCurve(self.cycles[:n_cycles], self.capacities[:n_cycles], lifetime=None)


def battery_synthesize(
    a: float,
    b: float,
    lifetime: int,
    noise_sd: float,
    n_cycles: int,
    seed: int,
) -> CapacityCurve:
    """Generate one noisy logistic capacity curve over cycles 1..n_cycles."""
    if a <= 0:
        raise ValueError("decay rate a must be positive")
    if lifetime > n_cycles:
        raise ValueError(f"lifetime {lifetime} exceeds n_cycles {n_cycles}")
    cycles = np.arange(1, n_cycles + 1)
    shape = CURVE_FAMILIES["negexp"].fn(cycles - float(lifetime), np.array([a, b]))
    noise = generator(seed, "battery").normal(0.0, noise_sd, size=n_cycles) if noise_sd > 0 else 0.0
    return CapacityCurve(cycles, shape + noise, lifetime=int(lifetime))


def measured_lifetime(curve: CapacityCurve, fraction: float = EOL_FRACTION) -> int:
    """First cycle whose capacity drops below ``fraction`` of the initial capacity."""
    threshold = fraction * curve.capacities[0]
    below = np.flatnonzero(curve.capacities < threshold)
    if len(below) == 0:
        raise ValueError("capacity never crosses the end-of-life threshold")
    return int(curve.cycles[below[0]])


def save_curves(curves: list[CapacityCurve], path: str | Path) -> None:
    """Write curves as CSV rows `cycle,capacity[,lifetime]`.

    Curves are concatenated; a cycle number that does not increase marks
    the start of a new curve.  The lifetime column is present only when
    every curve carries a label, and repeats the label on each row.
    """
    if not curves:
        raise ValueError("no curves to save")
    labeled = all(c.lifetime is not None for c in curves)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cycle", "capacity", "lifetime"] if labeled else ["cycle", "capacity"])
        for curve in curves:
            for cyc, cap in zip(curve.cycles, curve.capacities):
                row = [int(cyc), format(cap, ".17g")]
                if labeled:
                    row.append(int(curve.lifetime))
                writer.writerow(row)


def load_curves(path: str | Path) -> list[CapacityCurve]:
    """Read curves written by save_curves (or any CSV in the same schema)."""
    curves: list[CapacityCurve] = []
    cycles: list[int] = []
    caps: list[float] = []
    lifetime: int | None = None

    def flush() -> None:
        nonlocal cycles, caps, lifetime
        if cycles:
            curves.append(CapacityCurve(np.array(cycles), np.array(caps), lifetime))
        cycles, caps, lifetime = [], [], None

    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0].strip().lower() != "cycle":
            raise ValueError(f"{path}: expected header starting with 'cycle'")
        has_lifetime = len(header) >= 3 and header[2].strip().lower() == "lifetime"
        for row in reader:
            if not row:
                continue
            cyc = int(row[0])
            if cycles and cyc <= cycles[-1]:
                flush()
            cycles.append(cyc)
            caps.append(float(row[1]))
            if has_lifetime and len(row) >= 3 and row[2].strip():
                lifetime = int(row[2])
    flush()
    if not curves:
        raise ValueError(f"{path}: no curves found")
    return curves
