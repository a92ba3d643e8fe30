"""Half-cell open-circuit potential tables.

An :class:`OcpTable` maps electrode stoichiometry in [0, 1] to potential
vs Li/Li+. Two built-in table sets ship with the package: piecewise
linear "toy" tables with sharp graphite-like plateau boundaries (handy
for tests because feature locations are analytic), and smooth
graphite-SiOx / NCA-like tables used by the synthetic fleet generator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError


@dataclass(frozen=True)
class OcpTable:
    """Tabulated half-cell potential against stoichiometry."""

    stoich: np.ndarray
    potential: np.ndarray
    electrode: str  # "cathode" | "anode"

    def __post_init__(self):
        s = np.asarray(self.stoich, dtype=np.float64).copy()
        u = np.asarray(self.potential, dtype=np.float64).copy()
        if s.ndim != 1 or u.ndim != 1 or s.shape != u.shape or len(s) < 2:
            raise ValidationError("OCP table needs matching 1-d arrays, length >= 2")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(u))):
            raise ValidationError("OCP table contains non-finite values")
        if s[0] != 0.0 or s[-1] != 1.0:
            raise ValidationError("stoichiometry must span exactly [0, 1]")
        if np.any(np.diff(s) <= 0):
            raise ValidationError("stoichiometry must be strictly increasing")
        if np.any(np.diff(u) >= 0):
            raise ValidationError(f"{self.electrode} potential must be strictly decreasing")
        if self.electrode not in ("cathode", "anode"):
            raise ValidationError(f"unknown electrode {self.electrode!r}")
        s.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "stoich", s)
        object.__setattr__(self, "potential", u)

    def __call__(self, x):
        """Potential at stoichiometry ``x``; clamped outside [0, 1]."""
        return np.interp(x, self.stoich, self.potential)

    def slope(self, x):
        """Piecewise-constant dU/dx at ``x``; zero outside the table."""
        x = np.asarray(x, dtype=np.float64)
        seg = np.clip(np.searchsorted(self.stoich, x, side="right") - 1, 0, len(self.stoich) - 2)
        slopes = np.diff(self.potential) / np.diff(self.stoich)
        out = slopes[seg]
        inside = (x >= self.stoich[0]) & (x <= self.stoich[-1])
        return np.where(inside, out, 0.0)

    @classmethod
    def from_csv(cls, path, electrode: str) -> "OcpTable":
        """Load a table from CSV with header ``stoich,potential_v``."""
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(h.strip() for h in rows[0]) != ("stoich", "potential_v"):
            raise ParseError(f"{path}: expected header ('stoich', 'potential_v')")
        s, u = [], []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            try:
                s.append(float(row[0]))
                u.append(float(row[1]))
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}: bad row {row!r}", line=lineno) from exc
        return cls(stoich=np.asarray(s), potential=np.asarray(u), electrode=electrode)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["stoich", "potential_v"])
            writer.writerows(zip(self.stoich.tolist(), self.potential.tolist()))


# -- built-in table sets ------------------------------------------------

# Toy anode plateau boundaries (stoichiometry of the riser midpoints);
# exported so tests can locate dV/dQ peaks analytically.
TOY_ANODE_RISERS = (0.32, 0.64)


def toy_tables() -> tuple[OcpTable, OcpTable]:
    """Piecewise-linear tables with graphite-like plateaus.

    The anode has two sharp risers centred at :data:`TOY_ANODE_RISERS`;
    plateaus keep a slight slope so the table stays strictly decreasing.
    """
    cathode = OcpTable(
        stoich=np.array([0.0, 0.5, 1.0]),
        potential=np.array([4.40, 4.05, 3.50]),
        electrode="cathode",
    )
    anode = OcpTable(
        stoich=np.array([0.0, 0.02, 0.08, 0.30, 0.34, 0.62, 0.66, 1.00]),
        potential=np.array([1.20, 0.30, 0.22, 0.20, 0.13, 0.12, 0.09, 0.08]),
        electrode="anode",
    )
    return cathode, anode


def _sigmoid(t):
    return 1.0 / (1.0 + np.exp(-t))


# Anode staging steps as (center, depth_v, width): dense enough that any
# plausible charge window straddles at least one, with alternating depths
# so a window can tell *which* steps it is looking at (absolute phase).
_STAGE_STEPS = (
    (0.09, 0.095, 0.012),
    (0.19, 0.050, 0.013),
    (0.30, 0.080, 0.012),
    (0.41, 0.042, 0.014),
    (0.52, 0.068, 0.013),
    (0.64, 0.038, 0.014),
    (0.76, 0.058, 0.013),
    (0.88, 0.032, 0.015),
)


def synthetic_tables(n: int = 1001) -> tuple[OcpTable, OcpTable]:
    """Smooth graphite-SiOx / NCA-like tables sampled on ``n`` points.

    The anode stacks sharp-but-smooth staging steps of varying depth on a
    sloping background; the cathode is a gentle slope with two broad
    knees. Sharp anode features against broad cathode ones give the
    composed full-cell curve electrode-specific length scales, which is
    what keeps four-state fitting identifiable.
    """

    def u_n(x):
        u = 0.085 + 0.55 * np.exp(-x / 0.022) - 0.050 * x
        for center, depth, width in _STAGE_STEPS:
            u = u + depth * _sigmoid((center - x) / width)
        return u

    def shape_p(y):
        return (
            -0.35 * y
            - 0.14 * y**2
            - 0.080 * np.tanh((y - 0.32) / 0.028)
            - 0.090 * np.tanh((y - 0.58) / 0.026)
            - 0.100 * np.tanh((y - 0.84) / 0.030)
        )

    # Solve the cathode offset/scale so the composed fresh cell sits at
    # 4.2 V for stoichiometry (x=0.95, y=0.05) and 3.0 V at (x=0.06,
    # y=0.93), an 88%/89% usable electrode swing.
    top = 4.2 + u_n(0.95)
    bot = 3.0 + u_n(0.06)
    c1 = (top - bot) / (shape_p(0.05) - shape_p(0.93))
    c0 = top - c1 * shape_p(0.05)

    y = np.linspace(0.0, 1.0, n)
    x = np.linspace(0.0, 1.0, n)
    cathode = OcpTable(stoich=y, potential=c0 + c1 * shape_p(y), electrode="cathode")
    anode = OcpTable(stoich=x, potential=u_n(x), electrode="anode")
    return cathode, anode
