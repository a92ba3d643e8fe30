"""Four-state mechanistic cell model.

The cell is summarised by theta = [x0, y0, cp, cn]: anode and cathode
stoichiometries at the start of discharge plus the two electrode
capacities in Ah. Composing the half-cell potential tables under a
shared capacity axis yields the full-cell discharge curve; comparing
electrode capacities and lithium inventory against a fresh reference
yields the degradation modes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .curves import PseudoOcvCurve
from .errors import EmptyWindow, Infeasible, InvalidState, ValidationError
from .ocp import OcpTable

# Dense bracketing grid for locating the cutoff-voltage crossing before
# bisection refines it.
_CROSSING_GRID = 512
_BISECT_TOL = 1e-12


@dataclass(frozen=True)
class MechanisticState:
    """theta = [x0, y0, cp, cn]; stoichiometries dimensionless, capacities Ah."""

    x0: float
    y0: float
    cp: float
    cn: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x0, self.y0, self.cp, self.cn], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "MechanisticState":
        x0, y0, cp, cn = (float(a) for a in arr)
        return cls(x0=x0, y0=y0, cp=cp, cn=cn)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.as_array())))


@dataclass(frozen=True)
class StateBounds:
    """Per-state [lower, upper] box in the same units as the state."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64).copy()
        hi = np.asarray(self.upper, dtype=np.float64).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValidationError("bounds must be matching 1-d arrays")
        if np.any(lo >= hi):
            raise ValidationError("lower bounds must be strictly below upper bounds")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def default(cls, nominal_capacity: float) -> "StateBounds":
        """Wide enough to cover end of life, tight enough to regularise."""
        return cls(
            lower=np.array([0.5, 0.0, 0.3 * nominal_capacity, 0.3 * nominal_capacity]),
            upper=np.array([1.0, 0.4, 1.5 * nominal_capacity, 1.5 * nominal_capacity]),
        )

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, values) -> bool:
        arr = np.atleast_2d(np.asarray(values, dtype=np.float64))
        return bool(np.all(arr >= self.lower) and np.all(arr <= self.upper))


@dataclass(frozen=True)
class DegradationModes:
    """Fractional loss of lithium inventory and of active material."""

    lli: float
    lam_p: float
    lam_n: float

    def as_array(self) -> np.ndarray:
        return np.array([self.lli, self.lam_p, self.lam_n], dtype=np.float64)


class TopOfCharge(NamedTuple):
    x0: float
    y0: float
    boundary_hit: bool


def _check_state(state: MechanisticState) -> None:
    if not state.is_finite():
        raise InvalidState(f"non-finite state {state}")
    if not (0.0 < state.x0 <= 1.0):
        raise InvalidState(f"x0 must be in (0, 1], got {state.x0}")
    if not (0.0 <= state.y0 < 1.0):
        raise InvalidState(f"y0 must be in [0, 1), got {state.y0}")
    if state.cp <= 0 or state.cn <= 0:
        raise InvalidState(f"electrode capacities must be > 0, got cp={state.cp} cn={state.cn}")


def full_cell_voltage(q, state: MechanisticState, ocp_p: OcpTable, ocp_n: OcpTable):
    """Discharge voltage at capacity ``q``: OCP_p(y0 + q/cp) - OCP_n(x0 - q/cn)."""
    q = np.asarray(q, dtype=np.float64)
    return ocp_p(state.y0 + q / state.cp) - ocp_n(state.x0 - q / state.cn)


def stoichiometry_limit(state: MechanisticState) -> float:
    """Capacity at which either electrode runs out of headroom."""
    return min(state.cn * state.x0, state.cp * (1.0 - state.y0))


def derive_ocv(
    state: MechanisticState,
    ocp_p: OcpTable,
    ocp_n: OcpTable,
    v_min: float,
    v_max: float,
    m: int = 64,
) -> tuple[PseudoOcvCurve, float]:
    """Full-cell discharge curve implied by the state.

    Returns the curve on ``m`` equally spaced capacity points over
    [0, Q_cell] together with Q_cell, the first binding limit among the
    cutoff-voltage crossing and the two stoichiometry limits (ties go to
    the voltage cutoff).
    """
    if m < 8:
        raise ValidationError(f"need m >= 8 curve points, got {m}")
    _check_state(state)
    q_stoich = stoichiometry_limit(state)
    if full_cell_voltage(0.0, state, ocp_p, ocp_n) < v_min:
        raise EmptyWindow(f"start voltage below cutoff {v_min} V for state {state}")
    q_cell = _cutoff_capacity(state, ocp_p, ocp_n, v_min, q_stoich)
    q = np.linspace(0.0, q_cell, m)
    v = full_cell_voltage(q, state, ocp_p, ocp_n)
    if __debug__:
        assert np.all(np.diff(v) <= 1e-12), "derived voltage must be non-increasing"
    return PseudoOcvCurve(q=q, v=v), q_cell


def _cutoff_capacity(state, ocp_p, ocp_n, v_min, q_stoich) -> float:
    """Smallest capacity where the voltage reaches ``v_min``, else the
    stoichiometry limit."""
    grid = np.linspace(0.0, q_stoich, _CROSSING_GRID)
    v = full_cell_voltage(grid, state, ocp_p, ocp_n)
    below = np.nonzero(v < v_min)[0]
    if len(below) == 0:
        return q_stoich
    hi_idx = below[0]
    lo, hi = grid[hi_idx - 1], grid[hi_idx]
    while hi - lo > _BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if full_cell_voltage(mid, state, ocp_p, ocp_n) < v_min:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def lithium_inventory(state: MechanisticState) -> float:
    """Cyclable lithium at top of charge, in Ah: x0*cn + y0*cp."""
    return state.x0 * state.cn + state.y0 * state.cp


def degradation_modes(state: MechanisticState, fresh: MechanisticState) -> DegradationModes:
    """LLI and per-electrode LAM fractions relative to the fresh state."""
    if fresh.cp <= 0 or fresh.cn <= 0:
        raise InvalidState("fresh electrode capacities must be > 0")
    n_li_fresh = lithium_inventory(fresh)
    if n_li_fresh <= 0:
        raise InvalidState("fresh lithium inventory must be > 0")
    return DegradationModes(
        lli=1.0 - lithium_inventory(state) / n_li_fresh,
        lam_p=1.0 - state.cp / fresh.cp,
        lam_n=1.0 - state.cn / fresh.cn,
    )


def boundary_penalty(values, bounds: StateBounds) -> float:
    """Mean quadratic hinge distance to the bounds box; zero inside."""
    arr = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if arr.shape[-1] != len(bounds.lower):
        raise ValidationError(
            f"value width {arr.shape[-1]} does not match bounds width {len(bounds.lower)}"
        )
    under = np.maximum(0.0, bounds.lower - arr)
    over = np.maximum(0.0, arr - bounds.upper)
    return float(np.mean(under**2 + over**2))


def solve_top_of_charge(
    n_li: float,
    cp: float,
    cn: float,
    ocp_p: OcpTable,
    ocp_n: OcpTable,
    v_max: float,
) -> TopOfCharge:
    """Stoichiometries at full charge for a given lithium inventory.

    Finds (x0, y0) with x0*cn + y0*cp = n_li and OCP_p(y0) - OCP_n(x0)
    = v_max by bisection on x0. When no root exists inside the
    admissible stoichiometry box the conservation-consistent state
    clipped at the box edge is returned with ``boundary_hit`` set.
    """
    if n_li <= 0:
        raise Infeasible(f"lithium inventory must be > 0, got {n_li}")
    if cp <= 0 or cn <= 0:
        raise InvalidState(f"electrode capacities must be > 0, got cp={cp} cn={cn}")
    if n_li > cn + cp:
        raise Infeasible(f"inventory {n_li} Ah exceeds electrode capacities {cn + cp} Ah")

    def y_of(x: float) -> float:
        # conservation arithmetic can ring one ulp outside the unit box
        # when the root sits exactly on an edge
        return min(max((n_li - x * cn) / cp, 0.0), 1.0)

    # admissible x0 keeps both stoichiometries inside [0, 1]
    x_lo = max(0.0, (n_li - cp) / cn)
    x_hi = min(1.0, n_li / cn)

    def residual(x: float) -> float:
        return float(ocp_p(y_of(x)) - ocp_n(x)) - v_max

    r_lo, r_hi = residual(x_lo), residual(x_hi)
    # residual is strictly increasing in x0 (both tables decrease)
    if r_lo > 0.0:
        return TopOfCharge(x0=x_lo, y0=y_of(x_lo), boundary_hit=True)
    if r_hi < 0.0:
        return TopOfCharge(x0=x_hi, y0=y_of(x_hi), boundary_hit=True)
    lo, hi = x_lo, x_hi
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if residual(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    x0 = 0.5 * (lo + hi)
    return TopOfCharge(x0=x0, y0=y_of(x0), boundary_hit=False)
