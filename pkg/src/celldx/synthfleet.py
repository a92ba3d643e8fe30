"""Synthetic battery fleets with known mechanistic ground truth.

Cells age along jittered power-law trajectories of the three
degradation modes; at every diagnostic the generator solves the
top-of-charge stoichiometry for the current lithium inventory, derives
the diagnostic-rate pseudo-OCV, and simulates the operating windows
that follow it. Everything is deterministic given (config, seed): each
cell draws from its own `SeedSequence(seed).spawn(cell_index)` stream,
so generation order cannot change the data.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .curves import MIN_WINDOW_FRACTION, ChargeSegment, PseudoOcvCurve
from .errors import (
    CensoredCell,
    Infeasible,
    ParseError,
    ScenarioError,
    SplitError,
    ValidationError,
    WindowError,
)
from .mechanistic import MechanisticState, derive_ocv, solve_top_of_charge
from .ocp import OcpTable, synthetic_tables

# decimals kept when serializing curve samples (1 µV / 1 µAh)
_CURVE_DECIMALS = 6


@dataclass(frozen=True)
class DischargeProfile:
    """Piecewise-constant C-rate schedule over the cycling window.

    ``constant`` holds ``c_rate``; ``periodic`` alternates between
    ``c_rate`` and ``c_rate*high_mult`` across ``phases`` equal SOC
    slices; ``drive`` draws a seeded random walk over the same slices.
    """

    kind: str = "constant"
    c_rate: float = 1.0
    high_mult: float = 2.0
    phases: int = 8

    def __post_init__(self):
        if self.kind not in ("constant", "periodic", "drive"):
            raise ValidationError(f"unknown discharge profile {self.kind!r}")
        if self.c_rate <= 0 or self.high_mult < 1.0 or self.phases < 1:
            raise ValidationError("discharge profile parameters out of range")


@dataclass(frozen=True)
class ProtocolSpec:
    """One operating condition: charge rate, cycling window, cadence."""

    protocol_id: str
    charge_c_rate: float = 1.0
    discharge: DischargeProfile = field(default_factory=DischargeProfile)
    soc_lo: float = 0.0
    soc_hi: float = 1.0
    diagnostic_period: float = 50.0
    diagnostic_c_rate: float = 0.2
    input_side: str = "charge"  # which trace becomes the model input

    def __post_init__(self):
        if not self.protocol_id:
            raise ValidationError("protocol_id must be non-empty")
        if not (0.0 <= self.soc_lo < self.soc_hi <= 1.0):
            raise ValidationError(f"bad SOC window [{self.soc_lo}, {self.soc_hi}]")
        if self.charge_c_rate <= 0 or self.diagnostic_c_rate <= 0:
            raise ValidationError("c-rates must be > 0")
        if self.diagnostic_period <= 0:
            raise ValidationError("diagnostic period must be > 0")
        if self.input_side not in ("charge", "discharge"):
            raise ValidationError(f"unknown input side {self.input_side!r}")


@dataclass(frozen=True)
class DegradationScenario:
    """Per-cell power-law mode trajectories, all in EFC.

    mode(efc) = a * (efc/1000)^p, with the LLI rate multiplied by
    ``knee_mult`` beyond ``knee_efc`` (continuous at the knee). ``k_age``
    scales resistance growth with lost capacity.
    """

    a_n: float
    p_n: float
    a_p: float
    p_p: float
    a_l: float
    p_l: float
    knee_efc: float
    knee_mult: float
    k_age: float

    def __post_init__(self):
        if min(self.a_n, self.a_p, self.a_l) < 0:
            raise ValidationError("degradation rates must be >= 0")
        for p in (self.p_n, self.p_p, self.p_l):
            if not (0.5 <= p <= 3.0):
                raise ValidationError(f"exponent {p} outside [0.5, 3]")
        if self.knee_mult < 1.0:
            raise ValidationError("knee multiplier must be >= 1")
        if self.k_age < 0:
            raise ValidationError("k_age must be >= 0")

    def mode_fractions(self, efc: float) -> tuple[float, float, float]:
        """(lli, lam_p, lam_n) at ``efc``; each capped below 0.95."""
        t = efc / 1000.0
        lam_p = self.a_p * t**self.p_p
        lam_n = self.a_n * t**self.p_n
        lli = self.a_l * t**self.p_l
        if efc > self.knee_efc:
            at_knee = self.a_l * (self.knee_efc / 1000.0) ** self.p_l
            lli = at_knee + self.knee_mult * (lli - at_knee)
        cap = lambda x: min(x, 0.95)
        return cap(lli), cap(lam_p), cap(lam_n)


@dataclass(frozen=True)
class DegradationPriors:
    """Population-level distributions the per-cell scenarios draw from."""

    lli_rate: float = 0.28
    lli_exponent: tuple[float, float] = (0.9, 1.3)
    lam_p_rate: float = 0.17
    lam_p_exponent: tuple[float, float] = (0.9, 1.3)
    lam_n_rate: float = 0.17
    lam_n_exponent: tuple[float, float] = (0.9, 1.3)
    # cell-to-cell dispersion splits into a severity factor shared by all
    # three modes (a bad cell is bad across the board) plus smaller
    # independent per-mode jitter
    jitter_shared: float = 0.35
    jitter_sigma: float = 0.20
    knee_efc: tuple[float, float] = (350.0, 900.0)
    knee_mult: tuple[float, float] = (1.5, 2.5)
    k_age: tuple[float, float] = (0.8, 1.2)
    rate_severity: float = 0.45  # aging multiplier slope per unit charge C-rate from 1C


@dataclass(frozen=True)
class WindowPolicy:
    """How partial windows are drawn from an operating trace.

    ``uniform-pair`` draws (start, end) uniformly over all admissible
    pairs; ``uniform-start`` fixes the span at the minimum so both
    endpoint marginals are exactly uniform; ``full`` returns the whole
    trace. ``min_span_fraction`` is relative to nominal capacity.
    """

    kind: str = "uniform-pair"
    min_span_fraction: float = MIN_WINDOW_FRACTION
    q_nominal: float = 4.84

    def __post_init__(self):
        if self.kind not in ("uniform-pair", "uniform-start", "full"):
            raise ValidationError(f"unknown window policy {self.kind!r}")
        if not (0.0 < self.min_span_fraction <= 1.0) or self.q_nominal <= 0:
            raise ValidationError("bad window policy parameters")

    @property
    def min_span_ah(self) -> float:
        return self.min_span_fraction * self.q_nominal


def default_protocols() -> tuple[ProtocolSpec, ...]:
    mk = ProtocolSpec
    return (
        mk("P1", charge_c_rate=0.5, soc_lo=0.0, soc_hi=1.0, diagnostic_period=60.0),
        mk("P2", charge_c_rate=1.0, soc_lo=0.1, soc_hi=0.9, diagnostic_period=50.0),
        mk("P3", charge_c_rate=1.5, soc_lo=0.2, soc_hi=1.0, diagnostic_period=50.0),
        mk("P4", charge_c_rate=2.0, soc_lo=0.0, soc_hi=0.8, diagnostic_period=40.0),
        mk("P5", charge_c_rate=1.0, soc_lo=0.05, soc_hi=0.95, diagnostic_period=50.0),
        mk("P6", charge_c_rate=0.7, soc_lo=0.3, soc_hi=1.0, diagnostic_period=60.0),
        mk("P7", charge_c_rate=1.2, soc_lo=0.0, soc_hi=0.9, diagnostic_period=45.0),
    )


def dynamic_protocols() -> tuple[ProtocolSpec, ...]:
    """Dynamic-discharge conditions: the model input is the discharge trace."""
    mk = ProtocolSpec
    return (
        mk("D1", charge_c_rate=1.0, discharge=DischargeProfile("periodic", 1.0, 2.0, 8),
           soc_lo=0.05, soc_hi=0.95, diagnostic_period=50.0, input_side="discharge"),
        mk("D2", charge_c_rate=1.0, discharge=DischargeProfile("drive", 1.0, 2.5, 12),
           soc_lo=0.0, soc_hi=1.0, diagnostic_period=50.0, input_side="discharge"),
        mk("D3", charge_c_rate=1.5, discharge=DischargeProfile("periodic", 1.2, 1.8, 6),
           soc_lo=0.1, soc_hi=1.0, diagnostic_period=45.0, input_side="discharge"),
    )


@dataclass(frozen=True)
class FleetConfig:
    """Everything the generator needs besides the seed."""

    n_cells: int = 100
    q_nominal: float = 4.84
    v_max: float = 4.2
    v_min: float = 3.0
    cp_fresh: float = 5.5
    cn_fresh: float = 4.84 / 0.89
    r0: float = 0.030  # ohmic overpotential in V per unit C-rate
    sigma_v: float = 0.002
    ocv_points: int = 161
    segment_points: int = 128
    windows_per_diagnostic: int = 3
    max_efc: float = 2400.0
    soh_floor: float = 0.70
    priors: DegradationPriors = field(default_factory=DegradationPriors)
    window: WindowPolicy = field(default_factory=WindowPolicy)
    protocols: tuple[ProtocolSpec, ...] = field(default_factory=default_protocols)

    def __post_init__(self):
        if self.n_cells < 4:
            raise ValidationError("need >= 4 cells")
        if len(self.protocols) < 2:
            raise ValidationError("need >= 2 protocols")
        if not (0 < self.v_min < self.v_max):
            raise ValidationError("bad voltage window")
        if min(self.q_nominal, self.cp_fresh, self.cn_fresh) <= 0:
            raise ValidationError("capacities must be > 0")
        if self.r0 < 0 or self.sigma_v < 0:
            raise ValidationError("r0 and sigma_v must be >= 0")
        if self.ocv_points < 16 or self.segment_points < 16:
            raise ValidationError("curve sampling too coarse")
        if self.windows_per_diagnostic < 1:
            raise ValidationError("need >= 1 window per diagnostic")
        for proto in self.protocols:
            span = (proto.soc_hi - proto.soc_lo) * self.q_nominal
            if span < self.window.min_span_ah:
                raise ValidationError(
                    f"protocol {proto.protocol_id} window narrower than the minimum span"
                )


@dataclass(frozen=True)
class DiagnosticObservation:
    """One diagnostic cycle plus the operating windows that follow it."""

    efc: float
    soh: float
    ocv: PseudoOcvCurve
    segments: tuple[ChargeSegment, ...]
    true_state: MechanisticState | None = None

    def __post_init__(self):
        if self.efc < 0 or not math.isfinite(self.efc):
            raise ValidationError(f"bad efc {self.efc}")
        if not (0.0 < self.soh <= 1.5):
            raise ValidationError(f"bad soh {self.soh}")
        if len(self.segments) == 0:
            raise ValidationError("observation needs at least one segment")
        object.__setattr__(self, "segments", tuple(self.segments))


@dataclass(frozen=True)
class CellRecord:
    cell_id: str
    protocol_id: str
    diagnostics: tuple[DiagnosticObservation, ...]

    def __post_init__(self):
        diags = tuple(self.diagnostics)
        efcs = [d.efc for d in diags]
        if any(b <= a for a, b in zip(efcs, efcs[1:])):
            raise ValidationError(f"cell {self.cell_id}: diagnostics must be EFC-ordered")
        object.__setattr__(self, "diagnostics", diags)


# -- config serialization ------------------------------------------------


def config_to_ini(config: FleetConfig) -> str:
    cp = configparser.ConfigParser()
    cp["fleet"] = {
        "n_cells": repr(config.n_cells),
        "max_efc": repr(config.max_efc),
        "soh_floor": repr(config.soh_floor),
        "windows_per_diagnostic": repr(config.windows_per_diagnostic),
    }
    cp["cell"] = {
        "q_nominal": repr(config.q_nominal),
        "v_max": repr(config.v_max),
        "v_min": repr(config.v_min),
        "cp_fresh": repr(config.cp_fresh),
        "cn_fresh": repr(config.cn_fresh),
        "r0": repr(config.r0),
        "sigma_v": repr(config.sigma_v),
        "ocv_points": repr(config.ocv_points),
        "segment_points": repr(config.segment_points),
    }
    pri = config.priors
    cp["degradation"] = {
        "lli_rate": repr(pri.lli_rate),
        "lli_exponent": f"{pri.lli_exponent[0]!r}, {pri.lli_exponent[1]!r}",
        "lam_p_rate": repr(pri.lam_p_rate),
        "lam_p_exponent": f"{pri.lam_p_exponent[0]!r}, {pri.lam_p_exponent[1]!r}",
        "lam_n_rate": repr(pri.lam_n_rate),
        "lam_n_exponent": f"{pri.lam_n_exponent[0]!r}, {pri.lam_n_exponent[1]!r}",
        "jitter_sigma": repr(pri.jitter_sigma),
        "knee_efc": f"{pri.knee_efc[0]!r}, {pri.knee_efc[1]!r}",
        "knee_mult": f"{pri.knee_mult[0]!r}, {pri.knee_mult[1]!r}",
        "k_age": f"{pri.k_age[0]!r}, {pri.k_age[1]!r}",
        "rate_severity": repr(pri.rate_severity),
    }
    cp["window"] = {
        "kind": config.window.kind,
        "min_span_fraction": repr(config.window.min_span_fraction),
    }
    for proto in config.protocols:
        cp[f"protocol {proto.protocol_id}"] = {
            "charge_c_rate": repr(proto.charge_c_rate),
            "discharge_kind": proto.discharge.kind,
            "discharge_c_rate": repr(proto.discharge.c_rate),
            "discharge_high_mult": repr(proto.discharge.high_mult),
            "discharge_phases": repr(proto.discharge.phases),
            "soc_lo": repr(proto.soc_lo),
            "soc_hi": repr(proto.soc_hi),
            "diagnostic_period": repr(proto.diagnostic_period),
            "diagnostic_c_rate": repr(proto.diagnostic_c_rate),
            "input_side": proto.input_side,
        }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _pair(text: str) -> tuple[float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 2:
        raise ParseError(f"expected two comma-separated numbers, got {text!r}")
    return parts[0], parts[1]


def config_from_ini(text: str) -> FleetConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
        fleet, cell, deg, win = cp["fleet"], cp["cell"], cp["degradation"], cp["window"]
        priors = DegradationPriors(
            lli_rate=float(deg["lli_rate"]),
            lli_exponent=_pair(deg["lli_exponent"]),
            lam_p_rate=float(deg["lam_p_rate"]),
            lam_p_exponent=_pair(deg["lam_p_exponent"]),
            lam_n_rate=float(deg["lam_n_rate"]),
            lam_n_exponent=_pair(deg["lam_n_exponent"]),
            jitter_sigma=float(deg["jitter_sigma"]),
            knee_efc=_pair(deg["knee_efc"]),
            knee_mult=_pair(deg["knee_mult"]),
            k_age=_pair(deg["k_age"]),
            rate_severity=float(deg["rate_severity"]),
        )
        protocols = []
        for section in cp.sections():
            if not section.startswith("protocol "):
                continue
            sec = cp[section]
            protocols.append(
                ProtocolSpec(
                    protocol_id=section.split(" ", 1)[1],
                    charge_c_rate=float(sec["charge_c_rate"]),
                    discharge=DischargeProfile(
                        kind=sec["discharge_kind"],
                        c_rate=float(sec["discharge_c_rate"]),
                        high_mult=float(sec["discharge_high_mult"]),
                        phases=int(sec["discharge_phases"]),
                    ),
                    soc_lo=float(sec["soc_lo"]),
                    soc_hi=float(sec["soc_hi"]),
                    diagnostic_period=float(sec["diagnostic_period"]),
                    diagnostic_c_rate=float(sec["diagnostic_c_rate"]),
                    input_side=sec["input_side"],
                )
            )
        q_nominal = float(cell["q_nominal"])
        return FleetConfig(
            n_cells=int(fleet["n_cells"]),
            max_efc=float(fleet["max_efc"]),
            soh_floor=float(fleet["soh_floor"]),
            windows_per_diagnostic=int(fleet["windows_per_diagnostic"]),
            q_nominal=q_nominal,
            v_max=float(cell["v_max"]),
            v_min=float(cell["v_min"]),
            cp_fresh=float(cell["cp_fresh"]),
            cn_fresh=float(cell["cn_fresh"]),
            r0=float(cell["r0"]),
            sigma_v=float(cell["sigma_v"]),
            ocv_points=int(cell["ocv_points"]),
            segment_points=int(cell["segment_points"]),
            priors=priors,
            window=WindowPolicy(
                kind=win["kind"],
                min_span_fraction=float(win["min_span_fraction"]),
                q_nominal=q_nominal,
            ),
            protocols=tuple(protocols),
        )
    except (KeyError, ValueError, configparser.Error) as exc:
        raise ParseError(f"bad fleet config: {exc}") from exc


def config_hash(config: FleetConfig) -> str:
    return hashlib.sha256(config_to_ini(config).encode()).hexdigest()


def dynamic_config(n_cells: int = 24) -> FleetConfig:
    return FleetConfig(n_cells=n_cells, protocols=dynamic_protocols())


# -- generation ----------------------------------------------------------


def calibrate_fresh_inventory(config: FleetConfig, ocp_p: OcpTable, ocp_n: OcpTable) -> float:
    """Lithium inventory making the fresh diagnostic capacity equal nominal.

    The diagnostic curve sits one resting overpotential below the true
    OCV, so the fresh inventory is solved against the shifted cutoff;
    with it, soh labels are exactly 1 at zero degradation. The search
    runs over the top-of-charge anode stoichiometry (capacity is
    monotone in it, unlike in raw inventory) with the cathode side
    pinned to ``v_max``.
    """
    dv = config.protocols[0].diagnostic_c_rate * config.r0
    v_cut = config.v_min + dv

    def at_top(x0: float) -> tuple[float, float]:
        target = config.v_max + ocp_n(x0)
        y0 = float(np.interp(target, ocp_p.potential[::-1], ocp_p.stoich[::-1]))
        state = MechanisticState(x0, y0, config.cp_fresh, config.cn_fresh)
        _, q_cell = derive_ocv(state, ocp_p, ocp_n, v_cut, config.v_max, m=16)
        return q_cell, x0 * config.cn_fresh + y0 * config.cp_fresh

    lo, hi = 0.6, 1.0
    if at_top(hi)[0] < config.q_nominal:
        raise ScenarioError("fresh electrodes cannot reach nominal capacity")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if at_top(mid)[0] < config.q_nominal:
            lo = mid
        else:
            hi = mid
    return at_top(0.5 * (lo + hi))[1]


def fleet_fresh_state(config: FleetConfig, ocp_p: OcpTable, ocp_n: OcpTable) -> MechanisticState:
    """Fresh reference state used for degradation-mode bookkeeping."""
    n_li = calibrate_fresh_inventory(config, ocp_p, ocp_n)
    top = solve_top_of_charge(n_li, config.cp_fresh, config.cn_fresh, ocp_p, ocp_n, config.v_max)
    return MechanisticState(top.x0, top.y0, config.cp_fresh, config.cn_fresh)


def _sample_scenario(priors: DegradationPriors, protocol: ProtocolSpec, rng) -> DegradationScenario:
    severity = max(0.5, 1.0 + priors.rate_severity * (protocol.charge_c_rate - 1.0))
    shared = float(rng.lognormal(0.0, priors.jitter_shared))
    jitter = lambda: shared * float(rng.lognormal(0.0, priors.jitter_sigma))
    return DegradationScenario(
        a_n=priors.lam_n_rate * jitter(),
        p_n=float(rng.uniform(*priors.lam_n_exponent)),
        a_p=priors.lam_p_rate * jitter(),
        p_p=float(rng.uniform(*priors.lam_p_exponent)),
        a_l=priors.lli_rate * jitter() * severity,
        p_l=float(rng.uniform(*priors.lli_exponent)),
        knee_efc=float(rng.uniform(*priors.knee_efc)),
        knee_mult=float(rng.uniform(*priors.knee_mult)),
        k_age=float(rng.uniform(*priors.k_age)),
    )


def _growth(k_age: float, soh: float) -> float:
    """Resistance growth factor; clamped so fresh cells sit exactly at 1."""
    return 1.0 + k_age * max(0.0, 1.0 - soh)


def _round_curve(q: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.round(q, _CURVE_DECIMALS), np.round(v, _CURVE_DECIMALS)


def _diagnostic_ocv(state, ocp_p, ocp_n, config, dv) -> tuple[PseudoOcvCurve, float]:
    """Diagnostic-rate discharge: true OCV family shifted down by ``dv``.

    Deriving against the shifted cutoff and then subtracting ``dv``
    keeps the recorded capacity exactly consistent with the recorded
    curve.
    """
    curve, q_cell = derive_ocv(
        state, ocp_p, ocp_n, config.v_min + dv, config.v_max, m=config.ocv_points
    )
    q, v = _round_curve(curve.q, curve.v - dv)
    return PseudoOcvCurve(q=q, v=v), q_cell


def _schedule(profile: DischargeProfile, rng) -> np.ndarray:
    """Per-phase C-rates across the discharge window."""
    if profile.kind == "constant":
        return np.full(1, profile.c_rate)
    if profile.kind == "periodic":
        rates = np.full(profile.phases, profile.c_rate)
        rates[1::2] *= profile.high_mult
        return rates
    # drive: seeded random walk clipped to a sane band
    steps = rng.normal(0.0, 0.35, size=profile.phases).cumsum()
    rates = profile.c_rate * np.exp(steps - steps.mean())
    return np.clip(rates, 0.2 * profile.c_rate, profile.high_mult * profile.c_rate)


def _operating_trace(ocv, q_cell, soh, protocol, scenario, config, rng) -> ChargeSegment:
    """The first full operating trace after a diagnostic.

    Charge side: V = OCV(soc) + c_rate*r0*growth + noise, swept lo→hi.
    Discharge side: V = OCV(soc) − rate(soc)*r0*growth + noise, hi→lo,
    with the protocol's piecewise C-rate schedule.
    """
    lo, hi = protocol.soc_lo, protocol.soc_hi
    n = config.segment_points
    throughput = np.linspace(0.0, (hi - lo) * q_cell, n)
    growth = _growth(scenario.k_age, soh)
    noise = rng.normal(0.0, config.sigma_v, size=n) if config.sigma_v > 0 else np.zeros(n)
    if protocol.input_side == "charge":
        soc = lo + throughput / q_cell
        v = ocv.voltage_at((1.0 - soc) * q_cell)
        v = v + protocol.charge_c_rate * config.r0 * growth + noise
        q, v = _round_curve(throughput, v)
        return ChargeSegment(v=v, q=q, efc=0.0, c_rate=protocol.charge_c_rate, direction="charge")
    rates = _schedule(protocol.discharge, rng)
    soc = hi - throughput / q_cell
    phase = np.minimum((( hi - soc) / (hi - lo)) * len(rates), len(rates) - 1).astype(int)
    rate_at = rates[phase]
    v = ocv.voltage_at((1.0 - soc) * q_cell) - rate_at * config.r0 * growth + noise
    q, v = _round_curve(throughput, v)
    return ChargeSegment(
        v=v, q=q, efc=0.0, c_rate=float(np.mean(rate_at)), direction="discharge"
    )


def sample_partial_window(curve: ChargeSegment, policy: WindowPolicy, rng) -> ChargeSegment:
    """Draw a random throughput window from a full operating trace.

    Keeps the original interior samples, interpolates exact endpoint
    values, and re-zeroes throughput at the window start.
    """
    total = curve.span
    m = policy.min_span_ah
    if total < m - 1e-12:
        raise WindowError(f"trace span {total:.3f} Ah narrower than minimum window {m:.3f} Ah")
    if policy.kind == "full":
        t0, t1 = 0.0, total
    elif policy.kind == "uniform-start":
        t0 = float(rng.uniform(0.0, max(total - m, 0.0)))
        t1 = min(t0 + m, total)
    else:  # uniform over all admissible (start, end) pairs
        for _ in range(10_000):
            t0, t1 = np.sort(rng.uniform(0.0, total, size=2))
            if t1 - t0 >= m:
                break
        else:
            raise WindowError("window rejection sampling failed")
    q, v = curve.q, curve.v
    i0 = int(np.searchsorted(q, t0, side="right"))
    i1 = int(np.searchsorted(q, t1, side="left"))
    qs = np.concatenate(([t0], q[i0:i1], [t1]))
    vs = np.concatenate(([np.interp(t0, q, v)], v[i0:i1], [np.interp(t1, q, v)]))
    keep = np.ones(len(qs), dtype=bool)
    keep[1:] = np.diff(qs) > 1e-12
    qs, vs = qs[keep], vs[keep]
    if len(qs) < 8:  # very coarse traces: fall back to uniform resampling
        qs = np.linspace(t0, t1, 16)
        vs = np.interp(qs, q, v)
    return ChargeSegment(
        v=vs, q=qs - qs[0], efc=curve.efc, c_rate=curve.c_rate, direction=curve.direction
    )


def _simulate_cell(cell_id, protocol, scenario, config, tables, fresh_n_li, rng) -> CellRecord:
    ocp_p, ocp_n = tables
    diagnostics = []
    efc = 0.0
    while efc <= config.max_efc:
        lli, lam_p, lam_n = scenario.mode_fractions(efc)
        cp = config.cp_fresh * (1.0 - lam_p)
        cn = config.cn_fresh * (1.0 - lam_n)
        n_li = fresh_n_li * (1.0 - lli)
        if n_li > cp + cn:
            raise ScenarioError(f"cell {cell_id}: inventory exceeds electrode capacities at {efc} EFC")
        try:
            top = solve_top_of_charge(n_li, cp, cn, ocp_p, ocp_n, config.v_max)
        except Infeasible as exc:
            raise ScenarioError(f"cell {cell_id}: {exc}") from exc
        state = MechanisticState(top.x0, top.y0, cp, cn)
        # resting overpotential grows with pristine-capacity loss
        _, q_rest = derive_ocv(state, ocp_p, ocp_n, config.v_min, config.v_max, m=16)
        soh_rest = q_rest / config.q_nominal
        dv = protocol.diagnostic_c_rate * config.r0 * _growth(scenario.k_age, soh_rest)
        ocv, q_cell = _diagnostic_ocv(state, ocp_p, ocp_n, config, dv)
        soh = ocv.capacity / config.q_nominal
        if soh < config.soh_floor:
            break
        trace = _operating_trace(ocv, ocv.capacity, soh, protocol, scenario, config, rng)
        trace = replace_efc(trace, efc)
        segments = tuple(
            sample_partial_window(trace, config.window, rng)
            for _ in range(config.windows_per_diagnostic)
        )
        diagnostics.append(
            DiagnosticObservation(efc=efc, soh=soh, ocv=ocv, segments=segments, true_state=state)
        )
        efc += protocol.diagnostic_period
    if not diagnostics:
        raise ScenarioError(f"cell {cell_id}: no diagnostics before the soh floor")
    return CellRecord(cell_id=cell_id, protocol_id=protocol.protocol_id, diagnostics=tuple(diagnostics))


def replace_efc(seg: ChargeSegment, efc: float) -> ChargeSegment:
    return ChargeSegment(v=seg.v, q=seg.q, efc=efc, c_rate=seg.c_rate, direction=seg.direction)


def generate_fleet(config: FleetConfig, seed: int) -> list[CellRecord]:
    """Simulate every cell; deterministic given (config, seed)."""
    tables = synthetic_tables()
    fresh_n_li = calibrate_fresh_inventory(config, *tables)
    children = np.random.SeedSequence(seed).spawn(config.n_cells)
    records = []
    for i in range(config.n_cells):
        rng = np.random.default_rng(children[i])
        protocol = config.protocols[i % len(config.protocols)]
        scenario = _sample_scenario(config.priors, protocol, rng)
        records.append(
            _simulate_cell(f"C{i:03d}", protocol, scenario, config, tables, fresh_n_li, rng)
        )
    return records


# -- readouts ------------------------------------------------------------


def cycle_life(record: CellRecord, eol: float = 0.80) -> float:
    """EFC at which soh first crosses ``eol``, linearly interpolated.

    Touching the threshold exactly counts as reaching it.
    """
    prev = None
    for obs in record.diagnostics:
        if obs.soh <= eol:
            if prev is None:
                return obs.efc
            frac = (prev.soh - eol) / (prev.soh - obs.soh)
            return prev.efc + frac * (obs.efc - prev.efc)
        prev = obs
    raise CensoredCell(f"cell {record.cell_id} never reached soh {eol}")


def split_by_protocol(records, test_fraction: float, seed: int):
    """Group-disjoint (train, test) split: whole protocols move together."""
    if not (0.0 < test_fraction < 1.0):
        raise SplitError(f"test fraction {test_fraction} not in (0, 1)")
    protocols = sorted({r.protocol_id for r in records})
    if len(protocols) < 2:
        raise SplitError("need >= 2 protocols for a group-disjoint split")
    rng = np.random.default_rng(seed)
    order = [protocols[i] for i in rng.permutation(len(protocols))]
    target = test_fraction * len(records)
    test_ids: set[str] = set()
    count = 0
    for pid in order:
        if count >= target:
            break
        if len(test_ids) == len(protocols) - 1:
            break  # leave at least one protocol for training
        test_ids.add(pid)
        count += sum(1 for r in records if r.protocol_id == pid)
    train = [r for r in records if r.protocol_id not in test_ids]
    test = [r for r in records if r.protocol_id in test_ids]
    if not train or not test:
        raise SplitError("degenerate protocol split")
    return train, test


def split_cells(records, fraction: float, seed: int):
    """Plain cell-level split (e.g. validation carve-out), seeded."""
    if len(records) < 2:
        raise SplitError("need >= 2 cells to split")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(records))
    n_held = min(max(1, int(round(fraction * len(records)))), len(records) - 1)
    held_idx = set(perm[:n_held].tolist())
    kept = [r for i, r in enumerate(records) if i not in held_idx]
    held = [r for i, r in enumerate(records) if i in held_idx]
    return kept, held


# -- dataset serialization ------------------------------------------------


def _segment_to_obj(seg: ChargeSegment) -> dict:
    return {
        "q": seg.q.tolist(),
        "v": seg.v.tolist(),
        "efc": seg.efc,
        "c_rate": seg.c_rate,
        "direction": seg.direction,
    }


def _segment_from_obj(obj: dict) -> ChargeSegment:
    return ChargeSegment(
        v=np.asarray(obj["v"]),
        q=np.asarray(obj["q"]),
        efc=float(obj["efc"]),
        c_rate=None if obj.get("c_rate") is None else float(obj["c_rate"]),
        direction=obj.get("direction", "charge"),
    )


def write_dataset(records, path) -> None:
    """JSON Lines, one diagnostic observation per line."""
    path = Path(path)
    with open(path, "w") as fh:
        for record in records:
            for obs in record.diagnostics:
                line = {
                    "cell_id": record.cell_id,
                    "protocol_id": record.protocol_id,
                    "efc": obs.efc,
                    "soh": obs.soh,
                    "ocv": {"q": obs.ocv.q.tolist(), "v": obs.ocv.v.tolist()},
                    "segments": [_segment_to_obj(s) for s in obs.segments],
                    "true_state": None
                    if obs.true_state is None
                    else {
                        "x0": obs.true_state.x0,
                        "y0": obs.true_state.y0,
                        "cp": obs.true_state.cp,
                        "cn": obs.true_state.cn,
                    },
                }
                fh.write(json.dumps(line, separators=(",", ":")) + "\n")


def read_dataset(path) -> list[CellRecord]:
    path = Path(path)
    cells: dict[str, dict] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                state = obj.get("true_state")
                obs = DiagnosticObservation(
                    efc=float(obj["efc"]),
                    soh=float(obj["soh"]),
                    ocv=PseudoOcvCurve(
                        q=np.asarray(obj["ocv"]["q"]), v=np.asarray(obj["ocv"]["v"])
                    ),
                    segments=tuple(_segment_from_obj(s) for s in obj["segments"]),
                    true_state=None
                    if state is None
                    else MechanisticState(
                        x0=float(state["x0"]),
                        y0=float(state["y0"]),
                        cp=float(state["cp"]),
                        cn=float(state["cn"]),
                    ),
                )
                cell_id, protocol_id = obj["cell_id"], obj["protocol_id"]
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ParseError(f"{path}: bad dataset line: {exc}", line=lineno) from exc
            slot = cells.setdefault(cell_id, {"protocol_id": protocol_id, "diagnostics": []})
            if slot["protocol_id"] != protocol_id:
                raise ParseError(f"{path}: cell {cell_id} under two protocols", line=lineno)
            slot["diagnostics"].append(obs)
    return [
        CellRecord(cell_id=cid, protocol_id=slot["protocol_id"], diagnostics=tuple(slot["diagnostics"]))
        for cid, slot in cells.items()
    ]


def write_manifest(path, config: FleetConfig, seed: int, records) -> dict:
    manifest = {
        "config_hash": config_hash(config),
        "seed": seed,
        "n_cells": len(records),
        "n_observations": sum(len(r.diagnostics) for r in records),
        "q_nominal": config.q_nominal,
        "v_min": config.v_min,
        "v_max": config.v_max,
        "protocols": sorted({r.protocol_id for r in records}),
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
