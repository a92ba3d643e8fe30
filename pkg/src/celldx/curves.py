"""Capacity-voltage curve primitives.

A full low-rate discharge is represented by :class:`PseudoOcvCurve`
(capacity in Ah against voltage in V); a truncated operating window by
:class:`ChargeSegment`. Everything downstream works on linear
interpolants of these two types, so resampling, inversion, and
differentiation all live here.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateCurve,
    InvalidWindow,
    NotInvertible,
    OutOfRange,
    ParseError,
    WindowError,
)

# Windows shorter than this fraction of nominal capacity are rejected at
# ingestion; shorter spans carry too little of the voltage profile.
MIN_WINDOW_FRACTION = 0.10

# Charge segments may wiggle by this much (V) after smoothing and still
# count as non-decreasing.
CHARGE_MONOTONE_TOL = 5e-3

# Default smoothing window for dV/dQ.
DEFAULT_DVDQ_WINDOW = 9

_MIN_CURVE_LEN = 8
_MIN_SPAN_AH = 1e-6


def _as_readonly(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PseudoOcvCurve:
    """Full discharge curve: capacity samples ``q`` (Ah) and voltages ``v``."""

    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        q = _as_readonly(self.q)
        v = _as_readonly(self.v)
        if q.ndim != 1 or v.ndim != 1 or q.shape != v.shape:
            raise DegenerateCurve("q and v must be 1-d arrays of equal length")
        if len(q) < _MIN_CURVE_LEN:
            raise DegenerateCurve(f"curve needs >= {_MIN_CURVE_LEN} samples, got {len(q)}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(v))):
            raise DegenerateCurve("curve contains non-finite values")
        if q[0] != 0.0:
            raise DegenerateCurve(f"capacity axis must start at 0, got {q[0]}")
        if np.any(np.diff(q) <= 0):
            raise DegenerateCurve("capacity samples must be strictly increasing")
        if np.any(np.diff(v) > 1e-6):
            raise DegenerateCurve("discharge voltage must be non-increasing")
        # Tiny upward wiggles below the tolerance are flattened so the
        # stored curve is exactly non-increasing.
        v = _as_readonly(np.minimum.accumulate(v))
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "v", v)

    @property
    def capacity(self) -> float:
        """Total discharge capacity in Ah."""
        return float(self.q[-1])

    def voltage_at(self, q):
        """Voltage at capacity ``q`` by linear interpolation."""
        return np.interp(q, self.q, self.v)

    def to_json(self) -> str:
        return json.dumps({"q": self.q.tolist(), "v": self.v.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "PseudoOcvCurve":
        try:
            obj = json.loads(text)
            return cls(q=np.asarray(obj["q"]), v=np.asarray(obj["v"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"bad curve JSON: {exc}") from exc

    @classmethod
    def from_csv(cls, path) -> "PseudoOcvCurve":
        """Load a curve from CSV with header ``q_ah,v_v``."""
        q, v = _read_two_column_csv(path, ("q_ah", "v_v"))
        return cls(q=q, v=v)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["q_ah", "v_v"])
            writer.writerows(zip(self.q.tolist(), self.v.tolist()))


@dataclass(frozen=True)
class ChargeSegment:
    """Truncated operating window used as model input.

    ``q`` is throughput since window start (Ah, starts at 0), ``efc`` the
    cumulative equivalent full cycles at the window, ``c_rate`` the mean
    current in C if known. Charge segments must be non-decreasing in
    voltage within tolerance after smoothing; dynamic discharge segments
    carry no monotonicity requirement.
    """

    v: np.ndarray
    q: np.ndarray
    efc: float
    c_rate: float | None = None
    direction: str = "charge"

    def __post_init__(self):
        v = _as_readonly(self.v)
        q = _as_readonly(self.q)
        if q.ndim != 1 or v.ndim != 1 or q.shape != v.shape:
            raise WindowError("q and v must be 1-d arrays of equal length")
        if len(q) < _MIN_CURVE_LEN:
            raise WindowError(f"segment needs >= {_MIN_CURVE_LEN} samples, got {len(q)}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(v))):
            raise WindowError("segment contains non-finite values")
        if q[0] != 0.0:
            raise WindowError("throughput must be re-zeroed at window start")
        if np.any(np.diff(q) <= 0):
            raise WindowError("throughput must be strictly increasing")
        if self.direction not in ("charge", "discharge"):
            raise WindowError(f"unknown direction {self.direction!r}")
        if not np.isfinite(self.efc) or self.efc < 0:
            raise WindowError(f"efc must be finite and >= 0, got {self.efc}")
        if self.c_rate is not None and not self.c_rate > 0:
            raise WindowError(f"c_rate must be > 0, got {self.c_rate}")
        if self.direction == "charge":
            smoothed = moving_average(v, min(DEFAULT_DVDQ_WINDOW, _odd_below(len(v) - 1)))
            if np.any(np.diff(smoothed) < -CHARGE_MONOTONE_TOL):
                raise WindowError("charge voltage decreases beyond tolerance")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "q", q)

    @property
    def span(self) -> float:
        """Window throughput in Ah."""
        return float(self.q[-1])

    def to_json(self) -> str:
        return json.dumps(
            {
                "q": self.q.tolist(),
                "v": self.v.tolist(),
                "efc": self.efc,
                "c_rate": self.c_rate,
                "direction": self.direction,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ChargeSegment":
        try:
            obj = json.loads(text)
            return cls(
                v=np.asarray(obj["v"]),
                q=np.asarray(obj["q"]),
                efc=float(obj["efc"]),
                c_rate=None if obj.get("c_rate") is None else float(obj["c_rate"]),
                direction=obj.get("direction", "charge"),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad segment JSON: {exc}") from exc


@dataclass(frozen=True)
class ResampledSegment:
    """Fixed-width feature view of a segment: voltages at ``p`` equally
    spaced throughput points plus the scalar channels."""

    v_grid: np.ndarray
    q_span: float
    efc: float
    c_rate: float | None = None

    def __post_init__(self):
        grid = _as_readonly(self.v_grid)
        if grid.ndim != 1 or not np.all(np.isfinite(grid)):
            raise WindowError("v_grid must be a finite 1-d array")
        object.__setattr__(self, "v_grid", grid)


def _odd_below(n: int) -> int:
    k = n if n % 2 == 1 else n - 1
    return max(k, 1)


def check_min_window(segment: ChargeSegment, nominal_capacity: float) -> None:
    """Reject windows below the configured throughput floor."""
    floor = MIN_WINDOW_FRACTION * nominal_capacity
    if segment.span < floor:
        raise WindowError(
            f"window throughput {segment.span:.4f} Ah below minimum {floor:.4f} Ah"
        )


def resample_by_capacity(curve, n: int) -> np.ndarray:
    """Voltages at ``n`` equally spaced capacity points spanning the curve.

    Endpoint voltages are returned bitwise-identical to the input's.
    """
    if n < 2:
        raise DegenerateCurve(f"need n >= 2 grid points, got {n}")
    q, v = curve.q, curve.v
    span = q[-1] - q[0]
    if span < _MIN_SPAN_AH:
        raise DegenerateCurve(f"capacity span {span} Ah is degenerate")
    grid = np.linspace(q[0], q[-1], n)
    out = np.interp(grid, q, v)
    out[0] = v[0]
    out[-1] = v[-1]
    return out


def invert_voltage_to_capacity(curve: PseudoOcvCurve, voltage: float) -> float:
    """Capacity at which the discharge curve crosses ``voltage``.

    Flat spans resolve to the midpoint of the span.
    """
    q, v = curve.q, curve.v
    if np.any(np.diff(v) > 0):
        raise NotInvertible("curve voltage is not monotone non-increasing")
    if voltage > v[0] or voltage < v[-1]:
        raise OutOfRange(f"voltage {voltage} outside [{v[-1]}, {v[0]}]")
    neg = -v  # non-decreasing
    lo = int(np.searchsorted(neg, -voltage, side="left"))
    hi = int(np.searchsorted(neg, -voltage, side="right"))
    if hi > lo:
        # exact hits: midpoint of the flat span
        return float(0.5 * (q[lo] + q[hi - 1]))
    i = lo - 1
    frac = (v[i] - voltage) / (v[i] - v[i + 1])
    return float(q[i] + frac * (q[i + 1] - q[i]))


def moving_average(v: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average with a symmetric shrinking window at edges."""
    if window % 2 != 1 or window < 1:
        raise InvalidWindow(f"window must be odd and >= 1, got {window}")
    n = len(v)
    if window >= n:
        raise InvalidWindow(f"window {window} must be < curve length {n}")
    half = window // 2
    csum = np.concatenate(([0.0], np.cumsum(v)))
    idx = np.arange(n)
    h = np.minimum(half, np.minimum(idx, n - 1 - idx))
    lo = idx - h
    hi = idx + h + 1
    return (csum[hi] - csum[lo]) / (hi - lo)


def differential_voltage(curve, window: int = DEFAULT_DVDQ_WINDOW) -> np.ndarray:
    """dV/dQ in V/Ah: moving-average smoothing then central differences.

    Output has the curve's length; endpoints use one-sided differences.
    """
    if window % 2 != 1 or window < 3:
        raise InvalidWindow(f"window must be odd and >= 3, got {window}")
    q, v = curve.q, curve.v
    vs = moving_average(v, window)
    out = np.empty_like(vs)
    out[1:-1] = (vs[2:] - vs[:-2]) / (q[2:] - q[:-2])
    out[0] = (vs[1] - vs[0]) / (q[1] - q[0])
    out[-1] = (vs[-1] - vs[-2]) / (q[-1] - q[-2])
    return out


def featurize_segment(seg: ChargeSegment, p: int) -> ResampledSegment:
    """Resample a segment onto ``p`` equally spaced throughput points.

    Model artifacts pin p (default 32); anything the resampler accepts
    is allowed here so small grids stay usable in scripts.
    """
    v_grid = resample_by_capacity(seg, p)
    return ResampledSegment(
        v_grid=v_grid, q_span=seg.span, efc=seg.efc, c_rate=seg.c_rate
    )


def _read_two_column_csv(path, header: tuple[str, str]):
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise ParseError(f"{path}: empty file")
    got = tuple(h.strip() for h in rows[0])
    if got != header:
        raise ParseError(f"{path}: expected header {header}, got {got}")
    first, second = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            first.append(float(row[0]))
            second.append(float(row[1]))
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{path}: bad row {row!r}", line=lineno) from exc
    return np.asarray(first), np.asarray(second)
