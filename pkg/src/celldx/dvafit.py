"""Particle-swarm fit of mechanistic states to measured pseudo-OCV curves.

The independent, slow route to the same answer the encoder learns to
produce: given a full diagnostic curve, search electrode capacities and
stoichiometry offsets until the derived curve matches.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .curves import PseudoOcvCurve, resample_by_capacity
from .errors import EmptyWindow, FitError, InvalidState, ValidationError
from .mechanistic import MechanisticState, StateBounds, degradation_modes, derive_ocv
from .ocp import OcpTable

_RMSE_POINTS = 64
_CAPACITY_WEIGHT = 1.0


@dataclass(frozen=True)
class PsoConfig:
    bounds: StateBounds
    particles: int = 64
    iterations: int = 200
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    velocity_clamp: float = 0.2  # fraction of bound width
    seed: int = 0

    def __post_init__(self):
        if self.particles < 8:
            raise ValidationError(f"particles {self.particles} < 8")
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if not (0.0 < self.velocity_clamp <= 1.0):
            raise ValidationError("velocity clamp must be in (0, 1]")


def _curve_objective(target: PseudoOcvCurve, ocp_p, ocp_n, q_nominal: float):
    """Objective factory: curve RMSE + weighted capacity mismatch.

    Both curves are compared on the same normalized-capacity grid;
    states whose derived window is empty score +inf.
    """
    v_max = float(target.v[0])
    v_min = float(target.v[-1])
    v_target = resample_by_capacity(target, _RMSE_POINTS)
    q_target = target.capacity

    def objective(theta: np.ndarray) -> tuple[float, float]:
        try:
            state = MechanisticState.from_array(theta)
            curve, q_cell = derive_ocv(state, ocp_p, ocp_n, v_min, v_max, m=_RMSE_POINTS)
        except (EmptyWindow, InvalidState):
            return np.inf, np.inf
        rmse = float(np.sqrt(np.mean((curve.v - v_target) ** 2)))
        return rmse + _CAPACITY_WEIGHT * abs(q_cell - q_target) / q_nominal, rmse

    return objective


def _reflect(x: np.ndarray, v: np.ndarray, lower: np.ndarray, upper: np.ndarray):
    """Reflect positions off the box walls, flipping those velocity terms."""
    for bound, is_lower in ((lower, True), (upper, False)):
        over = x < bound if is_lower else x > bound
        if np.any(over):
            x = np.where(over, 2.0 * bound - x, x)
            v = np.where(over, -v, v)
    np.clip(x, lower, upper, out=x)
    return x, v


def pso_fit(
    target: PseudoOcvCurve,
    ocp_p: OcpTable,
    ocp_n: OcpTable,
    cfg: PsoConfig,
    q_nominal: float | None = None,
    objective=None,
) -> tuple[MechanisticState, float]:
    """Global-best PSO over [x0, y0, cp, cn]; deterministic given the seed.

    ``objective`` may be swapped out (tests use closed-form surrogates);
    it must map a length-4 parameter vector to (score, rmse).
    """
    lower, upper = cfg.bounds.lower, cfg.bounds.upper
    width = cfg.bounds.width
    if q_nominal is None:
        q_nominal = target.capacity if target is not None else 1.0
    if objective is None:
        objective = _curve_objective(target, ocp_p, ocp_n, q_nominal)

    rng = np.random.default_rng(cfg.seed)
    n = cfg.particles
    x = rng.uniform(lower, upper, size=(n, 4))
    clamp = cfg.velocity_clamp * width
    v = rng.uniform(-clamp, clamp, size=(n, 4))

    scores = np.empty(n)
    rmses = np.empty(n)
    for i in range(n):
        scores[i], rmses[i] = objective(x[i])
    if not np.any(np.isfinite(scores)):
        raise FitError("every initial particle produced an empty derived window")

    pbest_x = x.copy()
    pbest_s = scores.copy()
    g = int(np.argmin(scores))
    gbest_x, gbest_s, gbest_rmse = x[g].copy(), scores[g], rmses[g]

    for _ in range(cfg.iterations):
        r1 = rng.uniform(size=(n, 4))
        r2 = rng.uniform(size=(n, 4))
        v = (
            cfg.inertia * v
            + cfg.cognitive * r1 * (pbest_x - x)
            + cfg.social * r2 * (gbest_x - x)
        )
        np.clip(v, -clamp, clamp, out=v)
        x = x + v
        x, v = _reflect(x, v, lower, upper)
        for i in range(n):
            s, r = objective(x[i])
            if s < pbest_s[i]:
                pbest_s[i] = s
                pbest_x[i] = x[i]
            if s < gbest_s:
                gbest_s, gbest_rmse = s, r
                gbest_x = x[i].copy()
    return MechanisticState.from_array(gbest_x), float(gbest_rmse)


def fit_dataset(records, ocp_p, ocp_n, cfg: PsoConfig, fresh: MechanisticState | None = None):
    """Fit every observation independently; failures become error rows."""
    rows = []
    for rec in records:
        for obs in rec.diagnostics:
            row = {"cell_id": rec.cell_id, "efc": obs.efc}
            try:
                state, rmse = pso_fit(obs.ocv, ocp_p, ocp_n, cfg)
            except FitError as exc:
                row.update(
                    x0=None, y0=None, cp=None, cn=None,
                    lli=None, lam_p=None, lam_n=None, rmse=None, error=str(exc),
                )
                rows.append(row)
                continue
            row.update(x0=state.x0, y0=state.y0, cp=state.cp, cn=state.cn)
            if fresh is not None:
                modes = degradation_modes(state, fresh)
                row.update(lli=modes.lli, lam_p=modes.lam_p, lam_n=modes.lam_n)
            else:
                row.update(lli=None, lam_p=None, lam_n=None)
            row.update(rmse=rmse, error="")
            rows.append(row)
    return rows


_FIT_COLUMNS = ["cell_id", "efc", "x0", "y0", "cp", "cn", "lli", "lam_p", "lam_n", "rmse", "error"]


def write_fit_table(rows, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_FIT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in _FIT_COLUMNS})
