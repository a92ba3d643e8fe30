"""Evaluation metrics and the task-keyed summary table."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

#: sentinel for r2 on constant targets with nonzero residual
R2_UNDEFINED = float("-inf")


def metrics(predictions, targets) -> tuple[float, float, float]:
    """(rmse, mae, r2) with the standard definitions.

    Constant targets make r2 degenerate: perfect predictions score 1,
    anything else the ``R2_UNDEFINED`` sentinel.
    """
    p = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if p.shape != t.shape:
        raise ShapeError(f"predictions {p.shape} vs targets {t.shape}")
    if p.size == 0:
        raise ShapeError("empty metric inputs")
    err = p - t
    rmse = float(np.sqrt(np.mean(err**2)))
    mae = float(np.mean(np.abs(err)))
    ss_res = float(np.sum(err**2))
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res == 0.0 else R2_UNDEFINED
    else:
        r2 = 1.0 - ss_res / ss_tot
    return rmse, mae, r2


def format_r2(r2: float) -> str:
    return "undefined" if r2 == R2_UNDEFINED else f"{r2:.6f}"


@dataclass
class MetricsTable:
    """Rows keyed by task name; rmse/mae/r2 columns with units."""

    rows: dict = field(default_factory=dict)

    def add(self, task: str, predictions, targets, unit: str = "") -> tuple[float, float, float]:
        rmse, mae, r2 = metrics(predictions, targets)
        self.rows[task] = {"rmse": rmse, "mae": mae, "r2": r2, "unit": unit}
        return rmse, mae, r2

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["task", "rmse", "mae", "r2", "unit"])
        for task, row in self.rows.items():
            writer.writerow([task, row["rmse"], row["mae"], format_r2(row["r2"]), row["unit"]])
        return buf.getvalue()

    def render(self) -> str:
        lines = [f"{'task':<28} {'rmse':>12} {'mae':>12} {'r2':>10}  unit"]
        for task, row in self.rows.items():
            lines.append(
                f"{task:<28} {row['rmse']:>12.6g} {row['mae']:>12.6g} "
                f"{format_r2(row['r2']):>10}  {row['unit']}"
            )
        return "\n".join(lines)
