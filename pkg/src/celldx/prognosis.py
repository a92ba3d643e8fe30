"""Future degradation curves and cycle life from the current state.

The prognosis decoder consumes a single diagnosed snapshot — mechanistic
state, EFC, and SOH — and emits the future (EFC, capacity) trajectory
down to end of life plus a direct point estimate of cycle life. It is
trained on the diagnosis model's own predictions so the deployed chain
never needs historical data.
"""

from __future__ import annotations

import numpy as np
from dataclasses import dataclass

from .artifact import artifact_hash, mlp_state_from_payload, mlp_state_to_payload
from .autodiff import Tensor, hstack, mse
from .diagnosis import DiagnosisArtifact, DiagnosisReport, diagnose, predict_rows
from .errors import ArtifactMismatch, CensoredCell, ShapeError, SplitError, ValidationError
from .nn import Head, Mlp, TrainConfig, apply_heads, train_loop
from .synthfleet import CellRecord, cycle_life

DEFAULT_K = 16
EOL_FRACTION = 0.80
#: bound horizon as a multiple of the largest training cycle life
HORIZON_FACTOR = 5.0


def _softplus_inv(y: float) -> float:
    return float(np.log(np.expm1(y)))


class PrognosisModel:
    """Decoder from [cp, cn, x0, y0, efc, soh] to future trajectories.

    All three heads are positive increments anchored at the current
    operating point, so the EFC sequence is strictly increasing and the
    capacity sequence strictly decreasing by construction.
    """

    N_FEATURES = 6

    def __init__(
        self,
        *,
        k: int,
        feature_mean: np.ndarray,
        feature_std: np.ndarray,
        q_nominal: float,
        eol: float,
        efc_scale: float,
        hidden: tuple[int, ...] = (128, 128, 128),
        seed: int = 0,
    ):
        if k < 2:
            raise ValidationError(f"need k >= 2 future points, got {k}")
        if not (0.0 < eol < 1.0) or efc_scale <= 0:
            raise ValidationError(f"bad eol={eol} or efc_scale={efc_scale}")
        feature_mean = np.asarray(feature_mean, dtype=float)
        feature_std = np.asarray(feature_std, dtype=float)
        if feature_mean.shape != (self.N_FEATURES,) or feature_std.shape != (self.N_FEATURES,):
            raise ArtifactMismatch("normalization statistics must have 6 entries")
        self.k = k
        self.feature_mean = feature_mean
        self.feature_std = np.where(feature_std < 1e-12, 1.0, feature_std)
        self.q_nominal = q_nominal
        self.eol = eol
        self.efc_scale = efc_scale
        self.horizon = HORIZON_FACTOR * efc_scale
        self.hidden = tuple(hidden)
        self.seed = seed
        self.net = Mlp(
            [self.N_FEATURES, *hidden, 2 * k + 1],
            heads=(
                Head("cumulative-softplus", k),
                Head("cumulative-softplus", k),
                Head("softplus", 1),
            ),
            seed=seed,
        )
        # plausible fresh guess: half the scale out to end of life
        self.net.biases[-1].data[:k] = _softplus_inv(0.5 * efc_scale / k)
        self.net.biases[-1].data[k : 2 * k] = _softplus_inv((1.0 - eol) * q_nominal / k)
        self.net.biases[-1].data[2 * k] = _softplus_inv(0.5 * efc_scale)

    # train_loop protocol
    def parameters(self):
        return self.net.parameters()

    def state_arrays(self):
        return self.net.state_arrays()

    def load_state_arrays(self, arrays):
        self.net.load_state_arrays(arrays)

    def forward_batch(self, x_raw: np.ndarray) -> tuple[Tensor, Tensor, Tensor]:
        """(efc_seq (n,k), q_seq (n,k), cycle-life point (n,1)).

        Anchors come from the unnormalized efc/soh columns; gradients
        flow only through the network increments.
        """
        x_raw = np.atleast_2d(np.asarray(x_raw, dtype=float))
        if x_raw.shape[1] != self.N_FEATURES:
            raise ArtifactMismatch(f"expected 6 features, got {x_raw.shape[1]}")
        normalized = (x_raw - self.feature_mean) / self.feature_std
        raw = self.net.forward(normalized)
        efc_inc, q_dec, cl_inc = apply_heads(self.net, raw)
        efc_now = x_raw[:, 4:5]
        q_now = x_raw[:, 5:6] * self.q_nominal
        return efc_inc + efc_now, q_now - q_dec, cl_inc + efc_now


def build_prognosis_targets(
    cell: CellRecord,
    at_index: int,
    k: int,
    eol: float = EOL_FRACTION,
    q_nominal: float = 4.84,
) -> tuple[np.ndarray, np.ndarray]:
    """(efc targets, capacity targets), both length ``k``.

    Capacity levels march in equal steps from the capacity at
    ``at_index`` down to ``eol * q_nominal``; the matching EFC values
    come from inverting the cell's degradation record. The final pair
    is pinned to (cycle life, eol * q_nominal) exactly.
    """
    life = cycle_life(cell, eol)  # raises CensoredCell when never reached
    caps = np.array([obs.ocv.capacity for obs in cell.diagnostics])
    efcs = np.array([obs.efc for obs in cell.diagnostics])
    if not (0 <= at_index < len(caps)):
        raise ValidationError(f"at_index {at_index} outside record of length {len(caps)}")
    q_now = caps[at_index]
    q_eol = eol * q_nominal
    if q_now <= q_eol:
        raise ValidationError(
            f"diagnostic {at_index} of {cell.cell_id} is already past end of life"
        )
    levels = q_now + (np.arange(1, k + 1) / k) * (q_eol - q_now)
    levels[-1] = q_eol
    efc_targets = np.interp(levels[::-1], caps[::-1], efcs[::-1])[::-1].copy()
    efc_targets[-1] = life
    return efc_targets, levels


def loss_prognosis(model: PrognosisModel, batch, cfg: TrainConfig):
    """Eq.-style loss -> (total Tensor, float components).

    Regression runs in normalized units (EFC by the fleet scale,
    capacity by nominal) so the three heads pull with comparable
    weight; the bound terms hinge on the horizon and on half nominal.
    """
    x, t_efc, t_q, t_cl = batch
    efc_seq, q_seq, cl_point = model.forward_batch(x)
    cl_flat = cl_point.reshape((cl_point.shape[0],))

    s_e, s_q = 1.0 / model.efc_scale, 1.0 / model.q_nominal
    l_reg = (
        mse(efc_seq * s_e, t_efc * s_e)
        + mse(q_seq * s_q, t_q * s_q)
        + mse(cl_flat * s_e, t_cl * s_e)
    )
    all_efc = hstack([efc_seq, cl_point])
    l_bound_efc = ((all_efc - model.horizon) * s_e).relu().square().mean()
    l_bound_q = ((0.5 * model.q_nominal - q_seq) * s_q).relu().square().mean()

    total = l_reg * cfg.eta + l_bound_efc * cfg.zeta[0] + l_bound_q * cfg.zeta[1]
    components = {
        "l_reg": l_reg.item(),
        "l_bound_efc": l_bound_efc.item(),
        "l_bound_q": l_bound_q.item(),
        "total": total.item(),
    }
    return total, components


def prognosis_rows(
    diag_artifact: DiagnosisArtifact,
    records,
    k: int,
    eol: float,
):
    """Training rows for the honest chain.

    Inputs are the diagnosis model's predicted states and SOH per
    stored window; targets come from the ground-truth record. Rows at
    or past end of life are dropped; censored cells are returned
    separately rather than trained on.
    """
    q_nominal = diag_artifact.model.q_nominal
    by_id = {r.cell_id: r for r in records}
    pred = predict_rows(diag_artifact, records)

    target_cache: dict[tuple[str, float], tuple] = {}
    censored: set[str] = set()
    xs, t_efc, t_q, t_cl, row_cells = [], [], [], [], []
    for i, cell_id in enumerate(pred["cell_id"]):
        if cell_id in censored:
            continue
        efc = float(pred["efc"][i])
        key = (cell_id, efc)
        if key not in target_cache:
            cell = by_id[cell_id]
            at_index = int(np.argmin(np.abs(np.array([o.efc for o in cell.diagnostics]) - efc)))
            try:
                target_cache[key] = build_prognosis_targets(cell, at_index, k, eol, q_nominal)
            except CensoredCell:
                censored.add(cell_id)
                continue
            except ValidationError:
                target_cache[key] = None  # past end of life: unusable row
        cached = target_cache[key]
        if cached is None:
            continue
        efc_t, q_t = cached
        state = pred["states"][i]  # x0, y0, cp, cn
        xs.append([state[2], state[3], state[0], state[1], efc, pred["soh_pred"][i]])
        t_efc.append(efc_t)
        t_q.append(q_t)
        t_cl.append(efc_t[-1])
        row_cells.append(cell_id)
    if not xs:
        raise ValidationError("no usable prognosis rows (all censored or past end of life)")
    return (
        np.array(xs), np.array(t_efc), np.array(t_q), np.array(t_cl),
        row_cells, sorted(censored),
    )


@dataclass
class PrognosisArtifact:
    """Trained prognosis decoder chained to one diagnosis artifact."""

    model: PrognosisModel
    diagnosis_hash: str
    split: dict
    weights: dict
    history: dict

    def to_payload(self) -> dict:
        m = self.model
        return {
            "kind": "prognosis",
            "k": m.k,
            "feature_mean": m.feature_mean,
            "feature_std": m.feature_std,
            "q_nominal": m.q_nominal,
            "eol": m.eol,
            "efc_scale": m.efc_scale,
            "hidden": list(m.hidden),
            "seed": m.seed,
            "net_state": mlp_state_to_payload(m.net.state_arrays()),
            "diagnosis_hash": self.diagnosis_hash,
            "split": self.split,
            "weights": self.weights,
            "history": self.history,
        }

    @property
    def hash(self) -> str:
        return artifact_hash(self.to_payload())

    @classmethod
    def from_payload(cls, payload: dict) -> "PrognosisArtifact":
        if payload.get("kind") != "prognosis":
            raise ArtifactMismatch(f"not a prognosis artifact: kind={payload.get('kind')!r}")
        try:
            model = PrognosisModel(
                k=int(payload["k"]),
                feature_mean=np.asarray(payload["feature_mean"], dtype=float),
                feature_std=np.asarray(payload["feature_std"], dtype=float),
                q_nominal=float(payload["q_nominal"]),
                eol=float(payload["eol"]),
                efc_scale=float(payload["efc_scale"]),
                hidden=tuple(int(h) for h in payload["hidden"]),
                seed=int(payload["seed"]),
            )
            model.net.load_state_arrays(mlp_state_from_payload(payload["net_state"]))
            diagnosis_hash = str(payload["diagnosis_hash"])
        except (KeyError, TypeError, ShapeError) as exc:
            raise ArtifactMismatch(f"bad prognosis artifact layout: {exc}") from exc
        return cls(
            model=model,
            diagnosis_hash=diagnosis_hash,
            split={key: list(v) for key, v in payload["split"].items()},
            weights=dict(payload["weights"]),
            history=dict(payload["history"]),
        )


def train_prognosis(
    records,
    diag_artifact: DiagnosisArtifact,
    cfg: TrainConfig,
    *,
    k: int = DEFAULT_K,
    eol: float = EOL_FRACTION,
) -> PrognosisArtifact:
    """Fit the future-trajectory decoder on diagnosed snapshots.

    The cell split is inherited from the diagnosis artifact — training
    pool = its train + validation cells — so the two stages agree on
    what counts as held out.
    """
    manifest = diag_artifact.split
    known = {c for ids in manifest.values() for c in ids}
    unknown = sorted({r.cell_id for r in records} - known)
    if unknown:
        raise SplitError(f"cells missing from the diagnosis split manifest: {unknown[:5]}")
    train_ids = set(manifest.get("train", ())) | set(manifest.get("validation", ()))
    train_records = [r for r in records if r.cell_id in train_ids]
    if not train_records:
        raise SplitError("no training cells shared with the diagnosis artifact")

    x, t_efc, t_q, t_cl, _, censored = prognosis_rows(diag_artifact, train_records, k, eol)
    lives = t_cl.max()
    model = PrognosisModel(
        k=k,
        feature_mean=x.mean(axis=0),
        feature_std=x.std(axis=0),
        q_nominal=diag_artifact.model.q_nominal,
        eol=eol,
        efc_scale=float(lives),
        hidden=cfg.hidden,
        seed=cfg.seed,
    )
    history = train_loop(
        model,
        (x, t_efc, t_q, t_cl),
        lambda mdl, batch: loss_prognosis(mdl, batch, cfg)[0],
        cfg,
    )
    return PrognosisArtifact(
        model=model,
        diagnosis_hash=diag_artifact.hash,
        split={key: list(v) for key, v in manifest.items()},
        weights={"eta": cfg.eta, "zeta": list(cfg.zeta), "lr": cfg.lr, "seed": cfg.seed},
        history={
            "best_epoch": history.best_epoch,
            "best_val": history.best_val,
            "n_epochs": len(history.epochs),
            "censored_cells": censored,
        },
    )


@dataclass(frozen=True)
class PrognosisReport:
    """Future trajectory plus both cycle-life readouts."""

    efc_seq: np.ndarray
    q_seq: np.ndarray
    cycle_life_seq: float
    cycle_life_point: float

    def __post_init__(self):
        if self.cycle_life_seq != self.efc_seq[-1]:
            raise ValidationError("sequence cycle life must close the EFC sequence")


def prognose(artifact: PrognosisArtifact, report: DiagnosisReport) -> PrognosisReport:
    """Forecast from a single diagnosis — no history consulted."""
    if report.artifact != artifact.diagnosis_hash:
        raise ArtifactMismatch(
            "diagnosis report was produced by a different artifact than the one "
            "this prognosis model was trained against"
        )
    s = report.state
    x = np.array([[s.cp, s.cn, s.x0, s.y0, report.efc, report.soh]])
    efc_seq, q_seq, cl_point = artifact.model.forward_batch(x)
    efc = efc_seq.data[0].copy()
    return PrognosisReport(
        efc_seq=efc,
        q_seq=q_seq.data[0].copy(),
        cycle_life_seq=float(efc[-1]),
        cycle_life_point=float(cl_point.data[0, 0]),
    )


def cycle_life_predictions(
    diag_artifact: DiagnosisArtifact,
    prog_artifact: PrognosisArtifact,
    records,
    *,
    soh_window: tuple[float, float] | None = None,
    at_index: int | None = None,
    eol: float = EOL_FRACTION,
):
    """Per-diagnostic cycle-life predictions vs ground truth.

    Select diagnostics either by a true-SOH window or by a fixed index
    into each record; censored cells are skipped. Uses the first stored
    window of each selected diagnostic.
    """
    if (soh_window is None) == (at_index is None):
        raise ValidationError("select diagnostics by exactly one of soh_window / at_index")
    rows = []
    for rec in records:
        try:
            life = cycle_life(rec, eol)
        except CensoredCell:
            continue
        if at_index is not None:
            picks = [at_index] if at_index < len(rec.diagnostics) else []
        else:
            lo, hi = soh_window
            picks = [i for i, o in enumerate(rec.diagnostics) if lo <= o.soh <= hi]
        for i in picks:
            obs = rec.diagnostics[i]
            if obs.efc >= life:
                continue
            forecast = prognose(prog_artifact, diagnose(diag_artifact, obs.segments[0]))
            rows.append({
                "cell_id": rec.cell_id,
                "efc": obs.efc,
                "soh_true": obs.soh,
                "cycle_life_true": life,
                "cycle_life_seq": forecast.cycle_life_seq,
                "cycle_life_point": forecast.cycle_life_point,
            })
    return rows
