"""Physics-constrained encoder–decoder for battery health diagnosis.

A partial operating window (resampled voltages, throughput, EFC, and
optionally C-rate) is encoded into the four mechanistic states; the
decoder reconstructs the full diagnostic-rate discharge curve and its
total capacity. Training balances plain regression against consistency
with the mechanistically derived curve and soft box constraints on
everything that has a physical range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .artifact import artifact_hash, mlp_state_from_payload, mlp_state_to_payload
from .autodiff import Tensor, hstack, mse
from .curves import (
    ChargeSegment,
    PseudoOcvCurve,
    ResampledSegment,
    check_min_window,
    featurize_segment,
    resample_by_capacity,
)
from .errors import ArtifactMismatch, EmptyWindow, InvalidState, ShapeError, SplitError, ValidationError
from .mechanistic import (
    DegradationModes,
    MechanisticState,
    StateBounds,
    degradation_modes,
    derive_ocv,
)
from .nn import Head, Mlp, TrainConfig, apply_heads, train_loop
from .ocp import OcpTable
from .synthfleet import split_by_protocol, split_cells

DEFAULT_P = 32
DEFAULT_M = 64
#: soft range for the predicted total capacity, as fractions of nominal
CAPACITY_RANGE = (0.05, 1.15)


def _softplus_inv(y: float) -> float:
    return float(np.log(np.expm1(y)))


class DiagnosisModel:
    """Encoder (features → states) and decoder (states → OCV curve).

    Latent states are produced on a bounds-normalized scale and mapped
    affinely to physical units — unclipped, so the bound penalties in
    the loss stay responsible for keeping them physical.
    """

    def __init__(
        self,
        *,
        p: int,
        m: int,
        include_c_rate: bool,
        feature_mean: np.ndarray,
        feature_std: np.ndarray,
        bounds: StateBounds,
        q_nominal: float,
        v_min: float,
        v_max: float,
        ocp_p: OcpTable,
        ocp_n: OcpTable,
        fresh_state: MechanisticState,
        hidden: tuple[int, ...] = (128, 128, 128),
        seed: int = 0,
    ):
        if p < 2 or m < 8:
            raise ValidationError(f"bad grid sizes p={p}, m={m}")
        n_features = p + 2 + (1 if include_c_rate else 0)
        feature_mean = np.asarray(feature_mean, dtype=float)
        feature_std = np.asarray(feature_std, dtype=float)
        if feature_mean.shape != (n_features,) or feature_std.shape != (n_features,):
            raise ArtifactMismatch(
                f"normalization statistics must have {n_features} entries"
            )
        self.p, self.m = p, m
        self.include_c_rate = include_c_rate
        self.feature_mean = feature_mean
        self.feature_std = np.where(feature_std < 1e-12, 1.0, feature_std)
        self.bounds = bounds
        self.q_nominal = q_nominal
        self.v_min, self.v_max = v_min, v_max
        self.ocp_p, self.ocp_n = ocp_p, ocp_n
        self.fresh_state = fresh_state
        self.hidden = tuple(hidden)
        self.seed = seed
        self.freeze_encoder = False

        self.encoder = Mlp([n_features, *hidden, 4], seed=seed)
        self.decoder = Mlp(
            [4, *hidden, m + 1],
            heads=(Head("linear", 1), Head("cumulative-softplus", m - 1), Head("softplus", 1)),
            seed=seed + 1,
        )
        # start from a sensible operating point: encoder says "fresh",
        # decoder draws a plausible fresh discharge curve
        norm_fresh = (fresh_state.as_array() - bounds.lower) / bounds.width
        self.encoder.biases[-1].data[:] = norm_fresh
        self.decoder.biases[-1].data[0] = v_max
        self.decoder.biases[-1].data[1:m] = _softplus_inv((v_max - v_min) / (m - 1))
        self.decoder.biases[-1].data[m] = _softplus_inv(q_nominal)

    # -- train_loop protocol -----------------------------------------

    def parameters(self):
        if self.freeze_encoder:
            return self.decoder.parameters()
        return [*self.encoder.parameters(), *self.decoder.parameters()]

    def state_arrays(self):
        return [*self.encoder.state_arrays(), *self.decoder.state_arrays()]

    def load_state_arrays(self, arrays):
        n_enc = len(self.encoder.parameters())
        self.encoder.load_state_arrays(arrays[:n_enc])
        self.decoder.load_state_arrays(arrays[n_enc:])

    # -- forward passes ----------------------------------------------

    def normalize_features(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.feature_mean.size:
            raise ArtifactMismatch(
                f"expected {self.feature_mean.size} features, got {x.shape[1]}"
            )
        return (x - self.feature_mean) / self.feature_std

    def encode_batch(self, x_raw: np.ndarray) -> Tensor:
        """Physical states, shape (batch, 4); gradients flow."""
        latent = self.encoder.forward(self.normalize_features(x_raw))
        return latent * self.bounds.width + self.bounds.lower

    def decode_batch(self, states: Tensor) -> tuple[Tensor, Tensor]:
        """(voltage grid (batch, m), capacity (batch, 1)); gradients flow."""
        normalized = (states - self.bounds.lower) / self.bounds.width
        raw = self.decoder.forward(normalized)
        v0, drops, capacity = apply_heads(self.decoder, raw)
        v_grid = hstack([v0, v0 - drops])
        return v_grid, capacity


def encode(model: DiagnosisModel, seg: ResampledSegment) -> MechanisticState:
    """Raw (unclipped) mechanistic state for one featurized window."""
    if len(seg.v_grid) != model.p:
        raise ArtifactMismatch(f"segment featurized with p={len(seg.v_grid)}, model has p={model.p}")
    x = _segment_features(seg, model.include_c_rate)
    states = model.encode_batch(x[None, :])
    return MechanisticState.from_array(states.data[0])


def decode(model: DiagnosisModel, state: MechanisticState) -> PseudoOcvCurve:
    """Full predicted discharge curve on the m-point capacity grid."""
    if not state.is_finite():
        raise InvalidState(f"non-finite state {state}")
    v_grid, capacity = model.decode_batch(Tensor(state.as_array()[None, :]))
    q_total = max(float(capacity.data[0, 0]), 1e-3)  # floor keeps the grid usable
    q = np.linspace(0.0, q_total, model.m)
    return PseudoOcvCurve(q=q, v=v_grid.data[0].copy())


def _segment_features(seg: ResampledSegment, include_c_rate: bool) -> np.ndarray:
    base = [np.asarray(seg.v_grid, dtype=float), [seg.q_span], [seg.efc]]
    if include_c_rate:
        base.append([0.0 if seg.c_rate is None else float(seg.c_rate)])
    return np.concatenate(base)


def window_features(model: DiagnosisModel, segment: ChargeSegment) -> np.ndarray:
    """Raw feature vector the encoder would see for one window."""
    return _segment_features(featurize_segment(segment, model.p), model.include_c_rate)


def observation_rows(records, p: int, m: int, include_c_rate: bool):
    """Flatten a fleet into aligned training arrays.

    Returns (features, target voltage grids, target capacities, meta)
    with one row per stored window; meta carries (cell_id, protocol_id,
    efc, soh, true_state) for later evaluation.
    """
    feats, v_targets, q_targets, meta = [], [], [], []
    for rec in records:
        for obs in rec.diagnostics:
            v_t = resample_by_capacity(obs.ocv, m)
            q_t = obs.ocv.capacity
            for seg in obs.segments:
                feats.append(_segment_features(featurize_segment(seg, p), include_c_rate))
                v_targets.append(v_t)
                q_targets.append(q_t)
                meta.append((rec.cell_id, rec.protocol_id, obs.efc, obs.soh, obs.true_state))
    if not feats:
        raise ValidationError("no training windows in the dataset")
    return np.array(feats), np.array(v_targets), np.array(q_targets), meta


def _derived_targets(model: DiagnosisModel, states: np.ndarray, capacities: np.ndarray):
    """Mechanistic curves resampled onto each row's predicted grid.

    Constant (detached) per batch: rows whose derived window is empty
    are flagged and later charged a fixed penalty instead of failing.
    """
    b = states.shape[0]
    v_d = np.zeros((b, model.m))
    ok = np.zeros(b, dtype=bool)
    fractions = np.linspace(0.0, 1.0, model.m)
    for i in range(b):
        try:
            curve, _ = derive_ocv(
                MechanisticState.from_array(states[i]),
                model.ocp_p, model.ocp_n, model.v_min, model.v_max, m=model.m,
            )
        except (EmptyWindow, InvalidState):
            continue
        grid = fractions * max(capacities[i], 0.0)
        v_d[i] = np.interp(grid, curve.q, curve.v)  # clamps beyond the endpoint
        ok[i] = True
    return v_d, ok


_PHY_PENALTY = 1.0


def loss_diagnosis(model: DiagnosisModel, batch, cfg: TrainConfig):
    """Eq.-style composite loss -> (total Tensor, float components)."""
    x, v_target, q_target = batch
    states = model.encode_batch(x)
    v_hat, q_hat = model.decode_batch(states)
    q_hat_flat = q_hat.reshape((q_hat.shape[0],))

    l_reg = mse(v_hat, v_target) + mse(q_hat_flat, q_target) * (
        cfg.lambda_q / model.q_nominal**2
    )

    v_d, ok = _derived_targets(model, states.data, q_hat.data[:, 0])
    n = len(ok)
    n_ok = int(ok.sum())
    if n_ok:
        idx = np.flatnonzero(ok)
        l_phy = mse(v_hat[idx], v_d[idx]) * (n_ok / n) + _PHY_PENALTY * ((n - n_ok) / n)
    else:
        l_phy = Tensor(_PHY_PENALTY)

    lower, upper = model.bounds.lower, model.bounds.upper
    l_state = ((lower - states).relu().square() + (states - upper).relu().square()).mean()
    l_vrange = (
        (model.v_min - v_hat).relu().square() + (v_hat - model.v_max).relu().square()
    ).mean()
    q_lo, q_hi = (c * model.q_nominal for c in CAPACITY_RANGE)
    l_qrange = ((q_lo - q_hat).relu().square() + (q_hat - q_hi).relu().square()).mean()

    g = cfg.gamma
    total = (
        l_reg * cfg.alpha
        + l_phy * cfg.beta
        + l_state * g[0]
        + l_vrange * g[1]
        + l_qrange * g[2]
    )
    components = {
        "l_reg": l_reg.item(),
        "l_phy": l_phy.item(),
        "l_bound_state": l_state.item(),
        "l_bound_voltage": l_vrange.item(),
        "l_bound_capacity": l_qrange.item(),
        "total": total.item(),
    }
    return total, components


@dataclass
class DiagnosisArtifact:
    """Trained model plus everything needed to reproduce and chain it."""

    model: DiagnosisModel
    split: dict
    weights: dict
    history: dict
    provenance: tuple = ()

    def to_payload(self) -> dict:
        m = self.model
        return {
            "kind": "diagnosis",
            "p": m.p,
            "m": m.m,
            "include_c_rate": m.include_c_rate,
            "feature_mean": m.feature_mean,
            "feature_std": m.feature_std,
            "bounds": {"lower": m.bounds.lower, "upper": m.bounds.upper},
            "q_nominal": m.q_nominal,
            "v_min": m.v_min,
            "v_max": m.v_max,
            "hidden": list(m.hidden),
            "seed": m.seed,
            "ocp_p": {"stoich": m.ocp_p.stoich, "potential": m.ocp_p.potential},
            "ocp_n": {"stoich": m.ocp_n.stoich, "potential": m.ocp_n.potential},
            "fresh_state": list(m.fresh_state.as_array()),
            "encoder_state": mlp_state_to_payload(m.encoder.state_arrays()),
            "decoder_state": mlp_state_to_payload(m.decoder.state_arrays()),
            "split": self.split,
            "weights": self.weights,
            "history": self.history,
            "provenance": list(self.provenance),
        }

    @property
    def hash(self) -> str:
        return artifact_hash(self.to_payload())

    @classmethod
    def from_payload(cls, payload: dict) -> "DiagnosisArtifact":
        if payload.get("kind") != "diagnosis":
            raise ArtifactMismatch(f"not a diagnosis artifact: kind={payload.get('kind')!r}")
        try:
            model = DiagnosisModel(
                p=int(payload["p"]),
                m=int(payload["m"]),
                include_c_rate=bool(payload["include_c_rate"]),
                feature_mean=np.asarray(payload["feature_mean"], dtype=float),
                feature_std=np.asarray(payload["feature_std"], dtype=float),
                bounds=StateBounds(
                    lower=np.asarray(payload["bounds"]["lower"], dtype=float),
                    upper=np.asarray(payload["bounds"]["upper"], dtype=float),
                ),
                q_nominal=float(payload["q_nominal"]),
                v_min=float(payload["v_min"]),
                v_max=float(payload["v_max"]),
                ocp_p=OcpTable(
                    np.asarray(payload["ocp_p"]["stoich"], dtype=float),
                    np.asarray(payload["ocp_p"]["potential"], dtype=float),
                    electrode="cathode",
                ),
                ocp_n=OcpTable(
                    np.asarray(payload["ocp_n"]["stoich"], dtype=float),
                    np.asarray(payload["ocp_n"]["potential"], dtype=float),
                    electrode="anode",
                ),
                fresh_state=MechanisticState.from_array(
                    np.asarray(payload["fresh_state"], dtype=float)
                ),
                hidden=tuple(int(h) for h in payload["hidden"]),
                seed=int(payload["seed"]),
            )
            model.encoder.load_state_arrays(mlp_state_from_payload(payload["encoder_state"]))
            model.decoder.load_state_arrays(mlp_state_from_payload(payload["decoder_state"]))
        except (KeyError, TypeError, ShapeError) as exc:
            raise ArtifactMismatch(f"bad diagnosis artifact layout: {exc}") from exc
        return cls(
            model=model,
            split={k: list(v) for k, v in payload["split"].items()},
            weights=dict(payload["weights"]),
            history=dict(payload["history"]),
            provenance=tuple(payload.get("provenance", ())),
        )


def train_diagnosis(
    records,
    ocp_p: OcpTable,
    ocp_n: OcpTable,
    cfg: TrainConfig,
    *,
    fresh_state: MechanisticState,
    q_nominal: float = 4.84,
    v_min: float = 3.0,
    v_max: float = 4.2,
    p: int = DEFAULT_P,
    m: int = DEFAULT_M,
    include_c_rate: bool = True,
    bounds: StateBounds | None = None,
    test_fraction: float = 0.25,
) -> DiagnosisArtifact:
    """Protocol-disjoint holdout, cell-level validation carve, training.

    The returned artifact records which cells landed in which split so
    downstream stages can stay consistent with it.
    """
    train_cells, test_cells = split_by_protocol(records, test_fraction, cfg.seed)
    fit_cells, val_cells = split_cells(train_cells, cfg.validation_fraction, cfg.seed)

    x_fit, v_fit, q_fit, _ = observation_rows(fit_cells, p, m, include_c_rate)
    x_val, v_val, q_val, _ = observation_rows(val_cells, p, m, include_c_rate)
    x_train_all = np.vstack([x_fit, x_val])

    bounds = bounds if bounds is not None else StateBounds.default(q_nominal)
    model = DiagnosisModel(
        p=p, m=m, include_c_rate=include_c_rate,
        feature_mean=x_train_all.mean(axis=0), feature_std=x_train_all.std(axis=0),
        bounds=bounds, q_nominal=q_nominal, v_min=v_min, v_max=v_max,
        ocp_p=ocp_p, ocp_n=ocp_n, fresh_state=fresh_state,
        hidden=cfg.hidden, seed=cfg.seed,
    )
    history = train_loop(
        model,
        (x_fit, v_fit, q_fit),
        lambda mdl, batch: loss_diagnosis(mdl, batch, cfg)[0],
        cfg,
        val_data=(x_val, v_val, q_val),
    )
    return DiagnosisArtifact(
        model=model,
        split={
            "train": [r.cell_id for r in fit_cells],
            "validation": [r.cell_id for r in val_cells],
            "test": [r.cell_id for r in test_cells],
        },
        weights={
            "alpha": cfg.alpha, "beta": cfg.beta, "gamma": list(cfg.gamma),
            "lambda_q": cfg.lambda_q, "lr": cfg.lr, "seed": cfg.seed,
        },
        history={
            "best_epoch": history.best_epoch,
            "best_val": history.best_val,
            "n_epochs": len(history.epochs),
        },
    )


@dataclass(frozen=True)
class DiagnosisReport:
    """Everything the diagnosis stage knows about one window."""

    predicted_ocv: PseudoOcvCurve
    derived_ocv: PseudoOcvCurve
    state: MechanisticState
    modes: DegradationModes
    soh: float
    efc: float
    artifact: str  # hash of the producing artifact


def diagnose(artifact: DiagnosisArtifact, segment: ChargeSegment) -> DiagnosisReport:
    model = artifact.model
    check_min_window(segment, model.q_nominal)
    state = encode(model, featurize_segment(segment, model.p))
    predicted = decode(model, state)
    derived, _ = derive_ocv(state, model.ocp_p, model.ocp_n, model.v_min, model.v_max, m=model.m)
    return DiagnosisReport(
        predicted_ocv=predicted,
        derived_ocv=derived,
        state=state,
        modes=degradation_modes(state, model.fresh_state),
        soh=predicted.capacity / model.q_nominal,
        efc=segment.efc,
        artifact=artifact.hash,
    )


def finetune(
    artifact: DiagnosisArtifact,
    records,
    cfg: TrainConfig,
    *,
    lr_scale: float = 0.1,
    freeze_encoder: bool = False,
) -> DiagnosisArtifact:
    """Continue training the artifact's weights on a new dataset."""
    parent_hash = artifact.hash
    model = DiagnosisArtifact.from_payload(artifact.to_payload()).model  # deep copy
    tuned_cfg = replace(cfg, lr=cfg.lr * lr_scale)

    x, v_t, q_t, _ = observation_rows(records, model.p, model.m, model.include_c_rate)
    model.freeze_encoder = freeze_encoder
    try:
        history = train_loop(
            model,
            (x, v_t, q_t),
            lambda mdl, batch: loss_diagnosis(mdl, batch, tuned_cfg)[0],
            tuned_cfg,
        )
    finally:
        model.freeze_encoder = False
    return DiagnosisArtifact(
        model=model,
        split={
            "train": sorted({r.cell_id for r in records}),
            "validation": [],
            "test": list(artifact.split.get("test", [])),
        },
        weights=dict(artifact.weights, lr=tuned_cfg.lr, finetune_lr_scale=lr_scale,
                     freeze_encoder=freeze_encoder),
        history={
            "best_epoch": history.best_epoch,
            "best_val": history.best_val,
            "n_epochs": len(history.epochs),
        },
        provenance=(*artifact.provenance, parent_hash),
    )


def predict_rows(artifact: DiagnosisArtifact, records):
    """Batch inference table for evaluation.

    One row per stored window: predicted/target voltage grids, predicted
    and true SOH, encoded states, and true states where available.
    """
    model = artifact.model
    x, v_t, q_t, meta = observation_rows(records, model.p, model.m, model.include_c_rate)
    states = model.encode_batch(x)
    v_hat, q_hat = model.decode_batch(states)
    return {
        "features": x,
        "v_pred": v_hat.data,
        "v_target": v_t,
        "q_pred": q_hat.data[:, 0],
        "q_target": q_t,
        "soh_pred": q_hat.data[:, 0] / model.q_nominal,
        "soh_true": np.array([mm[3] for mm in meta]),
        "states": states.data,
        "true_states": [mm[4] for mm in meta],
        "cell_id": [mm[0] for mm in meta],
        "protocol_id": [mm[1] for mm in meta],
        "efc": np.array([mm[2] for mm in meta]),
    }
