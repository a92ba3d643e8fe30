"""Future-trajectory decoder: target construction, loss bookkeeping,
structural monotonicity, and the diagnosis-chained training path."""

from __future__ import annotations

import numpy as np
import pytest

from celldx.curves import PseudoOcvCurve
from celldx.diagnosis import train_diagnosis, diagnose
from celldx.errors import (
    ArtifactMismatch,
    CensoredCell,
    SplitError,
    ValidationError,
)
from celldx.mechanistic import MechanisticState
from celldx.nn import TrainConfig
from celldx.ocp import synthetic_tables
from celldx.prognosis import (
    PrognosisArtifact,
    PrognosisModel,
    PrognosisReport,
    build_prognosis_targets,
    cycle_life_predictions,
    loss_prognosis,
    prognose,
    prognosis_rows,
    train_prognosis,
)
from celldx.synthfleet import CellRecord, DiagnosticObservation, FleetConfig, fleet_fresh_state, generate_fleet

from conftest import Q_NOM

K = 8


def dummy_segment(efc):
    from celldx.curves import ChargeSegment

    return ChargeSegment(
        v=np.linspace(3.5, 4.0, 16), q=np.linspace(0.0, 1.2, 16),
        efc=float(efc), c_rate=1.0,
    )


def linear_record(n=11, efc_end=1000.0, q0=Q_NOM, q1=0.8 * Q_NOM, cell_id="L0"):
    """Capacity fading linearly from q0 to q1 over [0, efc_end]."""
    obs = []
    for efc in np.linspace(0.0, efc_end, n):
        cap = q0 + (q1 - q0) * efc / efc_end
        curve = PseudoOcvCurve(q=np.linspace(0, cap, 16), v=np.linspace(4.2, 3.0, 16))
        obs.append(DiagnosticObservation(
            efc=float(efc), soh=cap / Q_NOM, ocv=curve, segments=(dummy_segment(efc),),
            true_state=MechanisticState(0.9, 0.05, 5.5, 5.4),
        ))
    return CellRecord(cell_id=cell_id, protocol_id="P1", diagnostics=tuple(obs))


@pytest.fixture(scope="module")
def chained():
    """Small fleet with a trained diagnosis artifact to chain from."""
    cfg = FleetConfig(n_cells=10, ocv_points=65, segment_points=64, windows_per_diagnostic=2)
    ocp_p, ocp_n = synthetic_tables()
    fleet = generate_fleet(cfg, seed=3)
    fresh = fleet_fresh_state(cfg, ocp_p, ocp_n)
    diag = train_diagnosis(
        fleet, ocp_p, ocp_n,
        TrainConfig(max_epochs=8, hidden=(16, 16), seed=0),
        fresh_state=fresh, p=16, m=16,
    )
    return fleet, diag


def make_model(efc_scale=1000.0, seed=0, hidden=(10, 10)):
    return PrognosisModel(
        k=K, feature_mean=np.zeros(6), feature_std=np.ones(6),
        q_nominal=Q_NOM, eol=0.8, efc_scale=efc_scale, hidden=hidden, seed=seed,
    )


class TestTargets:
    def test_linear_fade_yields_evenly_spaced_efc_targets(self):
        rec = linear_record()
        efc_t, q_t = build_prognosis_targets(rec, 0, 3, 0.8, Q_NOM)
        np.testing.assert_allclose(efc_t, [1000 / 3, 2000 / 3, 1000], rtol=1e-12)
        np.testing.assert_allclose(q_t, Q_NOM + np.array([1, 2, 3]) / 3 * (-0.2 * Q_NOM))

    def test_last_pair_is_pinned_to_the_crossing(self):
        rec = linear_record()
        efc_t, q_t = build_prognosis_targets(rec, len(rec.diagnostics) - 2, K, 0.8, Q_NOM)
        assert q_t[-1] == 0.8 * Q_NOM  # bitwise
        assert efc_t[-1] == pytest.approx(1000.0, abs=1e-9)
        assert np.all(np.diff(efc_t) >= 0)
        assert np.all(np.diff(q_t) < 0)

    def test_matches_a_dense_numerical_inversion_on_a_power_law_cell(self):
        efc = np.linspace(0.0, 1200.0, 25)
        caps = Q_NOM * (1.0 - 0.22 * (efc / 1000.0) ** 1.4)
        obs = tuple(
            DiagnosticObservation(
                efc=float(e), soh=c / Q_NOM,
                ocv=PseudoOcvCurve(q=np.linspace(0, c, 16), v=np.linspace(4.2, 3.0, 16)),
                segments=(dummy_segment(e),), true_state=MechanisticState(0.9, 0.05, 5.5, 5.4),
            )
            for e, c in zip(efc, caps)
        )
        rec = CellRecord(cell_id="PL", protocol_id="P1", diagnostics=obs)
        efc_t, q_t = build_prognosis_targets(rec, 2, K, 0.8, Q_NOM)

        dense_e = np.linspace(efc[0], efc[-1], 200_001)
        dense_c = np.interp(dense_e, efc, caps)
        for e_hat, level in zip(efc_t, q_t):
            crossing = dense_e[np.argmax(dense_c <= level)]
            assert abs(e_hat - crossing) < 1.0

    def test_censored_cell_raises(self):
        rec = linear_record(q1=0.9 * Q_NOM)  # never reaches 80%
        with pytest.raises(CensoredCell):
            build_prognosis_targets(rec, 0, K, 0.8, Q_NOM)

    def test_past_end_of_life_index_is_invalid(self):
        rec = linear_record(q1=0.7 * Q_NOM)
        with pytest.raises(ValidationError):
            build_prognosis_targets(rec, len(rec.diagnostics) - 1, K, 0.8, Q_NOM)
        with pytest.raises(ValidationError):
            build_prognosis_targets(rec, 99, K, 0.8, Q_NOM)


class TestModelStructure:
    def batch(self, rng, n=5):
        x = np.column_stack([
            rng.uniform(4.0, 6.0, n), rng.uniform(4.0, 6.0, n),
            rng.uniform(0.6, 1.0, n), rng.uniform(0.0, 0.3, n),
            rng.uniform(0.0, 800.0, n), rng.uniform(0.8, 1.0, n),
        ])
        t_efc = np.sort(rng.uniform(0.0, 1500.0, (n, K)), axis=1)
        t_q = np.sort(rng.uniform(3.5, 4.8, (n, K)), axis=1)[:, ::-1].copy()
        return x, t_efc, t_q, t_efc[:, -1].copy()

    def test_sequences_are_monotone_for_any_weights(self):
        rng = np.random.default_rng(0)
        x = self.batch(rng)[0]
        for trial in range(30):
            model = make_model(seed=trial)
            for p in model.parameters():
                p.data = rng.normal(scale=2.0, size=p.data.shape)
            efc_seq, q_seq, cl = model.forward_batch(x)
            assert np.all(np.diff(efc_seq.data, axis=1) > 0)
            assert np.all(np.diff(q_seq.data, axis=1) < 0)
            assert np.all(efc_seq.data[:, 0] > x[:, 4])
            assert np.all(cl.data[:, 0] > x[:, 4])

    def test_constant_network_gives_an_arithmetic_ramp(self):
        model = make_model()
        for w in model.net.weights:
            w.data[:] = 0.0
        model.net.biases[-1].data[:] = 0.3
        x = self.batch(np.random.default_rng(1), n=3)[0]
        efc_seq, q_seq, _ = model.forward_batch(x)
        step = np.logaddexp(0.0, 0.3)
        for i in range(3):
            np.testing.assert_allclose(
                efc_seq.data[i], x[i, 4] + step * np.arange(1, K + 1), rtol=1e-12
            )
            np.testing.assert_allclose(
                q_seq.data[i], x[i, 5] * Q_NOM - step * np.arange(1, K + 1), rtol=1e-12
            )

    def test_feature_width_is_checked(self):
        model = make_model()
        with pytest.raises(ArtifactMismatch):
            model.forward_batch(np.zeros((2, 5)))

    def test_report_requires_the_closing_identity(self):
        with pytest.raises(ValidationError):
            PrognosisReport(
                efc_seq=np.array([10.0, 20.0]), q_seq=np.array([4.0, 3.9]),
                cycle_life_seq=25.0, cycle_life_point=21.0,
            )


class TestLoss:
    def test_matches_independent_recomputation(self):
        rng = np.random.default_rng(5)
        model = make_model(seed=3)
        batch = TestModelStructure().batch(rng)
        cfg = TrainConfig(eta=2.0, zeta=(0.7, 1.3))
        total, parts = loss_prognosis(model, batch, cfg)

        x, t_efc, t_q, t_cl = batch
        efc_seq, q_seq, cl = (t.data for t in model.forward_batch(x))
        s_e, s_q = 1.0 / model.efc_scale, 1.0 / model.q_nominal
        l_reg = (
            np.mean(((efc_seq - t_efc) * s_e) ** 2)
            + np.mean(((q_seq - t_q) * s_q) ** 2)
            + np.mean(((cl[:, 0] - t_cl) * s_e) ** 2)
        )
        all_efc = np.hstack([efc_seq, cl])
        l_be = np.mean(np.maximum((all_efc - model.horizon) * s_e, 0.0) ** 2)
        l_bq = np.mean(np.maximum((0.5 * model.q_nominal - q_seq) * s_q, 0.0) ** 2)
        assert parts["l_reg"] == pytest.approx(l_reg, abs=1e-12)
        assert parts["l_bound_efc"] == pytest.approx(l_be, abs=1e-12)
        assert parts["l_bound_q"] == pytest.approx(l_bq, abs=1e-12)
        assert total.item() == pytest.approx(2.0 * l_reg + 0.7 * l_be + 1.3 * l_bq, abs=1e-12)

    def test_perfect_prediction_scores_zero(self):
        model = make_model()
        x = TestModelStructure().batch(np.random.default_rng(2))[0]
        efc_seq, q_seq, cl = model.forward_batch(x)
        batch = (x, efc_seq.data.copy(), q_seq.data.copy(), cl.data[:, 0].copy())
        total, parts = loss_prognosis(model, batch, TrainConfig())
        assert parts["l_reg"] == 0.0
        assert total.item() == 0.0

    def test_zeta_zero_reduces_to_weighted_regression(self):
        model = make_model(efc_scale=10.0)  # tiny horizon forces bound hits
        batch = TestModelStructure().batch(np.random.default_rng(3))
        cfg = TrainConfig(eta=1.5, zeta=(0.0, 0.0))
        total, parts = loss_prognosis(model, batch, cfg)
        assert parts["l_bound_efc"] > 0.0
        assert total.item() == pytest.approx(1.5 * parts["l_reg"], abs=1e-12)


class TestTrainingChain:
    def test_rows_use_predicted_not_true_states(self, chained):
        fleet, diag = chained
        train = [r for r in fleet if r.cell_id in diag.split["train"]]
        x, t_efc, t_q, t_cl, cells, censored = prognosis_rows(diag, train, K, 0.8)
        assert x.shape[1] == 6
        assert len(x) == len(t_efc) == len(t_q) == len(t_cl) == len(cells)
        assert np.all(np.diff(t_efc, axis=1) >= 0)
        truths = {
            (r.cell_id, o.efc): o.true_state.as_array()
            for r in train for o in r.diagnostics
        }
        matches = sum(
            np.allclose(x[i, [2, 3, 0, 1]], truths[(cells[i], x[i, 4])], atol=1e-12)
            for i in range(len(x))
        )
        assert matches < len(x) / 2  # imperfect encoder: honest chain

    def test_training_is_seed_deterministic(self, chained):
        fleet, diag = chained
        cfg = TrainConfig(max_epochs=4, hidden=(10, 10), seed=5)
        a = train_prognosis(fleet, diag, cfg, k=K)
        b = train_prognosis(fleet, diag, cfg, k=K)
        assert a.hash == b.hash
        assert a.diagnosis_hash == diag.hash

    def test_unknown_cells_break_the_split_contract(self, chained):
        fleet, diag = chained
        rogue = CellRecord(
            cell_id="ROGUE", protocol_id=fleet[0].protocol_id,
            diagnostics=fleet[0].diagnostics,
        )
        with pytest.raises(SplitError):
            train_prognosis([*fleet, rogue], diag, TrainConfig(max_epochs=1, hidden=(8, 8)), k=K)
        test_only = [r for r in fleet if r.cell_id in diag.split["test"]]
        with pytest.raises(SplitError):
            train_prognosis(test_only, diag, TrainConfig(max_epochs=1, hidden=(8, 8)), k=K)

    def test_payload_round_trip(self, chained):
        fleet, diag = chained
        art = train_prognosis(fleet, diag, TrainConfig(max_epochs=2, hidden=(8, 8)), k=K)
        clone = PrognosisArtifact.from_payload(art.to_payload())
        assert clone.hash == art.hash
        x = TestModelStructure().batch(np.random.default_rng(0))[0]
        for a, b in zip(art.model.forward_batch(x), clone.model.forward_batch(x)):
            np.testing.assert_array_equal(a.data, b.data)
        bad = art.to_payload()
        bad["kind"] = "diagnosis"
        with pytest.raises(ArtifactMismatch):
            PrognosisArtifact.from_payload(bad)


@pytest.fixture(scope="module")
def forecaster(chained):
    """Chain built on a zeroed encoder so every diagnose lands on the
    (in-domain) fresh state and the derive step always succeeds."""
    from celldx.diagnosis import DiagnosisArtifact

    fleet, diag = chained
    ident = DiagnosisArtifact.from_payload(diag.to_payload())
    for w in ident.model.encoder.weights:
        w.data[:] = 0.0
    for b in ident.model.encoder.biases[:-1]:
        b.data[:] = 0.0
    norm_fresh = (ident.model.fresh_state.as_array() - ident.model.bounds.lower)
    ident.model.encoder.biases[-1].data[:] = norm_fresh / ident.model.bounds.width
    prog = train_prognosis(fleet, ident, TrainConfig(max_epochs=4, hidden=(10, 10)), k=K)
    return fleet, ident, prog


class TestPrognose:

    def test_chained_report_round_trip(self, forecaster):
        fleet, diag, prog = forecaster
        rec = next(r for r in fleet if r.cell_id in diag.split["train"])
        rep = diagnose(diag, rec.diagnostics[0].segments[0])
        fc = prognose(prog, rep)
        assert fc.cycle_life_seq == fc.efc_seq[-1]
        assert np.all(np.diff(fc.efc_seq) > 0)
        assert np.all(np.diff(fc.q_seq) < 0)
        assert fc.efc_seq[0] > rep.efc

    def test_foreign_report_is_rejected(self, forecaster):
        fleet, diag, prog = forecaster
        rec = next(r for r in fleet if r.cell_id in diag.split["train"])
        rep = diagnose(diag, rec.diagnostics[0].segments[0])
        forged = PrognosisArtifact.from_payload(prog.to_payload())
        forged.diagnosis_hash = "0" * 64
        with pytest.raises(ArtifactMismatch):
            prognose(forged, rep)

    def test_history_truncation_cannot_change_the_forecast(self, forecaster):
        fleet, diag, prog = forecaster
        rec = next(r for r in fleet if r.cell_id in diag.split["train"] and len(r.diagnostics) > 3)
        seg = rec.diagnostics[2].segments[0]
        full = prognose(prog, diagnose(diag, seg))
        truncated = CellRecord(
            cell_id=rec.cell_id, protocol_id=rec.protocol_id,
            diagnostics=rec.diagnostics[2:3],
        )
        lone = prognose(prog, diagnose(diag, truncated.diagnostics[0].segments[0]))
        np.testing.assert_array_equal(full.efc_seq, lone.efc_seq)
        np.testing.assert_array_equal(full.q_seq, lone.q_seq)
        assert full.cycle_life_point == lone.cycle_life_point

    def test_prediction_table_selectors(self, forecaster):
        fleet, diag, prog = forecaster
        rows = cycle_life_predictions(diag, prog, fleet, soh_window=(0.82, 0.95))
        assert rows and all(0.82 <= r["soh_true"] <= 0.95 for r in rows)
        early = cycle_life_predictions(diag, prog, fleet, at_index=2)
        per_cell = {r["cell_id"] for r in early}
        assert len(early) == len(per_cell)  # one pick per cell
        with pytest.raises(ValidationError):
            cycle_life_predictions(diag, prog, fleet)
        with pytest.raises(ValidationError):
            cycle_life_predictions(diag, prog, fleet, soh_window=(0.8, 0.9), at_index=1)
