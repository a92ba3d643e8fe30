"""Metric definitions, the r2 degenerate cases, and the summary table."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from celldx.errors import ShapeError
from celldx.metrics import R2_UNDEFINED, MetricsTable, format_r2, metrics

finite = st.floats(-1e6, 1e6, allow_nan=False)


class TestMetrics:
    def test_perfect_predictions(self):
        rmse, mae, r2 = metrics([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert (rmse, mae, r2) == (0.0, 0.0, 1.0)

    def test_hand_computed_example(self):
        rmse, mae, r2 = metrics([1.0, 2.0, 3.0], [2.0, 2.0, 2.0])
        assert mae == pytest.approx(2.0 / 3.0)
        assert rmse == pytest.approx(math.sqrt(2.0 / 3.0))
        assert r2 == R2_UNDEFINED  # constant targets, nonzero residual

    def test_mean_predictor_scores_zero_r2(self):
        t = np.array([1.0, 3.0, 5.0, 7.0])
        _, _, r2 = metrics(np.full(4, t.mean()), t)
        assert r2 == pytest.approx(0.0, abs=1e-15)

    def test_constant_targets_hit_perfectly_score_one(self):
        assert metrics([2.0, 2.0], [2.0, 2.0])[2] == 1.0

    def test_shape_and_emptiness_guards(self):
        with pytest.raises(ShapeError):
            metrics([1.0, 2.0], [1.0])
        with pytest.raises(ShapeError):
            metrics([], [])

    @given(st.lists(finite, min_size=2, max_size=40).map(np.array))
    def test_rmse_dominates_mae(self, t):
        rng = np.random.default_rng(0)
        p = t + rng.normal(size=t.shape)
        rmse, mae, r2 = metrics(p, t)
        assert rmse >= mae >= 0.0
        assert r2 <= 1.0

    @given(
        st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=20),
        st.floats(-100, 100, allow_nan=False),
    )
    def test_r2_is_translation_invariant(self, values, shift):
        t = np.array(values)
        if np.ptp(t) < 1e-3:
            return  # degenerate spread: cancellation noise dominates
        p = t + np.linspace(-1.0, 1.0, len(t))
        r2a = metrics(p, t)[2]
        r2b = metrics(p + shift, t + shift)[2]
        assert r2a == pytest.approx(r2b, rel=1e-6, abs=1e-6)

    def test_format_r2(self):
        assert format_r2(R2_UNDEFINED) == "undefined"
        assert format_r2(0.25) == "0.250000"


class TestMetricsTable:
    def test_rows_accumulate_and_render(self):
        table = MetricsTable()
        table.add("soh", [0.9, 0.8], [0.92, 0.81], unit="fraction")
        table.add("voltage", [3.5, 3.6, 3.7], [3.5, 3.6, 3.7], unit="V")
        assert set(table.rows) == {"soh", "voltage"}
        text = table.render()
        assert "soh" in text and "fraction" in text
        csv_text = table.to_csv()
        assert csv_text.startswith("task,rmse,mae,r2,unit")
        assert "voltage" in csv_text

    def test_undefined_r2_written_as_text(self):
        table = MetricsTable()
        table.add("flat", [1.0, 2.0], [3.0, 3.0])
        assert "undefined" in table.to_csv()
        assert "undefined" in table.render()

    def test_add_returns_the_triple(self):
        table = MetricsTable()
        rmse, mae, r2 = table.add("t", [1.0], [1.0])
        assert (rmse, mae, r2) == (0.0, 0.0, 1.0)
