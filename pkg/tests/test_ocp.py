"""Half-cell OCP tables."""

from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from celldx.errors import ParseError, ValidationError
from celldx.ocp import OcpTable, synthetic_tables, toy_tables


class TestValidation:
    def test_stoich_must_span_unit_interval(self):
        with pytest.raises(ValidationError):
            OcpTable(stoich=np.array([0.0, 0.9]), potential=np.array([4.0, 3.0]), electrode="cathode")

    def test_potential_strictly_decreasing(self):
        with pytest.raises(ValidationError):
            OcpTable(stoich=np.array([0.0, 0.5, 1.0]), potential=np.array([4.0, 4.0, 3.0]), electrode="cathode")

    def test_unknown_electrode(self):
        with pytest.raises(ValidationError):
            OcpTable(stoich=np.array([0.0, 1.0]), potential=np.array([4.0, 3.0]), electrode="separator")


class TestEvaluation:
    def test_clamps_outside_range(self, toy_ocps):
        ocp_p, _ = toy_ocps
        assert ocp_p(-0.5) == ocp_p(0.0)
        assert ocp_p(1.5) == ocp_p(1.0)

    def test_interpolates_knots(self, toy_ocps):
        ocp_p, _ = toy_ocps
        assert ocp_p(0.25) == pytest.approx(0.5 * (4.40 + 4.05))

    def test_slope_piecewise_constant(self, toy_ocps):
        ocp_p, _ = toy_ocps
        assert ocp_p.slope(0.2) == pytest.approx((4.05 - 4.40) / 0.5)
        assert ocp_p.slope(0.7) == pytest.approx((3.50 - 4.05) / 0.5)
        assert ocp_p.slope(-0.1) == 0.0
        assert ocp_p.slope(1.1) == 0.0

    def test_slope_matches_finite_difference(self, synth_tables):
        _, ocp_n = synth_tables
        rng = np.random.default_rng(11)
        xs = rng.uniform(0.01, 0.99, size=40)
        h = 1e-9  # far below the table spacing, stays inside one cell
        fd = (ocp_n(xs + h) - ocp_n(xs - h)) / (2 * h)
        assert_allclose(ocp_n.slope(xs), fd, rtol=1e-4)


class TestBuiltinTables:
    def test_both_sets_valid(self):
        for ocp_p, ocp_n in (toy_tables(), synthetic_tables()):
            assert ocp_p.electrode == "cathode" and ocp_n.electrode == "anode"
            assert np.all(np.diff(ocp_p.potential) < 0)
            assert np.all(np.diff(ocp_n.potential) < 0)

    def test_synthetic_tables_resolution(self):
        ocp_p, ocp_n = synthetic_tables(n=2001)
        assert len(ocp_p.stoich) == 2001 and len(ocp_n.stoich) == 2001

    def test_csv_round_trip(self, tmp_path):
        ocp_p, _ = toy_tables()
        path = tmp_path / "cathode.csv"
        ocp_p.to_csv(path)
        back = OcpTable.from_csv(path, electrode="cathode")
        assert_allclose(back.stoich, ocp_p.stoich, atol=0)
        assert_allclose(back.potential, ocp_p.potential, atol=0)

    def test_csv_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x,u\n0.0,4.2\n1.0,3.0\n")
        with pytest.raises(ParseError):
            OcpTable.from_csv(path, electrode="cathode")
