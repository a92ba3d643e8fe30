"""Canonical artifact serialization: hash stability, integrity checks."""

from __future__ import annotations

import json

import numpy as np
import pytest

from celldx.artifact import (
    artifact_hash,
    canonical_json,
    load_artifact,
    mlp_state_from_payload,
    mlp_state_to_payload,
    save_artifact,
)
from celldx.errors import ArtifactMismatch, ParseError


def payload():
    return {
        "kind": "demo",
        "weights": np.array([[1.0, 2.0], [3.0, 4.0]]),
        "scalar": np.float64(2.5),
        "nested": {"b": [1, 2], "a": np.int64(7)},
    }


class TestCanonicalForm:
    def test_key_order_does_not_change_the_hash(self):
        a = {"x": 1, "y": [1, 2], "z": {"k": 3.0}}
        b = {"z": {"k": 3.0}, "y": [1, 2], "x": 1}
        assert artifact_hash(a) == artifact_hash(b)
        assert canonical_json(a) == canonical_json(b)

    def test_numpy_types_serialize_as_plain_json(self):
        text = canonical_json(payload())
        parsed = json.loads(text)
        assert parsed["weights"] == [[1.0, 2.0], [3.0, 4.0]]
        assert parsed["scalar"] == 2.5
        assert parsed["nested"]["a"] == 7

    def test_hash_ignores_the_embedded_hash_field(self):
        base = payload()
        h = artifact_hash(base)
        assert artifact_hash({**base, "artifact_hash": "junk"}) == h

    def test_any_value_change_changes_the_hash(self):
        base = payload()
        tweaked = payload()
        tweaked["weights"] = np.array([[1.0, 2.0], [3.0, 4.000001]])
        assert artifact_hash(base) != artifact_hash(tweaked)


class TestFileRoundTrip:
    def test_save_then_load(self, tmp_path):
        path = tmp_path / "model.json"
        h = save_artifact(payload(), path)
        loaded = load_artifact(path, kind="demo")
        assert loaded["artifact_hash"] == h
        assert loaded["schema_version"] == 1
        assert loaded["weights"] == [[1.0, 2.0], [3.0, 4.0]]

    def test_tampering_is_detected(self, tmp_path):
        path = tmp_path / "model.json"
        save_artifact(payload(), path)
        obj = json.loads(path.read_text())
        obj["scalar"] = 99.0
        path.write_text(json.dumps(obj))
        with pytest.raises(ArtifactMismatch):
            load_artifact(path)

    def test_kind_gate(self, tmp_path):
        path = tmp_path / "model.json"
        save_artifact(payload(), path)
        with pytest.raises(ArtifactMismatch):
            load_artifact(path, kind="prognosis")

    def test_unreadable_and_non_object_inputs(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ParseError):
            load_artifact(bad)
        arr = tmp_path / "arr.json"
        arr.write_text("[1, 2, 3]")
        with pytest.raises(ParseError):
            load_artifact(arr)
        with pytest.raises(ParseError):
            load_artifact(tmp_path / "missing.json")


class TestMlpState:
    def test_round_trip_preserves_values_and_shapes(self):
        arrays = [np.random.default_rng(0).normal(size=s) for s in ((3, 2), (2,), (1, 1))]
        back = mlp_state_from_payload(mlp_state_to_payload(arrays))
        for a, b in zip(arrays, back):
            np.testing.assert_array_equal(a, b)
            assert b.dtype == np.float64
