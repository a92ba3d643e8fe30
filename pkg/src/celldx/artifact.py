"""Canonical JSON artifacts: stable hashing and model state round trips."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ArtifactMismatch, ParseError

SCHEMA_VERSION = 1


def _plain(obj):
    """Recursively convert arrays and numpy scalars to JSON-safe types."""
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def canonical_json(payload: dict) -> str:
    """Deterministic serialization: sorted keys, compact separators."""
    return json.dumps(_plain(payload), sort_keys=True, separators=(",", ":"))


def artifact_hash(payload: dict) -> str:
    body = {k: v for k, v in payload.items() if k != "artifact_hash"}
    return hashlib.sha256(canonical_json(body).encode()).hexdigest()


def save_artifact(payload: dict, path) -> str:
    payload = dict(_plain(payload))
    payload["schema_version"] = payload.get("schema_version", SCHEMA_VERSION)
    payload["artifact_hash"] = artifact_hash(payload)
    Path(path).write_text(canonical_json(payload) + "\n")
    return payload["artifact_hash"]


def load_artifact(path, kind: str | None = None) -> dict:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: unreadable artifact: {exc}") from exc
    if not isinstance(payload, dict):
        raise ParseError(f"{path}: artifact must be a JSON object")
    stored = payload.get("artifact_hash")
    if stored is not None and stored != artifact_hash(payload):
        raise ArtifactMismatch(f"{path}: artifact hash does not match its contents")
    if kind is not None and payload.get("kind") != kind:
        raise ArtifactMismatch(f"{path}: expected a {kind!r} artifact, found {payload.get('kind')!r}")
    return payload


def mlp_state_to_payload(arrays) -> list:
    return [a.tolist() for a in arrays]


def mlp_state_from_payload(payload) -> list:
    return [np.asarray(a, dtype=float) for a in payload]
