"""Model artifact persistence: canonical JSON with a content digest.

Weights serialize at full precision (shortest round-trip floats) so
load(save(a)) == a; the digest covers the canonical bytes of the document
without the digest field itself.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from ..jsonutil import dumps_canonical

SUPPORTED_VERSIONS = {1}


class ArtifactError(ValueError):
    pass


def _digest(doc: dict) -> str:
    body = dumps_canonical({k: v for k, v in doc.items() if k != "digest"}, floats="repr")
    return "sha256:" + hashlib.sha256(body.encode("utf-8")).hexdigest()


def save_artifact(doc: dict, path: str | Path) -> str:
    """Write the artifact with its digest; returns the digest."""
    if "kind" not in doc or "version" not in doc:
        raise ArtifactError("artifact document needs 'kind' and 'version'")
    digest = _digest(doc)
    out = dict(doc, digest=digest)
    Path(path).write_text(dumps_canonical(out, floats="repr") + "\n", encoding="utf-8")
    return digest


def load_artifact(path: str | Path, expected_kind: str | None = None) -> dict:
    """Read and verify an artifact; digest mismatch or bad version is an error."""
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"artifact not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ArtifactError(f"{path}: artifact must be a JSON object")
    stored = doc.get("digest")
    if stored is None:
        raise ArtifactError(f"{path}: missing digest")
    actual = _digest(doc)
    if stored != actual:
        raise ArtifactError(f"{path}: digest mismatch (stored {stored}, computed {actual})")
    if doc.get("version") not in SUPPORTED_VERSIONS:
        raise ArtifactError(f"{path}: unsupported artifact version {doc.get('version')!r}")
    if expected_kind is not None and doc.get("kind") != expected_kind:
        raise ArtifactError(f"{path}: expected kind {expected_kind!r}, got {doc.get('kind')!r}")
    return doc
